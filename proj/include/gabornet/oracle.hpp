// Independent verification paths: central finite differences, a literal
// quadruple-loop convolution, and an end-to-end network gradient check.
// Nothing here calls the convolution or kernel-gradient code it verifies.

#ifndef GABORNET_ORACLE_HPP_
#define GABORNET_ORACLE_HPP_

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gabornet/common.hpp"
#include "gabornet/network.hpp"
#include "gabornet/tensor.hpp"

namespace gabornet::oracle {

inline constexpr double kFiniteDiffStep = 1e-6;
inline constexpr double kRelErrorFloor = 1e-12;

// (f(v + h) - f(v - h)) / 2h in 64-bit arithmetic.
inline double finite_diff(const std::function<double(double)>& f, double value,
                          double step = kFiniteDiffStep) {
  const double up = f(value + step);
  const double down = f(value - step);
  if (!std::isfinite(up) || !std::isfinite(down))
    throw RuntimeFailure("finite_diff: non-finite function value");
  return (up - down) / (2 * step);
}

inline double relative_error(double analytic, double numeric, double floor = kRelErrorFloor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// Literal per-output-element summation of a stride-1 cross-correlation with
// zero padding ("same": (k-1)/2, "valid": none).
inline Tensor4<double> direct_conv(const Tensor4<double>& input, const Tensor4<double>& kernels,
                                   const std::vector<double>& bias, bool same_padding) {
  const int n_b = input.batch(), n_i = input.channels(), h = input.height(), w = input.width();
  const int n_o = kernels.batch(), k = kernels.height();
  if (kernels.channels() != n_i || kernels.width() != k || k % 2 == 0)
    throw ContractViolation("direct_conv: kernel shape mismatch");
  if (!bias.empty() && static_cast<int>(bias.size()) != n_o)
    throw ContractViolation("direct_conv: bias length mismatch");
  const int pad = same_padding ? (k - 1) / 2 : 0;
  const int ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1;
  if (ho <= 0 || wo <= 0) throw ContractViolation("direct_conv: input smaller than kernel");
  Tensor4<double> out(n_b, n_o, ho, wo);
  for (int n = 0; n < n_b; ++n)
    for (int o = 0; o < n_o; ++o)
      for (int r = 0; r < ho; ++r)
        for (int c = 0; c < wo; ++c) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (int i = 0; i < n_i; ++i)
            for (int dy = 0; dy < k; ++dy)
              for (int dx = 0; dx < k; ++dx) {
                const int sr = r + dy - pad, sc = c + dx - pad;
                if (sr < 0 || sr >= h || sc < 0 || sc >= w) continue;
                acc += input(n, i, sr, sc) * kernels(o, i, dy, dx);
              }
          out(n, o, r, c) = acc;
        }
  return out;
}

struct GradCheckReport {
  std::string parameter;
  double analytic{0};
  double numeric{0};
  double relative_error{0};
  bool pass{false};
};

struct GradCheckOptions {
  int batch_size{4};
  std::uint64_t seed{7};
  double step{kFiniteDiffStep};
  // Applied to each analytic gradient before comparison (mutation testing).
  std::function<void(const ParamId&, double&)> tamper;
};

// Perturbs every learnable scalar of a freshly initialised 64-bit network on a
// fixed random batch and compares the train-mode loss slope with the
// backpropagated gradient.
inline std::vector<GradCheckReport> grad_check_network(const NetworkConfig& config,
                                                       double tolerance,
                                                       const GradCheckOptions& options = {}) {
  config.validate();
  if (config.blocks.size() > 2) throw ConfigError("grad-check supports at most 2 CV blocks");
  for (const auto& b : config.blocks)
    if (b.kernel_size != 3) throw ConfigError("grad-check requires kernel_size 3");
  if (config.patch_size > 7) throw ConfigError("grad-check requires patch_size <= 7");
  if (options.batch_size < 2) throw ConfigError("grad-check needs a batch of at least 2");

  auto net = GaborNet<double>::initialize(config, config.seed);
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, config.n_classes - 1);
  Tensor4<double> batch(options.batch_size, config.input_bands, config.patch_size,
                        config.patch_size);
  for (double& v : batch.data()) v = gauss(rng);
  std::vector<int> labels(options.batch_size);
  for (int& l : labels) l = pick(rng);

  net.compute_gradients(batch, labels);
  struct Entry {
    ParamId id;
    double* value;
    double grad;
  };
  std::vector<Entry> entries;
  net.visit_parameters([&](const ParamId& id, double& v, double& g) {
    entries.push_back({id, &v, g});
  });

  std::vector<GradCheckReport> reports;
  reports.reserve(entries.size());
  for (auto& e : entries) {
    double analytic = e.grad;
    if (options.tamper) options.tamper(e.id, analytic);
    const double saved = *e.value;
    const double numeric = finite_diff(
        [&](double v) {
          *e.value = v;
          return net.loss(batch, labels);
        },
        saved, options.step);
    *e.value = saved;
    const double rel = relative_error(analytic, numeric);
    reports.push_back({e.id.name(), analytic, numeric, rel, rel < tolerance});
  }
  return reports;
}

}  // namespace gabornet::oracle

#endif  // GABORNET_ORACLE_HPP_
