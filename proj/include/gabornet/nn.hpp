// Minimal layer toolkit: convolution, ReLU, batch normalisation, global
// average pooling, fully connected layers, softmax cross-entropy and Adam.
// Forward/backward functions are pure; mutable state lives in the explicit
// BatchNormState and AdamState objects.

#ifndef GABORNET_NN_HPP_
#define GABORNET_NN_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "gabornet/common.hpp"
#include "gabornet/tensor.hpp"

namespace gabornet::nn {

enum class Padding { kSame, kValid };
enum class Mode { kTrain, kEval };

inline int conv_output_extent(int in, int k, Padding pad) {
  return pad == Padding::kSame ? in : in - k + 1;
}

namespace detail {

// Unfolds sample n into a (c*k*k) x (ho*wo) patch matrix.
template <typename Scalar>
void im2col(const Tensor4<Scalar>& in, int n, int k, int pad, int ho, int wo,
            MatrixX<Scalar>& cols) {
  const int c_in = in.channels(), h = in.height(), w = in.width();
  cols.setZero(static_cast<Eigen::Index>(c_in) * k * k,
               static_cast<Eigen::Index>(ho) * wo);
  for (int c = 0; c < c_in; ++c) {
    const auto plane = in.channel(n, c);
    for (int dy = 0; dy < k; ++dy) {
      for (int dx = 0; dx < k; ++dx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + dy) * k + dx;
        for (int r = 0; r < ho; ++r) {
          const int sr = r + dy - pad;
          if (sr < 0 || sr >= h) continue;
          const int c_lo = std::max(0, pad - dx);
          const int c_hi = std::min(wo, w + pad - dx);
          for (int cc = c_lo; cc < c_hi; ++cc)
            cols(row, static_cast<Eigen::Index>(r) * wo + cc) =
                plane(sr, cc + dx - pad);
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const MatrixX<Scalar>& cols, int n, int k, int pad, int ho,
                int wo, Tensor4<Scalar>& out) {
  const int c_in = out.channels(), h = out.height(), w = out.width();
  for (int c = 0; c < c_in; ++c) {
    auto plane = out.channel(n, c);
    for (int dy = 0; dy < k; ++dy) {
      for (int dx = 0; dx < k; ++dx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + dy) * k + dx;
        for (int r = 0; r < ho; ++r) {
          const int sr = r + dy - pad;
          if (sr < 0 || sr >= h) continue;
          const int c_lo = std::max(0, pad - dx);
          const int c_hi = std::min(wo, w + pad - dx);
          for (int cc = c_lo; cc < c_hi; ++cc)
            plane(sr, cc + dx - pad) += cols(row, static_cast<Eigen::Index>(r) * wo + cc);
        }
      }
    }
  }
}

template <typename Scalar>
Eigen::Map<const MatrixX<Scalar>> kernel_matrix(const Tensor4<Scalar>& kernels) {
  return {kernels.data().data(), kernels.batch(),
          static_cast<Eigen::Index>(kernels.channels()) * kernels.height() *
              kernels.width()};
}

template <typename Scalar>
void check_conv_shapes(const Tensor4<Scalar>& input, const Tensor4<Scalar>& kernels,
                       std::span<const Scalar> bias) {
  if (kernels.height() != kernels.width() || kernels.height() % 2 == 0)
    throw ContractViolation("conv2d: kernels must be square with odd size");
  if (input.channels() != kernels.channels())
    throw ContractViolation("conv2d: input has " + std::to_string(input.channels()) +
                            " channels, kernels expect " +
                            std::to_string(kernels.channels()));
  if (!bias.empty() && static_cast<int>(bias.size()) != kernels.batch())
    throw ContractViolation("conv2d: bias length must equal output channels");
}

}  // namespace detail

// Stride-1 cross-correlation: out[o] = sum_i in[i] (x) kernels[o, i] + bias[o].
// kernels has shape (n_out, n_in, k, k). An empty bias span means no bias.
template <typename Scalar>
Tensor4<Scalar> conv2d_forward(const Tensor4<Scalar>& input,
                               const Tensor4<Scalar>& kernels,
                               std::span<const Scalar> bias, Padding padding) {
  detail::check_conv_shapes(input, kernels, bias);
  const int k = kernels.height();
  const int pad = padding == Padding::kSame ? (k - 1) / 2 : 0;
  const int ho = conv_output_extent(input.height(), k, padding);
  const int wo = conv_output_extent(input.width(), k, padding);
  if (ho <= 0 || wo <= 0) throw ContractViolation("conv2d: input smaller than kernel");

  Tensor4<Scalar> out(input.batch(), kernels.batch(), ho, wo);
  const auto weights = detail::kernel_matrix(kernels);
  MatrixX<Scalar> cols;
  for (int n = 0; n < input.batch(); ++n) {
    detail::im2col(input, n, k, pad, ho, wo, cols);
    auto dst = out.sample(n);
    dst.noalias() = weights * cols;
    if (!bias.empty()) {
      dst.colwise() +=
          Eigen::Map<const VectorX<Scalar>>(bias.data(), static_cast<Eigen::Index>(bias.size()));
    }
  }
  return out;
}

template <typename Scalar>
struct ConvGradients {
  Tensor4<Scalar> input;
  Tensor4<Scalar> kernels;
  std::vector<Scalar> bias;
};

template <typename Scalar>
ConvGradients<Scalar> conv2d_backward(const Tensor4<Scalar>& grad_out,
                                      const Tensor4<Scalar>& input,
                                      const Tensor4<Scalar>& kernels,
                                      Padding padding) {
  detail::check_conv_shapes(input, kernels, std::span<const Scalar>{});
  const int k = kernels.height();
  const int pad = padding == Padding::kSame ? (k - 1) / 2 : 0;
  const int ho = conv_output_extent(input.height(), k, padding);
  const int wo = conv_output_extent(input.width(), k, padding);
  if (grad_out.batch() != input.batch() || grad_out.channels() != kernels.batch() ||
      grad_out.height() != ho || grad_out.width() != wo)
    throw ContractViolation("conv2d_backward: grad_out shape " +
                            grad_out.shape_string() + " inconsistent with forward");

  ConvGradients<Scalar> g{
      Tensor4<Scalar>(input.batch(), input.channels(), input.height(), input.width()),
      Tensor4<Scalar>(kernels.batch(), kernels.channels(), k, k),
      std::vector<Scalar>(kernels.batch(), Scalar(0))};
  const auto weights = detail::kernel_matrix(kernels);
  Eigen::Map<MatrixX<Scalar>> grad_w(g.kernels.data().data(), weights.rows(),
                                     weights.cols());
  Eigen::Map<VectorX<Scalar>> grad_b(g.bias.data(), kernels.batch());
  MatrixX<Scalar> cols, grad_cols;
  for (int n = 0; n < input.batch(); ++n) {
    const auto go = grad_out.sample(n);
    detail::im2col(input, n, k, pad, ho, wo, cols);
    grad_w.noalias() += go * cols.transpose();
    grad_b += go.rowwise().sum();
    grad_cols.noalias() = weights.transpose() * go;
    detail::col2im_add(grad_cols, n, k, pad, ho, wo, g.input);
  }
  return g;
}

template <typename Scalar>
Tensor4<Scalar> relu_forward(const Tensor4<Scalar>& x) {
  Tensor4<Scalar> y = x;
  for (Scalar& v : y.data()) v = v > Scalar(0) ? v : Scalar(0);
  return y;
}

// Subgradient at exactly zero is 0.
template <typename Scalar>
Tensor4<Scalar> relu_backward(const Tensor4<Scalar>& grad_y, const Tensor4<Scalar>& x) {
  require(grad_y.same_shape(x), "relu_backward: shape mismatch");
  Tensor4<Scalar> g = grad_y;
  const auto xs = x.data();
  auto gs = g.data();
  for (std::size_t i = 0; i < gs.size(); ++i)
    if (!(xs[i] > Scalar(0))) gs[i] = Scalar(0);
  return g;
}

template <typename Scalar>
struct BatchNormState {
  std::vector<Scalar> gamma;
  std::vector<Scalar> beta;
  // Empty until the first train-mode pass (or an explicit reset).
  std::vector<Scalar> running_mean;
  std::vector<Scalar> running_var;
  Scalar epsilon{Scalar(1e-5)};
  // Fraction of the previous running statistic retained per update.
  Scalar momentum{Scalar(0.9)};

  BatchNormState() = default;
  explicit BatchNormState(int channels)
      : gamma(channels, Scalar(1)), beta(channels, Scalar(0)) {}

  int channels() const { return static_cast<int>(gamma.size()); }
  bool has_running_stats() const { return !running_mean.empty(); }

  void reset_running_stats() {
    running_mean.assign(gamma.size(), Scalar(0));
    running_var.assign(gamma.size(), Scalar(1));
  }
};

// Eval-mode normalisation with the running statistics; never mutates state.
template <typename Scalar>
Tensor4<Scalar> batchnorm_inference(const Tensor4<Scalar>& x,
                                    const BatchNormState<Scalar>& state) {
  if (x.channels() != state.channels())
    throw ContractViolation("batchnorm: channel count mismatch");
  if (!state.has_running_stats())
    throw RuntimeFailure("batchnorm: eval mode requested before any train step");
  Tensor4<Scalar> y(x.batch(), x.channels(), x.height(), x.width());
  for (int c = 0; c < x.channels(); ++c) {
    const Scalar inv_std = Scalar(1) / std::sqrt(state.running_var[c] + state.epsilon);
    const Scalar scale = state.gamma[c] * inv_std;
    const Scalar shift = state.beta[c] - state.running_mean[c] * scale;
    for (int n = 0; n < x.batch(); ++n)
      y.channel(n, c) = (x.channel(n, c).array() * scale + shift).matrix();
  }
  return y;
}

template <typename Scalar>
struct BatchNormCache {
  Tensor4<Scalar> normalized;
  std::vector<Scalar> inv_std;
};

// Train mode normalises each channel over (N, H, W) with the biased batch
// variance and folds the batch statistics into the running estimates.
template <typename Scalar>
Tensor4<Scalar> batchnorm_forward(const Tensor4<Scalar>& x, BatchNormState<Scalar>& state,
                                  Mode mode, BatchNormCache<Scalar>* cache = nullptr) {
  const int nb = x.batch(), nc = x.channels();
  if (nc != state.channels())
    throw ContractViolation("batchnorm: channel count mismatch");
  const std::size_t plane = static_cast<std::size_t>(x.height()) * x.width();
  const double count = static_cast<double>(nb) * plane;
  if (mode == Mode::kEval) {
    if (cache) throw ContractViolation("batchnorm: backward cache requires train mode");
    return batchnorm_inference(x, state);
  }
  if (mode == Mode::kTrain && count < 1)
    throw ContractViolation("batchnorm: empty batch");

  Tensor4<Scalar> y(nb, nc, x.height(), x.width());
  if (cache) {
    cache->normalized = Tensor4<Scalar>(nb, nc, x.height(), x.width());
    cache->inv_std.assign(nc, Scalar(0));
  }
  if (mode == Mode::kTrain && !state.has_running_stats()) state.reset_running_stats();

  for (int c = 0; c < nc; ++c) {
    Scalar mean, var;
    if (mode == Mode::kTrain) {
      double sum = 0;
      for (int n = 0; n < nb; ++n) sum += x.channel(n, c).template cast<double>().sum();
      const double mu = sum / count;
      double sq = 0;
      for (int n = 0; n < nb; ++n)
        sq += (x.channel(n, c).template cast<double>().array() - mu).square().sum();
      mean = static_cast<Scalar>(mu);
      var = static_cast<Scalar>(sq / count);
      state.running_mean[c] =
          state.momentum * state.running_mean[c] + (Scalar(1) - state.momentum) * mean;
      state.running_var[c] =
          state.momentum * state.running_var[c] + (Scalar(1) - state.momentum) * var;
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    const Scalar inv_std = Scalar(1) / std::sqrt(var + state.epsilon);
    for (int n = 0; n < nb; ++n) {
      auto xhat = ((x.channel(n, c).array() - mean) * inv_std).eval();
      y.channel(n, c) = (xhat * state.gamma[c] + state.beta[c]).matrix();
      if (cache) cache->normalized.channel(n, c) = xhat.matrix();
    }
    if (cache) cache->inv_std[c] = inv_std;
  }
  return y;
}

template <typename Scalar>
struct BatchNormGradients {
  Tensor4<Scalar> input;
  std::vector<Scalar> gamma;
  std::vector<Scalar> beta;
};

// Backward of a train-mode forward pass.
template <typename Scalar>
BatchNormGradients<Scalar> batchnorm_backward(const Tensor4<Scalar>& grad_y,
                                              const BatchNormCache<Scalar>& cache,
                                              const BatchNormState<Scalar>& state) {
  require(grad_y.same_shape(cache.normalized), "batchnorm_backward: shape mismatch");
  const int nb = grad_y.batch(), nc = grad_y.channels();
  const Scalar m = Scalar(nb) * grad_y.height() * grad_y.width();
  BatchNormGradients<Scalar> g{
      Tensor4<Scalar>(nb, nc, grad_y.height(), grad_y.width()),
      std::vector<Scalar>(nc, Scalar(0)), std::vector<Scalar>(nc, Scalar(0))};
  for (int c = 0; c < nc; ++c) {
    Scalar sum_dy = 0, sum_dy_xhat = 0;
    for (int n = 0; n < nb; ++n) {
      sum_dy += grad_y.channel(n, c).sum();
      sum_dy_xhat += grad_y.channel(n, c).cwiseProduct(cache.normalized.channel(n, c)).sum();
    }
    g.beta[c] = sum_dy;
    g.gamma[c] = sum_dy_xhat;
    const Scalar scale = state.gamma[c] * cache.inv_std[c] / m;
    for (int n = 0; n < nb; ++n) {
      g.input.channel(n, c) =
          (scale * (m * grad_y.channel(n, c).array() - sum_dy -
                    cache.normalized.channel(n, c).array() * sum_dy_xhat))
              .matrix();
    }
  }
  return g;
}

// (N, C, H, W) -> (N, C) channel means.
template <typename Scalar>
MatrixX<Scalar> global_avg_pool(const Tensor4<Scalar>& x) {
  MatrixX<Scalar> out(x.batch(), x.channels());
  for (int n = 0; n < x.batch(); ++n) out.row(n) = x.sample(n).rowwise().mean().transpose();
  return out;
}

template <typename Scalar>
Tensor4<Scalar> global_avg_pool_backward(const MatrixX<Scalar>& grad,
                                         const std::array<int, 4>& input_dims) {
  const auto [nb, nc, h, w] = input_dims;
  require(grad.rows() == nb && grad.cols() == nc,
          "global_avg_pool_backward: gradient shape mismatch");
  Tensor4<Scalar> g(nb, nc, h, w);
  const Scalar inv = Scalar(1) / Scalar(h * w);
  for (int n = 0; n < nb; ++n)
    for (int c = 0; c < nc; ++c) g.channel(n, c).setConstant(grad(n, c) * inv);
  return g;
}

// y = x W^T + b for x of shape (N, D_in) and W of shape (D_out, D_in).
template <typename Scalar>
MatrixX<Scalar> fully_connected_forward(const MatrixX<Scalar>& x,
                                        const MatrixX<Scalar>& weights,
                                        const VectorX<Scalar>& bias) {
  if (x.cols() != weights.cols() || bias.size() != weights.rows())
    throw ContractViolation("fully_connected: shape mismatch");
  MatrixX<Scalar> y = x * weights.transpose();
  y.rowwise() += bias.transpose();
  return y;
}

template <typename Scalar>
struct FcGradients {
  MatrixX<Scalar> input;
  MatrixX<Scalar> weights;
  VectorX<Scalar> bias;
};

template <typename Scalar>
FcGradients<Scalar> fully_connected_backward(const MatrixX<Scalar>& grad_y,
                                             const MatrixX<Scalar>& x,
                                             const MatrixX<Scalar>& weights) {
  if (grad_y.rows() != x.rows() || grad_y.cols() != weights.rows() ||
      x.cols() != weights.cols())
    throw ContractViolation("fully_connected_backward: shape mismatch");
  return {grad_y * weights, grad_y.transpose() * x, grad_y.colwise().sum().transpose()};
}

template <typename Scalar>
struct LossAndGradient {
  Scalar loss;
  MatrixX<Scalar> grad_logits;
};

// Mean cross-entropy of softmax(logits) against integer class ids.
template <typename Scalar>
LossAndGradient<Scalar> softmax_cross_entropy(const MatrixX<Scalar>& logits,
                                              std::span<const int> labels) {
  const auto n = logits.rows(), classes = logits.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n)
    throw ContractViolation("softmax_cross_entropy: label count mismatch");
  LossAndGradient<Scalar> out{Scalar(0), MatrixX<Scalar>(n, classes)};
  double total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || label >= classes)
      throw ContractViolation("softmax_cross_entropy: label " + std::to_string(label) +
                              " outside [0, " + std::to_string(classes) + ")");
    const Scalar mx = logits.row(i).maxCoeff();
    const auto shifted = (logits.row(i).array() - mx).eval();
    const auto ex = shifted.exp().eval();
    const Scalar z = ex.sum();
    total += static_cast<double>(std::log(z) - shifted(label));
    out.grad_logits.row(i) = (ex / z).matrix();
    out.grad_logits(i, label) -= Scalar(1);
  }
  if (n > 0) {
    out.loss = static_cast<Scalar>(total / static_cast<double>(n));
    out.grad_logits /= Scalar(n);
  }
  return out;
}

template <typename Scalar>
MatrixX<Scalar> softmax(const MatrixX<Scalar>& logits) {
  MatrixX<Scalar> p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const auto ex = (logits.row(i).array() - logits.row(i).maxCoeff()).exp().eval();
    p.row(i) = (ex / ex.sum()).matrix();
  }
  return p;
}

// Role of a scalar under the optimizer: scale parameters are clamped to
// kSigmaMin after each update.
enum class ParamRole : std::uint8_t { kFree, kScale };

template <typename Scalar>
struct AdamState {
  std::vector<Scalar> first_moment;
  std::vector<Scalar> second_moment;
  std::int64_t step{0};
  Scalar beta1{Scalar(0.9)};
  Scalar beta2{Scalar(0.999)};
  Scalar epsilon{Scalar(1e-8)};
  Scalar learning_rate{Scalar(0.0076)};

  explicit AdamState(std::size_t n = 0)
      : first_moment(n, Scalar(0)), second_moment(n, Scalar(0)) {}
};

// lr after `epoch` completed epochs of exponential decay.
inline double decayed_learning_rate(double initial, double decay, int epoch) {
  return initial * std::pow(decay, epoch);
}

// One bias-corrected Adam update. `roles` is either empty or one entry per
// parameter; kScale entries are clamped from below afterwards.
template <typename Scalar>
void adam_step(std::span<Scalar> params, std::span<const Scalar> grads,
               AdamState<Scalar>& state, std::span<const ParamRole> roles = {},
               Scalar scale_floor = Scalar(0.1)) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
      params.size() != state.second_moment.size())
    throw ContractViolation("adam_step: size mismatch");
  if (!roles.empty() && roles.size() != params.size())
    throw ContractViolation("adam_step: role count mismatch");
  ++state.step;
  const Scalar b1 = state.beta1, b2 = state.beta2;
  const Scalar c1 = Scalar(1) - std::pow(b1, Scalar(state.step));
  const Scalar c2 = Scalar(1) - std::pow(b2, Scalar(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Scalar g = grads[i];
    Scalar& m = state.first_moment[i];
    Scalar& v = state.second_moment[i];
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g * g;
    const Scalar m_hat = m / c1;
    const Scalar v_hat = v / c2;
    params[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    if (!roles.empty() && roles[i] == ParamRole::kScale && !(params[i] > scale_floor))
      params[i] = scale_floor;
  }
}

}  // namespace gabornet::nn

#endif  // GABORNET_NN_HPP_
