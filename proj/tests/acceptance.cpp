// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Tolerances and fixture sizes are fixed below.
//
//   acceptance                      criteria 1-6 and 8; 7 is reported as skipped
//   acceptance --pavia <config>     additionally runs the full-scale check (7)

#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gabornet/config.hpp"
#include "gabornet/data.hpp"
#include "gabornet/freq_analysis.hpp"
#include "gabornet/gabor_kernel.hpp"
#include "gabornet/network.hpp"
#include "gabornet/nn.hpp"
#include "gabornet/oracle.hpp"

using namespace gabornet;
using Clock = std::chrono::steady_clock;

namespace {

constexpr double kPi = std::numbers::pi;

// Criterion 1
constexpr int kIdentityDraws = 1000;
constexpr double kIdentityTol = 1e-12;
constexpr double kIdentitySeconds = 10;
// Criterion 2
constexpr int kKernelFdDraws = 100;
constexpr double kKernelFdTol = 1e-5;
constexpr double kNetworkFdTol = 1e-4;
constexpr double kGradSeconds = 120;
// Criterion 3
constexpr int kFreqDraws = 1000;
constexpr double kFreqTol = 1e-12;
constexpr double kFreqSeconds = 1;
// Criterion 4
constexpr double kCountSeconds = 1;
// Criterion 5
constexpr int kConvShapes = 60;
constexpr double kConvTol = 1e-10;
constexpr double kConvSeconds = 30;
// Criterion 6
constexpr double kTrainTarget = 0.99;
constexpr double kHeldOutTarget = 0.90;
constexpr int kMaxEpochs = 300;
constexpr int kDeskPatch = 7;
constexpr int kDeskTrainPerClass = 30;
// Criterion 7
constexpr double kPaviaTarget = 0.96;
constexpr int kPaviaRuns = 5;
// Criterion 8
constexpr int kAblationEpochs = 40;

int failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail) {
  std::printf("%s  #%d  %s: %s\n", pass ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double max_abs(const MatrixX<double>& m) { return m.cwiseAbs().maxCoeff(); }

GaborParams<double> random_params(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(-2 * kPi, 2 * kPi);
  std::uniform_real_distribution<double> mag(-kPi, kPi);
  std::uniform_real_distribution<double> scale(0.3, 3.0);
  return {angle(rng), mag(rng), scale(rng), angle(rng)};
}

// ---------------------------------------------------------------------------

void criterion_identities() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  const int sizes[] = {3, 5, 7, 9, 15};
  double worst = 0;
  for (int t = 0; t < kIdentityDraws; ++t) {
    const auto p = random_params(rng);
    const KernelGrid g(sizes[t % 5]);
    const auto G = evaluate_kernel(p, g);
    const auto [re0, im0] = evaluate_complex_parts(p.with_phase(0.0), g);
    const auto [re, im] = evaluate_complex_parts(p, g);

    // Direct scalar evaluation of the envelope and of the phase-shifted kernel.
    MatrixX<double> env(g.size(), g.size()), direct(g.size(), g.size());
    for (int r = 0; r < g.size(); ++r)
      for (int c = 0; c < g.size(); ++c) {
        const double x = c - g.half(), y = r - g.half();
        env(r, c) = std::exp(-(x * x + y * y) / (2 * p.sigma * p.sigma)) /
                    (2 * kPi * p.sigma * p.sigma);
        direct(r, c) = env(r, c) * std::cos(x * p.omega * std::cos(p.theta) +
                                            y * p.omega * std::sin(p.theta) + p.phase);
      }
    worst = std::max(worst, max_abs(G - direct));
    // Real part of the complex Gabor function with phase P.
    worst = std::max(worst, max_abs(G - (std::cos(p.phase) * re0 - std::sin(p.phase) * im0)));
    // Modulus of the complex form is the envelope.
    worst = std::max(worst, max_abs((re.array().square() + im.array().square()).sqrt().matrix() -
                                    env));
    // Separable forms, with and without the phase.
    const auto s = separable_decomposition(p, g);
    worst = std::max(worst, max_abs(s.recombine() - G));
    const auto s0 = separable_decomposition(p.with_phase(0.0), g);
    worst = std::max(worst, max_abs(MatrixX<double>(s0.cos_y * s0.cos_phase_x.transpose() -
                                                    s0.sin_y * s0.sin_phase_x.transpose()) -
                                    re0));
    worst = std::max(worst, max_abs(MatrixX<double>(s0.cos_y * s0.sin_phase_x.transpose() +
                                                    s0.sin_y * s0.cos_phase_x.transpose()) -
                                    im0));
  }
  const double secs = seconds_since(t0);
  report(1, worst < kIdentityTol && secs < kIdentitySeconds, "algebraic identities",
         fmt("%d draws, max abs error %.3g (tol %.0e), %.2f s (limit %.0f s)", kIdentityDraws,
             worst, kIdentityTol, secs, kIdentitySeconds));
}

// ---------------------------------------------------------------------------

void criterion_gradients() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  std::normal_distribution<double> gauss;
  double kernel_worst = 0;
  for (int t = 0; t < kKernelFdDraws; ++t) {
    const auto p = random_params(rng);
    const KernelGrid g(t % 2 ? 5 : 3);
    MatrixX<double> upstream(g.size(), g.size());
    for (Eigen::Index i = 0; i < upstream.size(); ++i) upstream.data()[i] = gauss(rng);
    const auto d = aggregate_param_gradients(upstream, kernel_gradients(p, g));
    auto loss = [&](GaborParams<double> q) {
      return upstream.cwiseProduct(evaluate_kernel(q, g)).sum();
    };
    using oracle::finite_diff;
    using oracle::relative_error;
    const double errs[] = {
        relative_error(d.theta, finite_diff([&](double v) { auto q = p; q.theta = v; return loss(q); }, p.theta)),
        relative_error(d.omega, finite_diff([&](double v) { auto q = p; q.omega = v; return loss(q); }, p.omega)),
        relative_error(d.sigma, finite_diff([&](double v) { auto q = p; q.sigma = v; return loss(q); }, p.sigma)),
        relative_error(d.phase, finite_diff([&](double v) { auto q = p; q.phase = v; return loss(q); }, p.phase)),
    };
    for (double e : errs) kernel_worst = std::max(kernel_worst, e);
  }

  NetworkConfig tiny;
  tiny.blocks = {{1, 1, 3}};
  tiny.n_classes = 2;
  tiny.input_bands = 3;
  tiny.patch_size = 4;
  tiny.seed = 1;
  double net_worst = 0;
  std::size_t checked = 0, failed = 0;
  bool coverage = true;
  for (auto mode : {KernelMode::kGabor, KernelMode::kRegular, KernelMode::kGaborPZeroInit,
                    KernelMode::kGaborNoP}) {
    tiny.mode = mode;
    const auto reports = oracle::grad_check_network(tiny, kNetworkFdTol);
    coverage = coverage && static_cast<std::int64_t>(reports.size()) == count_parameters(tiny);
    for (const auto& r : reports) {
      ++checked;
      if (!r.pass) ++failed;
      net_worst = std::max(net_worst, r.relative_error);
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = kernel_worst < kKernelFdTol && failed == 0 && coverage && secs < kGradSeconds;
  report(2, pass, "analytic gradients",
         fmt("kernel level %d draws, worst rel error %.3g (tol %.0e); tiny network %zu scalars "
             "over 4 modes, %zu failed, worst %.3g (tol %.0e); %.2f s (limit %.0f s)",
             kKernelFdDraws, kernel_worst, kKernelFdTol, checked, failed, net_worst,
             kNetworkFdTol, secs, kGradSeconds));
}

// ---------------------------------------------------------------------------

void criterion_frequency() {
  using namespace freq;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> w_dist(-kPi, kPi), w0_dist(0, kPi), s_dist(0.2, 4),
      p_dist(-2 * kPi, 2 * kPi);
  double mag_worst = 0, sum_worst = 0;
  bool exact_zeros = true;
  for (int t = 0; t < kFreqDraws; ++t) {
    const double w = w_dist(rng), w0 = w0_dist(rng), s = s_dist(rng), p = p_dist(rng);
    for (auto h : {Harmonic::kCos, Harmonic::kSin})
      mag_worst = std::max(mag_worst, std::abs(std::norm(response(h, w, w0, s, p)) -
                                               squared_magnitude(h, w, w0, s, p)));
    sum_worst = std::max(sum_worst, std::abs(dc_response(Harmonic::kCos, w0, s, p) +
                                             dc_response(Harmonic::kSin, w0, s, p) -
                                             std::exp(-s * s * w0 * w0)));
    exact_zeros = exact_zeros && dc_response(Harmonic::kCos, w0, s, kPi / 2) == 0.0 &&
                  dc_response(Harmonic::kSin, w0, s, 0.0) == 0.0;
  }
  const double secs = seconds_since(t0);
  report(3, mag_worst < kFreqTol && sum_worst < kFreqTol && exact_zeros && secs < kFreqSeconds,
         "frequency properties",
         fmt("%d draws, |response|^2 vs squared_magnitude %.3g, DC sum invariant %.3g "
             "(tol %.0e), DC zeros exact: %s, %.3f s",
             kFreqDraws, mag_worst, sum_worst, kFreqTol, exact_zeros ? "yes" : "no", secs));
}

// ---------------------------------------------------------------------------

void criterion_parameter_counts() {
  const auto t0 = Clock::now();
  struct Published {
    const char* label;
    KernelMode mode;
    int kernel_size, bands, classes;
    int thousands[4];
  };
  const Published table[] = {
      {"Gabor-Nets Pavia", KernelMode::kGabor, 5, 103, 9, {8, 17, 48, 172}},
      {"regular CNN Pavia", KernelMode::kRegular, 5, 103, 9, {48, 89, 249, 890}},
      {"Gabor-Nets Houston", KernelMode::kGabor, 3, 144, 15, {11, 20, 51, 177}},
      {"regular CNN Houston", KernelMode::kRegular, 3, 144, 15, {24, 40, 103, 351}},
  };
  int matched = 0, total = 0, matched_without_conv1_bias = 0;
  std::string mismatches;
  for (const auto& row : table)
    for (int b = 1; b <= 4; ++b) {
      NetworkConfig c;
      c.mode = row.mode;
      c.blocks = NetworkConfig::doubling_schedule(b, row.kernel_size);
      c.input_bands = row.bands;
      c.n_classes = row.classes;
      const auto n = count_parameters(c);
      const auto rounded = static_cast<int>(std::llround(n / 1000.0));
      std::int64_t conv1_bias = 0;
      for (const auto& bc : c.blocks) conv1_bias += bc.n_out();
      if (std::llround((n - conv1_bias) / 1000.0) == row.thousands[b - 1])
        ++matched_without_conv1_bias;
      ++total;
      if (rounded == row.thousands[b - 1]) {
        ++matched;
      } else {
        mismatches += fmt("; %s %d blocks: %lld = %dK, published %dK", row.label, b,
                          static_cast<long long>(n), rounded, row.thousands[b - 1]);
      }
    }
  const double secs = seconds_since(t0);
  report(4, matched == total && secs < kCountSeconds, "parameter counts",
         fmt("%d/%d published counts reproduced after rounding to nearest K", matched, total) +
             mismatches);
  if (matched != total)
    std::printf("      note: leaving out the Conv1 bias would match %d/%d; the block formula "
                "used here keeps it\n",
                matched_without_conv1_bias, total);
}

// ---------------------------------------------------------------------------

void criterion_conv_reference() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(505);
  std::uniform_int_distribution<int> batch(1, 3), chans(1, 5), extent(1, 12), half(0, 3),
      coin(0, 1);
  std::normal_distribution<double> gauss;
  double worst = 0;
  int done = 0;
  while (done < kConvShapes) {
    const int k = 2 * half(rng) + 1;
    const bool same = coin(rng);
    const int h = extent(rng), w = extent(rng);
    if (!same && (h < k || w < k)) continue;
    Tensor4<double> in(batch(rng), chans(rng), h, w);
    Tensor4<double> ker(chans(rng), in.channels(), k, k);
    for (double& v : in.data()) v = gauss(rng);
    for (double& v : ker.data()) v = gauss(rng);
    std::vector<double> bias;
    if (coin(rng))
      for (int o = 0; o < ker.batch(); ++o) bias.push_back(gauss(rng));
    const auto out = nn::conv2d_forward<double>(in, ker, bias,
                                                same ? nn::Padding::kSame : nn::Padding::kValid);
    const auto ref = oracle::direct_conv(in, ker, bias, same);
    if (!out.same_shape(ref)) {
      worst = INFINITY;
      break;
    }
    for (std::size_t i = 0; i < out.size(); ++i)
      worst = std::max(worst, std::abs(out.data()[i] - ref.data()[i]));
    ++done;
  }
  const double secs = seconds_since(t0);
  report(5, worst < kConvTol && secs < kConvSeconds, "convolution reference",
         fmt("%d random shapes, max abs difference %.3g (tol %.0e), %.2f s", done, worst, kConvTol,
             secs));
}

// ---------------------------------------------------------------------------
// Shared synthetic scene for criteria 6 and 8.

struct DeskTask {
  data::Scene scene;
  data::SampleSplit split;
  NetworkConfig config;
};

DeskTask make_desk_task() {
  DeskTask t;
  data::SyntheticSceneSpec spec;
  spec.bands = 103;
  spec.height = 64;
  spec.width = 64;
  spec.n_classes = 9;
  spec.seed = 6;
  t.scene = data::make_synthetic_scene(spec);
  t.scene.cube = data::normalize_cube(std::move(t.scene.cube));
  t.split = data::split_per_class(t.scene.labels, kDeskTrainPerClass, data::CapRule::none(), 6);
  t.config.mode = KernelMode::kGabor;
  t.config.blocks = NetworkConfig::doubling_schedule(2, 5);
  t.config.input_bands = 103;
  t.config.n_classes = 9;
  t.config.patch_size = kDeskPatch;
  t.config.epochs = kMaxEpochs;
  t.config.seed = 6;
  return t;
}

struct DeskRun {
  std::vector<EpochRecord> history;
  double held_out{0};
  bool finite{true};
  GaborNet<float> net;
  double seconds{0};
};

DeskRun train_desk(const DeskTask& task, KernelMode mode, int epochs, bool stop_at_target) {
  const auto t0 = Clock::now();
  auto cfg = task.config;
  cfg.mode = mode;
  cfg.epochs = epochs;
  DeskRun run{{}, 0, true, GaborNet<float>::initialize(cfg, cfg.seed), 0};
  const data::PatchDataset train{&task.scene.cube, task.split.train, cfg.patch_size, false};
  const data::PatchDataset test{&task.scene.cube, task.split.test, cfg.patch_size, false};
  auto opts = FitOptions::from(cfg);
  if (stop_at_target)
    opts.stop = [](const EpochRecord& r) { return r.train_accuracy >= kTrainTarget; };
  run.history = fit(run.net, train, opts);
  for (const auto& r : run.history) run.finite = run.finite && std::isfinite(r.loss);
  run.held_out = evaluate(run.net, test, 100, 1).overall_accuracy;
  run.seconds = seconds_since(t0);
  return run;
}

bool records_well_formed(const GaborNet<float>& net, KernelMode mode, double& mean_shift) {
  bool ok = true;
  double shift = 0;
  std::size_t n = 0;
  for (int layer = 1; layer <= net.conv_layer_count(); ++layer) {
    const auto& conv = net.conv_layer(layer);
    const auto recs = net.dump_learned_frequencies(layer);
    ok = ok && recs.size() == static_cast<std::size_t>(conv.n_in) * conv.n_out;
    const int bi = (layer - 1) / 2;
    const auto& bc = net.config().blocks[bi];
    for (const auto& r : recs) {
      const int t = r.out / bc.n_mag, m = r.out % bc.n_mag;
      ok = ok && std::abs(r.theta0 - t * kPi / bc.n_theta) < 1e-6;
      ok = ok && std::abs(r.omega0 - (kPi / 2) * std::pow(0.5, m)) < 1e-6;
      ok = ok && std::isfinite(r.theta) && std::isfinite(r.omega) && std::isfinite(r.phase);
      ok = ok && r.sigma >= kSigmaMin - 1e-6;
      if (mode == KernelMode::kGaborNoP) ok = ok && r.phase == 0.0;
      shift += std::hypot(r.theta - r.theta0, r.omega - r.omega0);
      ++n;
    }
  }
  mean_shift = n ? shift / n : 0;
  return ok && n > 0;
}

void criterion_desk_learning(const DeskTask& task, DeskRun& gabor) {
  gabor = train_desk(task, KernelMode::kGabor, kMaxEpochs, true);
  const double final_train = gabor.history.empty() ? 0 : gabor.history.back().train_accuracy;

  // Regular baseline on identical data.
  bool regular_ok = true;
  double regular_acc = 0, regular_secs = 0;
  std::size_t regular_epochs = 0;
  try {
    const auto regular = train_desk(task, KernelMode::kRegular, kMaxEpochs, true);
    regular_ok = regular.finite && !regular.history.empty();
    regular_acc = regular.held_out;
    regular_secs = regular.seconds;
    regular_epochs = regular.history.size();
  } catch (const std::exception& e) {
    regular_ok = false;
    std::printf("      regular mode raised: %s\n", e.what());
  }

  bool identity = true;
  int n_in = task.config.input_bands;
  for (const auto& bc : task.config.blocks) {
    const std::int64_t k2 = bc.kernel_size * bc.kernel_size, no = bc.n_out();
    const auto diff = count_block_parameters(KernelMode::kRegular, n_in, bc) -
                      count_block_parameters(KernelMode::kGabor, n_in, bc);
    identity = identity && diff == (k2 - 4) * (n_in + no) * no;
    n_in = bc.n_out();
  }

  const bool pass = final_train >= kTrainTarget && gabor.held_out >= kHeldOutTarget &&
                    gabor.finite && regular_ok && identity;
  report(6, pass, "desk-scale learning",
         fmt("gabor: train %.4f after %zu epochs (target %.2f within %d), held-out %.4f "
             "(target %.2f), %.0f s; regular: %s, held-out %.4f after %zu epochs, %.0f s; "
             "per-block count difference (k^2-4)(Ni+No)No: %s",
             final_train, gabor.history.size(), kTrainTarget, kMaxEpochs, gabor.held_out,
             kHeldOutTarget, gabor.seconds, regular_ok ? "trained" : "error", regular_acc,
             regular_epochs, regular_secs, identity ? "exact" : "mismatch"));
}

// ---------------------------------------------------------------------------

void criterion_full_scale(const std::string& pavia_config) {
  if (pavia_config.empty()) {
    std::printf("SKIP  #7  full-scale accuracy: excluded from the default run; "
                "pass --pavia <config> with the Pavia scene files (see README)\n");
    return;
  }
  RunConfig cfg = load_config(pavia_config);
  const auto scene = load_dataset(cfg);
  std::vector<double> acc;
  for (int r = 0; r < kPaviaRuns; ++r) {
    auto run_cfg = cfg.network;
    run_cfg.seed = cfg.network.seed + r;
    const auto split = data::split_per_class(scene.labels, cfg.train_per_class,
                                             data::CapRule::parse(cfg.cap_rule), run_cfg.seed,
                                             cfg.excluded_classes);
    auto net = GaborNet<float>::initialize(run_cfg, run_cfg.seed);
    fit(net, data::PatchDataset{&scene.cube, split.train, run_cfg.patch_size, cfg.augment},
        FitOptions::from(run_cfg));
    acc.push_back(evaluate(net, data::PatchDataset{&scene.cube, split.test, run_cfg.patch_size,
                                                   false},
                           100, cfg.threads)
                      .overall_accuracy);
    std::printf("      run %d (seed %llu): %.4f\n", r + 1,
                static_cast<unsigned long long>(run_cfg.seed), acc.back());
  }
  double mean = 0;
  for (double a : acc) mean += a / acc.size();
  report(7, mean >= kPaviaTarget, "full-scale accuracy",
         fmt("mean over %d runs %.4f (target %.2f)", kPaviaRuns, mean, kPaviaTarget));
}

// ---------------------------------------------------------------------------

void criterion_ablation(const DeskTask& task, const DeskRun& gabor) {
  bool ok = true;
  std::string detail;
  double shift = 0;
  ok = records_well_formed(gabor.net, KernelMode::kGabor, shift) && ok;
  detail += fmt("gabor mean (theta, omega) shift %.4f", shift);
  for (auto mode : {KernelMode::kGaborNoP, KernelMode::kGaborPZeroInit}) {
    try {
      const auto run = train_desk(task, mode, kAblationEpochs, false);
      const bool formed = records_well_formed(run.net, mode, shift);
      ok = ok && run.finite && formed &&
           run.history.size() == static_cast<std::size_t>(kAblationEpochs);
      detail += fmt("; %s: %zu epochs, train %.4f, held-out %.4f, records %s, mean shift %.4f",
                    to_string(mode).c_str(), run.history.size(),
                    run.history.back().train_accuracy, run.held_out,
                    formed ? "well-formed" : "malformed", shift);
    } catch (const std::exception& e) {
      ok = false;
      detail += "; " + to_string(mode) + " raised: " + e.what();
    }
  }
  report(8, ok, "ablation harness", detail);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string pavia;
  app.add_option("--pavia", pavia, "Run config for the full-scale Pavia check");
  CLI11_PARSE(app, argc, argv);

  const auto t0 = Clock::now();
  try {
    criterion_identities();
    criterion_gradients();
    criterion_frequency();
    criterion_parameter_counts();
    criterion_conv_reference();
    const auto task = make_desk_task();
    DeskRun gabor{{}, 0, true, GaborNet<float>::initialize(task.config, 1), 0};
    criterion_desk_learning(task, gabor);
    criterion_full_scale(pavia);
    criterion_ablation(task, gabor);
  } catch (const std::exception& e) {
    std::printf("FAIL  aborted: %s\n", e.what());
    ++failures;
  }
  std::printf("%d criterion failure(s), %.0f s total\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
