// gabornet: train, evaluate and inspect Gabor-Nets from the command line.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gabornet/config.hpp"
#include "gabornet/data.hpp"
#include "gabornet/freq_analysis.hpp"
#include "gabornet/io.hpp"
#include "gabornet/network.hpp"
#include "gabornet/oracle.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace gabornet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> runs;
  std::optional<int> threads;
  std::optional<std::string> mode;
  std::optional<std::string> precision;
};

RunConfig load_run_config(const std::string& path, const Overrides& o) {
  RunConfig cfg = load_config(path);
  if (o.seed) cfg.network.seed = *o.seed;
  if (o.runs) cfg.runs = *o.runs;
  if (o.threads) cfg.threads = *o.threads;
  if (o.mode) cfg.network.mode = parse_kernel_mode(*o.mode);
  if (o.precision) cfg.precision = parse_precision(*o.precision);
  if (cfg.runs < 1) throw ConfigError("--runs must be >= 1");
  if (cfg.threads < 1) throw ConfigError("--threads must be >= 1");
  cfg.network.validate();
  return cfg;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json real_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw RuntimeFailure("cannot write " + p.string());
  return out;
}

// Mean and sample standard deviation, skipping NaN entries.
std::pair<double, double> mean_std(const std::vector<double>& xs) {
  double sum = 0;
  int n = 0;
  for (double x : xs)
    if (std::isfinite(x)) sum += x, ++n;
  if (n == 0) return {std::nan(""), std::nan("")};
  const double mean = sum / n;
  double ss = 0;
  for (double x : xs)
    if (std::isfinite(x)) ss += (x - mean) * (x - mean);
  return {mean, n > 1 ? std::sqrt(ss / (n - 1)) : 0.0};
}

data::SampleSplit make_split(const RunConfig& cfg, const data::Scene& scene) {
  return data::split_per_class(scene.labels, cfg.train_per_class,
                               data::CapRule::parse(cfg.cap_rule), cfg.network.seed,
                               cfg.excluded_classes);
}

// ---------------------------------------------------------------------------
// train

struct RunResult {
  std::vector<EpochRecord> history;
  EvalResult eval;
  double seconds{0};
};

struct Artifacts {
  std::vector<std::string> history, models, learned_frequencies, kernel_dumps;
  std::string metrics;
};

template <typename Scalar>
RunResult train_one(const RunConfig& cfg, const data::Scene& scene, const fs::path& out,
                    const std::string& tag, Artifacts& art) {
  const auto split = make_split(cfg, scene);
  if (split.test.empty()) throw RuntimeFailure("split left no held-out samples");
  const int patch = cfg.network.patch_size;
  const data::PatchDataset train{&scene.cube, split.train, patch, cfg.augment};
  const data::PatchDataset test{&scene.cube, split.test, patch, false};

  auto net = GaborNet<Scalar>::initialize(cfg.network, cfg.network.seed);
  auto opts = FitOptions::from(cfg.network);
  if (cfg.target_train_accuracy) {
    const double target = *cfg.target_train_accuracy;
    opts.stop = [target](const EpochRecord& r) { return r.train_accuracy >= target; };
  }
  const int epochs = cfg.network.epochs;
  opts.on_epoch = [&](const EpochRecord& r) {
    if (r.epoch % 10 == 0 || r.epoch == epochs)
      std::cerr << "seed " << cfg.network.seed << " epoch " << r.epoch << "/" << epochs
                << " loss " << r.loss << " train_acc " << r.train_accuracy << "\n";
  };

  RunResult res;
  const auto t0 = std::chrono::steady_clock::now();
  res.history = fit(net, train, opts);
  res.eval = evaluate(net, test, cfg.network.batch_size, cfg.threads);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const std::string history = "history" + tag + ".csv";
  {
    auto os = open_out(out / history);
    io::write_history_csv(os, res.history);
  }
  art.history.push_back(history);

  RunConfig snapshot_cfg = cfg;
  snapshot_cfg.runs = 1;
  const std::string model = "model" + tag + ".manifest";
  io::save_snapshot(out / model, snapshot_cfg, net);
  art.models.push_back(model);
  art.models.push_back("model" + tag + ".bin");

  if (is_gabor(cfg.network.mode)) {
    for (int layer = 1; layer <= net.conv_layer_count(); ++layer) {
      const std::string f = "learned_freqs" + tag + "_layer" + std::to_string(layer) + ".csv";
      auto os = open_out(out / f);
      io::write_frequency_csv(os, net.dump_learned_frequencies(layer));
      art.learned_frequencies.push_back(f);
    }
    const std::string k = "kernels" + tag + "_layer1.txt";
    auto os = open_out(out / k);
    io::write_kernel_dump(os, net, 1);
    art.kernel_dumps.push_back(k);
  }
  return res;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, const Overrides& o) {
  const std::string started = utc_timestamp();
  const auto wall0 = std::chrono::steady_clock::now();
  RunConfig cfg = load_run_config(config_path, o);
  const data::Scene scene = load_dataset(cfg);
  cfg.network.validate();

  const fs::path out(out_dir);
  fs::create_directories(out);
  const std::uint64_t base_seed = cfg.network.seed;
  Artifacts art;
  std::vector<RunResult> results;
  std::vector<std::uint64_t> seeds;
  for (int r = 0; r < cfg.runs; ++r) {
    RunConfig run_cfg = cfg;
    run_cfg.network.seed = base_seed + static_cast<std::uint64_t>(r);
    seeds.push_back(run_cfg.network.seed);
    const std::string tag = cfg.runs == 1 ? "" : "_run" + std::to_string(r + 1);
    results.push_back(cfg.precision == Precision::kF64
                          ? train_one<double>(run_cfg, scene, out, tag, art)
                          : train_one<float>(run_cfg, scene, out, tag, art));
  }

  const int nc = cfg.network.n_classes;
  std::vector<double> overall;
  std::vector<std::vector<std::int64_t>> confusion(nc, std::vector<std::int64_t>(nc, 0));
  for (const auto& r : results) {
    overall.push_back(r.eval.overall_accuracy);
    for (int a = 0; a < nc; ++a)
      for (int b = 0; b < nc; ++b) confusion[a][b] += r.eval.confusion[a][b];
  }
  const auto [oa_mean, oa_std] = mean_std(overall);
  json per_class = json::array();
  for (int c = 0; c < nc; ++c) {
    std::vector<double> xs;
    for (const auto& r : results) xs.push_back(r.eval.per_class_accuracy[c]);
    const auto [m, s] = mean_std(xs);
    per_class.push_back({{"class", c + 1}, {"mean", real_or_null(m)}, {"std", real_or_null(s)}});
  }
  json per_run = json::array();
  for (std::size_t r = 0; r < results.size(); ++r)
    per_run.push_back({{"seed", seeds[r]},
                       {"overall_accuracy", results[r].eval.overall_accuracy},
                       {"epochs", results[r].history.size()},
                       {"final_train_accuracy",
                        results[r].history.empty() ? json(nullptr)
                                                   : json(results[r].history.back().train_accuracy)},
                       {"seconds", results[r].seconds}});

  json metrics = {
      {"mode", to_string(cfg.network.mode)},
      {"precision", to_string(cfg.precision)},
      {"runs", cfg.runs},
      {"overall_accuracy", {{"mean", oa_mean}, {"std", oa_std}}},
      {"per_class_accuracy", per_class},
      {"confusion", confusion},
      {"test_samples", results.front().eval.total},
      {"parameter_count", count_parameters(cfg.network)},
      {"per_run", per_run},
      {"wall_time_seconds",
       std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count()},
  };
  art.metrics = "metrics.json";
  open_out(out / art.metrics) << metrics.dump(2) << "\n";

  json manifest = {
      {"config", to_config_text(cfg)},
      {"seed", base_seed},
      {"started_at", started},
      {"finished_at", utc_timestamp()},
      {"artifacts",
       {{"history", art.history},
        {"metrics", art.metrics},
        {"models", art.models},
        {"learned_frequencies", art.learned_frequencies},
        {"kernel_dumps", art.kernel_dumps}}},
  };
  open_out(out / "manifest.json") << manifest.dump(2) << "\n";

  for (const auto& group : manifest["artifacts"]) {
    const auto names = group.is_array() ? group : json::array({group});
    for (const auto& n : names)
      if (!fs::exists(out / n.get<std::string>()))
        throw RuntimeFailure("artifact missing after training: " + n.get<std::string>());
  }

  std::cout << "overall_accuracy " << oa_mean << " +/- " << oa_std << " over " << cfg.runs
            << " run(s)\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

template <typename Scalar>
void write_label_map(const GaborNet<Scalar>& net, const data::Scene& scene, int patch,
                     int batch_size, const fs::path& path) {
  data::PatchDataset all{&scene.cube, {}, patch, false};
  for (int r = 0; r < scene.cube.height; ++r)
    for (int c = 0; c < scene.cube.width; ++c) all.samples.push_back({r, c, 1});
  data::BatchIterator<Scalar> it(all, batch_size, std::nullopt);
  std::vector<int> predicted;
  while (auto b = it.next()) {
    const auto logits = net.predict(b->patches);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Eigen::Index arg;
      logits.row(i).maxCoeff(&arg);
      predicted.push_back(static_cast<int>(arg) + 1);
    }
  }
  auto os = open_out(path);
  for (int r = 0; r < scene.cube.height; ++r) {
    for (int c = 0; c < scene.cube.width; ++c)
      os << (c ? "," : "") << predicted[static_cast<std::size_t>(r) * scene.cube.width + c];
    os << "\n";
  }
}

template <typename Scalar>
json eval_snapshot(const io::SnapshotData& snap, const RunConfig& cfg, const data::Scene& scene,
                   const std::string& map_path) {
  const auto net = io::restore_network<Scalar>(snap);
  const auto split = make_split(cfg, scene);
  if (split.test.empty()) throw RuntimeFailure("split left no held-out samples");
  const data::PatchDataset test{&scene.cube, split.test, cfg.network.patch_size, false};
  const auto r = evaluate(net, test, cfg.network.batch_size, cfg.threads);
  if (!map_path.empty())
    write_label_map(net, scene, cfg.network.patch_size, cfg.network.batch_size, map_path);
  json per_class = json::array();
  for (double a : r.per_class_accuracy) per_class.push_back(real_or_null(a));
  return {{"overall_accuracy", r.overall_accuracy},
          {"per_class_accuracy", per_class},
          {"confusion", r.confusion},
          {"test_samples", r.total},
          {"parameter_count", net.parameter_count()}};
}

int cmd_eval(const std::string& model, const std::string& config_path, const std::string& map_path,
             const Overrides& o) {
  if (!fs::exists(model)) throw RuntimeFailure("model file not found: " + model);
  const auto snap = io::read_snapshot_files(model);
  RunConfig cfg = snap.header.config;
  if (!config_path.empty()) {
    // The data section comes from the given config; the network stays as saved.
    const RunConfig d = load_config(config_path);
    cfg.cube_path = d.cube_path;
    cfg.labels_path = d.labels_path;
    cfg.synthetic = d.synthetic;
    cfg.synthetic_spec = d.synthetic_spec;
    cfg.normalize = d.normalize;
    cfg.train_per_class = d.train_per_class;
    cfg.cap_rule = d.cap_rule;
    cfg.excluded_classes = d.excluded_classes;
  }
  if (o.threads) cfg.threads = *o.threads;
  const int bands = cfg.network.input_bands, classes = cfg.network.n_classes;
  const data::Scene scene = load_dataset(cfg);
  if (cfg.network.input_bands != bands || cfg.network.n_classes != classes)
    throw RuntimeFailure("dataset has " + std::to_string(cfg.network.input_bands) + " bands and " +
                         std::to_string(cfg.network.n_classes) + " classes; model expects " +
                         std::to_string(bands) + " and " + std::to_string(classes));
  const json report = cfg.precision == Precision::kF64
                          ? eval_snapshot<double>(snap, cfg, scene, map_path)
                          : eval_snapshot<float>(snap, cfg, scene, map_path);
  std::cout << report.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// inspection commands

int cmd_grad_check(const std::string& config_path, double tolerance, const Overrides& o) {
  const RunConfig cfg = load_run_config(config_path, o);
  const auto reports = oracle::grad_check_network(cfg.network, tolerance);
  int failed = 0;
  double worst = 0;
  for (const auto& r : reports) {
    std::cout << r.parameter << " analytic=" << io::format_real(r.analytic)
              << " numeric=" << io::format_real(r.numeric)
              << " rel_error=" << io::format_real(r.relative_error) << " "
              << (r.pass ? "PASS" : "FAIL") << "\n";
    if (!r.pass) ++failed;
    worst = std::max(worst, r.relative_error);
  }
  std::cout << "checked " << reports.size() << " parameters, " << failed
            << " failed, worst relative error " << worst << "\n";
  return failed ? kExitRuntime : kExitOk;
}

int cmd_param_count(const std::string& config_path, const Overrides& o) {
  const RunConfig cfg = load_run_config(config_path, o);
  std::cout << count_parameters(cfg.network) << "\n";
  return kExitOk;
}

int cmd_freq_dump(double omega0, double sigma, double phase, int points, const std::string& out) {
  if (!(sigma > 0)) throw ConfigError("--sigma must be positive");
  if (points < 2 || points % 2 == 0) throw ConfigError("--points must be odd and >= 3");
  const auto axis = freq::frequency_axis(points);
  if (out.empty()) {
    io::write_freq_dump(std::cout, axis, omega0, sigma, phase);
  } else {
    auto os = open_out(out);
    io::write_freq_dump(os, axis, omega0, sigma, phase);
  }
  return kExitOk;
}

template <typename Fn>
int with_model(const std::string& model, const std::string& out, Fn&& fn) {
  if (!fs::exists(model)) throw RuntimeFailure("model file not found: " + model);
  const auto snap = io::read_snapshot_files(model);
  if (!is_gabor(snap.header.config.network.mode))
    throw RuntimeFailure("model " + model + " is a regular CNN; it has no Gabor parameters");
  const auto net = io::restore_network<double>(snap);
  if (out.empty()) {
    fn(std::cout, net);
  } else {
    auto os = open_out(out);
    fn(os, net);
  }
  return kExitOk;
}

int cmd_synth(const std::string& config_path, const std::string& out_dir) {
  const RunConfig cfg = load_config(config_path);
  const auto scene = data::make_synthetic_scene(cfg.synthetic_spec);
  fs::create_directories(out_dir);
  data::save_cube(scene.cube, fs::path(out_dir) / "scene.hsic");
  data::save_labels(scene.labels, fs::path(out_dir) / "scene.hsil");
  std::cout << "wrote " << (fs::path(out_dir) / "scene.hsic").string() << " and "
            << (fs::path(out_dir) / "scene.hsil").string() << "\n";
  return kExitOk;
}

constexpr const char* kConvertNotes = R"(Scene files used by gabornet (all little-endian):

  cube   "HSIC"  u16 version=1  u16 bands  u32 height  u32 width
         then bands*height*width float32, band-major, row-major
  labels "HSIL"  u16 version=1  u32 height  u32 width  u16 n_classes
         then height*width uint16, row-major, 0 = unlabelled

The public scenes are distributed as MATLAB files. To convert one:

  1. Load the data cube (H x W x B) and ground truth (H x W) with any
     MATLAB-file reader, e.g. scipy.io.loadmat.
  2. Drop noisy or water-absorption bands if the protocol requires it.
  3. Transpose the cube to B x H x W, cast to float32, and write the
     HSIC header followed by the raw values.
  4. Cast the ground truth to uint16 and write the HSIL header followed
     by the raw values.

Then point 'cube' and 'labels' in the run config at the two files.
)";

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gabor-Nets: convolutional networks with learnable Gabor kernels"};
  app.require_subcommand(1);

  std::string config, out, model, map;
  Overrides o;
  int layer = 1, points = 257;
  double omega0 = std::numbers::pi / 2, sigma = 5.0 / 8.0, phase = 0.0, tolerance = 1e-4;

  auto add_overrides = [&](CLI::App* sub, bool training) {
    sub->add_option("--seed", o.seed, "Override the config seed");
    sub->add_option("--mode", o.mode, "Override the kernel mode")
        ->check(CLI::IsMember({"gabor", "regular", "gabor_p_zero_init", "gabor_no_p"}));
    if (training) {
      sub->add_option("--runs", o.runs, "Monte Carlo runs; run r uses seed + r");
      sub->add_option("--threads", o.threads, "Evaluation threads");
      sub->add_option("--precision", o.precision, "Arithmetic precision")
          ->check(CLI::IsMember({"f32", "f64"}));
    }
  };

  auto* train = app.add_subcommand("train", "Train on the configured dataset");
  train->add_option("--config", config, "Run configuration file")->required();
  train->add_option("--out", out, "Output directory")->required();
  add_overrides(train, true);

  auto* eval = app.add_subcommand("eval", "Evaluate a saved model on its held-out split");
  eval->add_option("--model", model, "Model manifest written by train")->required();
  eval->add_option("--config", config, "Take dataset settings from this config instead");
  eval->add_option("--threads", o.threads, "Evaluation threads");
  eval->add_option("--map", map, "Also write a predicted label grid (CSV) for every pixel");

  auto* grad = app.add_subcommand("grad-check", "Finite-difference check of every learnable");
  grad->add_option("--config", config, "Run configuration file")->required();
  grad->add_option("--tol", tolerance, "Relative error tolerance");
  add_overrides(grad, false);

  auto* count = app.add_subcommand("param-count", "Print the number of learnable scalars");
  count->add_option("--config", config, "Run configuration file")->required();
  add_overrides(count, false);

  auto* fdump = app.add_subcommand("freq-dump", "Squared frequency magnitudes of both harmonics");
  fdump->add_option("--omega0", omega0, "Centre frequency");
  fdump->add_option("--sigma", sigma, "Envelope scale");
  fdump->add_option("--phase", phase, "Kernel phase P");
  fdump->add_option("--points", points, "Samples over [-pi, pi]");
  fdump->add_option("--out", out, "Write to a file instead of stdout");

  auto* kdump = app.add_subcommand("kernel-dump", "Print the synthesised kernels of one layer");
  kdump->add_option("--model", model, "Model manifest")->required();
  kdump->add_option("--layer", layer, "Conv layer, 1-based");
  kdump->add_option("--out", out, "Write to a file instead of stdout");

  auto* freqs = app.add_subcommand("learned-freqs", "Initial and learned Gabor parameters");
  freqs->add_option("--model", model, "Model manifest")->required();
  freqs->add_option("--layer", layer, "Conv layer, 1-based");
  freqs->add_option("--out", out, "Write to a file instead of stdout");

  auto* synth = app.add_subcommand("synth", "Write the configured synthetic scene as files");
  synth->add_option("--config", config, "Run configuration file")->required();
  synth->add_option("--out", out, "Output directory")->required();

  auto* convert = app.add_subcommand("convert", "Describe the scene file formats");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(config, out, o);
    if (eval->parsed()) return cmd_eval(model, config, map, o);
    if (grad->parsed()) return cmd_grad_check(config, tolerance, o);
    if (count->parsed()) return cmd_param_count(config, o);
    if (fdump->parsed()) return cmd_freq_dump(omega0, sigma, phase, points, out);
    if (kdump->parsed())
      return with_model(model, out, [&](std::ostream& os, const GaborNet<double>& net) {
        io::write_kernel_dump(os, net, layer);
      });
    if (freqs->parsed())
      return with_model(model, out, [&](std::ostream& os, const GaborNet<double>& net) {
        io::write_frequency_csv(os, net.dump_learned_frequencies(layer));
      });
    if (synth->parsed()) return cmd_synth(config, out);
    if (convert->parsed()) {
      std::cout << kConvertNotes;
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
