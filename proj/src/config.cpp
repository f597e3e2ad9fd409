#include "gabornet/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace gabornet {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* first = value.data();
  const auto* last = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last)
    throw ConfigError("invalid value '" + value + "' for key '" + key + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("invalid boolean '" + value + "' for key '" + key + "'");
}

std::set<int> parse_int_set(const std::string& key, const std::string& value) {
  std::set<int> out;
  if (value.empty() || value == "none") return out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.insert(parse_number<int>(key, trim(item)));
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"mode", [](RunConfig& c, auto&, auto& v) { c.network.mode = parse_kernel_mode(v); }},
      {"blocks", [](RunConfig& c, auto& k, auto& v) { c.n_blocks = parse_number<int>(k, v); }},
      {"n_theta", [](RunConfig& c, auto& k, auto& v) { c.n_theta = parse_number<int>(k, v); }},
      {"n_mag", [](RunConfig& c, auto& k, auto& v) { c.n_mag = parse_number<int>(k, v); }},
      {"kernel_size",
       [](RunConfig& c, auto& k, auto& v) { c.kernel_size = parse_number<int>(k, v); }},
      {"patch_size",
       [](RunConfig& c, auto& k, auto& v) { c.network.patch_size = parse_number<int>(k, v); }},
      {"epochs",
       [](RunConfig& c, auto& k, auto& v) { c.network.epochs = parse_number<int>(k, v); }},
      {"lr",
       [](RunConfig& c, auto& k, auto& v) { c.network.learning_rate = parse_number<double>(k, v); }},
      {"lr_decay",
       [](RunConfig& c, auto& k, auto& v) { c.network.lr_decay = parse_number<double>(k, v); }},
      {"batch_size",
       [](RunConfig& c, auto& k, auto& v) { c.network.batch_size = parse_number<int>(k, v); }},
      {"seed",
       [](RunConfig& c, auto& k, auto& v) { c.network.seed = parse_number<std::uint64_t>(k, v); }},
      {"n_classes",
       [](RunConfig& c, auto& k, auto& v) { c.network.n_classes = parse_number<int>(k, v); }},
      {"input_bands",
       [](RunConfig& c, auto& k, auto& v) { c.network.input_bands = parse_number<int>(k, v); }},
      {"cube", [](RunConfig& c, auto&, auto& v) { c.cube_path = v; }},
      {"labels", [](RunConfig& c, auto&, auto& v) { c.labels_path = v; }},
      {"synthetic", [](RunConfig& c, auto& k, auto& v) { c.synthetic = parse_bool(k, v); }},
      {"synthetic_bands",
       [](RunConfig& c, auto& k, auto& v) { c.synthetic_spec.bands = parse_number<int>(k, v); }},
      {"synthetic_height",
       [](RunConfig& c, auto& k, auto& v) { c.synthetic_spec.height = parse_number<int>(k, v); }},
      {"synthetic_width",
       [](RunConfig& c, auto& k, auto& v) { c.synthetic_spec.width = parse_number<int>(k, v); }},
      {"synthetic_classes",
       [](RunConfig& c, auto& k, auto& v) { c.synthetic_spec.n_classes = parse_number<int>(k, v); }},
      {"synthetic_noise",
       [](RunConfig& c, auto& k, auto& v) { c.synthetic_spec.noise = parse_number<double>(k, v); }},
      {"synthetic_seed",
       [](RunConfig& c, auto& k, auto& v) {
         c.synthetic_spec.seed = parse_number<std::uint64_t>(k, v);
       }},
      {"train_per_class",
       [](RunConfig& c, auto& k, auto& v) { c.train_per_class = parse_number<int>(k, v); }},
      {"cap_rule",
       [](RunConfig& c, auto&, auto& v) {
         data::CapRule::parse(v);
         c.cap_rule = v;
       }},
      {"exclude_classes",
       [](RunConfig& c, auto& k, auto& v) { c.excluded_classes = parse_int_set(k, v); }},
      {"augment", [](RunConfig& c, auto& k, auto& v) { c.augment = parse_bool(k, v); }},
      {"normalize", [](RunConfig& c, auto& k, auto& v) { c.normalize = parse_bool(k, v); }},
      {"target_train_accuracy",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "none")
           c.target_train_accuracy.reset();
         else
           c.target_train_accuracy = parse_number<double>(k, v);
       }},
      {"precision", [](RunConfig& c, auto&, auto& v) { c.precision = parse_precision(v); }},
      {"runs", [](RunConfig& c, auto& k, auto& v) { c.runs = parse_number<int>(k, v); }},
      {"threads", [](RunConfig& c, auto& k, auto& v) { c.threads = parse_number<int>(k, v); }},
  };
  return table;
}

}  // namespace

Precision parse_precision(const std::string& text) {
  if (text == "f32") return Precision::kF32;
  if (text == "f64") return Precision::kF64;
  throw ConfigError("invalid precision '" + text + "' (expected f32 or f64)");
}

std::string to_string(Precision p) { return p == Precision::kF32 ? "f32" : "f64"; }

void RunConfig::apply_schedule() {
  network.blocks = NetworkConfig::doubling_schedule(n_blocks, kernel_size, n_theta, n_mag);
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(cfg, key, value);
  }
  if (cfg.runs < 1) throw ConfigError("runs must be >= 1");
  if (cfg.threads < 1) throw ConfigError("threads must be >= 1");
  if (cfg.train_per_class < 1) throw ConfigError("train_per_class must be >= 1");
  cfg.apply_schedule();
  cfg.network.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_config_text(const RunConfig& c) {
  std::ostringstream os;
  const auto& n = c.network;
  os << "mode = " << to_string(n.mode) << "\n"
     << "blocks = " << c.n_blocks << "\n"
     << "n_theta = " << c.n_theta << "\n"
     << "n_mag = " << c.n_mag << "\n"
     << "kernel_size = " << c.kernel_size << "\n"
     << "patch_size = " << n.patch_size << "\n"
     << "epochs = " << n.epochs << "\n"
     << "lr = " << format_double(n.learning_rate) << "\n"
     << "lr_decay = " << format_double(n.lr_decay) << "\n"
     << "batch_size = " << n.batch_size << "\n"
     << "seed = " << n.seed << "\n"
     << "n_classes = " << n.n_classes << "\n"
     << "input_bands = " << n.input_bands << "\n";
  if (!c.cube_path.empty()) os << "cube = " << c.cube_path << "\n";
  if (!c.labels_path.empty()) os << "labels = " << c.labels_path << "\n";
  os << "synthetic = " << (c.synthetic ? "true" : "false") << "\n";
  if (c.synthetic) {
    const auto& s = c.synthetic_spec;
    os << "synthetic_bands = " << s.bands << "\n"
       << "synthetic_height = " << s.height << "\n"
       << "synthetic_width = " << s.width << "\n"
       << "synthetic_classes = " << s.n_classes << "\n"
       << "synthetic_noise = " << format_double(s.noise) << "\n"
       << "synthetic_seed = " << s.seed << "\n";
  }
  os << "train_per_class = " << c.train_per_class << "\n"
     << "cap_rule = " << c.cap_rule << "\n"
     << "exclude_classes = ";
  if (c.excluded_classes.empty()) os << "none";
  bool first = true;
  for (int e : c.excluded_classes) {
    os << (first ? "" : ",") << e;
    first = false;
  }
  os << "\n"
     << "augment = " << (c.augment ? "true" : "false") << "\n"
     << "normalize = " << (c.normalize ? "true" : "false") << "\n"
     << "target_train_accuracy = "
     << (c.target_train_accuracy ? format_double(*c.target_train_accuracy) : "none") << "\n"
     << "precision = " << to_string(c.precision) << "\n"
     << "runs = " << c.runs << "\n"
     << "threads = " << c.threads << "\n";
  return os.str();
}

data::Scene load_dataset(RunConfig& config) {
  data::Scene scene;
  if (config.synthetic) {
    scene = data::make_synthetic_scene(config.synthetic_spec);
  } else {
    if (config.cube_path.empty() || config.labels_path.empty())
      throw ConfigError("config must name 'cube' and 'labels' files or set synthetic = true");
    scene.cube = data::load_cube(config.cube_path);
    scene.labels = data::load_labels(config.labels_path);
  }
  if (scene.cube.height != scene.labels.height || scene.cube.width != scene.labels.width)
    throw RuntimeFailure("cube and label map dimensions differ");
  if (config.normalize) scene.cube = data::normalize_cube(std::move(scene.cube));
  config.network.input_bands = scene.cube.bands;
  config.network.n_classes = scene.labels.n_classes;
  return scene;
}

}  // namespace gabornet
