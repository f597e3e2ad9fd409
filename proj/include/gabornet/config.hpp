// Flat key=value run configuration.
//
//   # comment
//   mode = gabor
//   blocks = 2
//   cube = data/paviaU.hsic
//
// Unknown keys are rejected with a ConfigError naming the key.

#ifndef GABORNET_CONFIG_HPP_
#define GABORNET_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "gabornet/data.hpp"
#include "gabornet/network.hpp"

namespace gabornet {

enum class Precision { kF32, kF64 };

struct RunConfig {
  NetworkConfig network;
  // Schedule parameters from which network.blocks is derived.
  int n_blocks{2};
  int n_theta{4};
  int n_mag{4};
  int kernel_size{5};

  std::string cube_path;
  std::string labels_path;
  bool synthetic{false};
  data::SyntheticSceneSpec synthetic_spec;

  int train_per_class{100};
  std::string cap_rule{"none"};
  std::set<int> excluded_classes;
  bool augment{false};
  bool normalize{true};
  // Optional early stop once the epoch's training accuracy reaches this value.
  std::optional<double> target_train_accuracy;

  Precision precision{Precision::kF32};
  int runs{1};
  int threads{1};

  // Rebuilds network.blocks from n_blocks / n_theta / n_mag / kernel_size.
  void apply_schedule();
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
// Serialises every key; parse_config(to_config_text(c)) reproduces c.
std::string to_config_text(const RunConfig& config);

Precision parse_precision(const std::string& text);
std::string to_string(Precision p);

// Loads (or synthesises) the cube and labels named by the configuration and
// updates network.input_bands / network.n_classes to match the data.
data::Scene load_dataset(RunConfig& config);

}  // namespace gabornet

#endif  // GABORNET_CONFIG_HPP_
