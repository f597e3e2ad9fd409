// Text and binary artefacts: training history CSV, kernel and frequency
// dumps, and model snapshots (manifest + flat 64-bit parameter blob).

#ifndef GABORNET_IO_HPP_
#define GABORNET_IO_HPP_

#include <cstdio>
#include <filesystem>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "gabornet/config.hpp"
#include "gabornet/freq_analysis.hpp"
#include "gabornet/network.hpp"

namespace gabornet::io {

// Shortest round-trippable decimal for a double.
std::string format_real(double v);

void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history);
void write_frequency_csv(std::ostream& os, const std::vector<FrequencyRecord>& records);

// omega, sq_mag_cos, sq_mag_sin over `axis`.
void write_freq_dump(std::ostream& os, const std::vector<double>& axis, double omega0,
                     double sigma, double phase);

// One record per kernel of a conv layer: a header line with the Gabor
// parameters followed by k rows of k values; records separated by a blank
// line.
template <typename Scalar>
void write_kernel_dump(std::ostream& os, const GaborNet<Scalar>& net, int layer) {
  if (!is_gabor(net.config().mode))
    throw RuntimeFailure("kernel dump needs a Gabor-mode model");
  const auto& conv = net.conv_layer(layer);
  bool first = true;
  for (int o = 0; o < conv.n_out; ++o) {
    for (int i = 0; i < conv.n_in; ++i) {
      const auto& p = conv.filters[static_cast<std::size_t>(o) * conv.n_in + i];
      const auto g = evaluate_kernel(p.template cast<double>(), conv.grid);
      if (!first) os << "\n";
      first = false;
      os << "layer=" << layer << " out=" << o << " in=" << i
         << " theta=" << format_real(p.theta) << " omega=" << format_real(p.omega)
         << " sigma=" << format_real(p.sigma) << " phase=" << format_real(p.phase) << "\n";
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        for (Eigen::Index c = 0; c < g.cols(); ++c)
          os << (c ? " " : "") << format_real(g(r, c));
        os << "\n";
      }
    }
  }
}

struct SnapshotHeader {
  RunConfig config;
  std::size_t learnables{0};
  std::size_t state{0};
};

// Writes <stem>.manifest and <stem>.bin. The blob holds every learnable in
// declaration order, then BN running means and variances, as little-endian
// 64-bit reals.
void write_snapshot_files(const std::filesystem::path& manifest, const RunConfig& config,
                          const std::vector<double>& learnables,
                          const std::vector<double>& state);
struct SnapshotData {
  SnapshotHeader header;
  std::vector<double> learnables;
  std::vector<double> state;
};
SnapshotData read_snapshot_files(const std::filesystem::path& manifest);

template <typename Scalar>
void save_snapshot(const std::filesystem::path& manifest, const RunConfig& config,
                   const GaborNet<Scalar>& net) {
  std::vector<double> values;
  net.visit_parameters(
      [&](const ParamId&, const Scalar& v, const Scalar&) { values.push_back(double(v)); });
  std::vector<double> state;
  for (Scalar s : net.state_values()) state.push_back(double(s));
  write_snapshot_files(manifest, config, values, state);
}

// Restores learnables and BN state into a network built from the snapshot's
// own configuration.
template <typename Scalar>
GaborNet<Scalar> restore_network(const SnapshotData& snap) {
  auto net = GaborNet<Scalar>::initialize(snap.header.config.network,
                                          snap.header.config.network.seed);
  if (static_cast<std::size_t>(net.parameter_count()) != snap.learnables.size())
    throw RuntimeFailure("snapshot parameter count " + std::to_string(snap.learnables.size()) +
                         " does not match its configuration (" +
                         std::to_string(net.parameter_count()) + ")");
  std::size_t j = 0;
  net.visit_parameters(
      [&](const ParamId&, Scalar& v, Scalar&) { v = static_cast<Scalar>(snap.learnables[j++]); });
  std::vector<Scalar> state(snap.state.begin(), snap.state.end());
  net.set_state_values(state);
  return net;
}

}  // namespace gabornet::io

#endif  // GABORNET_IO_HPP_
