#include "gabornet/io.hpp"

#include <bit>
#include <charconv>
#include <fstream>
#include <sstream>

namespace gabornet::io {
namespace {

constexpr const char* kSnapshotMagic = "gabornet-snapshot 1";

std::filesystem::path blob_path(const std::filesystem::path& manifest) {
  auto p = manifest;
  p.replace_extension(".bin");
  return p;
}

}  // namespace

std::string format_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history) {
  os << "epoch,loss,train_acc,lr\n";
  for (const auto& r : history)
    os << r.epoch << "," << format_real(r.loss) << "," << format_real(r.train_accuracy) << ","
       << format_real(r.learning_rate) << "\n";
}

void write_frequency_csv(std::ostream& os, const std::vector<FrequencyRecord>& records) {
  os << "out,in,theta0,omega0,theta,omega,sigma,phase\n";
  for (const auto& r : records)
    os << r.out << "," << r.in << "," << format_real(r.theta0) << "," << format_real(r.omega0)
       << "," << format_real(r.theta) << "," << format_real(r.omega) << ","
       << format_real(r.sigma) << "," << format_real(r.phase) << "\n";
}

void write_freq_dump(std::ostream& os, const std::vector<double>& axis, double omega0,
                     double sigma, double phase) {
  using freq::Harmonic;
  os << "omega,sq_mag_cos,sq_mag_sin\n";
  for (double w : axis)
    os << format_real(w) << ","
       << format_real(freq::squared_magnitude(Harmonic::kCos, w, omega0, sigma, phase)) << ","
       << format_real(freq::squared_magnitude(Harmonic::kSin, w, omega0, sigma, phase)) << "\n";
}

void write_snapshot_files(const std::filesystem::path& manifest, const RunConfig& config,
                          const std::vector<double>& learnables,
                          const std::vector<double>& state) {
  const auto blob = blob_path(manifest);
  {
    std::ofstream out(blob, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write " + blob.string());
    auto put = [&](double v) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      char b[8];
      for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(bits >> (8 * i));
      out.write(b, 8);
    };
    for (double v : learnables) put(v);
    for (double v : state) put(v);
    if (!out) throw RuntimeFailure("write failed for " + blob.string());
  }
  std::ofstream out(manifest);
  if (!out) throw RuntimeFailure("cannot write " + manifest.string());
  out << kSnapshotMagic << "\n"
      << "blob = " << blob.filename().string() << "\n"
      << "learnables = " << learnables.size() << "\n"
      << "state = " << state.size() << "\n"
      << "[config]\n"
      << to_config_text(config);
  if (!out) throw RuntimeFailure("write failed for " + manifest.string());
}

SnapshotData read_snapshot_files(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw RuntimeFailure("cannot open model manifest " + manifest.string());
  std::string line;
  if (!std::getline(in, line) || line != kSnapshotMagic)
    throw RuntimeFailure(manifest.string() + " is not a model manifest");
  SnapshotData snap;
  while (std::getline(in, line) && line != "[config]") {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    key.erase(key.find_last_not_of(' ') + 1);
    value.erase(0, value.find_first_not_of(' '));
    if (key == "learnables") snap.header.learnables = std::stoull(value);
    if (key == "state") snap.header.state = std::stoull(value);
  }
  std::stringstream rest;
  rest << in.rdbuf();
  snap.header.config = parse_config(rest.str());

  const auto blob = blob_path(manifest);
  std::ifstream bin(blob, std::ios::binary);
  if (!bin) throw RuntimeFailure("cannot open parameter blob " + blob.string());
  const std::size_t total = snap.header.learnables + snap.header.state;
  std::vector<double> values(total);
  for (std::size_t i = 0; i < total; ++i) {
    unsigned char b[8];
    if (!bin.read(reinterpret_cast<char*>(b), 8))
      throw RuntimeFailure("parameter blob truncated at value " + std::to_string(i));
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= std::uint64_t(b[k]) << (8 * k);
    values[i] = std::bit_cast<double>(bits);
  }
  if (bin.peek() != std::char_traits<char>::eof())
    throw RuntimeFailure("parameter blob has trailing bytes");
  snap.learnables.assign(values.begin(), values.begin() + snap.header.learnables);
  snap.state.assign(values.begin() + snap.header.learnables, values.end());
  return snap;
}

}  // namespace gabornet::io
