#include "gabornet/data.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>
#include <sstream>

namespace gabornet::data {
namespace {

constexpr std::array<std::uint8_t, 4> kCubeMagic = {'H', 'S', 'I', 'C'};
constexpr std::array<std::uint8_t, 4> kLabelMagic = {'H', 'S', 'I', 'L'};
constexpr std::uint16_t kFormatVersion = 1;

class Writer {
 public:
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : buf_(b) {}

  void magic(const std::array<std::uint8_t, 4>& expect, const char* what) {
    need(4, "magic");
    if (!std::equal(expect.begin(), expect.end(), buf_.begin() + pos_))
      throw ParseError(std::string("bad magic: not a ") + what + " file", pos_);
    pos_ += 4;
  }
  std::uint16_t u16(const char* field) { return static_cast<std::uint16_t>(le(2, field)); }
  std::uint32_t u32(const char* field) { return static_cast<std::uint32_t>(le(4, field)); }
  float f32() { return std::bit_cast<float>(u32("payload")); }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

  void need(std::size_t n, const char* field) {
    if (remaining() < n)
      throw ParseError(std::string("truncated header field '") + field + "'", pos_);
  }

 private:
  std::uint64_t le(int n, const char* field) {
    need(n, field);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(buf_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }
  std::span<const std::uint8_t> buf_;
  std::size_t pos_{0};
};

void check_version(Reader& r) {
  const std::size_t at = r.pos();
  const auto v = r.u16("version");
  if (v != kFormatVersion)
    throw ParseError("unsupported format version " + std::to_string(v), at);
}

// Validates that `count` elements of `elem_size` bytes follow exactly.
std::size_t payload_count(Reader& r, std::uint64_t a, std::uint64_t b, std::uint64_t c,
                          std::size_t elem_size) {
  const std::uint64_t max = std::numeric_limits<std::size_t>::max() / elem_size;
  if ((b != 0 && a > max / b) || (c != 0 && a * b > max / c))
    throw ParseError("dimension product overflows", r.pos());
  const std::uint64_t count = a * b * c;
  const std::size_t have = r.remaining() / elem_size;
  if (have < count || r.remaining() % elem_size != 0) {
    throw ParseError("truncated payload: expected " + std::to_string(count) +
                         " values, found " + std::to_string(have),
                     r.pos());
  }
  if (have > count)
    throw ParseError("trailing bytes after payload: expected " + std::to_string(count) +
                         " values, found " + std::to_string(have),
                     r.pos() + count * elem_size);
  return static_cast<std::size_t>(count);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw RuntimeFailure("write failed for " + path.string());
}

}  // namespace

std::vector<std::size_t> GroundTruth::class_counts() const {
  std::vector<std::size_t> counts(n_classes + 1, 0);
  for (auto l : labels)
    if (l <= n_classes) ++counts[l];
  return counts;
}

std::vector<std::uint8_t> encode_cube(const HsiCube& cube) {
  if (cube.bands < 0 || cube.bands > 0xFFFF)
    throw ContractViolation("encode_cube: band count does not fit in u16");
  require(cube.data.size() == static_cast<std::size_t>(cube.bands) * cube.pixels(),
          "encode_cube: data length does not match dims");
  Writer w;
  w.bytes(kCubeMagic);
  w.u16(kFormatVersion);
  w.u16(static_cast<std::uint16_t>(cube.bands));
  w.u32(static_cast<std::uint32_t>(cube.height));
  w.u32(static_cast<std::uint32_t>(cube.width));
  for (float v : cube.data) w.f32(v);
  return w.take();
}

HsiCube decode_cube(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kCubeMagic, "cube");
  check_version(r);
  const auto b = r.u16("bands");
  const auto h = r.u32("height");
  const auto w = r.u32("width");
  if (h > static_cast<std::uint32_t>(std::numeric_limits<int>::max()) ||
      w > static_cast<std::uint32_t>(std::numeric_limits<int>::max()))
    throw ParseError("spatial dimension exceeds supported range", r.pos());
  const std::size_t count = payload_count(r, b, h, w, 4);
  HsiCube cube;
  cube.bands = b;
  cube.height = static_cast<int>(h);
  cube.width = static_cast<int>(w);
  cube.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = r.pos();
    cube.data[i] = r.f32();
    if (!std::isfinite(cube.data[i])) throw ParseError("non-finite sample", at);
  }
  return cube;
}

std::vector<std::uint8_t> encode_labels(const GroundTruth& gt) {
  require(gt.labels.size() == static_cast<std::size_t>(gt.height) * gt.width,
          "encode_labels: label count does not match dims");
  require(gt.n_classes >= 0 && gt.n_classes <= 0xFFFF, "encode_labels: N_c out of range");
  Writer w;
  w.bytes(kLabelMagic);
  w.u16(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(gt.height));
  w.u32(static_cast<std::uint32_t>(gt.width));
  w.u16(static_cast<std::uint16_t>(gt.n_classes));
  for (auto l : gt.labels) w.u16(l);
  return w.take();
}

GroundTruth decode_labels(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kLabelMagic, "label");
  check_version(r);
  const auto h = r.u32("height");
  const auto w = r.u32("width");
  const auto nc = r.u16("n_classes");
  if (h > static_cast<std::uint32_t>(std::numeric_limits<int>::max()) ||
      w > static_cast<std::uint32_t>(std::numeric_limits<int>::max()))
    throw ParseError("spatial dimension exceeds supported range", r.pos());
  const std::size_t count = payload_count(r, h, w, 1, 2);
  GroundTruth gt;
  gt.height = static_cast<int>(h);
  gt.width = static_cast<int>(w);
  gt.n_classes = nc;
  gt.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = r.pos();
    gt.labels[i] = r.u16("label");
    if (gt.labels[i] > nc)
      throw ParseError("label " + std::to_string(gt.labels[i]) + " exceeds N_c = " +
                           std::to_string(nc),
                       at);
  }
  return gt;
}

HsiCube load_cube(const std::filesystem::path& path) { return decode_cube(read_file(path)); }
GroundTruth load_labels(const std::filesystem::path& path) {
  return decode_labels(read_file(path));
}
void save_cube(const HsiCube& cube, const std::filesystem::path& path) {
  write_file(encode_cube(cube), path);
}
void save_labels(const GroundTruth& gt, const std::filesystem::path& path) {
  write_file(encode_labels(gt), path);
}

CapRule CapRule::indian_pines_16() {
  constexpr int kNone = std::numeric_limits<int>::max();
  return {{33, kNone, kNone, 181, kNone, kNone, 20, kNone, 14, kNone, kNone, kNone, 143,
           kNone, kNone, 75}};
}

// "none", "indian_pines_16" or a comma-separated list of integers.
CapRule CapRule::parse(const std::string& spec) {
  if (spec.empty() || spec == "none") return none();
  if (spec == "indian_pines_16") return indian_pines_16();
  CapRule rule;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      rule.caps.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("invalid cap table entry '" + item + "'");
    }
  }
  return rule;
}

int CapRule::cap_for(int label) const {
  if (caps.empty()) return std::numeric_limits<int>::max();
  if (label < 1 || label > static_cast<int>(caps.size()))
    throw ConfigError("cap table has no entry for class " + std::to_string(label));
  return caps[label - 1];
}

std::vector<Sample> all_labelled(const GroundTruth& gt, const std::set<int>& excluded) {
  std::vector<Sample> out;
  for (int r = 0; r < gt.height; ++r)
    for (int c = 0; c < gt.width; ++c) {
      const int l = gt.at(r, c);
      if (l != 0 && !excluded.contains(l)) out.push_back({r, c, l});
    }
  return out;
}

SampleSplit split_per_class(const GroundTruth& gt, int n_per_class, const CapRule& caps,
                            std::uint64_t seed, const std::set<int>& excluded) {
  if (n_per_class < 1) throw ConfigError("training samples per class must be >= 1");
  std::vector<std::vector<Sample>> by_class(gt.n_classes + 1);
  for (const Sample& s : all_labelled(gt, excluded)) by_class[s.label].push_back(s);

  SampleSplit split;
  split.seed = seed;
  std::mt19937_64 rng(seed);
  for (int cls = 1; cls <= gt.n_classes; ++cls) {
    if (excluded.contains(cls)) continue;
    auto& pool = by_class[cls];
    if (pool.empty())
      throw RuntimeFailure("class " + std::to_string(cls) + " has no labelled pixels");
    const int wanted = std::min(n_per_class, caps.cap_for(cls));
    if (static_cast<std::size_t>(wanted) > pool.size())
      throw ConfigError("class " + std::to_string(cls) + " has " +
                        std::to_string(pool.size()) + " labelled pixels, cannot draw " +
                        std::to_string(wanted) + " without replacement");
    std::shuffle(pool.begin(), pool.end(), rng);
    split.train.insert(split.train.end(), pool.begin(), pool.begin() + wanted);
    split.test.insert(split.test.end(), pool.begin() + wanted, pool.end());
  }
  return split;
}

Scene make_synthetic_scene(const SyntheticSceneSpec& spec) {
  if (spec.bands < 1 || spec.height < 1 || spec.width < 1 || spec.n_classes < 1 ||
      spec.n_classes > 0xFFFF || spec.sites_per_class < 1)
    throw ConfigError("invalid synthetic scene specification");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  struct Site {
    double r, c;
    int label;
  };
  std::vector<Site> sites;
  for (int s = 0; s < spec.sites_per_class; ++s)
    for (int cls = 1; cls <= spec.n_classes; ++cls)
      sites.push_back({unit(rng) * spec.height, unit(rng) * spec.width, cls});

  // Each class spectrum is a baseline plus three Gaussian absorption or
  // reflection bumps at class-specific band positions.
  std::vector<std::vector<double>> spectra(spec.n_classes + 1,
                                           std::vector<double>(spec.bands, 0.0));
  const double width = std::max(2.0, spec.bands / 12.0);
  for (int cls = 1; cls <= spec.n_classes; ++cls) {
    const double base = 0.5 + unit(rng);
    for (int j = 0; j < 3; ++j) {
      const double centre = unit(rng) * (spec.bands - 1);
      const double amp = (unit(rng) < 0.5 ? -1.0 : 1.0) * (0.5 + unit(rng));
      for (int b = 0; b < spec.bands; ++b) {
        const double d = (b - centre) / width;
        spectra[cls][b] += amp * std::exp(-0.5 * d * d);
      }
    }
    for (double& v : spectra[cls]) v += base;
  }

  Scene scene{HsiCube(spec.bands, spec.height, spec.width), GroundTruth{}};
  scene.labels.height = spec.height;
  scene.labels.width = spec.width;
  scene.labels.n_classes = spec.n_classes;
  scene.labels.labels.assign(static_cast<std::size_t>(spec.height) * spec.width, 0);
  for (int r = 0; r < spec.height; ++r) {
    for (int c = 0; c < spec.width; ++c) {
      double best = std::numeric_limits<double>::max();
      int label = 1;
      for (const Site& s : sites) {
        const double d = (s.r - r) * (s.r - r) + (s.c - c) * (s.c - c);
        if (d < best) {
          best = d;
          label = s.label;
        }
      }
      scene.labels.labels[static_cast<std::size_t>(r) * spec.width + c] =
          static_cast<std::uint16_t>(label);
      // Smooth illumination variation shared by all bands.
      const double shade = 1.0 + 0.1 * std::sin(2 * std::numbers::pi * r / spec.height) *
                                     std::cos(2 * std::numbers::pi * c / spec.width);
      for (int b = 0; b < spec.bands; ++b)
        scene.cube.at(b, r, c) =
            static_cast<float>(shade * spectra[label][b] + spec.noise * gauss(rng));
    }
  }
  return scene;
}

}  // namespace gabornet::data
