// Hyperspectral cubes, label maps, patch extraction, per-class splits,
// mirror augmentation and batching.

#ifndef GABORNET_DATA_HPP_
#define GABORNET_DATA_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "gabornet/common.hpp"
#include "gabornet/tensor.hpp"

namespace gabornet::data {

// Band-major, row-major samples: index (b * height + r) * width + c.
template <typename T>
struct BasicCube {
  int bands{0};
  int height{0};
  int width{0};
  std::vector<T> data;
  // Source band indices that were dropped before this cube was written.
  std::vector<int> removed_bands;

  BasicCube() = default;
  BasicCube(int b, int h, int w)
      : bands(b), height(h), width(w),
        data(static_cast<std::size_t>(b) * h * w, T(0)) {}

  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  T& at(int b, int r, int c) { return data[(static_cast<std::size_t>(b) * height + r) * width + c]; }
  T at(int b, int r, int c) const {
    return data[(static_cast<std::size_t>(b) * height + r) * width + c];
  }
  std::span<T> band(int b) { return std::span<T>(data).subspan(b * pixels(), pixels()); }
  std::span<const T> band(int b) const {
    return std::span<const T>(data).subspan(b * pixels(), pixels());
  }
};

using HsiCube = BasicCube<float>;

struct GroundTruth {
  int height{0};
  int width{0};
  int n_classes{0};
  // 0 = unlabelled, 1..n_classes = class id; row-major.
  std::vector<std::uint16_t> labels;
  std::vector<std::string> class_names;

  int at(int r, int c) const { return labels[static_cast<std::size_t>(r) * width + c]; }
  std::vector<std::size_t> class_counts() const;
};

// Binary file formats (little-endian).
//   cube:   "HSIC" u16 version=1, u16 B, u32 H, u32 W, B*H*W f32
//   labels: "HSIL" u16 version=1, u32 H, u32 W, u16 N_c, H*W u16
std::vector<std::uint8_t> encode_cube(const HsiCube& cube);
HsiCube decode_cube(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_labels(const GroundTruth& gt);
GroundTruth decode_labels(std::span<const std::uint8_t> bytes);

HsiCube load_cube(const std::filesystem::path& path);
GroundTruth load_labels(const std::filesystem::path& path);
void save_cube(const HsiCube& cube, const std::filesystem::path& path);
void save_labels(const GroundTruth& gt, const std::filesystem::path& path);

// Standardise one band to zero mean and unit (population) variance;
// a constant band maps to zeros.
template <typename T>
void standardize(std::span<T> values) {
  if (values.empty()) return;
  long double sum = 0;
  for (T v : values) sum += v;
  const long double mean = sum / values.size();
  long double sq = 0;
  for (T v : values) sq += (v - mean) * (v - mean);
  const long double var = sq / values.size();
  if (!(var > 0)) {
    std::fill(values.begin(), values.end(), T(0));
    return;
  }
  const long double inv = 1.0L / std::sqrt(var);
  for (T& v : values) v = static_cast<T>((v - mean) * inv);
}

template <typename T>
BasicCube<T> normalize_cube(BasicCube<T> cube) {
  for (int b = 0; b < cube.bands; ++b) standardize(cube.band(b));
  return cube;
}

// Reflects an out-of-range index back into [0, n) without repeating the edge
// sample: -1 -> 1, n -> n - 2.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

enum class Mirror : std::uint8_t { kNone = 0, kHorizontalAxis, kVerticalAxis, kDiagonal };

// Copies the S_p x S_p window centred on (row, col) into sample n of dst,
// optionally mirrored. Horizontal-axis mirroring flips rows, vertical-axis
// flips columns and diagonal transposes.
template <typename Scalar, typename T>
void write_patch(const BasicCube<T>& cube, int row, int col, int patch_size,
                 Mirror mirror, Tensor4<Scalar>& dst, int n) {
  const int half = patch_size / 2;
  for (int b = 0; b < cube.bands; ++b) {
    for (int i = 0; i < patch_size; ++i) {
      for (int j = 0; j < patch_size; ++j) {
        int di = i, dj = j;
        switch (mirror) {
          case Mirror::kNone: break;
          case Mirror::kHorizontalAxis: di = patch_size - 1 - i; break;
          case Mirror::kVerticalAxis: dj = patch_size - 1 - j; break;
          case Mirror::kDiagonal: std::swap(di, dj); break;
        }
        const int r = reflect_index(row + i - half, cube.height);
        const int c = reflect_index(col + j - half, cube.width);
        dst(n, b, di, dj) = static_cast<Scalar>(cube.at(b, r, c));
      }
    }
  }
}

inline void check_patch_size(int patch_size) {
  if (patch_size < 1 || patch_size % 2 == 0)
    throw ConfigError("patch size must be odd and positive, got " +
                      std::to_string(patch_size));
}

template <typename Scalar, typename T>
Tensor4<Scalar> extract_patch(const BasicCube<T>& cube, int row, int col,
                              int patch_size) {
  check_patch_size(patch_size);
  if (row < 0 || row >= cube.height || col < 0 || col >= cube.width)
    throw ContractViolation("extract_patch: centre outside image");
  Tensor4<Scalar> out(1, cube.bands, patch_size, patch_size);
  write_patch(cube, row, col, patch_size, Mirror::kNone, out, 0);
  return out;
}

template <typename Scalar>
Tensor4<Scalar> mirror_patches(const Tensor4<Scalar>& patches, Mirror mirror) {
  require(patches.height() == patches.width(), "mirror: patches must be square");
  const int s = patches.height();
  Tensor4<Scalar> out(patches.batch(), patches.channels(), s, s);
  for (int n = 0; n < patches.batch(); ++n)
    for (int c = 0; c < patches.channels(); ++c) {
      const auto src = patches.channel(n, c);
      auto dst = out.channel(n, c);
      switch (mirror) {
        case Mirror::kNone: dst = src; break;
        case Mirror::kHorizontalAxis: dst = src.colwise().reverse(); break;
        case Mirror::kVerticalAxis: dst = src.rowwise().reverse(); break;
        case Mirror::kDiagonal: dst = src.transpose(); break;
      }
    }
  return out;
}

template <typename Scalar>
struct LabelledPatches {
  Tensor4<Scalar> patches;
  std::vector<int> labels;
};

// Original plus the three mirrored copies of every patch, interleaved per
// patch in the order none, horizontal, vertical, diagonal.
template <typename Scalar>
LabelledPatches<Scalar> augment_mirror(const Tensor4<Scalar>& patches,
                                       std::span<const int> labels) {
  require(static_cast<int>(labels.size()) == patches.batch(),
          "augment_mirror: label count mismatch");
  require(patches.height() == patches.width(), "augment_mirror: patches must be square");
  const int s = patches.height(), nc = patches.channels();
  LabelledPatches<Scalar> out{Tensor4<Scalar>(4 * patches.batch(), nc, s, s), {}};
  out.labels.reserve(4 * labels.size());
  constexpr Mirror kOrder[] = {Mirror::kNone, Mirror::kHorizontalAxis,
                               Mirror::kVerticalAxis, Mirror::kDiagonal};
  for (int n = 0; n < patches.batch(); ++n) {
    for (int v = 0; v < 4; ++v) {
      for (int c = 0; c < nc; ++c) {
        const auto src = patches.channel(n, c);
        auto dst = out.patches.channel(4 * n + v, c);
        switch (kOrder[v]) {
          case Mirror::kNone: dst = src; break;
          case Mirror::kHorizontalAxis: dst = src.colwise().reverse(); break;
          case Mirror::kVerticalAxis: dst = src.rowwise().reverse(); break;
          case Mirror::kDiagonal: dst = src.transpose(); break;
        }
      }
      out.labels.push_back(labels[n]);
    }
  }
  return out;
}

struct Sample {
  int row{0};
  int col{0};
  int label{0};  // 1..N_c
  bool operator==(const Sample&) const = default;
};

struct SampleSplit {
  std::vector<Sample> train;
  std::vector<Sample> test;
  std::uint64_t seed{0};
};

// Per-class upper bounds on training draws, indexed by class id - 1.
// An empty table means no caps.
struct CapRule {
  std::vector<int> caps;
  static CapRule none() { return {}; }
  // Training caps of the 16-class Indian Pines protocol.
  static CapRule indian_pines_16();
  static CapRule parse(const std::string& spec);
  int cap_for(int label) const;
};

// Draws min(n_per_class, cap) training pixels per class without replacement;
// all other labelled pixels of that class become test samples. Classes in
// `excluded` are skipped entirely.
SampleSplit split_per_class(const GroundTruth& gt, int n_per_class, const CapRule& caps,
                            std::uint64_t seed, const std::set<int>& excluded = {});

// Every labelled pixel of non-excluded classes, row-major.
std::vector<Sample> all_labelled(const GroundTruth& gt, const std::set<int>& excluded = {});

// A lazily materialised set of labelled patches drawn from one cube.
struct PatchDataset {
  const HsiCube* cube{nullptr};
  std::vector<Sample> samples;
  int patch_size{5};
  bool augment{false};

  std::size_t size() const { return samples.size() * (augment ? 4 : 1); }
  int bands() const { return cube ? cube->bands : 0; }
};

template <typename Scalar>
struct Batch {
  Tensor4<Scalar> patches;
  std::vector<int> labels;  // zero-based class ids
};

// One epoch over a PatchDataset in seeded shuffled order; the last batch may
// be short. A zero seed with shuffle disabled yields dataset order.
template <typename Scalar>
class BatchIterator {
 public:
  BatchIterator(const PatchDataset& set, int batch_size, std::optional<std::uint64_t> shuffle_seed)
      : set_(&set), batch_size_(batch_size), order_(set.size()) {
    if (batch_size <= 0) throw ConfigError("batch size must be positive");
    if (set.cube == nullptr && set.size() > 0)
      throw ContractViolation("BatchIterator: dataset has no cube");
    check_patch_size(set.patch_size);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (shuffle_seed) {
      std::mt19937_64 rng(*shuffle_seed);
      std::shuffle(order_.begin(), order_.end(), rng);
    }
  }

  std::size_t batch_count() const {
    return (order_.size() + batch_size_ - 1) / batch_size_;
  }

  std::optional<Batch<Scalar>> next() {
    if (cursor_ >= order_.size()) return std::nullopt;
    const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
    const int n = static_cast<int>(end - cursor_);
    const int s = set_->patch_size;
    Batch<Scalar> b{Tensor4<Scalar>(n, set_->cube->bands, s, s), {}};
    b.labels.reserve(n);
    const std::size_t variants = set_->augment ? 4 : 1;
    for (int i = 0; i < n; ++i) {
      const std::size_t idx = order_[cursor_ + i];
      const Sample& smp = set_->samples[idx / variants];
      write_patch(*set_->cube, smp.row, smp.col, s, static_cast<Mirror>(idx % variants),
                  b.patches, i);
      b.labels.push_back(smp.label - 1);
    }
    cursor_ = end;
    return b;
  }

 private:
  const PatchDataset* set_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_{0};
};

// Seeded synthetic scene: smooth class regions (Voronoi cells of random
// sites) and class-dependent spectra built from Gaussian bumps plus
// per-pixel noise.
struct SyntheticSceneSpec {
  int bands{103};
  int height{64};
  int width{64};
  int n_classes{9};
  int sites_per_class{3};
  double noise{0.25};
  std::uint64_t seed{1};
};

struct Scene {
  HsiCube cube;
  GroundTruth labels;
};

Scene make_synthetic_scene(const SyntheticSceneSpec& spec);

}  // namespace gabornet::data

#endif  // GABORNET_DATA_HPP_
