#include <algorithm>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "gabornet/data.hpp"

using namespace gabornet;
using namespace gabornet::data;

namespace {

HsiCube small_cube() {
  HsiCube c(2, 2, 2);
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] = 0.5f * float(i) - 1.0f;
  return c;
}

HsiCube ramp_cube(int b, int h, int w) {
  HsiCube c(b, h, w);
  for (int k = 0; k < b; ++k)
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col) c.at(k, r, col) = float(1000 * k + 10 * r + col);
  return c;
}

// Ground truth with the given number of pixels per class laid out in one row.
GroundTruth ground_truth_with_counts(const std::vector<int>& counts) {
  int total = 0;
  for (int n : counts) total += n;
  GroundTruth gt;
  gt.height = 1;
  gt.width = total + 3;
  gt.n_classes = static_cast<int>(counts.size());
  gt.labels.assign(gt.width, 0);
  int pos = 3;
  for (std::size_t k = 0; k < counts.size(); ++k)
    for (int i = 0; i < counts[k]; ++i) gt.labels[pos++] = static_cast<std::uint16_t>(k + 1);
  return gt;
}

std::size_t error_offset(const std::function<void()>& f) {
  try {
    f();
  } catch (const ParseError& e) {
    return e.offset();
  }
  FAIL("expected a ParseError");
  return 0;
}

std::string error_text(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("cube file round trip") {
  const auto cube = small_cube();
  const auto bytes = encode_cube(cube);
  CHECK(bytes.size() == 4 + 2 + 2 + 4 + 4 + 8 * 4);
  CHECK(bytes[0] == 'H');
  CHECK(bytes[3] == 'C');
  const auto back = decode_cube(bytes);
  CHECK(back.bands == 2);
  CHECK(back.height == 2);
  CHECK(back.width == 2);
  CHECK(back.data == cube.data);
  CHECK(encode_cube(back) == bytes);

  const auto dir = std::filesystem::temp_directory_path() / "gabornet_test_data";
  std::filesystem::create_directories(dir);
  save_cube(cube, dir / "c.hsic");
  CHECK(load_cube(dir / "c.hsic").data == cube.data);
  std::filesystem::remove_all(dir);
}

TEST_CASE("cube parse errors") {
  auto bytes = encode_cube(small_cube());
  SUBCASE("truncated payload names both counts") {
    bytes.resize(bytes.size() - 4);
    const auto msg = error_text([&] { decode_cube(bytes); });
    CHECK(msg.find("expected 8") != std::string::npos);
    CHECK(msg.find("found 7") != std::string::npos);
    CHECK(error_offset([&] { decode_cube(bytes); }) == 16);
  }
  SUBCASE("bad magic") {
    bytes[1] = 'X';
    CHECK(error_offset([&] { decode_cube(bytes); }) == 0);
  }
  SUBCASE("wrong version") {
    bytes[4] = 2;
    CHECK(error_offset([&] { decode_cube(bytes); }) == 4);
  }
  SUBCASE("truncated header") {
    bytes.resize(10);
    CHECK_THROWS_AS(decode_cube(bytes), ParseError);
  }
  SUBCASE("trailing bytes") {
    bytes.push_back(0);
    CHECK_THROWS_AS(decode_cube(bytes), ParseError);
  }
  SUBCASE("non-finite sample") {
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(bytes.data() + 16, &nan, 4);
    CHECK_THROWS_AS(decode_cube(bytes), ParseError);
  }
  SUBCASE("huge dimensions") {
    for (int i = 8; i < 16; ++i) bytes[i] = 0xff;
    CHECK_THROWS_AS(decode_cube(bytes), ParseError);
  }
  CHECK_THROWS_AS(load_cube("/nonexistent/cube.hsic"), RuntimeFailure);
}

TEST_CASE("label file round trip and validation") {
  GroundTruth gt;
  gt.height = 2;
  gt.width = 3;
  gt.n_classes = 4;
  gt.labels = {0, 1, 2, 3, 4, 0};
  const auto bytes = encode_labels(gt);
  const auto back = decode_labels(bytes);
  CHECK(back.labels == gt.labels);
  CHECK(back.n_classes == 4);
  CHECK(encode_labels(back) == bytes);
  CHECK(back.class_counts() == std::vector<std::size_t>{2, 1, 1, 1, 1});

  auto bad = gt;
  bad.labels[2] = 5;
  const auto bad_bytes = encode_labels(bad);
  CHECK_THROWS_AS(decode_labels(bad_bytes), ParseError);
  CHECK(error_offset([&] { decode_labels(bad_bytes); }) == 16 + 2 * 2);

  auto short_bytes = bytes;
  short_bytes.pop_back();
  CHECK_THROWS_AS(decode_labels(short_bytes), ParseError);
  CHECK_THROWS_AS(decode_labels(encode_cube(small_cube())), ParseError);
}

TEST_CASE("normalisation") {
  SUBCASE("constant band") {
    std::vector<float> v(10, 4.0f);
    standardize<float>(v);
    for (float x : v) CHECK(x == 0.0f);
  }
  SUBCASE("two-point band") {
    std::vector<double> v{1.0, 3.0};
    standardize<double>(v);
    CHECK(v[0] == -1.0);
    CHECK(v[1] == 1.0);
  }
  SUBCASE("random bands") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> scale(0.01, 1000.0), shift(-500, 500);
    for (int t = 0; t < 20; ++t) {
      BasicCube<double> c(3, 17, 13);
      std::normal_distribution<double> gauss(shift(rng), scale(rng));
      for (double& x : c.data) x = gauss(rng);
      const auto n = normalize_cube(c);
      for (int b = 0; b < 3; ++b) {
        double m = 0, v = 0;
        for (double x : n.band(b)) m += x;
        m /= n.pixels();
        for (double x : n.band(b)) v += (x - m) * (x - m);
        v /= n.pixels();
        CHECK(std::abs(m) < 1e-9);
        CHECK(std::abs(v - 1) < 1e-9);
      }
    }
    HsiCube f(2, 20, 20);
    std::normal_distribution<double> unit;
    for (float& x : f.data) x = float(5 + 3 * unit(rng));
    const auto nf = normalize_cube(f);
    double m = 0;
    for (float x : nf.band(0)) m += x;
    CHECK(std::abs(m / nf.pixels()) < 1e-6);
  }
}

TEST_CASE("patch extraction") {
  const auto cube = ramp_cube(3, 8, 9);
  SUBCASE("interior window") {
    const auto p = extract_patch<double>(cube, 4, 5, 5);
    for (int b = 0; b < 3; ++b)
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) CHECK(p(0, b, i, j) == cube.at(b, 4 + i - 2, 5 + j - 2));
  }
  SUBCASE("corner reflection") {
    const auto p = extract_patch<double>(cube, 0, 0, 3);
    const int idx[3] = {1, 0, 1};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) CHECK(p(0, 1, i, j) == cube.at(1, idx[i], idx[j]));
    const auto q = extract_patch<double>(cube, 7, 8, 3);
    CHECK(q(0, 0, 2, 2) == cube.at(0, 6, 7));
  }
  SUBCASE("centre value and idempotence") {
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 9; ++c) {
        const auto p = extract_patch<float>(cube, r, c, 7);
        for (int b = 0; b < 3; ++b) CHECK(p(0, b, 3, 3) == cube.at(b, r, c));
      }
    const auto a = extract_patch<float>(cube, 2, 3, 5);
    extract_patch<float>(cube, 6, 1, 5);
    const auto b = extract_patch<float>(cube, 2, 3, 5);
    CHECK(a.storage() == b.storage());
  }
  SUBCASE("reflection helper") {
    CHECK(reflect_index(-1, 5) == 1);
    CHECK(reflect_index(-2, 5) == 2);
    CHECK(reflect_index(5, 5) == 3);
    CHECK(reflect_index(6, 5) == 2);
    CHECK(reflect_index(3, 5) == 3);
    CHECK(reflect_index(-3, 1) == 0);
  }
  CHECK_THROWS_AS(extract_patch<float>(cube, 1, 1, 4), ConfigError);
  CHECK_THROWS_AS(extract_patch<float>(cube, 8, 1, 3), ContractViolation);
}

TEST_CASE("mirror augmentation") {
  const auto cube = ramp_cube(2, 6, 6);
  Tensor4<float> patches(2, 2, 5, 5);
  write_patch(cube, 2, 2, 5, Mirror::kNone, patches, 0);
  write_patch(cube, 3, 3, 5, Mirror::kNone, patches, 1);
  const std::vector<int> labels{4, 7};

  const auto aug = augment_mirror<float>(patches, labels);
  CHECK(aug.patches.batch() == 8);
  CHECK(aug.labels == std::vector<int>{4, 4, 4, 4, 7, 7, 7, 7});
  // Row flip, column flip and transpose of the first patch.
  CHECK(aug.patches(1, 0, 0, 1) == patches(0, 0, 4, 1));
  CHECK(aug.patches(2, 0, 1, 0) == patches(0, 0, 1, 4));
  CHECK(aug.patches(3, 1, 1, 3) == patches(0, 1, 3, 1));

  SUBCASE("mirrors applied twice are the identity") {
    for (auto m : {Mirror::kHorizontalAxis, Mirror::kVerticalAxis, Mirror::kDiagonal}) {
      const auto twice = mirror_patches(mirror_patches(patches, m), m);
      CHECK(twice.storage() == patches.storage());
    }
  }
  SUBCASE("constant patch gives identical copies") {
    Tensor4<float> flat(1, 3, 5, 5, 2.5f);
    const std::vector<int> one{1};
    const auto a = augment_mirror<float>(flat, one);
    for (float v : a.patches.data()) CHECK(v == 2.5f);
  }
  SUBCASE("lazy mirroring matches mirror_patches") {
    for (auto m : {Mirror::kHorizontalAxis, Mirror::kVerticalAxis, Mirror::kDiagonal}) {
      Tensor4<float> lazy(1, 2, 5, 5);
      write_patch(cube, 2, 2, 5, m, lazy, 0);
      Tensor4<float> first(1, 2, 5, 5);
      write_patch(cube, 2, 2, 5, Mirror::kNone, first, 0);
      CHECK(mirror_patches(first, m).storage() == lazy.storage());
    }
  }
  SUBCASE("per-class counts scale by four") {
    const std::vector<int> many{1, 2, 2, 3, 3, 3};
    Tensor4<float> p(6, 1, 3, 3);
    const auto a = augment_mirror<float>(p, many);
    std::map<int, int> before, after;
    for (int l : many) ++before[l];
    for (int l : a.labels) ++after[l];
    for (auto [k, n] : before) CHECK(after[k] == 4 * n);
  }
}

TEST_CASE("per-class split reproduces the 16-class cap table") {
  const std::vector<int> sizes{46, 1428, 830, 237, 483, 730, 28, 478,
                               20, 972,  2455, 593, 205, 1265, 386, 93};
  const auto gt = ground_truth_with_counts(sizes);
  const auto caps = CapRule::indian_pines_16();
  const std::map<int, std::pair<int, int>> expected_50 = {{1, {33, 13}}, {7, {20, 8}},
                                                          {9, {14, 6}}, {16, {50, 43}}};
  const std::map<int, std::pair<int, int>> expected_200 = {
      {1, {33, 13}}, {4, {181, 56}}, {13, {143, 62}}, {16, {75, 18}}, {11, {200, 2255}}};
  const std::map<int, int> totals = {{50, 717}, {100, 1342}, {200, 2466}};

  for (auto [n, total_train] : totals) {
    const auto split = split_per_class(gt, n, caps, 42);
    CHECK(static_cast<int>(split.train.size()) == total_train);
    CHECK(static_cast<int>(split.train.size() + split.test.size()) == 10249);
    std::map<int, int> tr, te;
    for (const auto& s : split.train) ++tr[s.label];
    for (const auto& s : split.test) ++te[s.label];
    const auto& expected = n == 50 ? expected_50 : n == 200 ? expected_200
                                                            : std::map<int, std::pair<int, int>>{
                                                                  {16, {75, 18}}, {4, {100, 137}}};
    for (auto [cls, tt] : expected) {
      CHECK(tr[cls] == tt.first);
      CHECK(te[cls] == tt.second);
    }
  }
  CHECK(CapRule::parse("indian_pines_16").caps == caps.caps);
  CHECK(CapRule::parse("none").caps.empty());
  CHECK(CapRule::parse("3,4").cap_for(2) == 4);
  CHECK_THROWS_AS(CapRule::parse("3,x"), ConfigError);
}

TEST_CASE("split errors") {
  const auto gt = ground_truth_with_counts({5, 0, 7});
  CHECK_THROWS_AS(split_per_class(gt, 2, CapRule::none(), 1), RuntimeFailure);
  CHECK_NOTHROW(split_per_class(gt, 2, CapRule::none(), 1, {2}));
  CHECK_THROWS_AS(split_per_class(gt, 6, CapRule::none(), 1, {2}), ConfigError);
  CHECK_THROWS_AS(split_per_class(gt, 0, CapRule::none(), 1, {2}), ConfigError);
}

TEST_CASE("split disjointness and exhaustiveness over seeds") {
  const auto scene = make_synthetic_scene({.bands = 4, .height = 24, .width = 20, .n_classes = 5});
  const auto& gt = scene.labels;
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const std::set<int> excluded = seed % 3 == 0 ? std::set<int>{2} : std::set<int>{};
    const auto split = split_per_class(gt, 10, CapRule::none(), seed, excluded);
    std::set<std::pair<int, int>> tr, te;
    for (const auto& s : split.train) tr.insert({s.row, s.col});
    for (const auto& s : split.test) te.insert({s.row, s.col});
    CHECK(tr.size() == split.train.size());
    for (const auto& p : tr) CHECK(te.count(p) == 0);
    for (int r = 0; r < gt.height; ++r)
      for (int c = 0; c < gt.width; ++c) {
        const int l = gt.at(r, c);
        const bool listed = tr.count({r, c}) + te.count({r, c}) == 1;
        CHECK(listed == (l != 0 && excluded.count(l) == 0));
      }
    for (const auto& s : split.train) CHECK(s.label == gt.at(s.row, s.col));
  }
  const auto a = split_per_class(gt, 10, CapRule::none(), 9);
  const auto b = split_per_class(gt, 10, CapRule::none(), 9);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
}

TEST_CASE("batch iterator") {
  const auto scene = make_synthetic_scene({.bands = 3, .height = 30, .width = 30, .n_classes = 4});
  PatchDataset set{&scene.cube, {}, 5, false};
  auto all = all_labelled(scene.labels);
  REQUIRE(all.size() >= 250);
  set.samples.assign(all.begin(), all.begin() + 250);

  BatchIterator<float> it(set, 100, 77);
  CHECK(it.batch_count() == 3);
  std::vector<int> sizes;
  std::multiset<int> seen;
  while (auto b = it.next()) {
    sizes.push_back(b->patches.batch());
    CHECK(b->patches.channels() == 3);
    CHECK(b->patches.height() == 5);
    seen.insert(b->labels.begin(), b->labels.end());
  }
  CHECK(sizes == std::vector<int>{100, 100, 50});
  std::multiset<int> expected;
  for (const auto& s : set.samples) expected.insert(s.label - 1);
  CHECK(seen == expected);

  BatchIterator<float> x(set, 64, 5), y(set, 64, 5), z(set, 64, 6);
  const auto bx = x.next(), by = y.next(), bz = z.next();
  CHECK(bx->labels == by->labels);
  CHECK(bx->patches.storage() == by->patches.storage());
  CHECK(bx->patches.storage() != bz->patches.storage());

  set.augment = true;
  BatchIterator<double> aug(set, 300, std::nullopt);
  CHECK(set.size() == 1000);
  const auto first = aug.next();
  CHECK(first->patches.batch() == 300);
  CHECK(first->labels[0] == first->labels[3]);
  CHECK_THROWS_AS(BatchIterator<float>(set, 0, 1), ConfigError);
}

TEST_CASE("synthetic scene") {
  const auto s = make_synthetic_scene({});
  CHECK(s.cube.bands == 103);
  CHECK(s.cube.height == 64);
  CHECK(s.cube.width == 64);
  CHECK(s.labels.n_classes == 9);
  const auto counts = s.labels.class_counts();
  for (int k = 1; k <= 9; ++k) CHECK(counts[k] > 30);
  for (float v : s.cube.data) CHECK(std::isfinite(v));
  const auto again = make_synthetic_scene({});
  CHECK(again.cube.data == s.cube.data);
  CHECK(again.labels.labels == s.labels.labels);
}
