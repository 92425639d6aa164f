#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "dms/data.hpp"
#include "dms/errors.hpp"
#include "dms/raster_io.hpp"
#include "dms/synth.hpp"
#include "oracles.hpp"

using namespace dms;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Band 0 holds the row index, band 1 the column index.
RasterScene coordinate_scene(std::size_t h, std::size_t w, std::uint8_t label = 0) {
  Tensor<float> bands(Shape{1, 2, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      bands.at(0, 0, y, x) = static_cast<float>(y);
      bands.at(0, 1, y, x) = static_cast<float>(x);
    }
  return make_scene("coords", std::move(bands), LabelMap{w, h, std::vector<std::uint8_t>(h * w, label)});
}

RasterScene random_scene(std::size_t b, std::size_t h, std::size_t w, std::uint64_t seed, double void_frac = 0.0) {
  Rng rng(seed);
  Tensor<float> bands(Shape{1, b, h, w});
  for (auto& v : bands.values()) v = static_cast<float>(3.0 + 2.0 * rng.normal());
  LabelMap labels{w, h, std::vector<std::uint8_t>(h * w)};
  for (auto& l : labels.values) l = rng.uniform() < void_frac ? kVoidLabel : static_cast<std::uint8_t>(rng.uniform_int(3));
  return make_scene("rand", std::move(bands), labels);
}

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST_CASE("RSRF and RSLB round-trip bit-identically") {
  TempDir dir("dms_data_rt");
  const RasterScene s = random_scene(5, 7, 9, 1, 0.2);
  save_scene(s, dir.path / "a.rsrf", dir.path / "a.rslb");
  const RasterScene back = load_scene(dir.path / "a.rsrf", dir.path / "a.rslb");
  CHECK(back.band_count() == 5);
  CHECK(back.bands == s.bands);
  CHECK(back.labels == s.labels);
  CHECK(back.void_mask == s.void_mask);
  save_scene(back, dir.path / "b.rsrf", dir.path / "b.rslb");
  CHECK(file_bytes(dir.path / "a.rsrf") == file_bytes(dir.path / "b.rsrf"));
  CHECK(file_bytes(dir.path / "a.rslb") == file_bytes(dir.path / "b.rslb"));
}

TEST_CASE("RSRF header layout") {
  TempDir dir("dms_data_hdr");
  Tensor<float> t(Shape{1, 2, 3, 4}, 1.5f);
  write_rsrf(dir.path / "x.rsrf", t);
  const auto bytes = file_bytes(dir.path / "x.rsrf");
  REQUIRE(bytes.size() == 20 + 4 * 24);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "RSRF");
  CHECK(bytes[4] == 4);   // width
  CHECK(bytes[8] == 3);   // height
  CHECK(bytes[12] == 2);  // bands
  CHECK(bytes[16] == 0);  // dtype
}

TEST_CASE("void sentinel becomes the mask") {
  Tensor<float> bands(Shape{1, 1, 2, 2});
  const RasterScene s = make_scene("v", bands, LabelMap{2, 2, {0, 255, 1, 255}});
  CHECK(s.void_mask == std::vector<std::uint8_t>{0, 1, 0, 1});
  CHECK(s.void_count() == 2);
  CHECK(s.label_map().values == std::vector<std::uint8_t>{0, 255, 1, 255});
}

TEST_CASE("PNG inputs are scaled to [0,1] and alpha is dropped") {
  TempDir dir("dms_data_png");
  Image8 rgba{3, 2, 4, {}};
  for (std::size_t i = 0; i < 6; ++i) {
    rgba.pixels.insert(rgba.pixels.end(), {static_cast<std::uint8_t>(i * 40), 255, 0, 17});
  }
  write_png(dir.path / "img.png", rgba);
  write_png(dir.path / "lbl.png", Image8{3, 2, 1, {0, 1, 255, 1, 0, 0}});
  const RasterScene s = load_scene(dir.path / "img.png", dir.path / "lbl.png");
  CHECK(s.band_count() == 3);
  CHECK(s.bands.at(0, 0, 1, 2) == doctest::Approx(200.0 / 255.0));
  CHECK(s.bands.at(0, 1, 0, 0) == 1.0f);
  CHECK(s.bands.at(0, 2, 0, 0) == 0.0f);
  CHECK(s.void_mask[2] == 1);

  const RasterScene unlabeled = load_scene(dir.path / "img.png");
  CHECK(unlabeled.void_count() == 6);
}

TEST_CASE("load errors") {
  TempDir dir("dms_data_err");
  save_scene(random_scene(2, 4, 4, 2), dir.path / "a.rsrf", dir.path / "a.rslb");
  write_rslb(dir.path / "small.rslb", LabelMap{3, 4, std::vector<std::uint8_t>(12)});
  CHECK_THROWS_AS(load_scene(dir.path / "a.rsrf", dir.path / "small.rslb"), DataError);
  CHECK_THROWS_AS(load_scene(dir.path / "missing.rsrf"), DataError);
  {
    std::ofstream os(dir.path / "bad.rsrf", std::ios::binary);
    os << "RSRX0000000000000000";
  }
  try {
    load_scene(dir.path / "bad.rsrf");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }
  fs::resize_file(dir.path / "a.rsrf", fs::file_size(dir.path / "a.rsrf") - 1);
  CHECK_THROWS_AS(load_scene(dir.path / "a.rsrf"), DataError);
  CHECK_THROWS_AS(load_scene(dir.path / "a.rslb"), DataError);
}

TEST_CASE("normalizer") {
  SUBCASE("constant band is floored and maps to zero") {
    Tensor<float> bands(Shape{1, 2, 3, 3}, 4.0f);
    bands.at(0, 1, 0, 0) = 5.0f;
    RasterScene s = make_scene("c", bands, LabelMap{3, 3, std::vector<std::uint8_t>(9)});
    const std::vector<RasterScene> set = {s};
    const Normalizer n = fit_normalizer(set);
    CHECK(n.stddev[0] == Normalizer::kStdFloor);
    n.apply(s);
    for (std::size_t i = 0; i < 9; ++i) CHECK(s.bands.plane(0, 0)[i] == 0.0f);
  }
  SUBCASE("pooled statistics over two scenes, void excluded") {
    const std::vector<RasterScene> set = {random_scene(3, 10, 12, 3, 0.3), random_scene(3, 7, 5, 4, 0.1)};
    const Normalizer n = fit_normalizer(set);
    for (std::size_t b = 0; b < 3; ++b) {
      std::vector<double> pooled;
      for (const auto& s : set)
        for (std::size_t i = 0; i < s.labels.size(); ++i)
          if (!s.void_mask[i]) pooled.push_back(s.bands.plane(0, b)[i]);
      double mean = 0;
      for (double v : pooled) mean += v;
      mean /= static_cast<double>(pooled.size());
      double var = 0;
      for (double v : pooled) var += (v - mean) * (v - mean);
      var /= static_cast<double>(pooled.size());
      CHECK(n.mean[b] == doctest::Approx(mean).epsilon(1e-12));
      CHECK(n.stddev[b] == doctest::Approx(std::sqrt(var)).epsilon(1e-12));
    }
    // normalized training bands: mean 0, std 1
    std::vector<RasterScene> normed = set;
    for (auto& s : normed) n.apply(s);
    const Normalizer again = fit_normalizer(normed);
    for (std::size_t b = 0; b < 3; ++b) {
      CHECK(std::abs(again.mean[b]) < 1e-5);
      CHECK(again.stddev[b] == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
  SUBCASE("test scenes use training statistics") {
    const std::vector<RasterScene> train = {random_scene(2, 8, 8, 5)};
    RasterScene test = random_scene(2, 8, 8, 6);
    const float raw = test.bands[0];
    const Normalizer n = fit_normalizer(train);
    n.apply(test);
    CHECK(test.bands[0] == doctest::Approx((raw - n.mean[0]) / n.stddev[0]).epsilon(1e-6));
    CHECK(Normalizer::from_text(n.to_text()).mean == n.mean);
    CHECK(Normalizer::from_text(n.to_text()).stddev == n.stddev);
    RasterScene wrong = random_scene(3, 4, 4, 7);
    CHECK_THROWS_AS(n.apply(wrong), DataError);
  }
}

TEST_CASE("reflect index") {
  CHECK(reflect_index(-1, 5) == 1);
  CHECK(reflect_index(-4, 5) == 4);
  CHECK(reflect_index(5, 5) == 3);
  CHECK(reflect_index(8, 5) == 0);
  CHECK(reflect_index(9, 5) == 1);
  CHECK(reflect_index(3, 1) == 0);
}

TEST_CASE("batch extraction") {
  SUBCASE("shape") {
    const std::vector<RasterScene> set = {random_scene(4, 40, 50, 8)};
    Rng rng(1);
    const auto b = extract_batch(set, 25, 16, rng);
    CHECK(b.inputs.shape() == Shape{16, 4, 25, 25});
    CHECK(b.labels.size() == 16u * 25 * 25);
    CHECK(b.void_mask.size() == b.labels.size());
    CHECK(b.size == 25);
  }
  SUBCASE("full-extent patch has one corner") {
    const std::vector<RasterScene> set = {random_scene(2, 20, 20, 9)};
    Rng rng(2);
    const auto b = extract_batch(set, 20, 4, rng);
    for (std::size_t k = 1; k < 4; ++k)
      for (std::size_t i = 0; i < 2 * 400; ++i) CHECK(b.inputs[k * 800 + i] == b.inputs[i]);
    for (std::size_t i = 0; i < 2 * 400; ++i) CHECK(b.inputs[i] == set[0].bands[i]);
  }
  SUBCASE("patches are exact scene windows") {
    const std::vector<RasterScene> set = {coordinate_scene(30, 40), random_scene(2, 33, 31, 10, 0.2)};
    Rng rng(3);
    const auto b = extract_batch(set, 13, 32, rng);
    for (std::size_t k = 0; k < 32; ++k) {
      const bool coords = b.inputs.at(k, 0, 1, 0) == b.inputs.at(k, 0, 0, 0) + 1 &&
                          b.inputs.at(k, 1, 0, 1) == b.inputs.at(k, 1, 0, 0) + 1;
      if (!coords) continue;
      const auto top = static_cast<std::size_t>(b.inputs.at(k, 0, 0, 0));
      const auto left = static_cast<std::size_t>(b.inputs.at(k, 1, 0, 0));
      for (std::size_t y = 0; y < 13; ++y)
        for (std::size_t x = 0; x < 13; ++x) {
          CHECK(b.inputs.at(k, 0, y, x) == static_cast<float>(top + y));
          CHECK(b.inputs.at(k, 1, y, x) == static_cast<float>(left + x));
        }
    }
  }
  SUBCASE("corner coordinates are uniform (chi-squared at 0.01)") {
    const std::vector<RasterScene> set = {coordinate_scene(100, 100)};
    Rng rng(4);
    std::vector<double> rows(76), cols(76);
    for (int i = 0; i < 10000; ++i) {
      const auto b = extract_batch(set, 25, 1, rng);
      const auto top = static_cast<std::size_t>(b.inputs.at(0, 0, 0, 0));
      const auto left = static_cast<std::size_t>(b.inputs.at(0, 1, 0, 0));
      REQUIRE(top <= 75);
      REQUIRE(left <= 75);
      rows[top] += 1;
      cols[left] += 1;
    }
    const std::vector<double> expected(76, 10000.0 / 76);
    CHECK(oracle::chi2_stat(rows, expected) < oracle::chi2_critical_001(75));
    CHECK(oracle::chi2_stat(cols, expected) < oracle::chi2_critical_001(75));
  }
  SUBCASE("void fraction converges to the scene void fraction") {
    const std::vector<RasterScene> set = {random_scene(1, 64, 64, 11, 0.25)};
    const double scene_frac = static_cast<double>(set[0].void_count()) / (64.0 * 64.0);
    Rng rng(5);
    double voids = 0, total = 0;
    for (int i = 0; i < 400; ++i) {
      const auto b = extract_batch(set, 16, 8, rng);
      for (auto v : b.void_mask) voids += v;
      total += static_cast<double>(b.void_mask.size());
    }
    CHECK(voids / total == doctest::Approx(scene_frac).epsilon(0.03));
  }
  SUBCASE("small scenes are reflection padded") {
    const std::vector<RasterScene> set = {coordinate_scene(10, 12)};
    Rng rng(6);
    const auto b = extract_batch(set, 16, 2, rng);
    CHECK(b.inputs.shape() == Shape{2, 2, 16, 16});
    // rows: pad 6 split 3 before, 3 after -> 3 2 1 0 1 ... 9 8 7 6
    CHECK(b.inputs.at(0, 0, 0, 0) == 3.0f);
    CHECK(b.inputs.at(0, 0, 3, 0) == 0.0f);
    CHECK(b.inputs.at(0, 0, 15, 0) == 6.0f);
    CHECK(b.inputs.at(0, 1, 0, 2) == 0.0f);
    CHECK_THROWS_AS(extract_batch(set, 40, 1, rng), DataError);
    CHECK(scene_accepts_size(set[0], 28));
    CHECK_FALSE(scene_accepts_size(set[0], 29));
  }
  SUBCASE("scenes too small for a size are skipped") {
    const std::vector<RasterScene> set = {coordinate_scene(5, 5, 1), coordinate_scene(60, 60, 0)};
    Rng rng(7);
    const auto b = extract_batch(set, 32, 16, rng);
    for (auto l : b.labels) CHECK(l == 0);
  }
  SUBCASE("class balance evens out centre labels") {
    // class 1 covers a 10x10 corner of a 100x100 scene
    Tensor<float> bands(Shape{1, 1, 100, 100});
    LabelMap labels{100, 100, std::vector<std::uint8_t>(10000, 0)};
    for (std::size_t y = 0; y < 10; ++y)
      for (std::size_t x = 0; x < 10; ++x) labels.values[y * 100 + x] = 1;
    const std::vector<RasterScene> set = {make_scene("imb", bands, labels)};
    Rng plain(8), balanced(8);
    auto centre_ones = [&](Rng& rng, bool balance) {
      double ones = 0;
      for (int i = 0; i < 500; ++i) {
        const auto b = extract_batch(set, 9, 1, rng, balance);
        ones += b.labels[4 * 9 + 4];
      }
      return ones / 500;
    };
    CHECK(centre_ones(plain, false) < 0.1);
    CHECK(centre_ones(balanced, true) == doctest::Approx(0.5).epsilon(0.2));
  }
  SUBCASE("bad arguments") {
    const std::vector<RasterScene> set = {coordinate_scene(10, 10)};
    Rng rng(9);
    CHECK_THROWS_AS(extract_batch(set, 0, 1, rng), std::invalid_argument);
    CHECK_THROWS_AS(extract_batch(set, 5, 0, rng), std::invalid_argument);
  }
}

TEST_CASE("synthetic texture dataset") {
  SynthOptions o;
  o.scenes = 2;
  o.height = 96;
  o.width = 80;
  o.seed = 3;
  const auto a = synth_scenes(o);
  const auto b = synth_scenes(o);
  REQUIRE(a.size() == 2);
  CHECK(a[0].bands == b[0].bands);
  CHECK(a[1].labels == b[1].labels);
  CHECK_FALSE(a[0].bands == a[1].bands);
  for (const auto& s : a) {
    CHECK(s.void_count() == 0);
    std::size_t ones = 0;
    for (auto l : s.labels) {
      CHECK(l <= 1);
      ones += l;
    }
    CHECK(ones > s.labels.size() / 4);
    CHECK(ones < 3 * s.labels.size() / 4);
  }
  o.void_fraction = 0.2;
  const auto v = synth_scene(o, 0);
  CHECK(static_cast<double>(v.void_count()) / static_cast<double>(v.labels.size()) == doctest::Approx(0.2).epsilon(0.15));

  TempDir dir("dms_synth");
  o.void_fraction = 0.0;
  write_synth_dataset(dir.path / "one", o);
  write_synth_dataset(dir.path / "two", o);
  for (const char* f : {"scene_000.rsrf", "scene_001.rslb", "manifest.txt"})
    CHECK(file_bytes(dir.path / "one" / f) == file_bytes(dir.path / "two" / f));
  std::ifstream manifest(dir.path / "one" / "manifest.txt");
  const std::string text{std::istreambuf_iterator<char>(manifest), {}};
  CHECK(text.find("min_separable_size = 25") != std::string::npos);
}

TEST_CASE("synthetic core stripes are class-ambiguous, edges are not") {
  SynthOptions o;
  o.scenes = 1;
  o.noise = 0.0;
  const auto s = synth_scene(o, 0);
  // with noise off, pixels inside core stripes look the same for either class
  std::vector<float> seen_core[2];
  for (std::size_t y = 0; y < s.height(); ++y)
    for (std::size_t x = 0; x < s.width(); ++x) {
      const float v = s.bands.at(0, 0, y, x);
      if (v == 0.5f) seen_core[s.labels[y * s.width() + x]].push_back(v);
    }
  CHECK_FALSE(seen_core[0].empty());
  CHECK_FALSE(seen_core[1].empty());
}
