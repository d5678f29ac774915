#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "unmix/data.hpp"
#include "unmix/rng.hpp"

using namespace unmix;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("unmix_test_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int n = 0;
    return n;
  }
};

Bundle tiny_bundle() {
  Bundle b;
  b.name = "tiny";
  b.cube.height = 2;
  b.cube.width = 3;
  b.cube.bands = 4;
  b.cube.values.resize(2 * 3 * 4);
  for (std::size_t i = 0; i < b.cube.values.size(); ++i) {
    b.cube.values[i] = 0.1f * static_cast<float>(i % 7);
  }
  // adversarial payload values must survive the round trip bit-exactly
  b.cube.values[0] = -0.0f;
  b.cube.values[1] = std::numeric_limits<float>::denorm_min();
  b.cube.values[2] = 1.0f;
  b.cube.values[3] = 16777216.0f;  // exact integer
  b.abundances.height = 2;
  b.abundances.width = 3;
  b.abundances.endmembers = 2;
  b.abundances.values.resize(2 * 3 * 2);
  for (std::int64_t px = 0; px < 6; ++px) {
    const float a = 0.125f * static_cast<float>(px % 5);
    b.abundances.values[static_cast<std::size_t>(2 * px)] = a;
    b.abundances.values[static_cast<std::size_t>(2 * px + 1)] = 1.0f - a;
  }
  b.endmember_names = {"soil", "water"};
  return b;
}

}  // namespace

TEST_CASE("bundle round trip is bit-exact") {
  TempDir dir;
  Bundle b = tiny_bundle();
  save_bundle(dir.path, b);
  Bundle r = load_bundle(dir.path);
  CHECK(r.name == b.name);
  CHECK(r.cube.height == 2);
  CHECK(r.cube.width == 3);
  CHECK(r.cube.bands == 4);
  CHECK(r.endmember_names == b.endmember_names);
  REQUIRE(r.cube.values.size() == b.cube.values.size());
  for (std::size_t i = 0; i < b.cube.values.size(); ++i) {
    CHECK(std::memcmp(&r.cube.values[i], &b.cube.values[i], 4) == 0);  // bitwise, covers -0.0
  }
  CHECK(r.abundances.values == b.abundances.values);
  CHECK_FALSE(r.endmembers.has_value());

  // optional reference spectra round-trip
  Eigen::MatrixXf e(2, 4);
  e << 0.1f, 0.2f, 0.3f, 0.4f, 0.9f, 0.8f, 0.7f, 0.6f;
  b.endmembers = e;
  save_bundle(dir.path, b);
  Bundle r2 = load_bundle(dir.path);
  REQUIRE(r2.endmembers.has_value());
  CHECK(r2.endmembers->isApprox(e));
}

TEST_CASE("bundle loader rejects malformed payloads") {
  TempDir dir;
  Bundle b = tiny_bundle();
  save_bundle(dir.path, b);

  SUBCASE("truncated cube payload") {
    fs::resize_file(dir.path / "cube.f32", 10);
    CHECK_THROWS_AS(load_bundle(dir.path), IoError);
  }
  SUBCASE("missing abundances") {
    fs::remove(dir.path / "abundances.f32");
    CHECK_THROWS_AS(load_bundle(dir.path), IoError);
  }
  SUBCASE("endmember count disagreeing with payload") {
    // metadata says 3 endmembers, payload holds 2 per pixel
    std::ifstream in(dir.path / "metadata.json");
    std::string meta((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const auto at = meta.find("\"endmembers\": 2");
    REQUIRE(at != std::string::npos);
    meta.replace(at, 16, "\"endmembers\": 3");
    std::ofstream out(dir.path / "metadata.json", std::ios::trunc);
    out << meta;
    out.close();
    CHECK_THROWS_AS(load_bundle(dir.path), IoError);
  }
  SUBCASE("non-finite cube value") {
    const float bad = std::numeric_limits<float>::quiet_NaN();
    std::fstream f(dir.path / "cube.f32", std::ios::in | std::ios::out | std::ios::binary);
    f.write(reinterpret_cast<const char*>(&bad), 4);
    f.close();
    CHECK_THROWS_AS(load_bundle(dir.path), IoError);
  }
  SUBCASE("abundances off the simplex") {
    const float bad = 0.9f;  // breaks the sum-to-one invariant
    std::fstream f(dir.path / "abundances.f32", std::ios::in | std::ios::out | std::ios::binary);
    f.write(reinterpret_cast<const char*>(&bad), 4);
    f.close();
    CHECK_THROWS_AS(load_bundle(dir.path), IoError);
  }
}

TEST_CASE("patch extraction") {
  HsiCube cube;
  cube.height = 4;
  cube.width = 5;
  cube.bands = 3;
  cube.values.resize(4 * 5 * 3);
  for (std::size_t i = 0; i < cube.values.size(); ++i) cube.values[i] = static_cast<float>(i);

  SUBCASE("p=1 returns the pixel spectrum") {
    Tensor p = extract_patch(cube, 2, 3, 1);
    CHECK(p.shape() == Shape{1, 1, 3});
    for (std::int64_t b = 0; b < 3; ++b) CHECK(p[b] == cube.at(2, 3, b));
  }
  SUBCASE("interior patch equals the raw window") {
    Tensor p = extract_patch(cube, 2, 2, 3);
    for (std::int64_t dr = 0; dr < 3; ++dr) {
      for (std::int64_t dc = 0; dc < 3; ++dc) {
        for (std::int64_t b = 0; b < 3; ++b) {
          CHECK(p[(dr * 3 + dc) * 3 + b] == cube.at(1 + dr, 1 + dc, b));
        }
      }
    }
  }
  SUBCASE("corner replicates edges") {
    Tensor p = extract_patch(cube, 0, 0, 3);
    for (std::int64_t b = 0; b < 3; ++b) {
      // row -1 replicates row 0; col -1 replicates col 0
      CHECK(p[(0 * 3 + 0) * 3 + b] == cube.at(0, 0, b));
      CHECK(p[(0 * 3 + 1) * 3 + b] == cube.at(0, 0, b));
      CHECK(p[(1 * 3 + 0) * 3 + b] == cube.at(0, 0, b));
      CHECK(p[(1 * 3 + 1) * 3 + b] == cube.at(0, 0, b));
      CHECK(p[(2 * 3 + 2) * 3 + b] == cube.at(1, 1, b));
    }
  }
  SUBCASE("even patch size rejected") {
    CHECK_THROWS_AS(extract_patch(cube, 1, 1, 2), ShapeError);
  }
  SUBCASE("out-of-image pixel rejected") {
    const std::array<std::int64_t, 1> bad{100};
    CHECK_THROWS_AS(extract_patches(cube, bad, 3), ShapeError);
  }
}

TEST_CASE("monte carlo split contracts") {
  const std::int64_t pixels = 400, test_size = 100, folds = 8;
  SplitSpec split = monte_carlo_split(pixels, test_size, folds, 77);
  REQUIRE(split.test_ids.size() == static_cast<std::size_t>(folds));

  for (std::int64_t f = 0; f < folds; ++f) {
    const auto& test = split.test_ids[static_cast<std::size_t>(f)];
    const auto& pool = split.pool_ids[static_cast<std::size_t>(f)];
    CHECK(test.size() == static_cast<std::size_t>(test_size));
    CHECK(pool.size() == static_cast<std::size_t>(pixels - test_size));
    std::vector<bool> seen(static_cast<std::size_t>(pixels), false);
    for (std::int64_t id : test) seen[static_cast<std::size_t>(id)] = true;
    for (std::int64_t id : pool) {
      CHECK_FALSE(seen[static_cast<std::size_t>(id)]);  // disjoint
    }
  }
  CHECK_FALSE(split.test_ids[0] == split.test_ids[1]);  // folds differ

  SplitSpec again = monte_carlo_split(pixels, test_size, folds, 77);
  CHECK(again.test_ids == split.test_ids);
  CHECK(again.pool_ids == split.pool_ids);

  CHECK_THROWS_AS(monte_carlo_split(100, 100, 3, 1), ConfigError);
}

TEST_CASE("training subsets nest across fractions and hit the reference sizes") {
  // Samson-scale geometry: 95 x 95 pixels, 3025 test, pool of 6000
  SplitSpec split = monte_carlo_split(95 * 95, 3025, 3, 123);
  CHECK(split.pool_ids[0].size() == 6000);
  const std::array<std::size_t, 5> expected{60, 360, 780, 1980, 3960};
  std::size_t idx = 0;
  std::vector<std::int64_t> previous;
  for (double fraction : {0.01, 0.06, 0.13, 0.33, 0.66}) {
    auto ids = subsample_training(split, 1, fraction, 9);
    CHECK(ids.size() == expected[idx++]);
    std::vector<bool> inside(static_cast<std::size_t>(95 * 95), false);
    for (std::int64_t id : ids) inside[static_cast<std::size_t>(id)] = true;
    for (std::int64_t id : previous) CHECK(inside[static_cast<std::size_t>(id)]);  // nesting
    previous = ids;
  }
  auto full = subsample_training(split, 1, 1.0, 9);
  CHECK(full == split.pool_ids[1]);

  CHECK_THROWS_AS(subsample_training(split, 0, 0.5, 9), ConfigError);  // unsupported fraction
}

TEST_CASE("awgn hits the requested snr") {
  SynthConfig scfg;
  scfg.height = 100;
  scfg.width = 100;
  scfg.bands = 50;
  scfg.endmembers = 4;
  scfg.seed = 5;
  HsiCube cube = synth_generate(scfg).bundle.cube;

  double signal = 0.0;
  for (float v : cube.values) signal += static_cast<double>(v) * v;
  signal /= static_cast<double>(cube.values.size());

  for (double snr : {20.0, 50.0}) {
    HsiCube noisy = add_awgn(cube, snr, 99);
    double noise = 0.0;
    for (std::size_t i = 0; i < cube.values.size(); ++i) {
      const double d = static_cast<double>(noisy.values[i]) - cube.values[i];
      noise += d * d;
    }
    noise /= static_cast<double>(cube.values.size());
    const double achieved = 10.0 * std::log10(signal / noise);
    CHECK(std::abs(achieved - snr) < 0.2);
  }

  HsiCube same_a = add_awgn(cube, 30.0, 7), same_b = add_awgn(cube, 30.0, 7);
  CHECK(same_a.values == same_b.values);

  HsiCube zeros;
  zeros.height = zeros.width = 2;
  zeros.bands = 1;
  zeros.values.assign(4, 0.0f);
  CHECK_THROWS_AS(add_awgn(zeros, 20.0, 1), NumericError);
}

TEST_CASE("synthetic scenes are exact linear mixtures") {
  SynthConfig cfg;
  cfg.height = 24;
  cfg.width = 24;
  cfg.bands = 30;
  cfg.endmembers = 3;
  cfg.seed = 31;
  SynthScene scene = synth_generate(cfg);
  const auto& cube = scene.bundle.cube;
  const auto& ab = scene.bundle.abundances;
  REQUIRE(scene.endmembers.rows() == 3);
  REQUIRE(scene.endmembers.cols() == 30);

  for (std::int64_t px = 0; px < cube.pixels(); ++px) {
    double sum = 0.0;
    for (std::int64_t e = 0; e < 3; ++e) {
      const float a = ab.values[static_cast<std::size_t>(px * 3 + e)];
      CHECK(a >= 0.0f);
      CHECK(a <= 1.0f);
      sum += a;
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
    for (std::int64_t b = 0; b < 30; ++b) {
      float acc = 0.0f;  // same accumulation order as the generator
      for (std::int64_t e = 0; e < 3; ++e) {
        acc += ab.values[static_cast<std::size_t>(px * 3 + e)] * scene.endmembers(e, b);
      }
      CHECK(cube.values[static_cast<std::size_t>(px * 30 + b)] == acc);
    }
  }

  SynthScene again = synth_generate(cfg);
  CHECK(again.bundle.cube.values == scene.bundle.cube.values);

  SynthConfig bad = cfg;
  bad.endmembers = 40;
  CHECK_THROWS_AS(synth_generate(bad), ConfigError);
}
