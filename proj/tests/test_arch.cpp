#include <doctest.h>

#include <array>

#include "unmix/arch.hpp"
#include "unmix/rng.hpp"

using namespace unmix;

namespace {

MBConfig base_config(std::int64_t bands, std::int64_t c, Variant variant = Variant::mb) {
  MBConfig cfg;
  cfg.bands = bands;
  cfg.endmembers = c;
  cfg.variant = variant;
  return cfg;
}

Tensor random_patches(Rng& rng, std::int64_t b, const MBConfig& cfg) {
  Tensor t(Shape{b, cfg.patch, cfg.patch, cfg.bands});
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(0.0, 1.0));
  return t;
}

}  // namespace

TEST_CASE("feature dims reproduce the reference counts at p=3, 162 bands") {
  MBConfig cfg = base_config(162, 6);
  const FeatureDims d = feature_dims(cfg);
  CHECK(d.d1 == 480);    // 162->154->77->71->35->31->15, 15 * 32
  CHECK(d.d2 == 198);    // 3 * 3 * 22
  CHECK(d.d3 == 46656);  // 3 * 3 * 162 * 32
  CHECK(d.total() == 47334);

  cfg.variant = Variant::mb_dr;
  CHECK(feature_dims(cfg).d3 == 72);  // 1 * 1 * 9 * 8
  cfg.variant = Variant::mb_res;
  CHECK(feature_dims(cfg).d3 == 9 * 162 + 72);  // raw patch ahead of reduced features

  cfg.variant = Variant::mb;
  cfg.branches = {true, false, false};
  const FeatureDims only1d = feature_dims(cfg);
  CHECK(only1d.d1 == 480);
  CHECK(only1d.d2 == 0);
  CHECK(only1d.d3 == 0);
}

TEST_CASE("feature dims off-default examples") {
  MBConfig cfg = base_config(50, 3);
  cfg.filters_3d = {8, 8, 8, 8, 8, 8};
  CHECK(feature_dims(cfg).d3 == 3 * 3 * 50 * 8);

  MBConfig wide = base_config(162, 4);
  wide.patch = 5;
  CHECK(feature_dims(wide).d2 == 5 * 5 * 22);
}

TEST_CASE("infeasible spectral chains raise configuration errors") {
  SUBCASE("9 bands break the 1D chain after the first pool") {
    MBConfig cfg = base_config(9, 3);
    cfg.branches = {true, false, false};
    CHECK_THROWS_AS(feature_dims(cfg), ConfigError);
    CHECK_THROWS_AS(build_model(cfg, 1), ConfigError);
  }
  SUBCASE("fewer than 13 bands collapse the reduction tail") {
    for (std::int64_t bands : {9, 10, 11, 12}) {
      MBConfig cfg = base_config(bands, 3, Variant::mb_dr);
      cfg.branches = {false, false, true};
      CHECK_THROWS_AS(feature_dims(cfg), ConfigError);
    }
  }
  SUBCASE("band floor for spectral branches") {
    MBConfig cfg = base_config(8, 3);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("even patch rejected") {
    MBConfig cfg = base_config(50, 3);
    cfg.patch = 4;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}

TEST_CASE("forward output is B x c and finite") {
  Rng rng(7);
  MBConfig cfg = base_config(44, 6);  // smallest band count the 1D chain accepts
  NetworkT<float> net = build_model(cfg, 42);
  Tensor patches = random_patches(rng, 5, cfg);
  Tensor out = net.predict(patches);
  CHECK(out.shape() == Shape{5, 6});
  CHECK(out.all_finite());

  // single-patch convenience
  Tensor one(Shape{cfg.patch, cfg.patch, cfg.bands});
  std::memcpy(one.data(), patches.data(), static_cast<std::size_t>(one.size()) * sizeof(float));
  Tensor single = net.predict(one);
  CHECK(single.shape() == Shape{6});
  for (std::int64_t e = 0; e < 6; ++e) CHECK(single[e] == out[e]);
}

TEST_CASE("feature_dims equals produced feature lengths over random configs") {
  Rng rng(77);
  int built = 0;
  for (int trial = 0; trial < 40; ++trial) {
    MBConfig cfg;
    cfg.patch = 1 + 2 * rng.uniform_int(3);  // 1, 3, 5
    cfg.bands = 9 + rng.uniform_int(52);
    cfg.endmembers = 1 + rng.uniform_int(6);
    cfg.variant = static_cast<Variant>(rng.uniform_int(3));
    do {
      for (auto& b : cfg.branches) b = rng.uniform() < 0.5;
    } while (cfg.enabled_branch_count() == 0);
    cfg.filters_1d = {static_cast<int>(1 + rng.uniform_int(8)),
                      static_cast<int>(1 + rng.uniform_int(8)),
                      static_cast<int>(1 + rng.uniform_int(8))};
    cfg.filters_2d.assign(static_cast<std::size_t>(1 + rng.uniform_int(5)), 0);
    for (auto& f : cfg.filters_2d) f = static_cast<int>(1 + rng.uniform_int(8));
    for (auto& f : cfg.filters_3d) f = static_cast<int>(1 + rng.uniform_int(6));
    cfg.head_units = {8};
    cfg.reduction_filters = static_cast<int>(1 + rng.uniform_int(6));
    cfg.reduction_spectral_stride = 1 + rng.uniform_int(4);

    FeatureDims dims;
    try {
      dims = feature_dims(cfg);
    } catch (const ConfigError&) {
      CHECK_THROWS_AS(build_model(cfg, trial), ConfigError);
      continue;
    }
    ++built;
    NetworkT<float> net = build_model(cfg, trial);
    Tensor patches = random_patches(rng, 2, cfg);
    const auto feats = net.branch_features(patches);
    std::size_t fi = 0;
    const std::array<std::int64_t, 3> expected{dims.d1, dims.d2, dims.d3};
    for (int b = 0; b < 3; ++b) {
      if (!cfg.branches[static_cast<std::size_t>(b)]) continue;
      CHECK(feats[fi].shape() == Shape{2, expected[static_cast<std::size_t>(b)]});
      ++fi;
    }
    CHECK(net.predict(patches).shape() == Shape{2, cfg.endmembers});
  }
  CHECK(built > 10);  // the generator must exercise real builds, not only rejections
}

TEST_CASE("zeroing one branch touches only its feature slice") {
  Rng rng(13);
  MBConfig cfg = base_config(44, 3);
  cfg.filters_3d = {4, 4, 4, 4, 4, 4};  // keep the 3D slice small
  NetworkT<float> net = build_model(cfg, 5);
  Tensor patches = random_patches(rng, 3, cfg);
  const auto before = net.branch_features(patches);

  for (auto* p : net.branch_params(BranchKind::spatial_2d)) p->value.fill(0.0f);
  const auto after = net.branch_features(patches);

  CHECK(before[0] == after[0]);  // 1D slice untouched
  CHECK(before[2] == after[2]);  // 3D slice untouched
  for (std::int64_t i = 0; i < after[1].size(); ++i) CHECK(after[1][i] == 0.0f);
}

TEST_CASE("MB-Res carries the raw patch bit-exactly") {
  Rng rng(19);
  MBConfig cfg = base_config(30, 3, Variant::mb_res);
  cfg.branches = {false, false, true};
  cfg.reduction_spectral_stride = 2;
  NetworkT<float> net = build_model(cfg, 3);
  Tensor patches = random_patches(rng, 4, cfg);
  const auto feats = net.branch_features(patches);
  const std::int64_t raw_len = cfg.patch * cfg.patch * cfg.bands;
  REQUIRE(feats[0].extent(1) > raw_len);
  for (std::int64_t b = 0; b < 4; ++b) {
    for (std::int64_t i = 0; i < raw_len; ++i) {
      CHECK(feats[0][b * feats[0].extent(1) + i] == patches[b * raw_len + i]);
    }
  }

  // the raw slice ignores every 3D-branch weight
  for (auto* p : net.branch_params(BranchKind::volumetric_3d)) p->value.fill(0.25f);
  const auto feats2 = net.branch_features(patches);
  for (std::int64_t b = 0; b < 4; ++b) {
    for (std::int64_t i = 0; i < raw_len; ++i) {
      CHECK(feats2[0][b * feats2[0].extent(1) + i] == patches[b * raw_len + i]);
    }
  }
}

TEST_CASE("builders are deterministic under a fixed seed") {
  MBConfig cfg = base_config(44, 4);
  NetworkT<float> a = build_model(cfg, 99);
  NetworkT<float> b = build_model(cfg, 99);
  auto pa = a.params(), pb = b.params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
  NetworkT<float> c = build_model(cfg, 100);
  CHECK_FALSE(c.params()[0]->value == pa[0]->value);
}
