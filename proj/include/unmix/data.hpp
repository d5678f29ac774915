#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unmix/tensor.hpp"

namespace unmix {

// Raw hyperspectral scene, reflectance values laid out (row, col, band).
struct HsiCube {
  std::int64_t height = 0, width = 0, bands = 0;
  std::vector<float> values;

  std::int64_t pixels() const { return height * width; }
  float at(std::int64_t r, std::int64_t c, std::int64_t b) const {
    return values[static_cast<std::size_t>((r * width + c) * bands + b)];
  }
  float& at(std::int64_t r, std::int64_t c, std::int64_t b) {
    return values[static_cast<std::size_t>((r * width + c) * bands + b)];
  }
};

// Per-pixel fractional abundances, laid out (row, col, endmember).
struct AbundanceMap {
  std::int64_t height = 0, width = 0, endmembers = 0;
  std::vector<float> values;

  float at(std::int64_t r, std::int64_t c, std::int64_t e) const {
    return values[static_cast<std::size_t>((r * width + c) * endmembers + e)];
  }
};

struct Bundle {
  std::string name;
  HsiCube cube;
  AbundanceMap abundances;
  std::vector<std::string> endmember_names;
  // Reference spectra (c x lambda), present when the bundle ships them.
  std::optional<Eigen::MatrixXf> endmembers;
};

// Bundle directory layout: metadata.json + cube.f32 + abundances.f32
// (+ optional endmembers.f32), all payloads little-endian IEEE-754 single
// precision with no header. save -> load round-trips bit-exactly.
Bundle load_bundle(const std::filesystem::path& dir);
void save_bundle(const std::filesystem::path& dir, const Bundle& bundle);

// p x p spatial window over all bands, centered at (row, col); positions
// outside the image replicate the nearest edge pixel. Output [p, p, bands].
Tensor extract_patch(const HsiCube& cube, std::int64_t row, std::int64_t col, std::int64_t p);

// Batched form over flat pixel ids (row * width + col): [N, p, p, bands].
Tensor extract_patches(const HsiCube& cube, std::span<const std::int64_t> pixel_ids,
                       std::int64_t p);

Tensor gather_abundances(const AbundanceMap& map, std::span<const std::int64_t> pixel_ids);

inline constexpr std::array<double, 6> kTrainingFractions{0.01, 0.06, 0.13, 0.33, 0.66, 1.0};

bool is_supported_fraction(double fraction);

// Monte Carlo cross-validation plan: per fold, a fixed uniform test set and
// the remaining training pool. Test sets do not depend on how much of the
// pool is later consumed.
struct SplitSpec {
  std::int64_t folds = 0;
  std::int64_t test_size = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::int64_t>> test_ids;  // per fold, sorted
  std::vector<std::vector<std::int64_t>> pool_ids;  // per fold, sorted
};

SplitSpec monte_carlo_split(std::int64_t pixel_count, std::int64_t test_size, std::int64_t folds,
                            std::uint64_t seed);

// Uniform subset of round(fraction * pool) training pixels. Subsets taken at
// the same seed nest monotonically across fractions: the 1% draw is a prefix
// of the 6% draw, and so on.
std::vector<std::int64_t> subsample_training(const SplitSpec& split, std::int64_t fold,
                                             double fraction, std::uint64_t seed);

// White zero-mean Gaussian noise at a target SNR; signal power is the mean
// squared value over the whole cube.
HsiCube add_awgn(const HsiCube& cube, double snr_db, std::uint64_t seed);

struct SynthConfig {
  std::int64_t height = 64, width = 64, bands = 60, endmembers = 4;
  int endmember_bumps = 4;       // Gaussian bumps per endmember spectrum
  double dirichlet_alpha = 1.0;  // abundance concentration
  std::int64_t smooth_radius = 2;
  std::optional<double> snr_db;
  std::uint64_t seed = 42;
  std::string name = "synthetic";

  void validate() const;
};

struct SynthScene {
  Bundle bundle;
  Eigen::MatrixXf endmembers;  // c x lambda
};

// Linear-mixture scene: smooth random endmember spectra in [0, 1], spatially
// smoothed Dirichlet abundances, cube = abundances x endmembers (+ AWGN).
SynthScene synth_generate(const SynthConfig& cfg);

}  // namespace unmix
