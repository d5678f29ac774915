#include "unmix/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "unmix/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "bundle payloads are little-endian; big-endian hosts need byte swaps");

namespace unmix {

namespace {

using nlohmann::json;

std::vector<float> read_f32(const std::filesystem::path& path, std::int64_t expected,
                            const char* what) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open " + path.string());
  const std::int64_t bytes = static_cast<std::int64_t>(in.tellg());
  if (bytes != expected * static_cast<std::int64_t>(sizeof(float))) {
    throw IoError(std::string(what) + " payload holds " + std::to_string(bytes) +
                  " bytes, expected " + std::to_string(expected * 4) + " (" + path.string() + ")");
  }
  std::vector<float> out(static_cast<std::size_t>(expected));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(out.data()), bytes);
  if (!in) throw IoError("short read on " + path.string());
  return out;
}

void write_f32(const std::filesystem::path& path, std::span<const float> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw IoError("short write on " + path.string());
}

void check_ground_truth(const AbundanceMap& map) {
  const std::int64_t c = map.endmembers;
  for (std::int64_t px = 0; px < map.height * map.width; ++px) {
    double sum = 0.0;
    for (std::int64_t e = 0; e < c; ++e) {
      const float v = map.values[static_cast<std::size_t>(px * c + e)];
      if (!(v >= 0.0f && v <= 1.0f)) {
        throw IoError("abundance outside [0,1] at pixel " + std::to_string(px));
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-3) {
      throw IoError("abundances at pixel " + std::to_string(px) + " sum to " +
                    std::to_string(sum) + ", expected 1 within 1e-3");
    }
  }
}

}  // namespace

Bundle load_bundle(const std::filesystem::path& dir) {
  std::ifstream meta_in(dir / "metadata.json");
  if (!meta_in) throw IoError("missing metadata.json in " + dir.string());
  json meta;
  try {
    meta_in >> meta;
  } catch (const json::exception& e) {
    throw IoError("malformed metadata.json in " + dir.string() + ": " + e.what());
  }
  Bundle b;
  try {
    b.name = meta.at("name").get<std::string>();
    b.cube.height = meta.at("height").get<std::int64_t>();
    b.cube.width = meta.at("width").get<std::int64_t>();
    b.cube.bands = meta.at("bands").get<std::int64_t>();
    b.abundances.height = b.cube.height;
    b.abundances.width = b.cube.width;
    b.abundances.endmembers = meta.at("endmembers").get<std::int64_t>();
    if (meta.contains("endmember_names")) {
      b.endmember_names = meta.at("endmember_names").get<std::vector<std::string>>();
    }
  } catch (const json::exception& e) {
    throw IoError("metadata.json misses a required field: " + std::string(e.what()));
  }
  if (b.cube.height < 1 || b.cube.width < 1 || b.cube.bands < 1 || b.abundances.endmembers < 1) {
    throw IoError("non-positive dimensions in metadata.json");
  }
  b.cube.values = read_f32(dir / "cube.f32", b.cube.pixels() * b.cube.bands, "cube");
  b.abundances.values =
      read_f32(dir / "abundances.f32", b.cube.pixels() * b.abundances.endmembers, "abundance");
  for (float v : b.cube.values) {
    if (!std::isfinite(v)) throw IoError("non-finite value in cube payload");
  }
  check_ground_truth(b.abundances);
  const auto epath = dir / "endmembers.f32";
  if (std::filesystem::exists(epath)) {
    const std::int64_t c = b.abundances.endmembers;
    auto raw = read_f32(epath, c * b.cube.bands, "endmember");
    Eigen::MatrixXf e(c, b.cube.bands);
    for (std::int64_t i = 0; i < c; ++i) {
      for (std::int64_t j = 0; j < b.cube.bands; ++j) {
        e(i, j) = raw[static_cast<std::size_t>(i * b.cube.bands + j)];
      }
    }
    b.endmembers = std::move(e);
  }
  return b;
}

void save_bundle(const std::filesystem::path& dir, const Bundle& bundle) {
  if (bundle.cube.height != bundle.abundances.height ||
      bundle.cube.width != bundle.abundances.width) {
    throw IoError("cube and abundance map dimensions disagree");
  }
  std::filesystem::create_directories(dir);
  json meta{{"name", bundle.name},
            {"height", bundle.cube.height},
            {"width", bundle.cube.width},
            {"bands", bundle.cube.bands},
            {"endmembers", bundle.abundances.endmembers}};
  if (!bundle.endmember_names.empty()) meta["endmember_names"] = bundle.endmember_names;
  std::ofstream meta_out(dir / "metadata.json");
  if (!meta_out) throw IoError("cannot create metadata.json in " + dir.string());
  meta_out << meta.dump(2) << '\n';
  write_f32(dir / "cube.f32", bundle.cube.values);
  write_f32(dir / "abundances.f32", bundle.abundances.values);
  if (bundle.endmembers) {
    const auto& e = *bundle.endmembers;
    std::vector<float> raw(static_cast<std::size_t>(e.rows() * e.cols()));
    for (Eigen::Index i = 0; i < e.rows(); ++i) {
      for (Eigen::Index j = 0; j < e.cols(); ++j) {
        raw[static_cast<std::size_t>(i * e.cols() + j)] = e(i, j);
      }
    }
    write_f32(dir / "endmembers.f32", raw);
  }
}

Tensor extract_patch(const HsiCube& cube, std::int64_t row, std::int64_t col, std::int64_t p) {
  const std::array<std::int64_t, 1> id{row * cube.width + col};
  Tensor batch = extract_patches(cube, id, p);
  return std::move(batch).reshaped({p, p, cube.bands});
}

Tensor extract_patches(const HsiCube& cube, std::span<const std::int64_t> pixel_ids,
                       std::int64_t p) {
  if (p < 1 || p % 2 == 0) {
    throw ShapeError("patch size must be odd and positive, got " + std::to_string(p));
  }
  const std::int64_t n = static_cast<std::int64_t>(pixel_ids.size());
  const std::int64_t half = p / 2;
  Tensor out(Shape{n, p, p, cube.bands});
  float* dst = out.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t id = pixel_ids[static_cast<std::size_t>(i)];
    const std::int64_t row = id / cube.width, col = id % cube.width;
    if (id < 0 || row >= cube.height) {
      throw ShapeError("pixel id " + std::to_string(id) + " outside image");
    }
    for (std::int64_t dr = -half; dr <= half; ++dr) {
      const std::int64_t r = std::clamp<std::int64_t>(row + dr, 0, cube.height - 1);
      for (std::int64_t dc = -half; dc <= half; ++dc) {
        const std::int64_t c = std::clamp<std::int64_t>(col + dc, 0, cube.width - 1);
        std::memcpy(dst, cube.values.data() + (r * cube.width + c) * cube.bands,
                    static_cast<std::size_t>(cube.bands) * sizeof(float));
        dst += cube.bands;
      }
    }
  }
  return out;
}

Tensor gather_abundances(const AbundanceMap& map, std::span<const std::int64_t> pixel_ids) {
  const std::int64_t n = static_cast<std::int64_t>(pixel_ids.size());
  const std::int64_t c = map.endmembers;
  Tensor out(Shape{n, c});
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t id = pixel_ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= map.height * map.width) {
      throw ShapeError("pixel id " + std::to_string(id) + " outside image");
    }
    std::memcpy(out.data() + i * c, map.values.data() + id * c,
                static_cast<std::size_t>(c) * sizeof(float));
  }
  return out;
}

bool is_supported_fraction(double fraction) {
  for (double f : kTrainingFractions) {
    if (std::abs(fraction - f) < 1e-12) return true;
  }
  return false;
}

SplitSpec monte_carlo_split(std::int64_t pixel_count, std::int64_t test_size, std::int64_t folds,
                            std::uint64_t seed) {
  if (folds < 1) throw ConfigError("fold count must be >= 1");
  if (test_size < 1 || test_size >= pixel_count) {
    throw ConfigError("test size " + std::to_string(test_size) +
                      " infeasible for " + std::to_string(pixel_count) + " pixels");
  }
  SplitSpec split;
  split.folds = folds;
  split.test_size = test_size;
  split.seed = seed;
  split.test_ids.resize(static_cast<std::size_t>(folds));
  split.pool_ids.resize(static_cast<std::size_t>(folds));
  std::vector<std::int64_t> ids(static_cast<std::size_t>(pixel_count));
  for (std::int64_t f = 0; f < folds; ++f) {
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(derive_seed(seed, "fold", static_cast<std::uint64_t>(f)));
    rng.shuffle(ids.begin(), ids.end());
    auto& test = split.test_ids[static_cast<std::size_t>(f)];
    auto& pool = split.pool_ids[static_cast<std::size_t>(f)];
    test.assign(ids.begin(), ids.begin() + test_size);
    pool.assign(ids.begin() + test_size, ids.end());
    std::sort(test.begin(), test.end());
    std::sort(pool.begin(), pool.end());
  }
  return split;
}

std::vector<std::int64_t> subsample_training(const SplitSpec& split, std::int64_t fold,
                                             double fraction, std::uint64_t seed) {
  if (fold < 0 || fold >= split.folds) throw ConfigError("fold index out of range");
  if (!is_supported_fraction(fraction)) {
    throw ConfigError("unsupported training fraction " + std::to_string(fraction));
  }
  const auto& pool = split.pool_ids[static_cast<std::size_t>(fold)];
  const std::int64_t take =
      std::llround(fraction * static_cast<double>(pool.size()));
  if (take < 1) throw ConfigError("training fraction selects no pixels");
  // One permutation per (seed, fold); prefixes make the fraction subsets nest.
  std::vector<std::int64_t> shuffled(pool);
  Rng rng(derive_seed(seed, "subsample", static_cast<std::uint64_t>(fold)));
  rng.shuffle(shuffled.begin(), shuffled.end());
  shuffled.resize(static_cast<std::size_t>(take));
  std::sort(shuffled.begin(), shuffled.end());
  return shuffled;
}

HsiCube add_awgn(const HsiCube& cube, double snr_db, std::uint64_t seed) {
  if (!std::isfinite(snr_db)) throw ConfigError("SNR must be finite");
  if (cube.values.empty()) throw ConfigError("empty cube");
  double power = 0.0;
  for (float v : cube.values) power += static_cast<double>(v) * static_cast<double>(v);
  power /= static_cast<double>(cube.values.size());
  if (power == 0.0) throw NumericError("SNR undefined for an all-zero cube");
  const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  HsiCube out = cube;
  Rng rng(seed);
  for (float& v : out.values) v += static_cast<float>(sigma * rng.normal());
  return out;
}

void SynthConfig::validate() const {
  if (height < 1 || width < 1 || bands < 1 || endmembers < 1) {
    throw ConfigError("synthetic scene extents must be positive");
  }
  if (endmembers > bands) throw ConfigError("endmember count exceeds band count");
  if (endmember_bumps < 1) throw ConfigError("need at least one spectral bump");
  if (dirichlet_alpha <= 0.0) throw ConfigError("Dirichlet concentration must be positive");
  if (smooth_radius < 0) throw ConfigError("smoothing radius must be >= 0");
}

SynthScene synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  const std::int64_t h = cfg.height, w = cfg.width, lambda = cfg.bands, c = cfg.endmembers;

  Rng erng(derive_seed(cfg.seed, "endmembers"));
  Eigen::MatrixXf endmembers(c, lambda);
  for (std::int64_t i = 0; i < c; ++i) {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(lambda);
    for (int bump = 0; bump < cfg.endmember_bumps; ++bump) {
      const double amp = erng.uniform(0.3, 1.0);
      const double mu = erng.uniform(0.0, static_cast<double>(lambda - 1));
      const double width_b = erng.uniform(static_cast<double>(lambda) / 20.0,
                                          static_cast<double>(lambda) / 6.0);
      for (std::int64_t b = 0; b < lambda; ++b) {
        const double d = (static_cast<double>(b) - mu) / width_b;
        s[b] += amp * std::exp(-0.5 * d * d);
      }
    }
    const double peak = erng.uniform(0.55, 0.95);
    s *= peak / s.maxCoeff();
    for (std::int64_t b = 0; b < lambda; ++b) endmembers(i, b) = static_cast<float>(s[b]);
  }

  Rng arng(derive_seed(cfg.seed, "abundances"));
  std::vector<double> raw(static_cast<std::size_t>(h * w * c));
  for (std::int64_t px = 0; px < h * w; ++px) {
    double sum = 0.0;
    for (std::int64_t e = 0; e < c; ++e) {
      const double g = arng.gamma(cfg.dirichlet_alpha);
      raw[static_cast<std::size_t>(px * c + e)] = g;
      sum += g;
    }
    for (std::int64_t e = 0; e < c; ++e) raw[static_cast<std::size_t>(px * c + e)] /= sum;
  }

  // separable box blur with edge clamp; a convex combination, so values stay
  // on the simplex up to rounding
  if (cfg.smooth_radius > 0) {
    const std::int64_t r = cfg.smooth_radius;
    std::vector<double> tmp(raw.size());
    for (std::int64_t row = 0; row < h; ++row) {
      for (std::int64_t col = 0; col < w; ++col) {
        for (std::int64_t e = 0; e < c; ++e) {
          double acc = 0.0;
          for (std::int64_t d = -r; d <= r; ++d) {
            const std::int64_t cc = std::clamp<std::int64_t>(col + d, 0, w - 1);
            acc += raw[static_cast<std::size_t>((row * w + cc) * c + e)];
          }
          tmp[static_cast<std::size_t>((row * w + col) * c + e)] =
              acc / static_cast<double>(2 * r + 1);
        }
      }
    }
    for (std::int64_t row = 0; row < h; ++row) {
      for (std::int64_t col = 0; col < w; ++col) {
        for (std::int64_t e = 0; e < c; ++e) {
          double acc = 0.0;
          for (std::int64_t d = -r; d <= r; ++d) {
            const std::int64_t rr = std::clamp<std::int64_t>(row + d, 0, h - 1);
            acc += tmp[static_cast<std::size_t>((rr * w + col) * c + e)];
          }
          raw[static_cast<std::size_t>((row * w + col) * c + e)] =
              acc / static_cast<double>(2 * r + 1);
        }
      }
    }
  }

  SynthScene scene;
  scene.endmembers = endmembers;
  Bundle& b = scene.bundle;
  b.name = cfg.name;
  b.cube.height = h;
  b.cube.width = w;
  b.cube.bands = lambda;
  b.cube.values.resize(static_cast<std::size_t>(h * w * lambda));
  b.abundances.height = h;
  b.abundances.width = w;
  b.abundances.endmembers = c;
  b.abundances.values.resize(static_cast<std::size_t>(h * w * c));
  b.endmembers = endmembers;

  for (std::int64_t px = 0; px < h * w; ++px) {
    double sum = 0.0;
    for (std::int64_t e = 0; e < c; ++e) sum += raw[static_cast<std::size_t>(px * c + e)];
    for (std::int64_t e = 0; e < c; ++e) {
      b.abundances.values[static_cast<std::size_t>(px * c + e)] =
          static_cast<float>(raw[static_cast<std::size_t>(px * c + e)] / sum);
    }
    for (std::int64_t band = 0; band < lambda; ++band) {
      float acc = 0.0f;
      for (std::int64_t e = 0; e < c; ++e) {
        acc += b.abundances.values[static_cast<std::size_t>(px * c + e)] * endmembers(e, band);
      }
      b.cube.values[static_cast<std::size_t>(px * lambda + band)] = acc;
    }
  }

  if (cfg.snr_db) {
    b.cube = add_awgn(b.cube, *cfg.snr_db, derive_seed(cfg.seed, "noise"));
  }
  return scene;
}

}  // namespace unmix
