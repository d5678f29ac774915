#include <doctest.h>

#include <cmath>

#include "unmix/metrics.hpp"
#include "unmix/rng.hpp"

using namespace unmix;

namespace {
constexpr double kPi = 3.14159265358979323846;
}

TEST_CASE("rmse oracles") {
  Eigen::MatrixXd gt(2, 3);
  gt << 0.2, 0.3, 0.5, 0.1, 0.1, 0.8;
  CHECK(rmse(gt, gt) == 0.0);

  Eigen::MatrixXd off = gt.array() + 0.1;
  CHECK(rmse(off, gt) == doctest::Approx(0.1).epsilon(1e-9));

  Eigen::MatrixXd p(1, 2), g(1, 2);
  p << 0, 1;
  g << 1, 0;
  CHECK(rmse(p, g) == doctest::Approx(1.0));

  Eigen::MatrixXd wrong(3, 2);
  CHECK_THROWS_AS(rmse(wrong, gt), ShapeError);
}

TEST_CASE("rmsaad oracles") {
  Eigen::MatrixXd gt(1, 2), pred(1, 2);
  gt << 1, 0;
  pred << 1, 0;
  CHECK(rmsaad(pred, gt) == 0.0);

  pred << 0, 1;
  CHECK(rmsaad(pred, gt) == doctest::Approx(kPi / 2).epsilon(1e-12));

  Eigen::MatrixXd gt2(2, 2), pred2(2, 2);
  gt2 << 1, 0, 1, 0;
  pred2 << 1, 1, 1, 1;
  CHECK(rmsaad(pred2, gt2) == doctest::Approx(kPi / 4).epsilon(1e-12));
}

TEST_CASE("rmsaad zero-vector rule and clamp") {
  Eigen::MatrixXd gt(2, 2), pred(2, 2);
  gt << 1, 0, 1, 1;
  pred << 0, 0, 1, 1;  // first prediction has zero norm
  std::int64_t degenerate = 0;
  const double v = rmsaad(pred, gt, &degenerate);
  CHECK(degenerate == 1);
  CHECK(v == doctest::Approx(std::sqrt((kPi / 2) * (kPi / 2) / 2)));

  // collinear vectors where rounding could push |cos| past 1
  Eigen::MatrixXd a(1, 3), b(1, 3);
  a << 0.1, 0.2, 0.7;
  b = a * 3.0;
  CHECK(std::isfinite(rmsaad(a, b)));
  CHECK(rmsaad(a, b) == doctest::Approx(0.0).epsilon(1e-7));
}

TEST_CASE("rmsaad is scale-invariant per pixel") {
  Rng rng(8);
  Eigen::MatrixXd pred(6, 4), gt(6, 4);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 4; ++j) {
      pred(i, j) = rng.uniform(0.01, 1.0);
      gt(i, j) = rng.uniform(0.01, 1.0);
    }
  }
  const double base = rmsaad(pred, gt);
  for (double k : {0.5, 2.0, 117.0}) {
    CHECK(rmsaad((pred * k).eval(), gt) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("rmse symmetry and pixel permutation invariance") {
  Rng rng(9);
  Eigen::MatrixXd pred(5, 3), gt(5, 3);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 3; ++j) {
      pred(i, j) = rng.uniform(0.0, 1.0);
      gt(i, j) = rng.uniform(0.0, 1.0);
    }
  }
  CHECK(rmse(pred, gt) == rmse(gt, pred));
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(5);
  perm.setIdentity();
  std::swap(perm.indices()[0], perm.indices()[3]);
  std::swap(perm.indices()[1], perm.indices()[4]);
  CHECK(rmse((perm * pred).eval(), (perm * gt).eval()) == doctest::Approx(rmse(pred, gt)));
}

TEST_CASE("per-endmember rmse") {
  Eigen::MatrixXd gt(3, 2);
  gt << 0.5, 0.5, 0.2, 0.8, 0.9, 0.1;
  CHECK(per_endmember_rmse(gt, gt).isZero());

  Eigen::MatrixXd pred = gt;
  pred.col(0).array() += 0.2;
  Eigen::VectorXd per = per_endmember_rmse(pred, gt);
  CHECK(per(0) == doctest::Approx(0.2));
  CHECK(per(1) == 0.0);

  // mean of squared per-endmember values equals overall rmse^2
  Rng rng(10);
  Eigen::MatrixXd p(4, 3), g(4, 3);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 3; ++j) {
      p(i, j) = rng.uniform(0.0, 1.0);
      g(i, j) = rng.uniform(0.0, 1.0);
    }
  }
  const double overall = rmse(p, g);
  const double mean_sq = per_endmember_rmse(p, g).array().square().mean();
  CHECK(mean_sq == doctest::Approx(overall * overall).epsilon(1e-12));
}
