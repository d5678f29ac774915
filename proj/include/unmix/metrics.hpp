#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "unmix/tensor.hpp"

namespace unmix {

namespace detail {

template <typename D1, typename D2>
void check_metric_shapes(const Eigen::MatrixBase<D1>& pred, const Eigen::MatrixBase<D2>& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols() || pred.rows() < 1) {
    throw ShapeError("metric inputs disagree: " + std::to_string(pred.rows()) + "x" +
                     std::to_string(pred.cols()) + " vs " + std::to_string(gt.rows()) + "x" +
                     std::to_string(gt.cols()));
  }
}

}  // namespace detail

// Global root over all N*c squared abundance errors.
template <typename D1, typename D2>
double rmse(const Eigen::MatrixBase<D1>& pred, const Eigen::MatrixBase<D2>& gt) {
  detail::check_metric_shapes(pred, gt);
  const double sq =
      (pred.template cast<double>() - gt.template cast<double>()).squaredNorm();
  return std::sqrt(sq / static_cast<double>(pred.rows() * pred.cols()));
}

// Root mean square of the per-pixel angle between abundance vectors. A pixel
// where either vector has zero norm contributes pi/2 and bumps the optional
// degenerate counter.
template <typename D1, typename D2>
double rmsaad(const Eigen::MatrixBase<D1>& pred, const Eigen::MatrixBase<D2>& gt,
              std::int64_t* degenerate_count = nullptr) {
  detail::check_metric_shapes(pred, gt);
  const auto p = pred.template cast<double>().eval();
  const auto g = gt.template cast<double>().eval();
  double acc = 0.0;
  std::int64_t degenerate = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double np = p.row(i).norm(), ng = g.row(i).norm();
    double aad;
    if (np == 0.0 || ng == 0.0) {
      aad = 1.5707963267948966;  // pi/2
      ++degenerate;
    } else {
      const double cosine = std::clamp(p.row(i).dot(g.row(i)) / (np * ng), -1.0, 1.0);
      aad = std::acos(cosine);
    }
    acc += aad * aad;
  }
  if (degenerate_count) *degenerate_count = degenerate;
  return std::sqrt(acc / static_cast<double>(p.rows()));
}

// RMSE restricted to each endmember column.
template <typename D1, typename D2>
Eigen::VectorXd per_endmember_rmse(const Eigen::MatrixBase<D1>& pred,
                                   const Eigen::MatrixBase<D2>& gt) {
  detail::check_metric_shapes(pred, gt);
  const auto diff = (pred.template cast<double>() - gt.template cast<double>()).eval();
  return (diff.array().square().colwise().sum() / static_cast<double>(pred.rows()))
      .sqrt()
      .matrix()
      .transpose();
}

// Tensor convenience forms over [N, c] predictions.
inline double rmse(const Tensor& pred, const Tensor& gt) {
  if (pred.rank() != 2 || gt.rank() != 2) throw ShapeError("rmse expects rank-2 tensors");
  return rmse(pred.mat(pred.extent(0), pred.extent(1)), gt.mat(gt.extent(0), gt.extent(1)));
}

inline double rmsaad(const Tensor& pred, const Tensor& gt,
                     std::int64_t* degenerate_count = nullptr) {
  if (pred.rank() != 2 || gt.rank() != 2) throw ShapeError("rmsaad expects rank-2 tensors");
  return rmsaad(pred.mat(pred.extent(0), pred.extent(1)), gt.mat(gt.extent(0), gt.extent(1)),
                degenerate_count);
}

inline Eigen::VectorXd per_endmember_rmse(const Tensor& pred, const Tensor& gt) {
  if (pred.rank() != 2 || gt.rank() != 2) {
    throw ShapeError("per_endmember_rmse expects rank-2 tensors");
  }
  return per_endmember_rmse(pred.mat(pred.extent(0), pred.extent(1)),
                            gt.mat(gt.extent(0), gt.extent(1)));
}

// One harness measurement: metrics for a (variant, fold, fraction, patch,
// noise-level) cell.
struct EvalReport {
  std::string dataset;
  std::string variant;
  std::int64_t fold = 0;
  double fraction = 1.0;
  std::int64_t patch = 3;
  std::optional<double> snr_db;
  double rmse = 0.0;
  double rmsaad = 0.0;
  std::vector<double> per_endmember;
  double train_seconds = 0.0;
  double infer_seconds = 0.0;
  std::string error;  // non-empty when the cell failed
};

}  // namespace unmix
