#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace unmix {

// One spectrum per endmember (c x lambda).
struct EndmemberMatrix {
  Eigen::MatrixXd spectra;

  std::int64_t endmembers() const { return spectra.rows(); }
  std::int64_t bands() const { return spectra.cols(); }
};

// Least-squares endmember fit from supervised pixels: E = argmin |A E - X|_F
// via the normal equations. Throws when the abundance columns are collinear;
// warns (stderr) when the fitted spectra are numerically rank-deficient.
EndmemberMatrix estimate_endmembers(const Eigen::Ref<const Eigen::MatrixXd>& spectra,
                                    const Eigen::Ref<const Eigen::MatrixXd>& abundances);

// Fully constrained least squares: min |E^T a - x|^2 subject to a >= 0 and
// sum(a) = 1, by active-set iteration on the sum-to-one KKT system. The
// returned vector is renormalized to sum exactly 1. objective_trace, when
// given, records |E^T a - x|^2 of the KKT optimum at each iteration.
Eigen::VectorXd fcls(const Eigen::Ref<const Eigen::VectorXd>& x, const EndmemberMatrix& e,
                     std::vector<double>* objective_trace = nullptr);

// Row-per-pixel batch form (N x lambda -> N x c); shares the Gram matrix.
Eigen::MatrixXd fcls_batch(const Eigen::Ref<const Eigen::MatrixXd>& spectra,
                           const EndmemberMatrix& e);

}  // namespace unmix
