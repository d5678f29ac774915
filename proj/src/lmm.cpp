#include "unmix/lmm.hpp"

#include <cmath>
#include <iostream>
#include <string>

#include "unmix/tensor.hpp"

namespace unmix {

namespace {

struct FclsWorkspace {
  const EndmemberMatrix& e;
  Eigen::MatrixXd gram;  // E E^T, c x c

  explicit FclsWorkspace(const EndmemberMatrix& em) : e(em), gram(em.spectra * em.spectra.transpose()) {}
};

Eigen::VectorXd fcls_solve(const FclsWorkspace& ws, const Eigen::Ref<const Eigen::VectorXd>& x,
                           std::vector<double>* objective_trace) {
  const std::int64_t c = ws.e.endmembers();
  if (x.size() != ws.e.bands()) {
    throw ShapeError("spectrum length " + std::to_string(x.size()) + " != band count " +
                     std::to_string(ws.e.bands()));
  }
  const Eigen::VectorXd f = ws.e.spectra * x;  // E x
  std::vector<bool> active(static_cast<std::size_t>(c), false);
  Eigen::VectorXd a = Eigen::VectorXd::Zero(c);
  const std::int64_t max_iter = 10 * c;

  for (std::int64_t iter = 0; iter <= max_iter; ++iter) {
    std::vector<std::int64_t> free_ids;
    for (std::int64_t i = 0; i < c; ++i) {
      if (!active[static_cast<std::size_t>(i)]) free_ids.push_back(i);
    }
    const std::int64_t nf = static_cast<std::int64_t>(free_ids.size());
    if (nf == 0) throw NumericError("fcls clamped every coordinate");

    // KKT of min |E_F^T a - x|^2 s.t. 1^T a = 1
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(nf + 1, nf + 1);
    Eigen::VectorXd rhs(nf + 1);
    for (std::int64_t r = 0; r < nf; ++r) {
      for (std::int64_t col = 0; col < nf; ++col) {
        kkt(r, col) = 2.0 * ws.gram(free_ids[static_cast<std::size_t>(r)],
                                    free_ids[static_cast<std::size_t>(col)]);
      }
      kkt(r, nf) = 1.0;
      kkt(nf, r) = 1.0;
      rhs(r) = 2.0 * f(free_ids[static_cast<std::size_t>(r)]);
    }
    rhs(nf) = 1.0;

    Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (!lu.isInvertible()) {
      // nearly collinear free endmembers; a trace-scaled ridge keeps the
      // system solvable without visibly moving the solution
      const double ridge = 1e-12 * std::max(1.0, kkt.topLeftCorner(nf, nf).trace());
      for (std::int64_t r = 0; r < nf; ++r) kkt(r, r) += ridge;
      lu.compute(kkt);
    }
    const Eigen::VectorXd sol = lu.solve(rhs);

    a.setZero();
    std::int64_t worst = -1;
    double worst_val = -1e-9;
    for (std::int64_t r = 0; r < nf; ++r) {
      const double v = sol(r);
      a(free_ids[static_cast<std::size_t>(r)]) = v;
      if (v < worst_val) {
        worst_val = v;
        worst = free_ids[static_cast<std::size_t>(r)];
      }
    }
    if (objective_trace) {
      objective_trace->push_back((ws.e.spectra.transpose() * a - x).squaredNorm());
    }
    if (worst < 0) break;
    if (iter == max_iter) {
      throw NumericError("fcls active-set failed to converge after " +
                         std::to_string(max_iter) + " iterations");
    }
    active[static_cast<std::size_t>(worst)] = true;
  }

  // tiny negatives from roundoff, then renormalize; pinning the largest
  // coordinate afterwards makes the sum land on 1 exactly
  a = a.cwiseMax(0.0);
  const double total = a.sum();
  if (total <= 0.0) throw NumericError("fcls produced a zero abundance vector");
  a /= total;
  std::int64_t top = 0;
  a.maxCoeff(&top);
  double others = 0.0;
  for (std::int64_t i = 0; i < c; ++i) {
    if (i != top) others += a(i);
  }
  a(top) = 1.0 - others;
  return a;
}

}  // namespace

EndmemberMatrix estimate_endmembers(const Eigen::Ref<const Eigen::MatrixXd>& spectra,
                                    const Eigen::Ref<const Eigen::MatrixXd>& abundances) {
  const std::int64_t n = spectra.rows(), c = abundances.cols();
  if (abundances.rows() != n) {
    throw ShapeError("spectra and abundances disagree on sample count");
  }
  if (n < c) {
    throw ShapeError("need at least " + std::to_string(c) + " training pixels, got " +
                     std::to_string(n));
  }
  const Eigen::MatrixXd gram = abundances.transpose() * abundances;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const auto& evals = eig.eigenvalues();
  if (evals(0) <= 1e-10 * std::max(evals(c - 1), 1e-300)) {
    // the null eigenvector names the offending combination
    const Eigen::VectorXd null_vec = eig.eigenvectors().col(0);
    const double top = null_vec.cwiseAbs().maxCoeff();
    std::string who;
    for (std::int64_t i = 0; i < c; ++i) {
      if (std::abs(null_vec(i)) > 0.3 * top) who += (who.empty() ? "" : ", ") + std::to_string(i);
    }
    throw NumericError("abundance columns are rank-deficient; collinear endmembers: {" + who +
                       "}");
  }
  EndmemberMatrix e;
  e.spectra = gram.ldlt().solve(abundances.transpose() * spectra);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(e.spectra);
  const auto& sv = svd.singularValues();
  if (sv(sv.size() - 1) < 1e-6 * sv(0)) {
    std::cerr << "warning: estimated endmember matrix is numerically rank-deficient "
              << "(sigma_min/sigma_max = " << sv(sv.size() - 1) / sv(0) << ")\n";
  }
  return e;
}

Eigen::VectorXd fcls(const Eigen::Ref<const Eigen::VectorXd>& x, const EndmemberMatrix& e,
                     std::vector<double>* objective_trace) {
  FclsWorkspace ws(e);
  return fcls_solve(ws, x, objective_trace);
}

Eigen::MatrixXd fcls_batch(const Eigen::Ref<const Eigen::MatrixXd>& spectra,
                           const EndmemberMatrix& e) {
  FclsWorkspace ws(e);
  Eigen::MatrixXd out(spectra.rows(), e.endmembers());
  for (Eigen::Index i = 0; i < spectra.rows(); ++i) {
    out.row(i) = fcls_solve(ws, spectra.row(i).transpose(), nullptr).transpose();
  }
  return out;
}

}  // namespace unmix
