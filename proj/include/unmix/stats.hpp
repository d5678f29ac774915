#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace unmix {

struct ComparisonResult {
  std::string variant_a, variant_b;
  std::int64_t n = 0;        // pairs remaining after dropping zero differences
  double w_statistic = 0.0;  // min(W+, W-)
  double p_value = 1.0;      // two-tailed
  bool significant = false;  // p < alpha
};

// Two-tailed Wilcoxon signed-rank test on paired samples. Zero differences
// are dropped; |d| ties get midranks. Exact p (sign-assignment enumeration
// via convolution) up to n = 20, then the normal approximation with tie and
// continuity corrections. All differences zero degenerates to p = 1.
ComparisonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y,
                                      double alpha = 0.05);

// Mean rank per variant across scoring units. scores(v, u) is variant v's
// score on unit u; lower is better (rank 1), ties get midranks.
std::vector<double> average_rank(const Eigen::Ref<const Eigen::MatrixXd>& scores);

}  // namespace unmix
