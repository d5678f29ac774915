#include "unmix/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace unmix {

namespace {

// Midranks of |d|, doubled so ties stay exact integers (rank 1.5 -> 3).
std::vector<std::int64_t> doubled_midranks(const std::vector<double>& magnitudes) {
  const std::int64_t n = static_cast<std::int64_t>(magnitudes.size());
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::int64_t a, std::int64_t b) { return magnitudes[static_cast<std::size_t>(a)] < magnitudes[static_cast<std::size_t>(b)]; });
  std::vector<std::int64_t> rank2(static_cast<std::size_t>(n));
  std::int64_t i = 0;
  while (i < n) {
    std::int64_t j = i;
    while (j + 1 < n && magnitudes[static_cast<std::size_t>(order[static_cast<std::size_t>(j + 1)])] ==
                            magnitudes[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]) {
      ++j;
    }
    // positions i..j (0-based) share midrank ((i+1) + (j+1)) / 2
    const std::int64_t doubled = i + j + 2;
    for (std::int64_t k = i; k <= j; ++k) {
      rank2[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = doubled;
    }
    i = j + 1;
  }
  return rank2;
}

// P(W2+ <= w2) under uniform random signs, by convolution over doubled ranks.
double exact_cumulative(const std::vector<std::int64_t>& rank2, std::int64_t w2) {
  std::int64_t total = 0;
  for (std::int64_t r : rank2) total += r;
  std::vector<double> count(static_cast<std::size_t>(total + 1), 0.0);
  count[0] = 1.0;
  std::int64_t reach = 0;
  for (std::int64_t r : rank2) {
    reach += r;
    for (std::int64_t s = reach; s >= r; --s) {
      count[static_cast<std::size_t>(s)] += count[static_cast<std::size_t>(s - r)];
    }
  }
  double hits = 0.0;
  for (std::int64_t s = 0; s <= std::min(w2, total); ++s) hits += count[static_cast<std::size_t>(s)];
  return hits / std::pow(2.0, static_cast<double>(rank2.size()));
}

double normal_two_tailed(const std::vector<std::int64_t>& rank2, double w_min) {
  const double n = static_cast<double>(rank2.size());
  const double mean = n * (n + 1.0) / 4.0;
  double tie_term = 0.0;
  std::int64_t i = 0;
  std::vector<std::int64_t> sorted = rank2;
  std::sort(sorted.begin(), sorted.end());
  while (i < static_cast<std::int64_t>(sorted.size())) {
    std::int64_t j = i;
    while (j + 1 < static_cast<std::int64_t>(sorted.size()) &&
           sorted[static_cast<std::size_t>(j + 1)] == sorted[static_cast<std::size_t>(i)]) {
      ++j;
    }
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
  if (var <= 0.0) return 1.0;
  // W = min(W+, W-) <= mean; continuity correction toward the mean
  const double z = (w_min - mean + 0.5) / std::sqrt(var);
  return std::min(1.0, std::erfc(-z / std::sqrt(2.0)));
}

}  // namespace

ComparisonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y,
                                      double alpha) {
  if (x.size() != y.size() || x.empty()) {
    throw std::invalid_argument("wilcoxon requires equally sized, non-empty samples");
  }
  std::vector<double> magnitudes;
  std::vector<bool> positive;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    if (d == 0.0) continue;
    magnitudes.push_back(std::abs(d));
    positive.push_back(d > 0.0);
  }
  ComparisonResult res;
  res.n = static_cast<std::int64_t>(magnitudes.size());
  if (res.n == 0) {
    res.p_value = 1.0;
    res.significant = false;
    return res;
  }
  const auto rank2 = doubled_midranks(magnitudes);
  std::int64_t w2_pos = 0, w2_total = 0;
  for (std::size_t i = 0; i < rank2.size(); ++i) {
    w2_total += rank2[i];
    if (positive[i]) w2_pos += rank2[i];
  }
  const std::int64_t w2_min = std::min(w2_pos, w2_total - w2_pos);
  res.w_statistic = static_cast<double>(w2_min) / 2.0;
  if (res.n <= 20) {
    res.p_value = std::min(1.0, 2.0 * exact_cumulative(rank2, w2_min));
  } else {
    res.p_value = normal_two_tailed(rank2, static_cast<double>(w2_min) / 2.0);
  }
  res.significant = res.p_value < alpha;
  return res;
}

std::vector<double> average_rank(const Eigen::Ref<const Eigen::MatrixXd>& scores) {
  const std::int64_t variants = scores.rows(), units = scores.cols();
  if (variants < 1 || units < 1) throw std::invalid_argument("empty score table");
  if (!scores.allFinite()) throw std::invalid_argument("score table has missing entries");
  std::vector<double> mean_rank(static_cast<std::size_t>(variants), 0.0);
  std::vector<std::int64_t> order(static_cast<std::size_t>(variants));
  for (std::int64_t u = 0; u < units; ++u) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
      return scores(a, u) < scores(b, u);
    });
    std::int64_t i = 0;
    while (i < variants) {
      std::int64_t j = i;
      while (j + 1 < variants && scores(order[static_cast<std::size_t>(j + 1)], u) ==
                                     scores(order[static_cast<std::size_t>(i)], u)) {
        ++j;
      }
      const double midrank = static_cast<double>(i + j + 2) / 2.0;  // 1-based positions i+1..j+1
      for (std::int64_t k = i; k <= j; ++k) {
        mean_rank[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] += midrank;
      }
      i = j + 1;
    }
  }
  for (double& r : mean_rank) r /= static_cast<double>(units);
  return mean_rank;
}

}  // namespace unmix
