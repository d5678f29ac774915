#pragma once

#include <doctest.h>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "unmix/arch.hpp"
#include "unmix/autodiff.hpp"
#include "unmix/rng.hpp"

namespace testutil {

// Central finite differences at step h against analytic gradients, with the
// hybrid tolerance |a - fd| <= atol + rtol * max(|a|, |fd|). The forward
// function runs in double precision so the FD quotient approximates the true
// gradient to far better than the tolerance.
struct GradCheck {
  double rtol = 1e-3;
  double atol = 1e-5;
  double step = 1e-3;
  int max_coords = 25;  // sampled per parameter tensor

  template <typename BuildFn>
  static double eval(BuildFn&& build) {
    unmix::TapeT<double> tape;
    return build(tape).value()[0];
  }

  template <typename BuildFn>
  void run(BuildFn&& build, std::span<unmix::ParameterT<double>* const> params,
           std::uint64_t seed = 7) const {
    unmix::TapeT<double> tape;
    unmix::VarT<double> loss = build(tape);
    tape.backward(loss, params);
    std::vector<unmix::TensorT<double>> analytic;
    analytic.reserve(params.size());
    for (auto* p : params) analytic.push_back(p->grad);

    unmix::Rng rng(seed);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      auto* p = params[pi];
      const std::int64_t n = p->value.size();
      const bool exhaustive = n <= max_coords;
      const std::int64_t checks = exhaustive ? n : max_coords;
      for (std::int64_t k = 0; k < checks; ++k) {
        const std::int64_t idx = exhaustive ? k : rng.uniform_int(n);
        const double orig = p->value[idx];
        p->value[idx] = orig + step;
        const double lp = eval(build);
        p->value[idx] = orig - step;
        const double lm = eval(build);
        p->value[idx] = orig;
        const double fd = (lp - lm) / (2.0 * step);
        const double a = analytic[pi][idx];
        const double err = std::abs(a - fd);
        const double tol = atol + rtol * std::max(std::abs(a), std::abs(fd));
        CAPTURE(pi);
        CAPTURE(idx);
        CAPTURE(a);
        CAPTURE(fd);
        CHECK_LE(err, tol);
      }
    }
  }
};

// Worst |analytic - fd| excess over tolerance for a float network, with FD
// evaluated on a double twin carrying bit-identical weights. Returns the
// largest (err - tol); <= 0 means every sampled coordinate passed.
struct NetworkGradCheckResult {
  double worst_excess = -1.0;
  double worst_analytic = 0.0;
  double worst_fd = 0.0;
  std::int64_t coords_checked = 0;
};

inline NetworkGradCheckResult gradcheck_network(const unmix::MBConfig& cfg, std::int64_t batch,
                                                std::uint64_t seed, double rtol = 1e-3,
                                                double atol = 1e-5, double step = 1e-3,
                                                int max_coords = 6) {
  using namespace unmix;
  NetworkT<float> net = build_model<float>(cfg, seed);
  NetworkT<double> twin = build_model<double>(cfg, seed);
  copy_params(twin, net);

  Rng rng(derive_seed(seed, "gradcheck-data"));
  TensorT<float> patches(Shape{batch, cfg.patch, cfg.patch, cfg.bands});
  for (std::int64_t i = 0; i < patches.size(); ++i) {
    patches[i] = static_cast<float>(rng.uniform(0.0, 1.0));
  }
  TensorT<float> targets(Shape{batch, cfg.endmembers});
  for (std::int64_t i = 0; i < targets.size(); ++i) {
    targets[i] = static_cast<float>(rng.uniform(0.0, 1.0));
  }
  const TensorT<double> dpatches = patches.cast<double>();
  const TensorT<double> dtargets = targets.cast<double>();

  TapeT<float> tape;
  VarT<float> loss = mse_loss(net.forward(tape, patches), targets);
  auto params = net.params();
  tape.backward(loss, params);

  auto twin_params = twin.params();
  const auto fd_loss = [&]() { return mse_value(twin.predict(dpatches), dtargets); };

  NetworkGradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const std::int64_t n = params[pi]->value.size();
    const bool exhaustive = n <= max_coords;
    const std::int64_t checks = exhaustive ? n : max_coords;
    for (std::int64_t k = 0; k < checks; ++k) {
      const std::int64_t idx = exhaustive ? k : rng.uniform_int(n);
      auto& slot = twin_params[pi]->value[idx];
      const double orig = slot;
      slot = orig + step;
      const double lp = fd_loss();
      slot = orig - step;
      const double lm = fd_loss();
      slot = orig;
      const double fd = (lp - lm) / (2.0 * step);
      const double a = static_cast<double>(params[pi]->grad[idx]);
      const double excess = std::abs(a - fd) - (atol + rtol * std::max(std::abs(a), std::abs(fd)));
      ++res.coords_checked;
      if (excess > res.worst_excess) {
        res.worst_excess = excess;
        res.worst_analytic = a;
        res.worst_fd = fd;
      }
    }
  }
  return res;
}

}  // namespace testutil
