#pragma once

#include <cmath>
#include <cstring>
#include <numeric>
#include <utility>
#include <vector>

#include "unmix/arch.hpp"
#include "unmix/autodiff.hpp"
#include "unmix/rng.hpp"

namespace unmix {

enum class Strategy { joint, pretrain_finetune, pretrain_freeze };

struct TrainConfig {
  double lr = 1e-3;
  int max_epochs = 100;
  int patience = 15;
  std::int64_t batch_size = 256;
  double val_fraction = 0.10;
  std::uint64_t seed = 0;
  Strategy strategy = Strategy::joint;

  void validate() const {
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
      throw ConfigError("val_fraction must lie in (0, 1)");
    }
    if (patience < 1 || patience > max_epochs) {
      throw ConfigError("patience must lie in [1, max_epochs]");
    }
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (lr <= 0.0) throw ConfigError("learning rate must be positive");
  }
};

struct TrainHistory {
  std::vector<double> train_loss;  // per epoch, sample-weighted batch mean
  std::vector<double> val_loss;
  int stopped_epoch = 0;  // 1-based count of epochs actually run
  int best_epoch = 0;     // epoch whose weights the network carries on return
};

namespace detail {

// rows of a [N, ...] tensor selected by index
template <typename T>
TensorT<T> gather_rows(const TensorT<T>& src, std::span<const std::int64_t> ids) {
  Shape out_shape = src.shape();
  out_shape[0] = static_cast<std::int64_t>(ids.size());
  TensorT<T> out(out_shape);
  const std::int64_t row = src.size() / src.extent(0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::memcpy(out.data() + static_cast<std::int64_t>(i) * row, src.data() + ids[i] * row,
                static_cast<std::size_t>(row) * sizeof(T));
  }
  return out;
}

}  // namespace detail

// Minibatch ADAM training with a seeded held-out validation split and
// early stopping on its loss. "Improvement" is strictly lower validation
// loss; on stop the weights of the best epoch are restored.
template <typename T>
TrainHistory train(NetworkT<T>& net, const TensorT<T>& patches, const TensorT<T>& targets,
                   const TrainConfig& cfg) {
  cfg.validate();
  if (patches.rank() < 2 || targets.rank() != 2 || patches.extent(0) != targets.extent(0)) {
    throw ShapeError("training patches " + shape_str(patches.shape()) +
                     " and targets " + shape_str(targets.shape()) + " disagree");
  }
  const std::int64_t n = patches.extent(0);
  if (n < 2) throw ConfigError("training needs at least 2 samples for a validation split");
  const std::int64_t val_n =
      std::max<std::int64_t>(1, std::llround(cfg.val_fraction * static_cast<double>(n)));
  const std::int64_t train_n = n - val_n;
  if (train_n < 1) throw ConfigError("validation split leaves no training samples");

  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(cfg.seed, "val_split"));
  split_rng.shuffle(order.begin(), order.end());
  const std::span<const std::int64_t> val_ids(order.data(), static_cast<std::size_t>(val_n));
  std::vector<std::int64_t> train_ids(order.begin() + val_n, order.end());

  const TensorT<T> val_x = detail::gather_rows(patches, val_ids);
  const TensorT<T> val_y = detail::gather_rows(targets, val_ids);

  auto params = net.params();
  const AdamConfig adam{cfg.lr};
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));

  TrainHistory hist;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<TensorT<T>> best_weights;
  int bad_streak = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(train_ids.begin(), train_ids.end());
    double loss_acc = 0.0;
    for (std::int64_t at = 0; at < train_n; at += cfg.batch_size) {
      const std::int64_t bn = std::min(cfg.batch_size, train_n - at);
      const std::span<const std::int64_t> ids(train_ids.data() + at,
                                              static_cast<std::size_t>(bn));
      TapeT<T> tape;
      VarT<T> out = net.forward(tape, detail::gather_rows(patches, ids));
      VarT<T> loss = mse_loss(out, detail::gather_rows(targets, ids));
      const double lval = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(lval)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
      }
      tape.backward(loss, params);
      adam_step<T>(params, adam);
      loss_acc += lval * static_cast<double>(bn);
    }
    hist.train_loss.push_back(loss_acc / static_cast<double>(train_n));

    const double vloss = mse_value(net.predict(val_x), val_y);
    if (!std::isfinite(vloss)) {
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    hist.val_loss.push_back(vloss);
    hist.stopped_epoch = epoch;

    if (vloss < best_val) {
      best_val = vloss;
      hist.best_epoch = epoch;
      best_weights.clear();
      for (auto* p : params) best_weights.push_back(p->value);
      bad_streak = 0;
    } else if (++bad_streak >= cfg.patience) {
      break;
    }
  }

  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_weights[i];
  return hist;
}

// Two-phase sequential strategy: each enabled branch first trains standalone
// under a temporary dense(64) -> ReLU -> dense(c) head, then the branches are
// reassembled with a freshly initialized fusion head. pretrain_finetune
// updates everything in phase 2; pretrain_freeze trains only the head.
// With fewer than two branches this is joint training by definition.
template <typename T>
std::pair<NetworkT<T>, TrainHistory> train_sequential(const MBConfig& cfg,
                                                      const TrainConfig& tcfg,
                                                      const TensorT<T>& patches,
                                                      const TensorT<T>& targets) {
  cfg.validate();
  if (tcfg.strategy == Strategy::joint || cfg.enabled_branch_count() < 2) {
    NetworkT<T> net = build_model<T>(cfg, tcfg.seed);
    TrainHistory hist = train(net, patches, targets, tcfg);
    return {std::move(net), std::move(hist)};
  }

  constexpr std::array<BranchKind, 3> kOrder{BranchKind::spectral_1d, BranchKind::spatial_2d,
                                             BranchKind::volumetric_3d};
  std::vector<std::pair<BranchKind, NetworkT<T>>> pretrained;
  for (std::size_t i = 0; i < kOrder.size(); ++i) {
    if (!cfg.branch_enabled(kOrder[i])) continue;
    MBConfig bcfg = cfg;
    bcfg.branches = {false, false, false};
    bcfg.branches[static_cast<std::size_t>(kOrder[i])] = true;
    bcfg.head_units = {64};
    TrainConfig btcfg = tcfg;
    btcfg.strategy = Strategy::joint;
    btcfg.seed = derive_seed(tcfg.seed, "pretrain", static_cast<std::uint64_t>(i));
    NetworkT<T> bnet = build_model<T>(bcfg, btcfg.seed);
    train(bnet, patches, targets, btcfg);
    pretrained.emplace_back(kOrder[i], std::move(bnet));
  }

  NetworkT<T> net = build_model<T>(cfg, derive_seed(tcfg.seed, "assemble"));
  for (auto& [kind, bnet] : pretrained) {
    auto dst = net.branch_params(kind);
    auto src = bnet.branch_params(kind);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
  }
  if (tcfg.strategy == Strategy::pretrain_freeze) {
    for (BranchKind bk : kOrder) {
      for (auto* p : net.branch_params(bk)) p->trainable = false;
    }
  }
  TrainConfig ptcfg = tcfg;
  ptcfg.strategy = Strategy::joint;
  ptcfg.seed = derive_seed(tcfg.seed, "fuse");
  TrainHistory hist = train(net, patches, targets, ptcfg);
  for (auto* p : net.params()) p->trainable = true;
  return {std::move(net), std::move(hist)};
}

}  // namespace unmix
