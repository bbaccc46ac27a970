#include "mito/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace mito {

namespace {

// log(sigmoid(z)) and log(1 - sigmoid(z)), overflow-safe.
double log_sigmoid(double z) { return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }
double log_one_minus_sigmoid(double z) { return log_sigmoid(-z); }

}  // namespace

double coral_loss_sample(const std::vector<double>& logits, int label) {
  const int num_ranks = static_cast<int>(logits.size()) + 1;
  if (label < 0 || label >= num_ranks) throw std::runtime_error("rank label out of range");
  double loss = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (label > static_cast<int>(k))
      loss -= log_sigmoid(logits[k]);
    else
      loss -= log_one_minus_sigmoid(logits[k]);
  }
  return loss;
}

std::vector<double> coral_loss(const std::vector<std::vector<double>>& logits,
                               const std::vector<int>& labels) {
  if (logits.size() != labels.size()) throw std::runtime_error("coral_loss: size mismatch");
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = coral_loss_sample(logits[i], labels[i]);
  return out;
}

double coral_loss_soft(const std::vector<double>& logits, const std::vector<double>& cum_targets) {
  if (logits.size() != cum_targets.size())
    throw std::runtime_error("coral_loss_soft: size mismatch");
  double loss = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k)
    loss -= cum_targets[k] * log_sigmoid(logits[k]) +
            (1.0 - cum_targets[k]) * log_one_minus_sigmoid(logits[k]);
  return loss;
}

std::vector<std::size_t> ousm_filter(const std::vector<double>& losses, std::size_t drop_count) {
  if (drop_count >= losses.size())
    throw std::runtime_error("ousm_filter: drop count must be smaller than the batch");
  std::vector<std::size_t> order(losses.size());
  std::iota(order.begin(), order.end(), 0);
  // Highest loss first; ties prefer dropping the higher index.
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (losses[a] != losses[b]) return losses[a] > losses[b];
    return a > b;
  });
  std::vector<std::size_t> retained(order.begin() + static_cast<std::ptrdiff_t>(drop_count),
                                    order.end());
  std::sort(retained.begin(), retained.end());
  return retained;
}

double lr_at(double t, double T, const TrainConfig& cfg) {
  return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(M_PI * t / T));
}

double lr_for_epoch(int epoch, const TrainConfig& cfg) {
  double cycle_len = static_cast<double>(cfg.restart_period);
  double start = 0.0;
  while (epoch >= start + cycle_len) {
    start += cycle_len;
    cycle_len *= cfg.restart_multiplier;
  }
  return lr_at(static_cast<double>(epoch) - start, cycle_len, cfg);
}

double patch_f1(const Classifier& model, const PatchSet& val, double threshold) {
  long tp = 0, fp = 0, fn = 0;
  std::vector<int> preds(val.patches.size(), 0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(val.patches.size()); ++i) {
    const double p = Classifier::positive_probability(
        model.logits(val.patches[static_cast<std::size_t>(i)].pixels));
    preds[static_cast<std::size_t>(i)] = p > threshold ? 1 : 0;
  }
  for (std::size_t i = 0; i < val.patches.size(); ++i) {
    const bool truth = val.patches[i].label == PatchLabel::positive;
    if (preds[i] && truth)
      ++tp;
    else if (preds[i])
      ++fp;
    else if (truth)
      ++fn;
  }
  if (tp == 0) return 0.0;
  const double p = static_cast<double>(tp) / (tp + fp);
  const double r = static_cast<double>(tp) / (tp + fn);
  return 2.0 * p * r / (p + r);
}

RoundResult train_round(const PatchSet& train, const PatchSet& val, Classifier& model,
                        const TrainConfig& cfg, const AugmentConfig& augment, std::ostream* log) {
  if (train.patches.empty() || val.patches.empty())
    throw std::runtime_error("train_round: empty patch set");
  if (val.count(PatchLabel::positive) == 0 || val.count(PatchLabel::negative) == 0)
    throw std::runtime_error("train_round: validation set must contain both classes");
  if (cfg.ousm_drop_fraction < 0.0 || cfg.ousm_drop_fraction >= 0.5)
    throw std::runtime_error("train_round: ousm_drop_fraction must lie in [0, 0.5)");

  std::vector<std::size_t> pos_pool, neg_pool;
  for (std::size_t i = 0; i < train.patches.size(); ++i) {
    (train.patches[i].label == PatchLabel::positive ? pos_pool : neg_pool).push_back(i);
  }

  std::mt19937_64 rng(cfg.seed);
  RoundResult result;
  std::vector<double> velocity;
  std::vector<double> grads(model.num_params(), 0.0);
  double best_f1 = -1.0;
  result.best_params = model.get_params();
  result.best_checkpoint_id = model.checkpoint_id();
  result.selected_epoch = 0;

  std::vector<std::size_t> order(train.patches.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs_per_round; ++epoch) {
    const double lr = lr_for_epoch(epoch, cfg);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t loss_n = 0;
    int dropped_total = 0;
    bool diverged = false;

    for (std::size_t start = 0; start < order.size() && !diverged; start += cfg.batch_size) {
      const std::size_t bsz = std::min<std::size_t>(cfg.batch_size, order.size() - start);

      std::vector<Image> inst_imgs(bsz), bal_imgs(bsz);
      std::vector<int> inst_labels(bsz), bal_labels(bsz);
      std::uniform_int_distribution<int> coin(0, 1);
      for (std::size_t b = 0; b < bsz; ++b) {
        const Patch& inst = train.patches[order[start + b]];
        inst_imgs[b] = apply_pipeline(inst.pixels, augment, rng);
        inst_labels[b] = inst.label == PatchLabel::positive ? 1 : 0;
        // Balanced branch: sample the class first, then an instance of it.
        std::size_t pick;
        if (pos_pool.empty() || neg_pool.empty()) {
          const auto& pool = pos_pool.empty() ? neg_pool : pos_pool;
          pick = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
        } else {
          const auto& pool = coin(rng) == 1 ? pos_pool : neg_pool;
          pick = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
        }
        const Patch& bal = train.patches[pick];
        bal_imgs[b] = apply_pipeline(bal.pixels, augment, rng);
        bal_labels[b] = bal.label == PatchLabel::positive ? 1 : 0;
      }

      const double lambda = sample_mixup_lambda(augment.mixup_alpha, rng);
      std::vector<const Image*> inst_ptrs(bsz), bal_ptrs(bsz);
      for (std::size_t b = 0; b < bsz; ++b) {
        inst_ptrs[b] = &inst_imgs[b];
        bal_ptrs[b] = &bal_imgs[b];
      }
      const MixedBatch mixed =
          balanced_mixup(inst_ptrs, inst_labels, bal_ptrs, bal_labels, lambda, model.num_ranks());

      std::vector<ForwardCache> caches(bsz);
      std::vector<std::vector<double>> cum_targets(bsz);
      std::vector<double> losses(bsz);
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(bsz); ++b) {
        const auto ub = static_cast<std::size_t>(b);
        caches[ub] = model.forward(mixed.pixels[ub].data());
        std::vector<double> t(static_cast<std::size_t>(model.num_ranks() - 1), 0.0);
        for (std::size_t k = 0; k < t.size(); ++k) {
          double acc = 0.0;
          for (std::size_t r = k + 1; r < mixed.soft_labels[ub].size(); ++r)
            acc += mixed.soft_labels[ub][r];
          t[k] = acc;
        }
        losses[ub] = coral_loss_soft(caches[ub].logits, t);
        cum_targets[ub] = std::move(t);
      }

      for (double l : losses)
        if (!std::isfinite(l)) diverged = true;
      if (diverged) break;

      const auto drop =
          std::min<std::size_t>(static_cast<std::size_t>(cfg.ousm_drop_fraction * bsz), bsz - 1);
      const auto retained = ousm_filter(losses, drop);
      dropped_total += static_cast<int>(bsz - retained.size());

      std::fill(grads.begin(), grads.end(), 0.0);
      const double inv_n = 1.0 / static_cast<double>(retained.size());
      for (std::size_t idx : retained) {
        loss_sum += losses[idx];
        ++loss_n;
        std::vector<double> dlogits(caches[idx].logits.size());
        for (std::size_t k = 0; k < dlogits.size(); ++k) {
          const double s = 1.0 / (1.0 + std::exp(-caches[idx].logits[k]));
          dlogits[k] = (s - cum_targets[idx][k]) * inv_n;
        }
        model.backward(caches[idx], dlogits, grads);
      }
      model.sgd_step(grads, velocity, lr, cfg.momentum, cfg.weight_decay);
    }

    if (diverged) {
      // Non-finite loss: abort and report the last good checkpoint.
      result.diverged = true;
      break;
    }

    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.lr = lr;
    stats.mean_loss = loss_n ? loss_sum / static_cast<double>(loss_n) : 0.0;
    stats.dropped = dropped_total;
    stats.val_f1 = patch_f1(model, val);
    result.history.push_back(stats);

    // CORAL rank monotonicity must hold after every epoch.
    const auto& biases = model.head_biases();
    for (std::size_t k = 1; k < biases.size(); ++k)
      if (biases[k] > biases[k - 1])
        throw std::runtime_error("coral bias ordering violated after epoch");

    if (stats.val_f1 > best_f1) {
      best_f1 = stats.val_f1;
      result.best_params = model.get_params();
      result.best_checkpoint_id = model.checkpoint_id();
      result.selected_epoch = stats.epoch;
    }

    if (log) {
      nlohmann::json line{{"epoch", stats.epoch},
                          {"lr", stats.lr},
                          {"mean_loss", stats.mean_loss},
                          {"dropped", stats.dropped},
                          {"val_f1", stats.val_f1}};
      (*log) << line.dump() << "\n";
    }
  }

  model.set_params(result.best_params);
  return result;
}

}  // namespace mito
