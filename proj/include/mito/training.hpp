#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mito/augment.hpp"
#include "mito/dataset.hpp"
#include "mito/nn.hpp"

namespace mito {

struct TrainConfig {
  int epochs_per_round = 100;
  int batch_size = 32;
  double momentum = 0.9;
  double lr_max = 6e-4;
  double lr_min = 0.0;
  int restart_period = 25;       // T0, in epochs
  double restart_multiplier = 1.0;
  double ousm_drop_fraction = 0.1;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
};

struct EpochStats {
  int epoch = 0;  // 1-indexed
  double lr = 0.0;
  double mean_loss = 0.0;
  int dropped = 0;
  double val_f1 = 0.0;
};

struct RoundResult {
  std::string best_checkpoint_id;
  std::vector<EpochStats> history;
  int selected_epoch = 0;  // 1-indexed, earliest argmax of val F1
  std::vector<double> best_params;
  bool diverged = false;
};

// Per-sample CORAL loss for a hard rank label in {0..K-1}.
double coral_loss_sample(const std::vector<double>& logits, int label);
std::vector<double> coral_loss(const std::vector<std::vector<double>>& logits,
                               const std::vector<int>& labels);
// Soft variant: cum_targets[k] = P(rank > k) in [0,1].
double coral_loss_soft(const std::vector<double>& logits, const std::vector<double>& cum_targets);

// Retained indices (ascending) after dropping the k highest losses.
// Ties at the cutoff drop the higher index.
std::vector<std::size_t> ousm_filter(const std::vector<double>& losses, std::size_t drop_count);

// Cosine annealing within one cycle of length T.
double lr_at(double t, double T, const TrainConfig& cfg);
// Warm-restart schedule over 0-indexed epochs.
double lr_for_epoch(int epoch, const TrainConfig& cfg);

double patch_f1(const Classifier& model, const PatchSet& val, double threshold = 0.5);

RoundResult train_round(const PatchSet& train, const PatchSet& val, Classifier& model,
                        const TrainConfig& cfg, const AugmentConfig& augment,
                        std::ostream* log = nullptr);

}  // namespace mito
