#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "mito/cam.hpp"
#include "mito/dataset.hpp"
#include "mito/eval.hpp"
#include "mito/sliding.hpp"
#include "mito/training.hpp"

namespace mito {

enum class Outcome { true_positive, false_positive };

struct WindowOutcome {
  WindowBox window;
  double probability = 0.0;
  Outcome outcome = Outcome::false_positive;
};

struct CrossRefResult {
  std::vector<WindowOutcome> outcomes;
  std::vector<Annotation> missed;  // mitoses with no positive window around them
};

// A positive window is a true positive iff at least one mitosis point lies
// inside its box; a mitosis is missed iff no positive window contains it.
CrossRefResult cross_reference(const std::vector<ScoredWindow>& positive_windows,
                               const std::vector<Annotation>& annotations);

struct MiningConfig {
  double hard_negative_low = 0.5;
  double hard_negative_high = 0.84;  // exclusive; equals the probability threshold
  int cap_false_positive = 100;
  int cap_false_negative = 100;
  int cap_hard_negative = 50;
  int max_rounds = 6;
  double dedupe_distance = 15.0;
};

std::vector<Patch> mine_patches(const CrossRefResult& xref,
                                const std::vector<ScoredWindow>& all_scored,
                                const std::vector<Annotation>& annotations, const RoiImage& image,
                                const MiningConfig& cfg, int round, int patch_size);

struct RoundReport {
  int round = 0;
  int added_false_positive = 0;
  int added_false_negative = 0;
  int added_hard_negative = 0;
  std::size_t train_size = 0;
  std::size_t val_size = 0;
  double val_detection_f1 = 0.0;
};

struct ActiveLoopConfig {
  TrainConfig train;
  AugmentConfig augment;
  InferenceConfig inference;
  MiningConfig mining;
  double cam_threshold = 0.5;
  double eval_radius = 30.0;
  int patch_size = 240;
  bool reinit_each_round = false;  // default: fine-tune the previous checkpoint
};

struct ActiveLoopResult {
  std::vector<RoundReport> reports;
  std::vector<double> best_params;
  int best_round = 0;
  std::string best_checkpoint_id;
};

using ModelFactory = std::function<Classifier(std::uint64_t seed)>;
using RoundCallback = std::function<void(const RoundReport&, const Classifier&)>;

// Multi-round loop: train, slide over train+val images, mine FP/FN/hard
// negatives into the owning split, stop at the first non-increase of val
// detection F1 or at max_rounds. Returns the argmax-F1 checkpoint.
ActiveLoopResult run_active_loop(const Dataset& ds, const DatasetSplit& split,
                                 SplitPatches& patches, const ModelFactory& factory,
                                 const ActiveLoopConfig& cfg, std::ostream* log = nullptr,
                                 const RoundCallback& on_round = {});

}  // namespace mito
