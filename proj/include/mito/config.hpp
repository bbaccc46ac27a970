#pragma once

#include <string>

#include "mito/augment.hpp"
#include "mito/dataset.hpp"
#include "mito/mining.hpp"
#include "mito/nn.hpp"
#include "mito/sliding.hpp"
#include "mito/training.hpp"

namespace mito {

struct PipelineConfig {
  struct DatasetSection {
    std::string annotation_file = "dataset.json";
    std::string image_dir = "images";
    ExtractConfig extract;
  } dataset;

  struct SplitSection {
    double val_fraction = 0.1;
    std::uint64_t seed = 0;
  } split;

  ModelDescriptor model;
  AugmentConfig augment;
  TrainConfig train;
  InferenceConfig inference;
  MiningConfig mining;
  double cam_threshold = 0.5;
  double evaluation_radius = 30.0;
  bool reinit_each_round = false;
};

// Defaults applied for absent keys; unknown keys and invariant violations
// rejected with the offending key named.
PipelineConfig parse_config(const std::string& path);
PipelineConfig parse_config_json(const std::string& text);
// Effective config including every applied default; parse(serialize(c)) == c.
std::string serialize_config(const PipelineConfig& cfg);
void validate_config(const PipelineConfig& cfg);

}  // namespace mito
