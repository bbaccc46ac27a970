#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mito/dataset.hpp"

namespace mito {

struct FixtureSpec {
  int n_images = 20;
  int image_size = 1200;
  int min_objects = 2;
  int max_objects = 6;
  int min_imposters = 0;
  int max_imposters = 2;
  double unlabeled_fraction = 0.2;
  double label_noise_fraction = 0.0;
  int min_separation = 60;
  // Pseudo-mitosis appearance: dark elongated blob on a pinkish texture.
  double axis_major_lo = 8.0, axis_major_hi = 14.0;
  double axis_minor_lo = 3.5, axis_minor_hi = 6.0;
  std::uint64_t seed = 0;
};

struct PlantedObject {
  int x = 0;
  int y = 0;
  AnnotationCategory true_category = AnnotationCategory::mitosis;
};

struct GroundTruth {
  std::map<std::string, std::vector<PlantedObject>> planted;
  std::vector<std::size_t> flipped_annotations;  // indices into dataset.annotations
};

struct Fixture {
  Dataset dataset;
  GroundTruth ground_truth;
};

// Deterministic for a fixed seed. Unlabeled images carry no objects and no
// annotation records; label noise flips round(f*N) annotation categories,
// recorded in the ground truth. Throws on infeasible placement.
Fixture generate_fixture(const FixtureSpec& spec);

// One image with exactly 2 mitoses `separation` px apart (the documented
// multi-mitosis CAM limitation when separation < window size).
Fixture plant_multi_object_window(const FixtureSpec& spec, int separation = 80);

// Writes dataset.json, per-image PNGs, and ground_truth.json under dir.
void write_fixture(const Fixture& fixture, const std::string& dir);

}  // namespace mito
