#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mito/image.hpp"

namespace mito {

enum class AnnotationCategory { mitosis, imposter };
enum class PatchLabel { positive, negative };
enum class Provenance { initial, false_positive, false_negative, hard_negative, random_negative };

const char* to_string(AnnotationCategory c);
const char* to_string(PatchLabel l);
const char* to_string(Provenance p);
AnnotationCategory annotation_category_from_string(const std::string& s);
PatchLabel patch_label_from_string(const std::string& s);
Provenance provenance_from_string(const std::string& s);

struct RoiImage {
  std::string id;
  Image pixels;
  std::string tumor_type;  // empty when unknown
  bool labeled = true;

  int width() const { return pixels.width; }
  int height() const { return pixels.height; }
};

struct Annotation {
  std::string image_id;
  int x = 0;
  int y = 0;
  AnnotationCategory category = AnnotationCategory::mitosis;
};

struct Patch {
  Image pixels;
  PatchLabel label = PatchLabel::negative;
  std::string source_image;
  int center_x = 0;
  int center_y = 0;
  Provenance provenance = Provenance::initial;
  int round_added = 0;
};

struct PatchSet {
  std::vector<Patch> patches;

  std::size_t size() const { return patches.size(); }
  std::size_t count(PatchLabel l) const;
};

struct DatasetSplit {
  std::vector<std::string> train_images;
  std::vector<std::string> val_images;
  std::uint64_t seed = 0;
};

struct Dataset {
  std::vector<RoiImage> images;
  std::vector<Annotation> annotations;

  const RoiImage* find_image(const std::string& id) const;
  std::vector<const Annotation*> annotations_of(const std::string& image_id) const;
};

// Parses the dataset JSON schema and loads every referenced raster.
// Throws std::runtime_error naming the offending record on schema errors,
// missing files, or out-of-bounds annotations.
Dataset load_dataset(const std::string& annotation_file, const std::string& image_dir);

// Re-serializes the metadata (images + annotations) in the same schema.
std::string serialize_dataset_meta(const Dataset& ds);

// Whole-image split, stratified by tumor_type when present.
// Val count = round(N * val_fraction), minimum 1; deterministic in seed.
DatasetSplit split_dataset(const std::vector<RoiImage>& images, double val_fraction,
                           std::uint64_t seed);

struct CropBox {
  int x = 0;
  int y = 0;
  int size = 0;
};

// Centered box translated to lie fully inside the image (no padding).
CropBox crop_box(int width, int height, int cx, int cy, int size);
Image crop_patch(const RoiImage& image, int cx, int cy, int size);

struct ExtractConfig {
  int patch_size = 240;
  int random_negatives_per_unlabeled = 20;
  int min_annotation_distance = 120;
  std::uint64_t seed = 0;
};

struct SplitPatches {
  PatchSet train;
  PatchSet val;
};

// Round-0 patch sets: one positive per mitosis, one negative per imposter,
// plus random negatives from unlabeled images.
SplitPatches extract_initial_patches(const Dataset& ds, const DatasetSplit& split,
                                     const ExtractConfig& cfg);

// Persists patches as PNGs plus a manifest.json with all Patch fields.
void save_patch_set(const PatchSet& set, const std::string& dir);
PatchSet load_patch_set(const std::string& dir);

}  // namespace mito
