#include "mito/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace mito {

const char* to_string(AnnotationCategory c) {
  return c == AnnotationCategory::mitosis ? "mitosis" : "imposter";
}
const char* to_string(PatchLabel l) {
  return l == PatchLabel::positive ? "positive" : "negative";
}
const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::initial: return "initial";
    case Provenance::false_positive: return "false_positive";
    case Provenance::false_negative: return "false_negative";
    case Provenance::hard_negative: return "hard_negative";
    case Provenance::random_negative: return "random_negative";
  }
  return "initial";
}

AnnotationCategory annotation_category_from_string(const std::string& s) {
  if (s == "mitosis") return AnnotationCategory::mitosis;
  if (s == "imposter") return AnnotationCategory::imposter;
  throw std::runtime_error("unknown annotation category: " + s);
}
PatchLabel patch_label_from_string(const std::string& s) {
  if (s == "positive") return PatchLabel::positive;
  if (s == "negative") return PatchLabel::negative;
  throw std::runtime_error("unknown patch label: " + s);
}
Provenance provenance_from_string(const std::string& s) {
  if (s == "initial") return Provenance::initial;
  if (s == "false_positive") return Provenance::false_positive;
  if (s == "false_negative") return Provenance::false_negative;
  if (s == "hard_negative") return Provenance::hard_negative;
  if (s == "random_negative") return Provenance::random_negative;
  throw std::runtime_error("unknown provenance: " + s);
}

std::size_t PatchSet::count(PatchLabel l) const {
  return static_cast<std::size_t>(
      std::count_if(patches.begin(), patches.end(), [l](const Patch& p) { return p.label == l; }));
}

const RoiImage* Dataset::find_image(const std::string& id) const {
  for (const auto& im : images)
    if (im.id == id) return &im;
  return nullptr;
}

std::vector<const Annotation*> Dataset::annotations_of(const std::string& image_id) const {
  std::vector<const Annotation*> out;
  for (const auto& a : annotations)
    if (a.image_id == image_id) out.push_back(&a);
  return out;
}

Dataset load_dataset(const std::string& annotation_file, const std::string& image_dir) {
  std::ifstream in(annotation_file);
  if (!in) throw std::runtime_error("cannot open annotation file: " + annotation_file);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed annotation JSON: " + std::string(e.what()));
  }
  if (!j.is_object() || !j.contains("images") || !j.contains("annotations"))
    throw std::runtime_error("annotation file must contain 'images' and 'annotations'");

  Dataset ds;
  for (const auto& ji : j.at("images")) {
    RoiImage im;
    try {
      im.id = ji.at("id").get<std::string>();
      const auto file = ji.at("file").get<std::string>();
      const int width = ji.at("width").get<int>();
      const int height = ji.at("height").get<int>();
      if (ji.contains("tumor_type") && !ji.at("tumor_type").is_null())
        im.tumor_type = ji.at("tumor_type").get<std::string>();
      im.labeled = ji.at("labeled").get<bool>();
      const fs::path raster = fs::path(image_dir) / file;
      if (!fs::exists(raster))
        throw std::runtime_error("image '" + im.id + "': missing raster file " + raster.string());
      im.pixels = read_image(raster.string());
      if (im.pixels.width != width || im.pixels.height != height)
        throw std::runtime_error("image '" + im.id + "': raster dimensions " +
                                 std::to_string(im.pixels.width) + "x" +
                                 std::to_string(im.pixels.height) + " disagree with manifest");
      if (width < 1 || height < 1)
        throw std::runtime_error("image '" + im.id + "': non-positive dimensions");
    } catch (const json::exception& e) {
      throw std::runtime_error("malformed image record: " + std::string(e.what()));
    }
    ds.images.push_back(std::move(im));
  }

  std::size_t idx = 0;
  for (const auto& ja : j.at("annotations")) {
    Annotation a;
    try {
      a.image_id = ja.at("image_id").get<std::string>();
      a.x = ja.at("x").get<int>();
      a.y = ja.at("y").get<int>();
      a.category = annotation_category_from_string(ja.at("category").get<std::string>());
    } catch (const json::exception& e) {
      throw std::runtime_error("malformed annotation record #" + std::to_string(idx) + ": " +
                               e.what());
    }
    const RoiImage* im = ds.find_image(a.image_id);
    if (!im)
      throw std::runtime_error("annotation #" + std::to_string(idx) +
                               " references unknown image '" + a.image_id + "'");
    if (a.x < 0 || a.x >= im->width() || a.y < 0 || a.y >= im->height())
      throw std::runtime_error("annotation #" + std::to_string(idx) + " at (" +
                               std::to_string(a.x) + "," + std::to_string(a.y) +
                               ") is outside image '" + a.image_id + "'");
    ds.annotations.push_back(std::move(a));
    ++idx;
  }
  return ds;
}

std::string serialize_dataset_meta(const Dataset& ds) {
  json j;
  j["images"] = json::array();
  for (const auto& im : ds.images) {
    json ji;
    ji["id"] = im.id;
    ji["file"] = im.id + ".png";
    ji["width"] = im.width();
    ji["height"] = im.height();
    if (im.tumor_type.empty())
      ji["tumor_type"] = nullptr;
    else
      ji["tumor_type"] = im.tumor_type;
    ji["labeled"] = im.labeled;
    j["images"].push_back(ji);
  }
  j["annotations"] = json::array();
  for (const auto& a : ds.annotations) {
    j["annotations"].push_back(
        {{"image_id", a.image_id}, {"x", a.x}, {"y", a.y}, {"category", to_string(a.category)}});
  }
  return j.dump(2);
}

DatasetSplit split_dataset(const std::vector<RoiImage>& images, double val_fraction,
                           std::uint64_t seed) {
  if (val_fraction <= 0.0 || val_fraction >= 1.0)
    throw std::runtime_error("val_fraction must lie in (0,1)");
  if (images.size() < 2) throw std::runtime_error("need at least 2 images to split");

  const std::size_t n = images.size();
  const std::size_t target =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * val_fraction)));

  // Group ids by tumor type (single group when metadata is absent).
  std::map<std::string, std::vector<std::string>> groups;
  for (const auto& im : images) groups[im.tumor_type].push_back(im.id);
  for (auto& [_, ids] : groups) std::sort(ids.begin(), ids.end());

  // Largest-remainder allocation of the val quota across groups.
  struct Alloc {
    std::string group;
    std::size_t quota;
    double remainder;
  };
  std::vector<Alloc> allocs;
  std::size_t assigned = 0;
  for (const auto& [g, ids] : groups) {
    const double exact = static_cast<double>(ids.size()) * target / static_cast<double>(n);
    const auto base = static_cast<std::size_t>(exact);
    allocs.push_back({g, base, exact - static_cast<double>(base)});
    assigned += base;
  }
  std::stable_sort(allocs.begin(), allocs.end(),
                   [](const Alloc& a, const Alloc& b) { return a.remainder > b.remainder; });
  for (auto& a : allocs) {
    if (assigned >= target) break;
    if (a.quota < groups[a.group].size()) {
      ++a.quota;
      ++assigned;
    }
  }

  DatasetSplit split;
  split.seed = seed;
  std::mt19937_64 rng(seed);
  std::sort(allocs.begin(), allocs.end(),
            [](const Alloc& a, const Alloc& b) { return a.group < b.group; });
  for (const auto& a : allocs) {
    auto ids = groups[a.group];
    std::shuffle(ids.begin(), ids.end(), rng);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i < a.quota)
        split.val_images.push_back(ids[i]);
      else
        split.train_images.push_back(ids[i]);
    }
  }
  std::sort(split.train_images.begin(), split.train_images.end());
  std::sort(split.val_images.begin(), split.val_images.end());
  return split;
}

CropBox crop_box(int width, int height, int cx, int cy, int size) {
  if (size > width || size > height)
    throw std::runtime_error("crop size " + std::to_string(size) + " exceeds image " +
                             std::to_string(width) + "x" + std::to_string(height));
  int x = std::max(0, cx - size / 2);
  int y = std::max(0, cy - size / 2);
  x = std::min(x, width - size);
  y = std::min(y, height - size);
  return {x, y, size};
}

Image crop_patch(const RoiImage& image, int cx, int cy, int size) {
  const CropBox box = crop_box(image.width(), image.height(), cx, cy, size);
  Image out(size, size);
  for (int row = 0; row < size; ++row) {
    std::copy_n(image.pixels.px(box.x, box.y + row), static_cast<std::size_t>(size) * 3,
                out.px(0, row));
  }
  return out;
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, const std::string& id) {
  std::uint64_t h = 1469598103934665603ull ^ seed;
  for (char c : id) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 1099511628211ull;
  }
  return h;
}

void extract_for_images(const Dataset& ds, const std::vector<std::string>& image_ids,
                        const ExtractConfig& cfg, PatchSet& out) {
  for (const auto& id : image_ids) {
    const RoiImage* im = ds.find_image(id);
    if (!im) throw std::runtime_error("split references unknown image '" + id + "'");
    const auto anns = ds.annotations_of(id);

    for (const Annotation* a : anns) {
      Patch p;
      p.pixels = crop_patch(*im, a->x, a->y, cfg.patch_size);
      p.label = a->category == AnnotationCategory::mitosis ? PatchLabel::positive
                                                           : PatchLabel::negative;
      p.source_image = id;
      p.center_x = a->x;
      p.center_y = a->y;
      p.provenance = Provenance::initial;
      p.round_added = 0;
      out.patches.push_back(std::move(p));
    }

    if (!im->labeled) {
      std::mt19937_64 rng(mix_seed(cfg.seed, id));
      std::uniform_int_distribution<int> dx(0, im->width() - 1);
      std::uniform_int_distribution<int> dy(0, im->height() - 1);
      int made = 0;
      int attempts = 0;
      const int max_attempts = cfg.random_negatives_per_unlabeled * 50 + 100;
      while (made < cfg.random_negatives_per_unlabeled && attempts < max_attempts) {
        ++attempts;
        const int cx = dx(rng);
        const int cy = dy(rng);
        bool too_close = false;
        for (const Annotation* a : anns) {
          const double d = std::hypot(a->x - cx, a->y - cy);
          if (d < cfg.min_annotation_distance) {
            too_close = true;
            break;
          }
        }
        if (too_close) continue;
        Patch p;
        p.pixels = crop_patch(*im, cx, cy, cfg.patch_size);
        p.label = PatchLabel::negative;
        p.source_image = id;
        p.center_x = cx;
        p.center_y = cy;
        p.provenance = Provenance::random_negative;
        p.round_added = 0;
        out.patches.push_back(std::move(p));
        ++made;
      }
    }
  }
}

}  // namespace

SplitPatches extract_initial_patches(const Dataset& ds, const DatasetSplit& split,
                                     const ExtractConfig& cfg) {
  SplitPatches out;
  extract_for_images(ds, split.train_images, cfg, out.train);
  extract_for_images(ds, split.val_images, cfg, out.val);
  return out;
}

void save_patch_set(const PatchSet& set, const std::string& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["patches"] = json::array();
  for (std::size_t i = 0; i < set.patches.size(); ++i) {
    const Patch& p = set.patches[i];
    const std::string file = "patch_" + std::to_string(i) + ".png";
    write_image(p.pixels, (fs::path(dir) / file).string());
    manifest["patches"].push_back({{"file", file},
                                   {"label", to_string(p.label)},
                                   {"source_image", p.source_image},
                                   {"center_x", p.center_x},
                                   {"center_y", p.center_y},
                                   {"provenance", to_string(p.provenance)},
                                   {"round_added", p.round_added}});
  }
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << manifest.dump(2) << "\n";
}

PatchSet load_patch_set(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw std::runtime_error("cannot open patch manifest in " + dir);
  json manifest;
  in >> manifest;
  PatchSet set;
  for (const auto& jp : manifest.at("patches")) {
    Patch p;
    p.pixels = read_image((fs::path(dir) / jp.at("file").get<std::string>()).string());
    p.label = patch_label_from_string(jp.at("label").get<std::string>());
    p.source_image = jp.at("source_image").get<std::string>();
    p.center_x = jp.at("center_x").get<int>();
    p.center_y = jp.at("center_y").get<int>();
    p.provenance = provenance_from_string(jp.at("provenance").get<std::string>());
    p.round_added = jp.at("round_added").get<int>();
    set.patches.push_back(std::move(p));
  }
  return set;
}

}  // namespace mito
