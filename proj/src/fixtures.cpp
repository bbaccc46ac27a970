#include "mito/fixtures.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace mito {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t h = seed ^ (salt * 0x9e3779b97f4a7c15ull);
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdull;
  h ^= h >> 33;
  return h;
}

cv::Mat pink_background(int size, std::mt19937_64& rng) {
  cv::Mat img(size, size, CV_32FC3, cv::Scalar(196.0, 178.0, 231.0));  // BGR-ish pink, stored RGB-swapped below

  // Low-frequency blotches from an upscaled random grid.
  cv::Mat coarse(24, 24, CV_32F);
  std::uniform_real_distribution<float> u(-12.0f, 12.0f);
  for (int y = 0; y < coarse.rows; ++y)
    for (int x = 0; x < coarse.cols; ++x) coarse.at<float>(y, x) = u(rng);
  cv::Mat low;
  cv::resize(coarse, low, cv::Size(size, size), 0, 0, cv::INTER_CUBIC);

  std::uniform_real_distribution<float> n(-6.0f, 6.0f);
  for (int y = 0; y < size; ++y) {
    auto* row = img.ptr<cv::Vec3f>(y);
    const float* lrow = low.ptr<float>(y);
    for (int x = 0; x < size; ++x) {
      const float noise = n(rng);
      for (int c = 0; c < 3; ++c) row[x][c] += lrow[x] + noise;
    }
  }
  return img;
}

void draw_blob(cv::Mat& img, int cx, int cy, double major, double minor, double angle_deg,
               const cv::Vec3f& color) {
  cv::Mat mask = cv::Mat::zeros(img.rows, img.cols, CV_32F);
  cv::ellipse(mask, cv::Point(cx, cy), cv::Size(static_cast<int>(major), static_cast<int>(minor)),
              angle_deg, 0, 360, cv::Scalar(1.0), cv::FILLED);
  cv::GaussianBlur(mask, mask, cv::Size(7, 7), 1.6);
  const int pad = static_cast<int>(major) + 8;
  const int x0 = std::max(0, cx - pad), x1 = std::min(img.cols, cx + pad + 1);
  const int y0 = std::max(0, cy - pad), y1 = std::min(img.rows, cy + pad + 1);
  for (int y = y0; y < y1; ++y) {
    auto* row = img.ptr<cv::Vec3f>(y);
    const float* mrow = mask.ptr<float>(y);
    for (int x = x0; x < x1; ++x) {
      const float m = std::min(1.0f, mrow[x]);
      if (m <= 0.0f) continue;
      for (int c = 0; c < 3; ++c) row[x][c] = row[x][c] * (1.0f - m) + color[c] * m;
    }
  }
}

Image to_image(const cv::Mat& f) {
  Image out(f.cols, f.rows);
  for (int y = 0; y < f.rows; ++y) {
    const auto* row = f.ptr<cv::Vec3f>(y);
    std::uint8_t* dst = out.px(0, y);
    for (int x = 0; x < f.cols; ++x)
      for (int c = 0; c < 3; ++c)
        dst[3 * x + c] =
            static_cast<std::uint8_t>(std::clamp(std::lround(row[x][c]), 0l, 255l));
  }
  return out;
}

struct Placement {
  int x, y;
  AnnotationCategory category;
};

std::vector<Placement> place_objects(int image_size, int n_mitoses, int n_imposters,
                                     int min_separation, std::mt19937_64& rng) {
  std::vector<Placement> placed;
  const int margin = 30;
  std::uniform_int_distribution<int> coord(margin, image_size - 1 - margin);
  const int total = n_mitoses + n_imposters;
  int attempts = 0;
  const int max_attempts = total * 200 + 200;
  while (static_cast<int>(placed.size()) < total) {
    if (++attempts > max_attempts)
      throw std::runtime_error("fixture placement infeasible after bounded retries");
    const int x = coord(rng), y = coord(rng);
    bool ok = true;
    for (const auto& p : placed)
      if (std::hypot(p.x - x, p.y - y) < min_separation) {
        ok = false;
        break;
      }
    if (!ok) continue;
    const auto cat = static_cast<int>(placed.size()) < n_mitoses ? AnnotationCategory::mitosis
                                                                 : AnnotationCategory::imposter;
    placed.push_back({x, y, cat});
  }
  return placed;
}

RoiImage render_image(const std::string& id, const std::string& tumor_type, bool labeled,
                      int image_size, const std::vector<Placement>& objects, const FixtureSpec& spec,
                      std::mt19937_64& rng) {
  cv::Mat canvas = pink_background(image_size, rng);
  for (const auto& obj : objects) {
    std::uniform_real_distribution<double> angle(0.0, 180.0);
    const double a = angle(rng);
    if (obj.category == AnnotationCategory::mitosis) {
      std::uniform_real_distribution<double> major(spec.axis_major_lo, spec.axis_major_hi);
      std::uniform_real_distribution<double> minor(spec.axis_minor_lo, spec.axis_minor_hi);
      draw_blob(canvas, obj.x, obj.y, major(rng), minor(rng), a, cv::Vec3f(120.0f, 55.0f, 85.0f));
    } else {
      // Imposter: rounder and lighter.
      std::uniform_real_distribution<double> radius(5.0, 7.5);
      const double r = radius(rng);
      draw_blob(canvas, obj.x, obj.y, r, r * 0.9, a, cv::Vec3f(170.0f, 115.0f, 150.0f));
    }
  }
  RoiImage im;
  im.id = id;
  im.tumor_type = tumor_type;
  im.labeled = labeled;
  im.pixels = to_image(canvas);
  return im;
}

}  // namespace

Fixture generate_fixture(const FixtureSpec& spec) {
  if (spec.n_images < 1 || spec.image_size < 64) throw std::runtime_error("invalid fixture spec");
  Fixture fx;
  const int n_unlabeled =
      static_cast<int>(std::floor(spec.n_images * spec.unlabeled_fraction));

  for (int i = 0; i < spec.n_images; ++i) {
    std::mt19937_64 rng(mix_seed(spec.seed, static_cast<std::uint64_t>(i)));
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "img_%03d", i);
    const std::string id = idbuf;
    const std::string tumor = i % 2 == 0 ? "type_a" : "type_b";
    const bool labeled = i < spec.n_images - n_unlabeled;

    std::vector<Placement> objects;
    if (labeled) {
      std::uniform_int_distribution<int> nm(spec.min_objects, spec.max_objects);
      std::uniform_int_distribution<int> ni(spec.min_imposters, spec.max_imposters);
      objects = place_objects(spec.image_size, nm(rng), ni(rng), spec.min_separation, rng);
    }
    fx.dataset.images.push_back(
        render_image(id, tumor, labeled, spec.image_size, objects, spec, rng));
    for (const auto& obj : objects) {
      fx.dataset.annotations.push_back({id, obj.x, obj.y, obj.category});
      fx.ground_truth.planted[id].push_back({obj.x, obj.y, obj.category});
    }
  }

  // Label noise: flip exactly round(f*N) annotation categories.
  const auto n_flips = static_cast<std::size_t>(
      std::llround(spec.label_noise_fraction * static_cast<double>(fx.dataset.annotations.size())));
  if (n_flips > 0) {
    std::mt19937_64 rng(mix_seed(spec.seed, 0xf11bull));
    std::vector<std::size_t> idx(fx.dataset.annotations.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(n_flips);
    std::sort(idx.begin(), idx.end());
    for (std::size_t i : idx) {
      auto& a = fx.dataset.annotations[i];
      a.category = a.category == AnnotationCategory::mitosis ? AnnotationCategory::imposter
                                                             : AnnotationCategory::mitosis;
    }
    fx.ground_truth.flipped_annotations = idx;
  }
  return fx;
}

Fixture plant_multi_object_window(const FixtureSpec& spec, int separation) {
  Fixture fx;
  std::mt19937_64 rng(mix_seed(spec.seed, 0x2b10ull));
  const int cx = spec.image_size / 2, cy = spec.image_size / 2;
  std::vector<Placement> objects = {
      {cx - separation / 2, cy, AnnotationCategory::mitosis},
      {cx + (separation + 1) / 2, cy, AnnotationCategory::mitosis}};
  fx.dataset.images.push_back(
      render_image("multi_obj", "type_a", true, spec.image_size, objects, spec, rng));
  for (const auto& obj : objects) {
    fx.dataset.annotations.push_back({"multi_obj", obj.x, obj.y, obj.category});
    fx.ground_truth.planted["multi_obj"].push_back({obj.x, obj.y, obj.category});
  }
  return fx;
}

void write_fixture(const Fixture& fixture, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  for (const auto& im : fixture.dataset.images)
    write_image(im.pixels, (fs::path(dir) / "images" / (im.id + ".png")).string());

  json meta;
  meta["images"] = json::array();
  for (const auto& im : fixture.dataset.images) {
    json ji{{"id", im.id},
            {"file", im.id + ".png"},
            {"width", im.width()},
            {"height", im.height()},
            {"labeled", im.labeled}};
    if (im.tumor_type.empty())
      ji["tumor_type"] = nullptr;
    else
      ji["tumor_type"] = im.tumor_type;
    meta["images"].push_back(ji);
  }
  meta["annotations"] = json::array();
  for (const auto& a : fixture.dataset.annotations)
    meta["annotations"].push_back(
        {{"image_id", a.image_id}, {"x", a.x}, {"y", a.y}, {"category", to_string(a.category)}});
  std::ofstream(fs::path(dir) / "dataset.json") << meta.dump(2) << "\n";

  json gt;
  gt["images"] = json::array();
  for (const auto& [id, objs] : fixture.ground_truth.planted) {
    json jo{{"id", id}, {"planted", json::array()}};
    for (const auto& o : objs)
      jo["planted"].push_back({{"x", o.x}, {"y", o.y}, {"category", to_string(o.true_category)}});
    gt["images"].push_back(jo);
  }
  gt["flipped_annotations"] = fixture.ground_truth.flipped_annotations;
  std::ofstream(fs::path(dir) / "ground_truth.json") << gt.dump(2) << "\n";
}

}  // namespace mito
