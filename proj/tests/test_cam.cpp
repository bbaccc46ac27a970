#include <doctest.h>

#include <cmath>
#include <random>

#include "mito/cam.hpp"

using namespace mito;

namespace {

Tensor random_tensor(int c, int h, int w, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(c, h, w);
  for (auto& v : t.v) v = u(rng);
  return t;
}

// Literal transcription of the GradCAM++ definition, recomputed without
// reference to the production code path.
std::vector<double> gradcampp_oracle(const Tensor& a, const Tensor& g) {
  const int hw = a.h * a.w;
  std::vector<double> cam(hw, 0.0);
  for (int k = 0; k < a.c; ++k) {
    double sum_a = 0.0;
    for (int i = 0; i < hw; ++i) sum_a += a.v[static_cast<std::size_t>(k) * hw + i];
    double wk = 0.0;
    for (int i = 0; i < hw; ++i) {
      const double gi = g.v[static_cast<std::size_t>(k) * hw + i];
      const double denom = 2.0 * gi * gi + sum_a * gi * gi * gi;
      const double alpha = denom == 0.0 ? 0.0 : gi * gi / denom;
      wk += alpha * std::max(0.0, gi);
    }
    for (int i = 0; i < hw; ++i)
      cam[i] += wk * a.v[static_cast<std::size_t>(k) * hw + i];
  }
  double mx = 0.0;
  for (auto& v : cam) {
    v = std::max(0.0, v);
    mx = std::max(mx, v);
  }
  if (mx > 0.0)
    for (auto& v : cam) v /= mx;
  return cam;
}

Image noise_patch(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(0, 255);
  Image img(size, size);
  for (auto& v : img.rgb) v = static_cast<std::uint8_t>(u(rng));
  return img;
}

}  // namespace

TEST_CASE("zero gradients give an all-zero cam") {
  const auto a = random_tensor(4, 6, 6, 1, 0.0, 1.0);
  const Tensor g(4, 6, 6);  // zeros
  const auto cam = gradcampp_from(a, g, {0, 0, 48});
  for (const double v : cam.values) CHECK(v == 0.0);
}

TEST_CASE("single channel with constant positive gradient tracks the activations") {
  Tensor a(1, 5, 5);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (auto& v : a.v) v = u(rng);
  Tensor g(1, 5, 5);
  for (auto& v : g.v) v = 0.3;
  const auto cam = gradcampp_from(a, g, {0, 0, 40});
  const auto am_cam = std::max_element(cam.values.begin(), cam.values.end()) - cam.values.begin();
  const auto am_act = std::max_element(a.v.begin(), a.v.end()) - a.v.begin();
  CHECK(am_cam == am_act);
  CHECK(cam.normalized);
  CHECK(*std::max_element(cam.values.begin(), cam.values.end()) == doctest::Approx(1.0));
}

TEST_CASE("cam matches the formula-replay oracle") {
  SUBCASE("raw tensors, mixed-sign gradients") {
    const auto a = random_tensor(6, 8, 8, 5, 0.0, 1.5);
    const auto g = random_tensor(6, 8, 8, 6, -1.0, 1.0);
    const auto cam = gradcampp_from(a, g, {10, 20, 64});
    const auto oracle = gradcampp_oracle(a, g);
    REQUIRE(cam.values.size() == oracle.size());
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      CHECK(std::abs(cam.values[i] - oracle[i]) < 1e-8);
      CHECK(cam.values[i] >= 0.0);
    }
    CHECK(cam.window == WindowBox{10, 20, 64});
  }
  SUBCASE("through the model on a real window") {
    const auto model = build_tiny_cnn(4, 64, 2);
    const auto patch = noise_patch(64, 9);
    const auto cam = gradcampp(model, patch, {0, 0, 64});
    const auto cache = model.forward(patch);
    const auto g = model.grad_wrt_features(cache);
    const auto oracle = gradcampp_oracle(cache.features, g);
    for (std::size_t i = 0; i < oracle.size(); ++i)
      CHECK(std::abs(cam.values[i] - oracle[i]) < 1e-8);
  }
}

TEST_CASE("scaling the logit preserves the cam argmax") {
  const auto model = build_tiny_cnn(4, 64, 2);
  const auto patch = noise_patch(64, 12);
  const auto cache = model.forward(patch);
  const auto g = model.grad_wrt_features(cache);
  Tensor g4 = g;
  for (auto& v : g4.v) v *= 4.0;  // S' = 4S scales the gradient uniformly
  const auto cam1 = gradcampp_from(cache.features, g, {0, 0, 64});
  const auto cam4 = gradcampp_from(cache.features, g4, {0, 0, 64});
  const auto am1 =
      std::max_element(cam1.values.begin(), cam1.values.end()) - cam1.values.begin();
  const auto am4 =
      std::max_element(cam4.values.begin(), cam4.values.end()) - cam4.values.begin();
  CHECK(am1 == am4);
}

TEST_CASE("hotspot centroid maps cell centers into window coordinates") {
  Cam cam;
  cam.h = 8;
  cam.w = 8;
  cam.values.assign(64, 0.0);
  cam.window = {100, 200, 64};  // 64/8 = 8 px per feature cell
  cam.normalized = true;

  SUBCASE("single nonzero cell") {
    cam.at(2, 5) = 1.0;
    const auto det = hotspot_centroid(cam, 0.5, 0.9);
    REQUIRE(det.has_value());
    CHECK(det->x == doctest::Approx(100 + (5 + 0.5) * 8.0));
    CHECK(det->y == doctest::Approx(200 + (2 + 0.5) * 8.0));
    CHECK(det->score == doctest::Approx(0.9));
    CHECK(cam.window.contains(det->x, det->y));
  }
  SUBCASE("symmetric blob centers on its peak") {
    // 3x3 symmetric stencil around (4, 3).
    const double stencil[3][3] = {{0.5, 0.7, 0.5}, {0.7, 1.0, 0.7}, {0.5, 0.7, 0.5}};
    for (int di = -1; di <= 1; ++di)
      for (int dj = -1; dj <= 1; ++dj) cam.at(4 + di, 3 + dj) = stencil[di + 1][dj + 1];
    const auto det = hotspot_centroid(cam, 0.4, 1.0);
    REQUIRE(det.has_value());
    CHECK(det->x == doctest::Approx(100 + 3.5 * 8.0).epsilon(1e-12));
    CHECK(det->y == doctest::Approx(200 + 4.5 * 8.0).epsilon(1e-12));
  }
  SUBCASE("two blobs: only the max-containing component counts") {
    cam.at(1, 1) = 1.0;
    cam.at(1, 2) = 0.8;
    // Distant second blob above threshold but disconnected.
    cam.at(6, 6) = 0.6;
    cam.at(6, 7) = 0.6;
    const auto det = hotspot_centroid(cam, 0.5, 1.0);
    REQUIRE(det.has_value());
    // Weighted centroid of cells (1,1)=1.0 and (1,2)=0.8 only.
    const double mean_j = (1.0 * 1 + 0.8 * 2) / 1.8;
    CHECK(det->x == doctest::Approx(100 + (mean_j + 0.5) * 8.0).epsilon(1e-12));
    CHECK(det->y == doctest::Approx(200 + 1.5 * 8.0).epsilon(1e-12));
  }
  SUBCASE("diagonal cells are 8-connected") {
    cam.at(3, 3) = 1.0;
    cam.at(4, 4) = 0.9;
    const auto det = hotspot_centroid(cam, 0.5, 1.0);
    REQUIRE(det.has_value());
    const double mean = (1.0 * 3 + 0.9 * 4) / 1.9;
    CHECK(det->x == doctest::Approx(100 + (mean + 0.5) * 8.0).epsilon(1e-12));
  }
  SUBCASE("all-zero cam yields none") {
    CHECK(!hotspot_centroid(cam, 0.5, 1.0).has_value());
  }
  SUBCASE("centroid always lies inside the window") {
    std::mt19937_64 rng(44);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
      Cam c = cam;
      for (auto& v : c.values) v = u(rng);
      const double mx = *std::max_element(c.values.begin(), c.values.end());
      for (auto& v : c.values) v /= mx;
      const auto det = hotspot_centroid(c, 0.5, 1.0);
      REQUIRE(det.has_value());
      CHECK(c.window.contains(det->x, det->y));
    }
  }
}

TEST_CASE("detect on a blank image returns nothing for an untrained model") {
  // Untrained logits sit near 0 -> probability ~0.5, below the 0.84 gate.
  const auto model = build_tiny_cnn(6, 64, 2);
  InferenceConfig cfg;
  cfg.window = 64;
  cfg.step = 32;
  const auto dets = detect(Image::solid(256, 256, 230, 220, 235), model, cfg, 0.5);
  CHECK(dets.empty());
}

TEST_CASE("detect emits at most one detection per post-NMS window") {
  // Force every window positive by biasing the head, then check the
  // detection count equals the NMS survivor count and points stay inside.
  auto model = build_tiny_cnn(6, 64, 2);
  auto w = model.head_weights();
  model.set_head(w, {25.0});  // huge bias -> probability ~1 everywhere
  InferenceConfig cfg;
  cfg.window = 64;
  cfg.step = 32;
  const auto img = noise_patch(160, 50);
  const auto dets = detect(img, model, cfg, 0.5);
  const auto windows = tile_image(160, 160, 64, 32);
  auto scored = score_windows(model, img, windows, cfg.batch_size);
  const auto kept = nms(threshold_windows(scored, cfg.prob_threshold), cfg.nms_threshold);
  CHECK(dets.size() == kept.size());
  CHECK(!dets.empty());
  for (const auto& d : dets) {
    CHECK(d.source_window.contains(d.x, d.y));
    CHECK(d.score > 0.84);
  }
}
