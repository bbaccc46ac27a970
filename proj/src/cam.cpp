#include "mito/cam.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

namespace mito {

Cam gradcampp_from(const Tensor& activations, const Tensor& gradients, WindowBox window) {
  if (activations.c != gradients.c || activations.h != gradients.h ||
      activations.w != gradients.w)
    throw std::runtime_error("gradcampp: activation/gradient shape mismatch");
  const int C = activations.c, H = activations.h, W = activations.w;
  Cam cam;
  cam.h = H;
  cam.w = W;
  cam.window = window;
  cam.values.assign(static_cast<std::size_t>(H) * W, 0.0);

  for (int k = 0; k < C; ++k) {
    double act_sum = 0.0;
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) act_sum += activations.at(k, i, j);

    double weight = 0.0;
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        const double g = gradients.at(k, i, j);
        const double denom = 2.0 * g * g + act_sum * g * g * g;
        const double alpha = denom != 0.0 ? g * g / denom : 0.0;
        weight += alpha * std::max(0.0, g);
      }

    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j)
        cam.values[static_cast<std::size_t>(i) * W + j] += weight * activations.at(k, i, j);
  }

  double max_val = 0.0;
  for (auto& v : cam.values) {
    v = std::max(0.0, v);
    max_val = std::max(max_val, v);
  }
  if (max_val > 0.0)
    for (auto& v : cam.values) v /= max_val;
  cam.normalized = true;
  return cam;
}

Cam gradcampp(const Classifier& model, const Image& window_pixels, WindowBox window) {
  const ForwardCache cache = model.forward(window_pixels);
  const Tensor grads = model.grad_wrt_features(cache);
  return gradcampp_from(cache.features, grads, window);
}

std::optional<Detection> hotspot_centroid(const Cam& cam, double tau, double score) {
  if (!cam.normalized) throw std::runtime_error("hotspot_centroid expects a normalized CAM");
  double max_val = 0.0;
  int max_i = 0, max_j = 0;
  for (int i = 0; i < cam.h; ++i)
    for (int j = 0; j < cam.w; ++j)
      if (cam.at(i, j) > max_val) {
        max_val = cam.at(i, j);
        max_i = i;
        max_j = j;
      }
  if (max_val <= 0.0) return std::nullopt;

  const double cutoff = tau * max_val;
  std::vector<char> on(cam.values.size(), 0), seen(cam.values.size(), 0);
  for (std::size_t i = 0; i < cam.values.size(); ++i) on[i] = cam.values[i] >= cutoff;

  // 8-connected component containing the global maximum.
  double wsum = 0.0, isum = 0.0, jsum = 0.0;
  std::deque<std::pair<int, int>> queue{{max_i, max_j}};
  seen[static_cast<std::size_t>(max_i) * cam.w + max_j] = 1;
  while (!queue.empty()) {
    const auto [i, j] = queue.front();
    queue.pop_front();
    const double v = cam.at(i, j);
    wsum += v;
    isum += v * i;
    jsum += v * j;
    for (int di = -1; di <= 1; ++di)
      for (int dj = -1; dj <= 1; ++dj) {
        const int ni = i + di, nj = j + dj;
        if (ni < 0 || nj < 0 || ni >= cam.h || nj >= cam.w) continue;
        const std::size_t idx = static_cast<std::size_t>(ni) * cam.w + nj;
        if (!seen[idx] && on[idx]) {
          seen[idx] = 1;
          queue.emplace_back(ni, nj);
        }
      }
  }

  // Feature cell centers map to pixel-box centers.
  Detection d;
  d.x = cam.window.x + (jsum / wsum + 0.5) * static_cast<double>(cam.window.size) / cam.w;
  d.y = cam.window.y + (isum / wsum + 0.5) * static_cast<double>(cam.window.size) / cam.h;
  d.score = score;
  d.source_window = cam.window;
  return d;
}

std::vector<Detection> detect(const Image& image, const Classifier& model,
                              const InferenceConfig& cfg, double cam_threshold) {
  const auto windows = tile_image(image.width, image.height, cfg.window, cfg.step);
  const auto scored = score_windows(model, image, windows, cfg.batch_size);
  const auto positives = threshold_windows(scored, cfg.prob_threshold);
  const auto kept = nms(positives, cfg.nms_threshold);

  std::vector<Detection> detections(kept.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(kept.size()); ++i) {
    const ScoredWindow& sw = kept[static_cast<std::size_t>(i)];
    Image crop(sw.box.size, sw.box.size);
    for (int row = 0; row < sw.box.size; ++row)
      std::copy_n(image.px(sw.box.x, sw.box.y + row), static_cast<std::size_t>(sw.box.size) * 3,
                  crop.px(0, row));
    const Cam cam = gradcampp(model, crop, sw.box);
    auto det = hotspot_centroid(cam, cam_threshold, sw.probability);
    if (!det) {
      // All-zero CAM: a positive window still yields a detection.
      det = Detection{sw.box.x + sw.box.size / 2.0, sw.box.y + sw.box.size / 2.0, sw.probability,
                      sw.box};
    }
    detections[static_cast<std::size_t>(i)] = *det;
  }
  return detections;
}

}  // namespace mito
