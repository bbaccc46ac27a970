#include "mito/sliding.hpp"

#include <algorithm>
#include <stdexcept>

namespace mito {

namespace {

std::vector<int> axis_positions(int dim, int window, int step) {
  std::vector<int> pos;
  const int last = dim - window;
  for (int x = 0; x <= last; x += step) pos.push_back(x);
  if (pos.back() != last) pos.push_back(last);  // flush window at the edge
  return pos;
}

}  // namespace

std::vector<WindowBox> tile_image(int width, int height, int window, int step) {
  if (window > width || window > height)
    throw std::runtime_error("window exceeds image dimension");
  if (step <= 0 || step > window) throw std::runtime_error("step must lie in (0, window]");
  const auto xs = axis_positions(width, window, step);
  const auto ys = axis_positions(height, window, step);
  std::vector<WindowBox> out;
  out.reserve(xs.size() * ys.size());
  for (int y : ys)
    for (int x : xs) out.push_back({x, y, window});
  return out;
}

std::vector<ScoredWindow> score_windows(const Classifier& model, const Image& image,
                                        const std::vector<WindowBox>& windows, int batch_size) {
  if (batch_size < 1) throw std::runtime_error("batch_size must be >= 1");
  for (const auto& b : windows)
    if (b.x < 0 || b.y < 0 || b.x + b.size > image.width || b.y + b.size > image.height)
      throw std::runtime_error("window outside image");
  std::vector<ScoredWindow> out(windows.size());
  // Batches bound peak memory only; per-window results are independent.
  for (std::size_t start = 0; start < windows.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(windows.size(), start + static_cast<std::size_t>(batch_size));
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = static_cast<std::ptrdiff_t>(start);
         i < static_cast<std::ptrdiff_t>(end); ++i) {
      const WindowBox& b = windows[static_cast<std::size_t>(i)];
      std::vector<double> pixels(static_cast<std::size_t>(b.size) * b.size * 3);
      for (int row = 0; row < b.size; ++row) {
        const std::uint8_t* src = image.px(b.x, b.y + row);
        double* dst = pixels.data() + static_cast<std::size_t>(row) * b.size * 3;
        for (int k = 0; k < b.size * 3; ++k) dst[k] = src[k];
      }
      const auto cache = model.forward(pixels.data());
      out[static_cast<std::size_t>(i)] = {b, Classifier::positive_probability(cache.logits)};
    }
  }
  return out;
}

std::vector<ScoredWindow> threshold_windows(const std::vector<ScoredWindow>& scored,
                                            double prob_threshold) {
  std::vector<ScoredWindow> out;
  for (const auto& s : scored)
    if (s.probability > prob_threshold) out.push_back(s);
  return out;
}

double iou(const WindowBox& a, const WindowBox& b) {
  const double ix = std::max(0, std::min(a.x + a.size, b.x + b.size) - std::max(a.x, b.x));
  const double iy = std::max(0, std::min(a.y + a.size, b.y + b.size) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni =
      static_cast<double>(a.size) * a.size + static_cast<double>(b.size) * b.size - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<ScoredWindow> nms(std::vector<ScoredWindow> positives, double nms_threshold) {
  std::stable_sort(positives.begin(), positives.end(),
                   [](const ScoredWindow& a, const ScoredWindow& b) {
                     if (a.probability != b.probability) return a.probability > b.probability;
                     if (a.box.y != b.box.y) return a.box.y < b.box.y;
                     return a.box.x < b.box.x;
                   });
  std::vector<ScoredWindow> kept;
  std::vector<bool> removed(positives.size(), false);
  for (std::size_t i = 0; i < positives.size(); ++i) {
    if (removed[i]) continue;
    kept.push_back(positives[i]);
    for (std::size_t j = i + 1; j < positives.size(); ++j) {
      if (!removed[j] && iou(positives[i].box, positives[j].box) > nms_threshold)
        removed[j] = true;
    }
  }
  return kept;
}

}  // namespace mito
