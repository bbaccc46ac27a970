#pragma once

#include <vector>

#include "mito/image.hpp"
#include "mito/nn.hpp"

namespace mito {

struct WindowBox {
  int x = 0;
  int y = 0;
  int size = 0;

  bool contains(double px, double py) const {
    return px >= x && px < x + size && py >= y && py < y + size;
  }
  bool operator==(const WindowBox&) const = default;
};

struct ScoredWindow {
  WindowBox box;
  double probability = 0.0;
};

struct InferenceConfig {
  int window = 240;
  int step = 30;
  double prob_threshold = 0.84;
  double nms_threshold = 0.22;
  int batch_size = 32;
};

// Row-major grid of window origins; a flush position at dim-window is
// appended per axis when the stride does not land there exactly.
std::vector<WindowBox> tile_image(int width, int height, int window, int step);

std::vector<ScoredWindow> score_windows(const Classifier& model, const Image& image,
                                        const std::vector<WindowBox>& windows, int batch_size);

// Keeps windows with probability strictly greater than the threshold.
std::vector<ScoredWindow> threshold_windows(const std::vector<ScoredWindow>& scored,
                                            double prob_threshold);

double iou(const WindowBox& a, const WindowBox& b);

// Greedy score-descending NMS; ties broken by (y, x) ascending.
// Removes windows with iou strictly greater than nms_threshold.
std::vector<ScoredWindow> nms(std::vector<ScoredWindow> positives, double nms_threshold);

}  // namespace mito
