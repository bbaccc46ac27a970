#pragma once

#include <optional>
#include <vector>

#include "mito/image.hpp"
#include "mito/nn.hpp"
#include "mito/sliding.hpp"

namespace mito {

struct Cam {
  int h = 0;
  int w = 0;
  std::vector<double> values;  // nonnegative; max = 1 when normalized and not all-zero
  WindowBox window;
  bool normalized = false;

  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * w + j]; }
  double& at(int i, int j) { return values[static_cast<std::size_t>(i) * w + j]; }
};

struct Detection {
  double x = 0.0;
  double y = 0.0;
  double score = 0.0;
  WindowBox source_window;
};

// GradCAM++ core from activations A and gradients g of the positive logit.
Cam gradcampp_from(const Tensor& activations, const Tensor& gradients, WindowBox window);
Cam gradcampp(const Classifier& model, const Image& window_pixels, WindowBox window);

// Binarizes at tau * max, takes the 8-connected component containing the
// global maximum, and returns its value-weighted centroid in image
// coordinates. none when the CAM is all-zero.
std::optional<Detection> hotspot_centroid(const Cam& cam, double tau, double score);

// tile -> score -> threshold -> nms -> gradcam++ -> centroid.
// Windows with an all-zero CAM fall back to the window center.
std::vector<Detection> detect(const Image& image, const Classifier& model,
                              const InferenceConfig& cfg, double cam_threshold);

}  // namespace mito
