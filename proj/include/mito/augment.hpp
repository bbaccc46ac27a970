#pragma once

#include <array>
#include <random>
#include <vector>

#include "mito/image.hpp"

namespace mito {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct AugmentConfig {
  bool enable_rotation = true;
  Interval rotation_deg{0.0, 360.0};
  bool enable_flip = true;
  bool enable_elastic = true;
  Interval elastic_alpha{20.0, 40.0};
  Interval elastic_sigma{5.0, 7.0};
  bool enable_grid_distortion = true;
  int grid_steps = 4;
  double grid_limit = 0.15;
  bool enable_affine = true;
  Interval affine_scale{0.9, 1.1};
  double affine_shear_deg = 8.0;
  double affine_translate_frac = 0.05;
  bool enable_color_jitter = true;
  double brightness = 0.15;
  double contrast = 0.15;
  double saturation = 0.10;
  double hue = 0.02;
  bool enable_blur = true;
  Interval blur_sigma{0.0, 1.2};
  bool enable_noise = true;
  Interval noise_sigma{0.0, 8.0};
  bool enable_stain = true;
  Interval stain_scale_range{0.75, 1.25};
  Interval stain_shift_range{-0.05, 0.05};
  double mixup_alpha = 0.2;

  static AugmentConfig disabled();
};

// Rows are unit-norm optical-density stain vectors: hematoxylin, eosin, residual.
struct StainBasis {
  std::array<std::array<double, 3>, 3> rows;

  static StainBasis he_default();
};

// od = -log10((intensity + 1) / 256), per channel.
double rgb_to_od(std::uint8_t intensity);
std::uint8_t od_to_rgb(double od);

// Scales/shifts stain concentrations in optical-density space.
Image stain_augment(const Image& patch, const StainBasis& basis,
                    const std::array<double, 3>& scales, const std::array<double, 3>& shifts);

// Exact 90-degree-multiple rotation (pixel permutation, square images).
Image rotate90(const Image& patch, int quarter_turns);
Image rotate(const Image& patch, double degrees);
Image flip(const Image& patch, bool horizontal, bool vertical);

// Full pipeline in fixed order: geometric, stain, color jitter, blur, noise.
Image apply_pipeline(const Image& patch, const AugmentConfig& cfg, std::mt19937_64& rng);

// lambda ~ Beta(alpha, 1).
double sample_mixup_lambda(double alpha, std::mt19937_64& rng);

struct MixedBatch {
  // Pixels kept real-valued (0..255 scale), one flat S*S*3 vector per sample.
  std::vector<std::vector<double>> pixels;
  // Soft one-hot over ranks 0..K-1, components sum to 1.
  std::vector<std::vector<double>> soft_labels;
};

// x~ = lambda * x_balanced + (1 - lambda) * x_instance, same for labels.
MixedBatch balanced_mixup(const std::vector<const Image*>& instance_pixels,
                          const std::vector<int>& instance_labels,
                          const std::vector<const Image*>& balanced_pixels,
                          const std::vector<int>& balanced_labels, double lambda, int num_ranks);

}  // namespace mito
