#include "mito/augment.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mito {

namespace {

cv::Mat to_mat(const Image& img) {
  cv::Mat m(img.height, img.width, CV_8UC3);
  std::copy(img.rgb.begin(), img.rgb.end(), m.data);
  return m;
}

Image from_mat(const cv::Mat& m) {
  Image img(m.cols, m.rows);
  for (int y = 0; y < m.rows; ++y)
    std::copy_n(m.ptr<std::uint8_t>(y), static_cast<std::size_t>(m.cols) * 3, img.px(0, y));
  return img;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

void invert3x3(const std::array<std::array<double, 3>, 3>& m,
               std::array<std::array<double, 3>, 3>& inv) {
  const double a = m[0][0], b = m[0][1], c = m[0][2];
  const double d = m[1][0], e = m[1][1], f = m[1][2];
  const double g = m[2][0], h = m[2][1], i = m[2][2];
  const double det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g);
  if (std::abs(det) < 1e-12) throw std::runtime_error("stain basis is singular");
  const double id = 1.0 / det;
  inv[0] = {(e * i - f * h) * id, (c * h - b * i) * id, (b * f - c * e) * id};
  inv[1] = {(f * g - d * i) * id, (a * i - c * g) * id, (c * d - a * f) * id};
  inv[2] = {(d * h - e * g) * id, (b * g - a * h) * id, (a * e - b * d) * id};
}

}  // namespace

AugmentConfig AugmentConfig::disabled() {
  AugmentConfig cfg;
  cfg.enable_rotation = false;
  cfg.enable_flip = false;
  cfg.enable_elastic = false;
  cfg.enable_grid_distortion = false;
  cfg.enable_affine = false;
  cfg.enable_color_jitter = false;
  cfg.enable_blur = false;
  cfg.enable_noise = false;
  cfg.enable_stain = false;
  return cfg;
}

StainBasis StainBasis::he_default() {
  auto normalize = [](std::array<double, 3> v) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    return std::array<double, 3>{v[0] / n, v[1] / n, v[2] / n};
  };
  const auto h = normalize({0.650, 0.704, 0.286});
  const auto e = normalize({0.072, 0.990, 0.105});
  const std::array<double, 3> cross = {h[1] * e[2] - h[2] * e[1], h[2] * e[0] - h[0] * e[2],
                                       h[0] * e[1] - h[1] * e[0]};
  StainBasis basis;
  basis.rows = {h, e, normalize(cross)};
  return basis;
}

double rgb_to_od(std::uint8_t intensity) {
  return -std::log10((static_cast<double>(intensity) + 1.0) / 256.0);
}

std::uint8_t od_to_rgb(double od) {
  const double intensity = 256.0 * std::pow(10.0, -od) - 1.0;
  return static_cast<std::uint8_t>(std::clamp(std::lround(intensity), 0l, 255l));
}

Image stain_augment(const Image& patch, const StainBasis& basis,
                    const std::array<double, 3>& scales, const std::array<double, 3>& shifts) {
  std::array<std::array<double, 3>, 3> inv_t;
  {
    // od (row) = c (row) . basis, so c = od . basis^-1.
    std::array<std::array<double, 3>, 3> inv;
    invert3x3(basis.rows, inv);
    inv_t = inv;
  }
  Image out(patch.width, patch.height);
  const std::size_t n = patch.rgb.size() / 3;
  for (std::size_t p = 0; p < n; ++p) {
    const std::uint8_t* in = patch.rgb.data() + 3 * p;
    std::uint8_t* dst = out.rgb.data() + 3 * p;
    const std::array<double, 3> od = {rgb_to_od(in[0]), rgb_to_od(in[1]), rgb_to_od(in[2])};
    std::array<double, 3> conc{};
    for (int j = 0; j < 3; ++j)
      conc[j] = od[0] * inv_t[0][j] + od[1] * inv_t[1][j] + od[2] * inv_t[2][j];
    for (int j = 0; j < 3; ++j) conc[j] = std::max(0.0, conc[j] * scales[j] + shifts[j]);
    for (int ch = 0; ch < 3; ++ch) {
      const double od_out = conc[0] * basis.rows[0][ch] + conc[1] * basis.rows[1][ch] +
                            conc[2] * basis.rows[2][ch];
      dst[ch] = od_to_rgb(std::max(0.0, od_out));
    }
  }
  return out;
}

Image rotate90(const Image& patch, int quarter_turns) {
  int q = ((quarter_turns % 4) + 4) % 4;
  if (q == 0) return patch;
  cv::Mat m = to_mat(patch);
  cv::Mat r;
  if (q == 1)
    cv::rotate(m, r, cv::ROTATE_90_COUNTERCLOCKWISE);
  else if (q == 2)
    cv::rotate(m, r, cv::ROTATE_180);
  else
    cv::rotate(m, r, cv::ROTATE_90_CLOCKWISE);
  return from_mat(r);
}

Image rotate(const Image& patch, double degrees) {
  const double q = degrees / 90.0;
  if (std::abs(q - std::round(q)) < 1e-9) return rotate90(patch, static_cast<int>(std::lround(q)));
  cv::Mat m = to_mat(patch);
  const cv::Point2f center(static_cast<float>(patch.width) / 2.0f,
                           static_cast<float>(patch.height) / 2.0f);
  cv::Mat rot = cv::getRotationMatrix2D(center, degrees, 1.0);
  cv::Mat out;
  cv::warpAffine(m, out, rot, m.size(), cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
  return from_mat(out);
}

Image flip(const Image& patch, bool horizontal, bool vertical) {
  if (!horizontal && !vertical) return patch;
  cv::Mat m = to_mat(patch);
  cv::Mat out;
  const int code = horizontal && vertical ? -1 : (horizontal ? 1 : 0);
  cv::flip(m, out, code);
  return from_mat(out);
}

namespace {

Image elastic_transform(const Image& patch, double alpha, double sigma, std::mt19937_64& rng) {
  const int w = patch.width, h = patch.height;
  cv::Mat dx(h, w, CV_32F), dy(h, w, CV_32F);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      dx.at<float>(y, x) = u(rng);
      dy.at<float>(y, x) = u(rng);
    }
  const int k = 2 * static_cast<int>(std::ceil(3 * sigma)) + 1;
  cv::GaussianBlur(dx, dx, cv::Size(k, k), sigma);
  cv::GaussianBlur(dy, dy, cv::Size(k, k), sigma);
  cv::Mat map_x(h, w, CV_32F), map_y(h, w, CV_32F);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      map_x.at<float>(y, x) = static_cast<float>(x + alpha * dx.at<float>(y, x));
      map_y.at<float>(y, x) = static_cast<float>(y + alpha * dy.at<float>(y, x));
    }
  cv::Mat out;
  cv::remap(to_mat(patch), out, map_x, map_y, cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
  return from_mat(out);
}

// Monotone piecewise-linear axis remap with per-cell stretch factors.
std::vector<float> grid_axis_map(int dim, int steps, double limit, std::mt19937_64& rng) {
  std::vector<double> widths(steps);
  double total = 0.0;
  for (int i = 0; i < steps; ++i) {
    widths[i] = 1.0 + uniform(rng, -limit, limit);
    total += widths[i];
  }
  std::vector<double> nodes(steps + 1, 0.0);
  for (int i = 0; i < steps; ++i)
    nodes[i + 1] = nodes[i] + widths[i] / total * static_cast<double>(dim);
  std::vector<float> map(dim);
  const double cell = static_cast<double>(dim) / steps;
  for (int x = 0; x < dim; ++x) {
    const int c = std::min(steps - 1, static_cast<int>(x / cell));
    const double frac = (x - c * cell) / cell;
    map[x] = static_cast<float>(nodes[c] + frac * (nodes[c + 1] - nodes[c]));
  }
  return map;
}

Image grid_distortion(const Image& patch, int steps, double limit, std::mt19937_64& rng) {
  const auto mx = grid_axis_map(patch.width, steps, limit, rng);
  const auto my = grid_axis_map(patch.height, steps, limit, rng);
  cv::Mat map_x(patch.height, patch.width, CV_32F), map_y(patch.height, patch.width, CV_32F);
  for (int y = 0; y < patch.height; ++y)
    for (int x = 0; x < patch.width; ++x) {
      map_x.at<float>(y, x) = mx[x];
      map_y.at<float>(y, x) = my[y];
    }
  cv::Mat out;
  cv::remap(to_mat(patch), out, map_x, map_y, cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
  return from_mat(out);
}

Image affine(const Image& patch, double scale, double shear_deg_x, double tx, double ty) {
  const double cx = patch.width / 2.0, cy = patch.height / 2.0;
  const double sh = std::tan(shear_deg_x * CV_PI / 180.0);
  cv::Mat m = (cv::Mat_<double>(2, 3) << scale, sh, cx - scale * cx - sh * cy + tx, 0.0, scale,
               cy - scale * cy + ty);
  cv::Mat out;
  cv::warpAffine(to_mat(patch), out, m, cv::Size(patch.width, patch.height), cv::INTER_LINEAR,
                 cv::BORDER_REFLECT_101);
  return from_mat(out);
}

Image color_jitter(const Image& patch, double bf, double cf, double sf, double hue_shift) {
  cv::Mat f;
  to_mat(patch).convertTo(f, CV_32FC3, 1.0 / 255.0);
  // Brightness and contrast in RGB.
  f *= bf;
  const cv::Scalar mean = cv::mean(f);
  const double gray = (mean[0] + mean[1] + mean[2]) / 3.0;
  f = (f - gray) * cf + gray;
  cv::min(cv::max(f, 0.0f), 1.0f, f);
  // Saturation and hue in HSV (H in degrees for float mats).
  cv::Mat hsv;
  cv::cvtColor(f, hsv, cv::COLOR_RGB2HSV);
  for (int y = 0; y < hsv.rows; ++y) {
    auto* row = hsv.ptr<cv::Vec3f>(y);
    for (int x = 0; x < hsv.cols; ++x) {
      float hh = row[x][0] + static_cast<float>(hue_shift * 360.0);
      if (hh < 0) hh += 360.0f;
      if (hh >= 360.0f) hh -= 360.0f;
      row[x][0] = hh;
      row[x][1] = std::clamp(row[x][1] * static_cast<float>(sf), 0.0f, 1.0f);
    }
  }
  cv::cvtColor(hsv, f, cv::COLOR_HSV2RGB);
  cv::Mat out;
  f.convertTo(out, CV_8UC3, 255.0);
  return from_mat(out);
}

Image add_noise(const Image& patch, double sigma, std::mt19937_64& rng) {
  Image out = patch;
  std::normal_distribution<double> n(0.0, sigma);
  for (auto& v : out.rgb)
    v = static_cast<std::uint8_t>(std::clamp(std::lround(v + n(rng)), 0l, 255l));
  return out;
}

}  // namespace

Image apply_pipeline(const Image& patch, const AugmentConfig& cfg, std::mt19937_64& rng) {
  Image img = patch;
  if (cfg.enable_rotation)
    img = rotate(img, uniform(rng, cfg.rotation_deg.lo, cfg.rotation_deg.hi));
  if (cfg.enable_flip) {
    const bool fh = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    const bool fv = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    img = flip(img, fh, fv);
  }
  if (cfg.enable_affine) {
    const double s = uniform(rng, cfg.affine_scale.lo, cfg.affine_scale.hi);
    const double sh = uniform(rng, -cfg.affine_shear_deg, cfg.affine_shear_deg);
    const double tmax = cfg.affine_translate_frac * img.width;
    img = affine(img, s, sh, uniform(rng, -tmax, tmax), uniform(rng, -tmax, tmax));
  }
  if (cfg.enable_elastic) {
    const double alpha = uniform(rng, cfg.elastic_alpha.lo, cfg.elastic_alpha.hi);
    const double sigma = uniform(rng, cfg.elastic_sigma.lo, cfg.elastic_sigma.hi);
    img = elastic_transform(img, alpha, sigma, rng);
  }
  if (cfg.enable_grid_distortion)
    img = grid_distortion(img, cfg.grid_steps, cfg.grid_limit, rng);
  if (cfg.enable_stain) {
    std::array<double, 3> scales{}, shifts{};
    for (int i = 0; i < 3; ++i)
      scales[i] = uniform(rng, cfg.stain_scale_range.lo, cfg.stain_scale_range.hi);
    for (int i = 0; i < 3; ++i)
      shifts[i] = uniform(rng, cfg.stain_shift_range.lo, cfg.stain_shift_range.hi);
    img = stain_augment(img, StainBasis::he_default(), scales, shifts);
  }
  if (cfg.enable_color_jitter) {
    const double bf = 1.0 + uniform(rng, -cfg.brightness, cfg.brightness);
    const double cf = 1.0 + uniform(rng, -cfg.contrast, cfg.contrast);
    const double sf = 1.0 + uniform(rng, -cfg.saturation, cfg.saturation);
    const double hs = uniform(rng, -cfg.hue, cfg.hue);
    img = color_jitter(img, bf, cf, sf, hs);
  }
  if (cfg.enable_blur) {
    const double sigma = uniform(rng, cfg.blur_sigma.lo, cfg.blur_sigma.hi);
    if (sigma > 0.1) {
      const int k = 2 * static_cast<int>(std::ceil(2 * sigma)) + 1;
      cv::Mat out;
      cv::GaussianBlur(to_mat(img), out, cv::Size(k, k), sigma);
      img = from_mat(out);
    }
  }
  if (cfg.enable_noise) {
    const double sigma = uniform(rng, cfg.noise_sigma.lo, cfg.noise_sigma.hi);
    if (sigma > 0.0) img = add_noise(img, sigma, rng);
  }
  return img;
}

double sample_mixup_lambda(double alpha, std::mt19937_64& rng) {
  if (alpha <= 0.0) throw std::runtime_error("mixup_alpha must be positive");
  // Beta(alpha, 1) via inverse CDF.
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return std::pow(u, 1.0 / alpha);
}

MixedBatch balanced_mixup(const std::vector<const Image*>& instance_pixels,
                          const std::vector<int>& instance_labels,
                          const std::vector<const Image*>& balanced_pixels,
                          const std::vector<int>& balanced_labels, double lambda, int num_ranks) {
  if (instance_pixels.size() != balanced_pixels.size() ||
      instance_pixels.size() != instance_labels.size() ||
      balanced_pixels.size() != balanced_labels.size())
    throw std::runtime_error("balanced_mixup: batch size mismatch");
  MixedBatch out;
  out.pixels.reserve(instance_pixels.size());
  out.soft_labels.reserve(instance_pixels.size());
  for (std::size_t i = 0; i < instance_pixels.size(); ++i) {
    const Image& xi = *instance_pixels[i];
    const Image& xb = *balanced_pixels[i];
    if (xi.width != xb.width || xi.height != xb.height)
      throw std::runtime_error("balanced_mixup: patch shape mismatch");
    std::vector<double> mixed(xi.rgb.size());
    for (std::size_t p = 0; p < mixed.size(); ++p)
      mixed[p] = lambda * xb.rgb[p] + (1.0 - lambda) * xi.rgb[p];
    std::vector<double> label(static_cast<std::size_t>(num_ranks), 0.0);
    label[static_cast<std::size_t>(balanced_labels[i])] += lambda;
    label[static_cast<std::size_t>(instance_labels[i])] += 1.0 - lambda;
    out.pixels.push_back(std::move(mixed));
    out.soft_labels.push_back(std::move(label));
  }
  return out;
}

}  // namespace mito
