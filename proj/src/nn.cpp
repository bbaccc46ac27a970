#include "mito/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <stdexcept>

#include <json.hpp>

using nlohmann::json;

namespace mito {

namespace kernels {

namespace {

inline double conv_cell(const Tensor& in, const ConvLayer& layer, int o, int i, int j) {
  double acc = layer.b[o];
  const int k = layer.k;
  for (int ic = 0; ic < layer.in_c; ++ic) {
    const double* wbase = layer.w.data() + ((static_cast<std::size_t>(o) * layer.in_c + ic) * k) * k;
    for (int ky = 0; ky < k; ++ky) {
      const int y = i * layer.stride - layer.pad + ky;
      if (y < 0 || y >= in.h) continue;
      const double* row = in.v.data() + (static_cast<std::size_t>(ic) * in.h + y) * in.w;
      const double* wrow = wbase + static_cast<std::size_t>(ky) * k;
      for (int kx = 0; kx < k; ++kx) {
        const int x = j * layer.stride - layer.pad + kx;
        if (x < 0 || x >= in.w) continue;
        acc += wrow[kx] * row[x];
      }
    }
  }
  return acc;
}

}  // namespace

void conv2d_serial(const Tensor& in, const ConvLayer& layer, Tensor& out) {
  const int oh = layer.out_dim(in.h), ow = layer.out_dim(in.w);
  out = Tensor(layer.out_c, oh, ow);
  for (int o = 0; o < layer.out_c; ++o)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) out.at(o, i, j) = conv_cell(in, layer, o, i, j);
}

void conv2d_omp(const Tensor& in, const ConvLayer& layer, Tensor& out) {
  const int oh = layer.out_dim(in.h), ow = layer.out_dim(in.w);
  out = Tensor(layer.out_c, oh, ow);
#pragma omp parallel for schedule(static)
  for (int o = 0; o < layer.out_c; ++o)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) out.at(o, i, j) = conv_cell(in, layer, o, i, j);
}

void relu_inplace(Tensor& t) {
  for (auto& v : t.v) v = v > 0.0 ? v : 0.0;
}

void maxpool2(const Tensor& in, Tensor& out, std::vector<std::uint32_t>& argmax) {
  const int oh = in.h / 2, ow = in.w / 2;
  out = Tensor(in.c, oh, ow);
  argmax.assign(out.size(), 0);
  for (int c = 0; c < in.c; ++c)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        double best = -1e300;
        std::uint32_t best_idx = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int y = 2 * i + dy, x = 2 * j + dx;
            const auto idx =
                static_cast<std::uint32_t>((static_cast<std::size_t>(c) * in.h + y) * in.w + x);
            if (in.v[idx] > best) {
              best = in.v[idx];
              best_idx = idx;
            }
          }
        out.at(c, i, j) = best;
        argmax[(static_cast<std::size_t>(c) * oh + i) * ow + j] = best_idx;
      }
}

void conv2d_backward(const Tensor& in, const ConvLayer& layer, const Tensor& dout, Tensor& din,
                     std::vector<double>& dw, std::vector<double>& db, bool need_din) {
  const int k = layer.k;
  if (need_din) din = Tensor(in.c, in.h, in.w);
  for (int o = 0; o < layer.out_c; ++o) {
    for (int i = 0; i < dout.h; ++i)
      for (int j = 0; j < dout.w; ++j) {
        const double g = dout.at(o, i, j);
        if (g == 0.0) continue;
        db[o] += g;
        for (int ic = 0; ic < layer.in_c; ++ic) {
          double* dwbase = dw.data() + ((static_cast<std::size_t>(o) * layer.in_c + ic) * k) * k;
          const double* wbase =
              layer.w.data() + ((static_cast<std::size_t>(o) * layer.in_c + ic) * k) * k;
          for (int ky = 0; ky < k; ++ky) {
            const int y = i * layer.stride - layer.pad + ky;
            if (y < 0 || y >= in.h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int x = j * layer.stride - layer.pad + kx;
              if (x < 0 || x >= in.w) continue;
              dwbase[static_cast<std::size_t>(ky) * k + kx] += g * in.at(ic, y, x);
              if (need_din) din.at(ic, y, x) += g * wbase[static_cast<std::size_t>(ky) * k + kx];
            }
          }
        }
      }
  }
}

}  // namespace kernels

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

ConvLayer make_conv(int in_c, int out_c, int k, int stride, int pad, std::mt19937_64& rng) {
  ConvLayer c;
  c.in_c = in_c;
  c.out_c = out_c;
  c.k = k;
  c.stride = stride;
  c.pad = pad;
  c.w.resize(static_cast<std::size_t>(out_c) * in_c * k * k);
  c.b.assign(static_cast<std::size_t>(out_c), 0.0);
  const double bound = std::sqrt(6.0 / (in_c * k * k));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& w : c.w) w = u(rng);
  return c;
}

}  // namespace

Classifier::Classifier(const ModelDescriptor& desc) : desc_(desc) {
  if (desc_.backbone != "tiny_cnn")
    throw std::runtime_error("unknown backbone: " + desc_.backbone);
  if (desc_.input_size < 32 || desc_.input_size % 8 != 0)
    throw std::runtime_error("input_size must be >= 32 and divisible by 8");
  if (desc_.num_ranks < 2) throw std::runtime_error("num_ranks must be >= 2");
  std::mt19937_64 rng(desc_.seed);
  conv1_ = make_conv(3, desc_.channels[0], 5, 2, 2, rng);
  conv2_ = make_conv(desc_.channels[0], desc_.channels[1], 3, 1, 1, rng);
  conv3_ = make_conv(desc_.channels[1], desc_.channels[2], 3, 1, 1, rng);
  head_w_.resize(static_cast<std::size_t>(desc_.channels[2]));
  const double bound = std::sqrt(6.0 / desc_.channels[2]);
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& w : head_w_) w = u(rng);
  head_b_.assign(static_cast<std::size_t>(desc_.num_ranks - 1), 0.0);
}

ForwardCache Classifier::forward(const double* pixels) const {
  const int s = desc_.input_size;
  ForwardCache c;
  c.x = Tensor(3, s, s);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x)
      for (int ch = 0; ch < 3; ++ch)
        c.x.at(ch, y, x) = (pixels[3 * (static_cast<std::size_t>(y) * s + x) + ch] / 255.0 -
                            desc_.norm_mean[ch]) /
                           desc_.norm_std[ch];
  kernels::conv2d_omp(c.x, conv1_, c.z1);
  Tensor a1 = c.z1;
  kernels::relu_inplace(a1);
  kernels::maxpool2(a1, c.p1, c.i1);
  kernels::conv2d_omp(c.p1, conv2_, c.z2);
  Tensor a2 = c.z2;
  kernels::relu_inplace(a2);
  kernels::maxpool2(a2, c.p2, c.i2);
  kernels::conv2d_omp(c.p2, conv3_, c.z3);
  c.features = c.z3;
  kernels::relu_inplace(c.features);
  c.gap.assign(static_cast<std::size_t>(c.features.c), 0.0);
  const double inv_hw = 1.0 / (static_cast<double>(c.features.h) * c.features.w);
  for (int k = 0; k < c.features.c; ++k) {
    double acc = 0.0;
    for (int i = 0; i < c.features.h; ++i)
      for (int j = 0; j < c.features.w; ++j) acc += c.features.at(k, i, j);
    c.gap[k] = acc * inv_hw;
  }
  double dot = 0.0;
  for (std::size_t k = 0; k < head_w_.size(); ++k) dot += head_w_[k] * c.gap[k];
  c.logits.resize(head_b_.size());
  for (std::size_t k = 0; k < head_b_.size(); ++k) c.logits[k] = dot + head_b_[k];
  return c;
}

ForwardCache Classifier::forward(const Image& patch) const {
  if (patch.width != desc_.input_size || patch.height != desc_.input_size)
    throw std::runtime_error("patch shape mismatch: expected " + std::to_string(desc_.input_size));
  std::vector<double> pixels(patch.rgb.begin(), patch.rgb.end());
  return forward(pixels.data());
}

std::vector<double> Classifier::logits(const Image& patch) const { return forward(patch).logits; }

double Classifier::positive_probability(const std::vector<double>& logits) {
  return sigmoid(logits.at(0));
}

Tensor Classifier::grad_wrt_features(const ForwardCache& cache) const {
  // Positive logit = sum_c w_c * mean_ij(A_cij) + b_0: the gradient is
  // constant per channel at w_c / (h*w).
  Tensor g(cache.features.c, cache.features.h, cache.features.w);
  const double inv_hw = 1.0 / (static_cast<double>(g.h) * g.w);
  for (int k = 0; k < g.c; ++k) {
    const double val = head_w_[static_cast<std::size_t>(k)] * inv_hw;
    for (int i = 0; i < g.h; ++i)
      for (int j = 0; j < g.w; ++j) g.at(k, i, j) = val;
  }
  return g;
}

std::vector<double> Classifier::logits_from_features(const Tensor& features) const {
  const double inv_hw = 1.0 / (static_cast<double>(features.h) * features.w);
  double dot = 0.0;
  for (int k = 0; k < features.c; ++k) {
    double acc = 0.0;
    for (int i = 0; i < features.h; ++i)
      for (int j = 0; j < features.w; ++j) acc += features.at(k, i, j);
    dot += head_w_[static_cast<std::size_t>(k)] * acc * inv_hw;
  }
  std::vector<double> logits(head_b_.size());
  for (std::size_t k = 0; k < head_b_.size(); ++k) logits[k] = dot + head_b_[k];
  return logits;
}

template <typename Fn>
void Classifier::for_each_param_block(Fn&& fn) {
  fn(conv1_.w);
  fn(conv1_.b);
  fn(conv2_.w);
  fn(conv2_.b);
  fn(conv3_.w);
  fn(conv3_.b);
  fn(head_w_);
  fn(head_b_);
}

template <typename Fn>
void Classifier::for_each_param_block(Fn&& fn) const {
  fn(conv1_.w);
  fn(conv1_.b);
  fn(conv2_.w);
  fn(conv2_.b);
  fn(conv3_.w);
  fn(conv3_.b);
  fn(head_w_);
  fn(head_b_);
}

std::size_t Classifier::num_params() const {
  std::size_t n = 0;
  for_each_param_block([&](const std::vector<double>& b) { n += b.size(); });
  return n;
}

std::vector<double> Classifier::get_params() const {
  std::vector<double> out;
  out.reserve(num_params());
  for_each_param_block(
      [&](const std::vector<double>& b) { out.insert(out.end(), b.begin(), b.end()); });
  return out;
}

void Classifier::set_params(const std::vector<double>& params) {
  if (params.size() != num_params()) throw std::runtime_error("parameter count mismatch");
  std::size_t off = 0;
  for_each_param_block([&](std::vector<double>& b) {
    std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(off), b.size(), b.begin());
    off += b.size();
  });
}

void Classifier::backward(const ForwardCache& cache, const std::vector<double>& dlogits,
                          std::vector<double>& grads) const {
  if (grads.size() != num_params()) grads.assign(num_params(), 0.0);
  const std::size_t c1w = conv1_.w.size(), c1b = conv1_.b.size();
  const std::size_t c2w = conv2_.w.size(), c2b = conv2_.b.size();
  const std::size_t c3w = conv3_.w.size(), c3b = conv3_.b.size();
  double* g_c1w = grads.data();
  double* g_c1b = g_c1w + c1w;
  double* g_c2w = g_c1b + c1b;
  double* g_c2b = g_c2w + c2w;
  double* g_c3w = g_c2b + c2b;
  double* g_c3b = g_c3w + c3w;
  double* g_hw = g_c3b + c3b;
  double* g_hb = g_hw + head_w_.size();

  double dsum = 0.0;
  for (std::size_t k = 0; k < dlogits.size(); ++k) {
    dsum += dlogits[k];
    g_hb[k] += dlogits[k];
  }
  for (std::size_t k = 0; k < head_w_.size(); ++k) g_hw[k] += dsum * cache.gap[k];

  // GAP backward, then ReLU mask from pre-activation z3.
  Tensor dz3(cache.z3.c, cache.z3.h, cache.z3.w);
  const double inv_hw = 1.0 / (static_cast<double>(cache.features.h) * cache.features.w);
  for (int k = 0; k < dz3.c; ++k) {
    const double dgap = dsum * head_w_[static_cast<std::size_t>(k)] * inv_hw;
    for (int i = 0; i < dz3.h; ++i)
      for (int j = 0; j < dz3.w; ++j)
        dz3.at(k, i, j) = cache.z3.at(k, i, j) > 0.0 ? dgap : 0.0;
  }

  std::vector<double> dw3(c3w, 0.0), db3(c3b, 0.0);
  Tensor dp2;
  kernels::conv2d_backward(cache.p2, conv3_, dz3, dp2, dw3, db3, true);
  for (std::size_t i = 0; i < c3w; ++i) g_c3w[i] += dw3[i];
  for (std::size_t i = 0; i < c3b; ++i) g_c3b[i] += db3[i];

  // Pool2 scatter + ReLU mask from z2.
  Tensor dz2(cache.z2.c, cache.z2.h, cache.z2.w);
  for (std::size_t i = 0; i < dp2.size(); ++i) dz2.v[cache.i2[i]] += dp2.v[i];
  for (std::size_t i = 0; i < dz2.size(); ++i)
    if (cache.z2.v[i] <= 0.0) dz2.v[i] = 0.0;

  std::vector<double> dw2(c2w, 0.0), db2(c2b, 0.0);
  Tensor dp1;
  kernels::conv2d_backward(cache.p1, conv2_, dz2, dp1, dw2, db2, true);
  for (std::size_t i = 0; i < c2w; ++i) g_c2w[i] += dw2[i];
  for (std::size_t i = 0; i < c2b; ++i) g_c2b[i] += db2[i];

  Tensor dz1(cache.z1.c, cache.z1.h, cache.z1.w);
  for (std::size_t i = 0; i < dp1.size(); ++i) dz1.v[cache.i1[i]] += dp1.v[i];
  for (std::size_t i = 0; i < dz1.size(); ++i)
    if (cache.z1.v[i] <= 0.0) dz1.v[i] = 0.0;

  std::vector<double> dw1(c1w, 0.0), db1(c1b, 0.0);
  Tensor unused;
  kernels::conv2d_backward(cache.x, conv1_, dz1, unused, dw1, db1, false);
  for (std::size_t i = 0; i < c1w; ++i) g_c1w[i] += dw1[i];
  for (std::size_t i = 0; i < c1b; ++i) g_c1b[i] += db1[i];
}

void Classifier::sgd_step(const std::vector<double>& grads, std::vector<double>& velocity,
                          double lr, double momentum, double weight_decay) {
  if (velocity.size() != num_params()) velocity.assign(num_params(), 0.0);
  std::size_t off = 0;
  for_each_param_block([&](std::vector<double>& block) {
    for (std::size_t i = 0; i < block.size(); ++i) {
      const double g = grads[off + i] + weight_decay * block[i];
      velocity[off + i] = momentum * velocity[off + i] - lr * g;
      block[i] += velocity[off + i];
    }
    off += block.size();
  });
  std::sort(head_b_.begin(), head_b_.end(), std::greater<double>());
}

void Classifier::set_head(const std::vector<double>& w, const std::vector<double>& b) {
  if (w.size() != head_w_.size() || b.size() != head_b_.size())
    throw std::runtime_error("head shape mismatch");
  head_w_ = w;
  head_b_ = b;
  std::sort(head_b_.begin(), head_b_.end(), std::greater<double>());
}

namespace {

json descriptor_to_json(const ModelDescriptor& d) {
  return json{{"backbone", d.backbone},
              {"input_size", d.input_size},
              {"num_ranks", d.num_ranks},
              {"channels", d.channels},
              {"norm_mean", d.norm_mean},
              {"norm_std", d.norm_std},
              {"target_layer", d.target_layer},
              {"seed", d.seed}};
}

ModelDescriptor descriptor_from_json(const json& j) {
  ModelDescriptor d;
  d.backbone = j.at("backbone").get<std::string>();
  d.input_size = j.at("input_size").get<int>();
  d.num_ranks = j.at("num_ranks").get<int>();
  d.channels = j.at("channels").get<std::array<int, 3>>();
  d.norm_mean = j.at("norm_mean").get<std::array<double, 3>>();
  d.norm_std = j.at("norm_std").get<std::array<double, 3>>();
  d.target_layer = j.at("target_layer").get<std::string>();
  d.seed = j.at("seed").get<std::uint64_t>();
  return d;
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

void Classifier::save_checkpoint(const std::string& path) const {
  {
    std::ofstream out(path + ".json");
    if (!out) throw std::runtime_error("cannot write checkpoint descriptor: " + path);
    out << descriptor_to_json(desc_).dump(2) << "\n";
  }
  const auto params = get_params();
  std::ofstream bin(path + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write checkpoint blob: " + path);
  bin.write(reinterpret_cast<const char*>(params.data()),
            static_cast<std::streamsize>(params.size() * sizeof(double)));
}

Classifier Classifier::load_checkpoint(const std::string& path) {
  std::ifstream desc_in(path + ".json");
  if (!desc_in) throw std::runtime_error("cannot read checkpoint descriptor: " + path);
  json j;
  desc_in >> j;
  Classifier model(descriptor_from_json(j));
  std::ifstream bin(path + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot read checkpoint blob: " + path);
  std::vector<double> params(model.num_params());
  bin.read(reinterpret_cast<char*>(params.data()),
           static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (!bin) throw std::runtime_error("checkpoint blob truncated: " + path);
  model.set_params(params);
  return model;
}

std::string Classifier::checkpoint_id() const {
  const std::string desc = descriptor_to_json(desc_).dump();
  const auto params = get_params();
  std::uint64_t h = 1469598103934665603ull;
  h = fnv1a(h, desc.data(), desc.size());
  h = fnv1a(h, params.data(), params.size() * sizeof(double));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Classifier build_tiny_cnn(std::uint64_t seed, int input_size, int num_ranks) {
  ModelDescriptor d;
  d.input_size = input_size;
  d.num_ranks = num_ranks;
  d.seed = seed;
  return Classifier(d);
}

}  // namespace mito
