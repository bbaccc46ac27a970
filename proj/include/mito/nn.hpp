#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mito/image.hpp"

namespace mito {

struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_) {}

  double& at(int k, int i, int j) {
    return v[(static_cast<std::size_t>(k) * h + i) * w + j];
  }
  double at(int k, int i, int j) const {
    return v[(static_cast<std::size_t>(k) * h + i) * w + j];
  }
  std::size_t size() const { return v.size(); }
};

struct ConvLayer {
  int in_c = 0, out_c = 0, k = 0, stride = 1, pad = 0;
  std::vector<double> w;  // out_c * in_c * k * k
  std::vector<double> b;  // out_c

  int out_dim(int in_dim) const { return (in_dim + 2 * pad - k) / stride + 1; }
};

namespace kernels {

// Serial reference; kept for testing and benchmarking against the
// OpenMP variant, which must produce bit-identical output.
void conv2d_serial(const Tensor& in, const ConvLayer& layer, Tensor& out);
void conv2d_omp(const Tensor& in, const ConvLayer& layer, Tensor& out);

void relu_inplace(Tensor& t);
// 2x2 max pool, stride 2; argmax stores the flat input index per output cell.
void maxpool2(const Tensor& in, Tensor& out, std::vector<std::uint32_t>& argmax);

void conv2d_backward(const Tensor& in, const ConvLayer& layer, const Tensor& dout, Tensor& din,
                     std::vector<double>& dw, std::vector<double>& db, bool need_din);

}  // namespace kernels

struct ModelDescriptor {
  std::string backbone = "tiny_cnn";
  int input_size = 240;
  int num_ranks = 2;
  std::array<int, 3> channels = {8, 16, 16};
  std::array<double, 3> norm_mean = {0.5, 0.5, 0.5};
  std::array<double, 3> norm_std = {0.25, 0.25, 0.25};
  std::string target_layer = "conv3_relu";
  std::uint64_t seed = 0;
};

struct ForwardCache {
  Tensor x;                           // normalized input
  Tensor z1, z2, z3;                  // pre-activation conv outputs
  Tensor p1, p2;                      // pooled activations
  std::vector<std::uint32_t> i1, i2;  // pool argmax
  Tensor features;                    // post-ReLU target-layer map
  std::vector<double> gap;
  std::vector<double> logits;  // K-1
};

// Tiny CNN with a CORAL ordinal head:
//   conv 5x5/s2 - relu - pool2 - conv 3x3 - relu - pool2 - conv 3x3 - relu - GAP - head.
// Target layer for CAMs is the post-ReLU output of the last conv.
class Classifier {
 public:
  explicit Classifier(const ModelDescriptor& desc);

  const ModelDescriptor& descriptor() const { return desc_; }
  int input_size() const { return desc_.input_size; }
  int num_ranks() const { return desc_.num_ranks; }
  int feature_dim() const { return desc_.input_size / 8; }
  int feature_channels() const { return desc_.channels[2]; }

  // pixels: flat S*S*3 interleaved RGB on the 0..255 scale.
  ForwardCache forward(const double* pixels) const;
  ForwardCache forward(const Image& patch) const;
  std::vector<double> logits(const Image& patch) const;

  static double positive_probability(const std::vector<double>& logits);

  // d(positive logit)/d(target-layer activations).
  Tensor grad_wrt_features(const ForwardCache& cache) const;
  // Recomputes logits from feature activations through GAP + head only.
  std::vector<double> logits_from_features(const Tensor& features) const;

  // Accumulates parameter gradients for one sample into grads (flat layout).
  void backward(const ForwardCache& cache, const std::vector<double>& dlogits,
                std::vector<double>& grads) const;

  std::size_t num_params() const;
  std::vector<double> get_params() const;
  void set_params(const std::vector<double>& params);
  // v = momentum*v - lr*g; p += v. Head biases re-sorted non-increasing.
  void sgd_step(const std::vector<double>& grads, std::vector<double>& velocity, double lr,
                double momentum, double weight_decay);

  const std::vector<double>& head_weights() const { return head_w_; }
  const std::vector<double>& head_biases() const { return head_b_; }
  void set_head(const std::vector<double>& w, const std::vector<double>& b);

  void save_checkpoint(const std::string& path) const;
  static Classifier load_checkpoint(const std::string& path);
  // FNV-1a content hash over descriptor + parameter blob.
  std::string checkpoint_id() const;

 private:
  ModelDescriptor desc_;
  ConvLayer conv1_, conv2_, conv3_;
  std::vector<double> head_w_;  // channels[2]
  std::vector<double> head_b_;  // num_ranks - 1, non-increasing

  template <typename Fn>
  void for_each_param_block(Fn&& fn);
  template <typename Fn>
  void for_each_param_block(Fn&& fn) const;
};

Classifier build_tiny_cnn(std::uint64_t seed, int input_size = 240, int num_ranks = 2);

}  // namespace mito
