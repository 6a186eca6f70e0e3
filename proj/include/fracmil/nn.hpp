#pragma once
// Minimal CPU convolutional network engine: single-image CHW tensors, a
// layer list held by value, explicit forward traces for backprop, and Adam.
//
// Parameters live in the Network; gradients live in a separate Gradients
// buffer, so inference on a snapshot is const and safe to share.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "fracmil/rng.hpp"

namespace fracmil::nn {

// Float storage with a fixed, maximal SIMD alignment. Eigen picks its kernel
// code path from the runtime alignment of the data it is handed, so buffers
// must be aligned identically on every run for bitwise-reproducible results.
using FloatVec = std::vector<float, Eigen::aligned_allocator<float>>;

struct Tensor {
  int c = 0, h = 0, w = 0;
  FloatVec v;

  Tensor() = default;
  Tensor(int channels, int height, int width, float fill = 0.0f)
      : c(channels), h(height), w(width),
        v(static_cast<std::size_t>(channels) * height * width, fill) {}

  float& at(int ch, int y, int x) { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  float at(int ch, int y, int x) const {
    return v[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }
  std::size_t size() const { return v.size(); }
  bool operator==(const Tensor&) const = default;
};

// k x k convolution, stride 1, zero padding k/2 (k odd). Weight layout is
// [out][in][ky][kx].
struct Conv2d {
  int in = 0, out = 0, k = 1;
  FloatVec weight;
  FloatVec bias;
};
struct Relu {};
struct MaxPool2 {};       // 2x2, stride 2, floor
struct GlobalAvgPool {};  // C x H x W -> C x 1 x 1
struct ChannelLse {       // per-channel log-sum-exp pooling, C x H x W -> C x 1 x 1
  double r = 10.0;
};

using Layer = std::variant<Conv2d, Relu, MaxPool2, GlobalAvgPool, ChannelLse>;

// Per-layer state recorded by a training forward pass.
struct Trace {
  std::vector<Tensor> inputs;              // input of each layer
  std::vector<FloatVec> aux;     // im2col buffer / argmax / pooling weights
};

// One buffer per parameter tensor, in parameter order (weight, bias per conv).
struct Gradients {
  std::vector<FloatVec> g;
  void zero();
  void scale(float s);
  void add(const Gradients& other);
};

class Network {
 public:
  Network() = default;

  Network& add(Layer layer);
  Network& conv(int in, int out, int k);
  Network& relu() { return add(Relu{}); }
  Network& maxpool() { return add(MaxPool2{}); }

  const std::vector<Layer>& layers() const { return layers_; }

  Tensor forward(const Tensor& x) const;
  Tensor forward(const Tensor& x, Trace& trace) const;
  // Accumulates parameter gradients into grads; returns d loss / d input
  // (empty tensor when need_input_grad is false).
  Tensor backward(const Trace& trace, const Tensor& grad_out, Gradients& grads,
                  bool need_input_grad = false) const;

  Gradients make_gradients() const;

  // Pointers to every parameter tensor, matching Gradients order.
  std::vector<FloatVec*> parameters();
  std::vector<const FloatVec*> parameters() const;
  std::size_t parameter_count() const;

  // Product of pooling strides.
  int stride() const;

  // He-normal weights, zero biases.
  void init_he(Rng& rng);
  void zero_parameters();

  // Canonical textual architecture, stable across runs.
  std::string describe() const;

 private:
  std::vector<Layer> layers_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  explicit Adam(const Network& net, AdamConfig cfg = {});
  void step(Network& net, const Gradients& grads, double lr);
  std::int64_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<FloatVec> m_, v_;
};

inline float sigmoid(float z) {
  return z >= 0 ? 1.0f / (1.0f + std::exp(-z)) : std::exp(z) / (1.0f + std::exp(z));
}

}  // namespace fracmil::nn
