#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace sbl::nn {

/// Dense C x H x W float activation block, channel-major.
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int c, int h, int w) : channels(c), height(h), width(w),
      data(static_cast<std::size_t>(c) * h * w, 0.0F) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const { return data.size(); }
  float& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
};

/// Weight layout: [out][in][ky][kx].
struct Conv2d {
  ConvSpec spec;
  std::vector<float> weight;
  std::vector<float> bias;

  explicit Conv2d(ConvSpec s = {});
  std::size_t fan_in() const {
    return static_cast<std::size_t>(spec.in_channels) * spec.kernel * spec.kernel;
  }
  int out_size(int in) const { return (in + 2 * spec.pad - spec.kernel) / spec.stride + 1; }
};

/// Saved im2col buffer from the forward pass; required by backward.
struct ConvCache {
  std::vector<float> columns;
  int in_h = 0;
  int in_w = 0;
  int out_h = 0;
  int out_w = 0;
};

struct ConvGrad {
  std::vector<float> weight;
  std::vector<float> bias;

  explicit ConvGrad(const Conv2d& conv)
      : weight(conv.weight.size(), 0.0F), bias(conv.bias.size(), 0.0F) {}
};

Tensor conv_forward(const Conv2d& conv, const Tensor& input, ConvCache* cache = nullptr);

/// Accumulates parameter gradients into `grad` and returns d loss / d input
/// (empty tensor when `want_input_grad` is false).
Tensor conv_backward(const Conv2d& conv, const ConvCache& cache, const Tensor& grad_out,
                     ConvGrad& grad, bool want_input_grad = true);

void relu_inplace(Tensor& t);
/// Zeroes grad entries where the post-activation output is not positive.
void relu_backward_inplace(Tensor& grad, const Tensor& activated);

/// Nearest-neighbour 2x upsampling, cropped to (out_h, out_w).
Tensor upsample2x(const Tensor& in, int out_h, int out_w);
/// Adjoint of upsample2x: sums each 2x2 block back onto its source cell.
Tensor upsample2x_backward(const Tensor& grad_out, int in_h, int in_w);

void add_inplace(Tensor& dst, const Tensor& src);

/// He-normal weights, zero bias.
void init_he(Conv2d& conv, std::mt19937_64& rng);
void init_normal(Conv2d& conv, std::mt19937_64& rng, double stddev, float bias_value);

}  // namespace sbl::nn
