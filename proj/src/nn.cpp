#include "sbl/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sbl::nn {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

void im2col(const Tensor& in, const ConvSpec& s, int out_h, int out_w, std::vector<float>& cols) {
  const int k = s.kernel;
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  cols.assign(static_cast<std::size_t>(s.in_channels) * k * k * out_plane, 0.0F);
  for (int c = 0; c < s.in_channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* row = cols.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * out_plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= in.height) continue;
          const float* src = in.data.data() + (static_cast<std::size_t>(c) * in.height + iy) * in.width;
          float* dst = row + static_cast<std::size_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * s.stride - s.pad + kx;
            if (ix >= 0 && ix < in.width) dst[ox] = src[ix];
          }
        }
      }
    }
  }
}

void col2im(const std::vector<float>& cols, const ConvSpec& s, int out_h, int out_w, Tensor& in) {
  const int k = s.kernel;
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < s.in_channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* row = cols.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * out_plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= in.height) continue;
          float* dst = in.data.data() + (static_cast<std::size_t>(c) * in.height + iy) * in.width;
          const float* src = row + static_cast<std::size_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * s.stride - s.pad + kx;
            if (ix >= 0 && ix < in.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Conv2d::Conv2d(ConvSpec s)
    : spec(s),
      weight(static_cast<std::size_t>(s.out_channels) * s.in_channels * s.kernel * s.kernel, 0.0F),
      bias(static_cast<std::size_t>(s.out_channels), 0.0F) {}

Tensor conv_forward(const Conv2d& conv, const Tensor& input, ConvCache* cache) {
  const ConvSpec& s = conv.spec;
  if (input.channels != s.in_channels) {
    throw std::invalid_argument("conv_forward: input has " + std::to_string(input.channels) +
                                " channels, expected " + std::to_string(s.in_channels));
  }
  const int out_h = conv.out_size(input.height);
  const int out_w = conv.out_size(input.width);
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("conv_forward: input too small");

  ConvCache local;
  ConvCache& cc = cache ? *cache : local;
  cc.in_h = input.height;
  cc.in_w = input.width;
  cc.out_h = out_h;
  cc.out_w = out_w;
  im2col(input, s, out_h, out_w, cc.columns);

  Tensor out(s.out_channels, out_h, out_w);
  const auto rows = static_cast<Eigen::Index>(conv.fan_in());
  const auto plane = static_cast<Eigen::Index>(out.plane());
  ConstMatMap w(conv.weight.data(), s.out_channels, rows);
  ConstMatMap col(cc.columns.data(), rows, plane);
  MatMap y(out.data.data(), s.out_channels, plane);
  y.noalias() = w * col;
  for (int o = 0; o < s.out_channels; ++o) y.row(o).array() += conv.bias[static_cast<std::size_t>(o)];
  return out;
}

Tensor conv_backward(const Conv2d& conv, const ConvCache& cache, const Tensor& grad_out,
                     ConvGrad& grad, bool want_input_grad) {
  const ConvSpec& s = conv.spec;
  const auto rows = static_cast<Eigen::Index>(conv.fan_in());
  const auto plane = static_cast<Eigen::Index>(grad_out.plane());
  if (grad_out.channels != s.out_channels || grad_out.height != cache.out_h ||
      grad_out.width != cache.out_w) {
    throw std::invalid_argument("conv_backward: gradient shape mismatch");
  }
  ConstMatMap dy(grad_out.data.data(), s.out_channels, plane);
  ConstMatMap col(cache.columns.data(), rows, plane);
  MatMap dw(grad.weight.data(), s.out_channels, rows);
  dw.noalias() += dy * col.transpose();
  for (int o = 0; o < s.out_channels; ++o) grad.bias[static_cast<std::size_t>(o)] += dy.row(o).sum();

  if (!want_input_grad) return {};
  std::vector<float> dcol(static_cast<std::size_t>(rows * plane));
  MatMap dc(dcol.data(), rows, plane);
  ConstMatMap w(conv.weight.data(), s.out_channels, rows);
  dc.noalias() = w.transpose() * dy;
  Tensor grad_in(s.in_channels, cache.in_h, cache.in_w);
  col2im(dcol, s, cache.out_h, cache.out_w, grad_in);
  return grad_in;
}

void relu_inplace(Tensor& t) {
  for (float& v : t.data) v = v > 0.0F ? v : 0.0F;
}

void relu_backward_inplace(Tensor& grad, const Tensor& activated) {
  for (std::size_t i = 0; i < grad.data.size(); ++i) {
    if (!(activated.data[i] > 0.0F)) grad.data[i] = 0.0F;
  }
}

Tensor upsample2x(const Tensor& in, int out_h, int out_w) {
  Tensor out(in.channels, out_h, out_w);
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < out_h; ++y) {
      const int sy = std::min(y / 2, in.height - 1);
      for (int x = 0; x < out_w; ++x) out.at(c, y, x) = in.at(c, sy, std::min(x / 2, in.width - 1));
    }
  }
  return out;
}

Tensor upsample2x_backward(const Tensor& grad_out, int in_h, int in_w) {
  Tensor g(grad_out.channels, in_h, in_w);
  for (int c = 0; c < grad_out.channels; ++c) {
    for (int y = 0; y < grad_out.height; ++y) {
      const int sy = std::min(y / 2, in_h - 1);
      for (int x = 0; x < grad_out.width; ++x) {
        g.at(c, sy, std::min(x / 2, in_w - 1)) += grad_out.at(c, y, x);
      }
    }
  }
  return g;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  if (dst.data.size() != src.data.size()) throw std::invalid_argument("add_inplace: shape mismatch");
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

void init_he(Conv2d& conv, std::mt19937_64& rng) {
  init_normal(conv, rng, std::sqrt(2.0 / static_cast<double>(conv.fan_in())), 0.0F);
}

void init_normal(Conv2d& conv, std::mt19937_64& rng, double stddev, float bias_value) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (float& w : conv.weight) w = static_cast<float>(dist(rng));
  for (float& b : conv.bias) b = bias_value;
}

}  // namespace sbl::nn
