#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "poisonlab/classifier.hpp"

namespace testing {

using poisonlab::Activation;
using poisonlab::CompactCnn;
using poisonlab::Pooling;

// Independent double-precision forward pass built only from the public
// parameter accessors. Layout: h x w x c, row-major, channels interleaved.
struct Tensor {
  int h = 0, w = 0, c = 0;
  std::vector<double> v;
  double& at(int y, int x, int ch) { return v[(static_cast<std::size_t>(y) * w + x) * c + ch]; }
  double at(int y, int x, int ch) const { return v[(static_cast<std::size_t>(y) * w + x) * c + ch]; }
};

inline std::array<double, 2> reference_logits(const CompactCnn& m, const std::vector<double>& pixels) {
  const auto& spec = m.spec();
  Tensor t{spec.input.height, spec.input.width, spec.input.channels, {}};
  for (double p : pixels) t.v.push_back((p - 0.5) * spec.input_scale);
  for (std::size_t l = 0; l < spec.blocks.size(); ++l) {
    const int stride = spec.blocks[l].stride, oc = spec.blocks[l].channels;
    Tensor conv{(t.h - 1) / stride + 1, (t.w - 1) / stride + 1, oc, {}};
    conv.v.assign(static_cast<std::size_t>(conv.h) * conv.w * oc, 0.0);
    for (int y = 0; y < conv.h; ++y) {
      for (int x = 0; x < conv.w; ++x) {
        for (int o = 0; o < oc; ++o) {
          double s = m.conv_bias(static_cast<int>(l), o);
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = y * stride + ky - 1, ix = x * stride + kx - 1;
              if (iy < 0 || iy >= t.h || ix < 0 || ix >= t.w) continue;
              for (int i = 0; i < t.c; ++i) s += m.conv_weight(static_cast<int>(l), ky, kx, i, o) * t.at(iy, ix, i);
            }
          }
          conv.at(y, x, o) = spec.activation == Activation::relu ? std::max(0.0, s) : std::tanh(s);
        }
      }
    }
    Tensor pooled{conv.h / 2, conv.w / 2, oc, {}};
    pooled.v.assign(static_cast<std::size_t>(pooled.h) * pooled.w * oc, 0.0);
    for (int y = 0; y < pooled.h; ++y) {
      for (int x = 0; x < pooled.w; ++x) {
        for (int o = 0; o < oc; ++o) {
          const double a = conv.at(2 * y, 2 * x, o), b = conv.at(2 * y, 2 * x + 1, o);
          const double c = conv.at(2 * y + 1, 2 * x, o), d = conv.at(2 * y + 1, 2 * x + 1, o);
          pooled.at(y, x, o) = spec.pooling == Pooling::max ? std::max({a, b, c, d}) : (a + b + c + d) / 4.0;
        }
      }
    }
    t = std::move(pooled);
  }
  std::array<double, 2> z{m.fc_bias(0), m.fc_bias(1)};
  for (int ch = 0; ch < t.c; ++ch) {
    double mean = 0.0;
    for (int y = 0; y < t.h; ++y) {
      for (int x = 0; x < t.w; ++x) mean += t.at(y, x, ch);
    }
    mean /= t.h * t.w;
    for (int k = 0; k < 2; ++k) z[k] += m.fc_weight(ch, k) * mean;
  }
  return z;
}

inline double reference_loss(const CompactCnn& m, const std::vector<double>& pixels, int target) {
  const auto z = reference_logits(m, pixels);
  const double mx = std::max(z[0], z[1]);
  return -(z[target] - mx) + std::log(std::exp(z[0] - mx) + std::exp(z[1] - mx));
}

}  // namespace testing
