#pragma once

// Direct evaluations of the channel/spatial gate formulas, computed from the
// module's raw weight tensors with plain loops (no library ops involved).

#include <algorithm>
#include <cmath>
#include <vector>

#include "cployo/attention.hpp"
#include "oracles/conv_ref.hpp"

namespace oracle {

inline double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// M_c = sigmoid(MLP(AvgPool(F)) + MLP(MaxPool(F)))
inline cployo::Tensor<double> channel_attention_ref(const cployo::Tensor<double>& x,
                                                    const cployo::ChannelAttention<double>& ca) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cr = ca.fc1.spec.out_ch;
  const auto& w1 = ca.fc1.weight.value();
  const auto& b1 = ca.fc1.bias.value();
  const auto& w2 = ca.fc2.weight.value();
  const auto& b2 = ca.fc2.bias.value();
  auto mlp = [&](const std::vector<double>& v) {
    std::vector<double> hid(Cr, 0.0), out(C, 0.0);
    for (int j = 0; j < Cr; ++j) {
      double acc = b1[j];
      for (int c = 0; c < C; ++c) acc += w1.at(j, c, 0, 0) * v[static_cast<std::size_t>(c)];
      hid[static_cast<std::size_t>(j)] = std::max(0.0, acc);
    }
    for (int c = 0; c < C; ++c) {
      double acc = b2[c];
      for (int j = 0; j < Cr; ++j) acc += w2.at(c, j, 0, 0) * hid[static_cast<std::size_t>(j)];
      out[static_cast<std::size_t>(c)] = acc;
    }
    return out;
  };
  cployo::Tensor<double> mc({N, C, 1, 1});
  for (int n = 0; n < N; ++n) {
    std::vector<double> avg(C, 0.0), mx(C, -1e300);
    for (int c = 0; c < C; ++c) {
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          avg[static_cast<std::size_t>(c)] += x.at(n, c, h, w);
          mx[static_cast<std::size_t>(c)] = std::max(mx[static_cast<std::size_t>(c)], x.at(n, c, h, w));
        }
      avg[static_cast<std::size_t>(c)] /= static_cast<double>(H) * W;
    }
    auto a = mlp(avg), m = mlp(mx);
    for (int c = 0; c < C; ++c)
      mc.at(n, c, 0, 0) = sigmoid_ref(a[static_cast<std::size_t>(c)] + m[static_cast<std::size_t>(c)]);
  }
  return mc;
}

// M_s = sigmoid(conv7x7([mean_c(F); max_c(F)]))
inline cployo::Tensor<double> spatial_attention_ref(const cployo::Tensor<double>& x,
                                                    const cployo::SpatialAttention<double>& sa) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  cployo::Tensor<double> cat({N, 2, H, W});
  for (int n = 0; n < N; ++n)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        double s = 0.0, mx = -1e300;
        for (int c = 0; c < C; ++c) {
          s += x.at(n, c, h, w);
          mx = std::max(mx, x.at(n, c, h, w));
        }
        cat.at(n, 0, h, w) = s / C;
        cat.at(n, 1, h, w) = mx;
      }
  std::vector<double> bias{sa.conv.bias.value()[0]};
  cployo::Tensor<double> conv = conv2d_ref(cat, sa.conv.weight.value(), bias, sa.conv.spec);
  for (std::int64_t i = 0; i < conv.numel(); ++i) conv[i] = sigmoid_ref(conv[i]);
  return conv;
}

}  // namespace oracle
