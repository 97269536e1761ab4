#pragma once

#include <array>

#include "cployo/backbone.hpp"
#include "cployo/boxes.hpp"

namespace cployo {

// Per-scale raw output: N x (4 + 1 + K) x Hs x Ws
// channels 0..3 box logits (tx, ty, tw, th), 4 objectness, 5.. class logits.
template <typename T>
struct RawPrediction {
  std::array<Var<T>, 3> scales;
  std::array<int, 3> strides{8, 16, 32};
  int num_classes = 1;
};

// Anchor-free decoupled-lite head: two 3x3 conv+SiLU, then a 1x1 projection,
// per pyramid level.
template <typename T>
class Head {
 public:
  int num_classes = 1;
  std::array<Conv2d<T>, 3> conv1, conv2, proj;

  Head() = default;

  Head(int width, int K, Rng& rng) : num_classes(K) {
    check(K >= 1, "head: need at least one class");
    for (int s = 0; s < 3; ++s) {
      conv1[static_cast<std::size_t>(s)] = Conv2d<T>({width, width, 3, 1, 1, 1, true}, rng);
      conv2[static_cast<std::size_t>(s)] = Conv2d<T>({width, width, 3, 1, 1, 1, true}, rng);
      proj[static_cast<std::size_t>(s)] = Conv2d<T>({width, 4 + 1 + K, 1, 1, 1, 1, true}, rng);
      // start objectness near zero probability; sparse positives train faster
      proj[static_cast<std::size_t>(s)].bias.value()[4] = T(-4);
    }
  }

  RawPrediction<T> forward(const Pyramid<T>& p, bool /*training*/) {
    RawPrediction<T> out;
    out.num_classes = num_classes;
    const Var<T>* in[3] = {&p.p3, &p.p4, &p.p5};
    for (int s = 0; s < 3; ++s) {
      Var<T> y = silu(conv1[static_cast<std::size_t>(s)].forward(*in[s]));
      y = silu(conv2[static_cast<std::size_t>(s)].forward(y));
      out.scales[static_cast<std::size_t>(s)] = proj[static_cast<std::size_t>(s)].forward(y);
    }
    return out;
  }

  void collect(ParamList<T>& out, const std::string& prefix) {
    const char* names[3] = {".s8", ".s16", ".s32"};
    for (int s = 0; s < 3; ++s) {
      conv1[static_cast<std::size_t>(s)].collect(out, prefix + names[s] + ".conv1");
      conv2[static_cast<std::size_t>(s)].collect(out, prefix + names[s] + ".conv2");
      proj[static_cast<std::size_t>(s)].collect(out, prefix + names[s] + ".proj");
    }
  }

  Cost cost(int img) const {
    Cost c;
    for (int s = 0; s < 3; ++s) {
      const int h = img / (8 << s);
      c += conv_cost(conv1[static_cast<std::size_t>(s)].spec, h, h);
      c += conv_cost(conv2[static_cast<std::size_t>(s)].spec, h, h);
      c += conv_cost(proj[static_cast<std::size_t>(s)].spec, h, h);
    }
    return c;
  }
};

// Cell decode rule:
//   center = (cell + 2*sigmoid(t_xy) - 0.5) * stride
//   size   = (2*sigmoid(t_wh))^2 * stride
//   score  = sigmoid(obj) * sigmoid(cls)
inline void decode_cell(double tx, double ty, double tw, double th, int ci, int cj, int stride,
                        double& cx, double& cy, double& w, double& h) {
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  cx = (cj + 2.0 * sig(tx) - 0.5) * stride;
  cy = (ci + 2.0 * sig(ty) - 0.5) * stride;
  w = 4.0 * sig(tw) * sig(tw) * stride;
  h = 4.0 * sig(th) * sig(th) * stride;
}

// Inverse of decode_cell for targets representable by the parametrization.
inline bool encode_cell(const Box& b, int ci, int cj, int stride, double& tx, double& ty,
                        double& tw, double& th) {
  auto logit = [](double p) { return std::log(p / (1.0 - p)); };
  const double ox = (b.cx() / stride - cj + 0.5) / 2.0;
  const double oy = (b.cy() / stride - ci + 0.5) / 2.0;
  const double sw = std::sqrt(b.w() / stride) / 2.0;
  const double sh = std::sqrt(b.h() / stride) / 2.0;
  if (ox <= 0 || ox >= 1 || oy <= 0 || oy >= 1 || sw <= 0 || sw >= 1 || sh <= 0 || sh >= 1)
    return false;
  tx = logit(ox);
  ty = logit(oy);
  tw = logit(sw);
  th = logit(sh);
  return true;
}

// Decodes raw predictions for every cell of every scale into per-image
// detection lists (pre-NMS). Boxes are clipped to the image square.
template <typename T>
std::vector<std::vector<Detection>> decode(const RawPrediction<T>& raw, int img_size) {
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const int N = raw.scales[0].value().dim(0);
  const int K = raw.num_classes;
  std::vector<std::vector<Detection>> out(static_cast<std::size_t>(N));
  for (int s = 0; s < 3; ++s) {
    const auto& v = raw.scales[static_cast<std::size_t>(s)].value();
    check(v.dim(1) == 5 + K, "decode: channel count mismatch");
    const int stride = raw.strides[static_cast<std::size_t>(s)];
    const int gh = v.dim(2), gw = v.dim(3);
    check(gh * stride == img_size && gw * stride == img_size, "decode: grid/stride mismatch");
    for (int n = 0; n < N; ++n)
      for (int ci = 0; ci < gh; ++ci)
        for (int cj = 0; cj < gw; ++cj) {
          double cx, cy, w, h;
          decode_cell(v.at(n, 0, ci, cj), v.at(n, 1, ci, cj), v.at(n, 2, ci, cj),
                      v.at(n, 3, ci, cj), ci, cj, stride, cx, cy, w, h);
          const double obj = sig(v.at(n, 4, ci, cj));
          int best_k = 0;
          double best_c = sig(v.at(n, 5, ci, cj));
          for (int k = 1; k < K; ++k) {
            const double ck = sig(v.at(n, 5 + k, ci, cj));
            if (ck > best_c) {
              best_c = ck;
              best_k = k;
            }
          }
          Box b{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
          b.x1 = std::max(0.0, std::min<double>(img_size, b.x1));
          b.y1 = std::max(0.0, std::min<double>(img_size, b.y1));
          b.x2 = std::max(0.0, std::min<double>(img_size, b.x2));
          b.y2 = std::max(0.0, std::min<double>(img_size, b.y2));
          if (b.w() <= 0.0 || b.h() <= 0.0) continue;
          out[static_cast<std::size_t>(n)].push_back({b, obj * best_c, best_k});
        }
  }
  return out;
}

}  // namespace cployo
