#pragma once

#include "cployo/nn.hpp"

namespace cployo {

// Channel gate: sigmoid(MLP(gap(F)) + MLP(gmp(F))). One MLP shared by both
// pooled branches, ReLU hidden layer, reduction ratio r.
template <typename T>
class ChannelAttention {
 public:
  int channels = 0;
  int reduction = 4;
  Conv2d<T> fc1;  // C -> C/r
  Conv2d<T> fc2;  // C/r -> C

  ChannelAttention() = default;

  ChannelAttention(int C, int r, Rng& rng) : channels(C), reduction(r) {
    check(r >= 1 && C % r == 0, "channel attention: reduction must divide channels");
    fc1 = Conv2d<T>({C, C / r, 1, 1, 1, 1, true}, rng);
    fc2 = Conv2d<T>({C / r, C, 1, 1, 1, 1, true}, rng);
  }

  // returns N x C x 1 x 1 weights in (0,1)
  Var<T> forward(const Var<T>& x) const {
    Var<T> a = fc2.forward(relu(fc1.forward(gap(x))));
    Var<T> m = fc2.forward(relu(fc1.forward(gmp(x))));
    return sigmoid(add(a, m));
  }

  void collect(ParamList<T>& out, const std::string& prefix) {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }
};

// Spatial gate: sigmoid(conv7x7([mean_c(F); max_c(F)])).
template <typename T>
class SpatialAttention {
 public:
  Conv2d<T> conv;  // 2 -> 1, 7x7

  SpatialAttention() = default;

  explicit SpatialAttention(Rng& rng, int kernel = 7) {
    conv = Conv2d<T>({2, 1, kernel, 1, 1, 1, true}, rng);
  }

  // returns N x 1 x H x W map in (0,1)
  Var<T> forward(const Var<T>& x) const {
    Var<T> cat = concat_ch<T>({channel_mean(x), channel_max(x)});
    return sigmoid(conv.forward(cat));
  }

  void collect(ParamList<T>& out, const std::string& prefix) {
    conv.collect(out, prefix + ".conv");
  }
};

// CBAM: channel gate first, then spatial gate on the re-weighted map.
template <typename T>
class Cbam {
 public:
  ChannelAttention<T> ca;
  SpatialAttention<T> sa;

  Cbam() = default;

  Cbam(int C, int reduction, Rng& rng) : ca(C, reduction, rng), sa(rng) {}

  Var<T> forward(const Var<T>& x) const {
    Var<T> f1 = mul(x, ca.forward(x));
    return mul(f1, sa.forward(f1));
  }

  void collect(ParamList<T>& out, const std::string& prefix) {
    ca.collect(out, prefix + ".ca");
    sa.collect(out, prefix + ".sa");
  }
};

// Pixel-wise gate: F * sigmoid(conv1x1(F) -> 1 channel).
template <typename T>
class Psa {
 public:
  Conv2d<T> gate;

  Psa() = default;

  Psa(int C, Rng& rng) { gate = Conv2d<T>({C, 1, 1, 1, 1, 1, true}, rng); }

  Var<T> forward(const Var<T>& x) const { return mul(x, sigmoid(gate.forward(x))); }

  void collect(ParamList<T>& out, const std::string& prefix) {
    gate.collect(out, prefix + ".gate");
  }
};

}  // namespace cployo
