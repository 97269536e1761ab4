#pragma once

#include <vector>

#include "cployo/attention.hpp"
#include "cployo/nn.hpp"

namespace cployo {

// Token mixer with reparameterizable depthwise branches. Trains with three
// parallel paths (dw3x3+BN, dw1x1+BN, identity BN); fuse_reparam() folds them
// into one depthwise 3x3 conv for inference.
template <typename T>
class RepVitUnit {
 public:
  int channels = 0;
  Conv2d<T> dw3, dw1;
  BatchNorm2d<T> bn3, bn1, bn_id;
  Conv2d<T> fused_conv;
  ConvBnAct<T> pw;  // pointwise channel mixer

  RepVitUnit() = default;

  RepVitUnit(int C, Rng& rng) : channels(C) {
    dw3 = Conv2d<T>({C, C, 3, 1, 1, C, false}, rng);
    bn3 = BatchNorm2d<T>(C);
    dw1 = Conv2d<T>({C, C, 1, 1, 1, C, false}, rng);
    bn1 = BatchNorm2d<T>(C);
    bn_id = BatchNorm2d<T>(C);
    pw = ConvBnAct<T>({C, C, 1, 1, 1, 1, true}, rng, true, Act::silu);
  }

  bool fused() const { return fused_; }

  Var<T> forward(const Var<T>& x, bool training) {
    Var<T> s;
    if (fused_) {
      s = fused_conv.forward(x);
    } else {
      s = add(add(bn3.forward(dw3.forward(x), training), bn1.forward(dw1.forward(x), training)),
              bn_id.forward(x, training));
    }
    return pw.forward(silu(s), training);
  }

  // Folds BN into each conv (w' = gamma*w/sqrt(var+eps), b' = beta - gamma*mu/sqrt(var+eps)),
  // zero-pads the 1x1 and identity kernels to 3x3 and sums everything into one
  // depthwise conv. Uses running statistics, i.e. matches eval-mode forward.
  void fuse_reparam() {
    if (fused_) throw ValueError("already fused");
    const int C = channels;
    Tensor<T> w({C, 1, 3, 3});
    Tensor<T> b({C});
    auto fold = [&](const BatchNorm2d<T>& bn, int c, T& scale, T& shift) {
      const double invstd =
          1.0 / std::sqrt(static_cast<double>(bn.running_var.value()[c]) + static_cast<double>(bn.eps));
      scale = static_cast<T>(static_cast<double>(bn.gamma.value()[c]) * invstd);
      shift = bn.beta.value()[c] - bn.running_mean.value()[c] * scale;
    };
    for (int c = 0; c < C; ++c) {
      T a3, s3, a1, s1, ai, si;
      fold(bn3, c, a3, s3);
      fold(bn1, c, a1, s1);
      fold(bn_id, c, ai, si);
      for (int kh = 0; kh < 3; ++kh)
        for (int kw = 0; kw < 3; ++kw) w.at(c, 0, kh, kw) = a3 * dw3.weight.value().at(c, 0, kh, kw);
      w.at(c, 0, 1, 1) += a1 * dw1.weight.value().at(c, 0, 0, 0) + ai;
      b[c] = s3 + s1 + si;
    }
    fused_conv.spec = ConvSpec{C, C, 3, 1, 1, C, true};
    fused_conv.weight = Var<T>(std::move(w), true);
    fused_conv.bias = Var<T>(std::move(b), true);
    dw3 = Conv2d<T>();
    dw1 = Conv2d<T>();
    bn3 = BatchNorm2d<T>();
    bn1 = BatchNorm2d<T>();
    bn_id = BatchNorm2d<T>();
    fused_ = true;
  }

  // Marks the unit fused with empty tensors; used when loading fused checkpoints.
  void set_fused_topology() {
    check(!fused_, "unit is already fused");
    fused_conv.spec = ConvSpec{channels, channels, 3, 1, 1, channels, true};
    fused_conv.weight = Var<T>(Tensor<T>({channels, 1, 3, 3}), true);
    fused_conv.bias = Var<T>(Tensor<T>({channels}), true);
    dw3 = Conv2d<T>();
    dw1 = Conv2d<T>();
    bn3 = BatchNorm2d<T>();
    bn1 = BatchNorm2d<T>();
    bn_id = BatchNorm2d<T>();
    fused_ = true;
  }

  void collect(ParamList<T>& out, const std::string& prefix) {
    if (fused_) {
      fused_conv.collect(out, prefix + ".fused");
    } else {
      dw3.collect(out, prefix + ".dw3");
      bn3.collect(out, prefix + ".bn3");
      dw1.collect(out, prefix + ".dw1");
      bn1.collect(out, prefix + ".bn1");
      bn_id.collect(out, prefix + ".bn_id");
    }
    pw.collect(out, prefix + ".pw");
  }

  Cost cost(int h, int w) const {
    Cost c;
    if (fused_) {
      c += conv_cost(fused_conv.spec, h, w);
    } else {
      c += conv_cost(ConvSpec{channels, channels, 3, 1, 1, channels, false}, h, w);
      c += conv_cost(ConvSpec{channels, channels, 1, 1, 1, channels, false}, h, w);
      for (int i = 0; i < 3; ++i) c += bn_cost(channels, h, w);
    }
    c += conv_cost(pw.conv.spec, h, w);
    c += bn_cost(channels, h, w);
    return c;
  }

 private:
  bool fused_ = false;
};

// Parallel depthwise convs (3/5/7, same padding) summed, then a 1x1 mixer.
template <typename T>
class MultiScaleContext {
 public:
  Conv2d<T> k3, k5, k7;
  ConvBnAct<T> mixer;

  MultiScaleContext() = default;

  MultiScaleContext(int C, Rng& rng) {
    k3 = Conv2d<T>({C, C, 3, 1, 1, C, true}, rng);
    k5 = Conv2d<T>({C, C, 5, 1, 1, C, true}, rng);
    k7 = Conv2d<T>({C, C, 7, 1, 1, C, true}, rng);
    mixer = ConvBnAct<T>({C, C, 1, 1, 1, 1, true}, rng, true, Act::silu);
  }

  Var<T> branch_sum(const Var<T>& x) const {
    return add(add(k3.forward(x), k5.forward(x)), k7.forward(x));
  }

  Var<T> forward(const Var<T>& x, bool training) { return mixer.forward(branch_sum(x), training); }

  void collect(ParamList<T>& out, const std::string& prefix) {
    k3.collect(out, prefix + ".k3");
    k5.collect(out, prefix + ".k5");
    k7.collect(out, prefix + ".k7");
    mixer.collect(out, prefix + ".mixer");
  }

  Cost cost(int h, int w) const {
    Cost c;
    c += conv_cost(k3.spec, h, w);
    c += conv_cost(k5.spec, h, w);
    c += conv_cost(k7.spec, h, w);
    c += conv_cost(mixer.conv.spec, h, w);
    c += bn_cost(k3.spec.out_ch, h, w);
    return c;
  }
};

// Channel gate + spatial gate (the CBAM equations), then a 1x1 mixing conv.
template <typename T>
class ContextFusion {
 public:
  ChannelAttention<T> ca;
  SpatialAttention<T> sa;
  Conv2d<T> mix;

  ContextFusion() = default;

  ContextFusion(int C, int reduction, Rng& rng) : ca(C, reduction, rng), sa(rng) {
    mix = Conv2d<T>({C, C, 1, 1, 1, 1, true}, rng);
  }

  Var<T> forward(const Var<T>& x) const {
    Var<T> x1 = mul(x, ca.forward(x));
    Var<T> x2 = mul(x1, sa.forward(x1));
    return mix.forward(x2);
  }

  void collect(ParamList<T>& out, const std::string& prefix) {
    ca.collect(out, prefix + ".ca");
    sa.collect(out, prefix + ".sa");
    mix.collect(out, prefix + ".mix");
  }

  Cost cost(int h, int w) const {
    const int C = mix.spec.in_ch;
    Cost c;
    c += conv_cost(ca.fc1.spec, 1, 1);
    c += conv_cost(ca.fc2.spec, 1, 1);
    c.mults_adds += 2 * static_cast<std::int64_t>(C) * h * w;  // pooled stats
    c += conv_cost(sa.conv.spec, h, w);
    c.mults_adds += 2 * static_cast<std::int64_t>(C) * h * w;  // channel mean/max
    c += conv_cost(mix.spec, h, w);
    c.mults_adds += 2 * static_cast<std::int64_t>(C) * h * w;  // the two gates
    return c;
  }
};

// One unit of the augmented C2f chain: RepViT mixer, then multi-scale context
// capture and context fusion (the CAMF pair).
template <typename T>
class RepVitCamfUnit {
 public:
  RepVitUnit<T> repvit;
  MultiScaleContext<T> msc;
  ContextFusion<T> cf;
  bool use_camf = true;

  RepVitCamfUnit() = default;

  RepVitCamfUnit(int C, int reduction, bool camf, Rng& rng) : use_camf(camf) {
    repvit = RepVitUnit<T>(C, rng);
    if (use_camf) {
      msc = MultiScaleContext<T>(C, rng);
      cf = ContextFusion<T>(C, reduction, rng);
    }
  }

  Var<T> forward(const Var<T>& x, bool training) {
    Var<T> y = repvit.forward(x, training);
    if (use_camf) {
      y = msc.forward(y, training);
      y = cf.forward(y);
    }
    return y;
  }

  void collect(ParamList<T>& out, const std::string& prefix) {
    repvit.collect(out, prefix + ".repvit");
    if (use_camf) {
      msc.collect(out, prefix + ".msc");
      cf.collect(out, prefix + ".cf");
    }
  }

  Cost cost(int h, int w) const {
    Cost c = repvit.cost(h, w);
    if (use_camf) {
      c += msc.cost(h, w);
      c += cf.cost(h, w);
    }
    return c;
  }
};

// Two 3x3 convs with a residual; the ablation stand-in for RepViTCAMF.
template <typename T>
class PlainBottleneck {
 public:
  ConvBnAct<T> c1, c2;
  bool residual = true;

  PlainBottleneck() = default;

  PlainBottleneck(int C, Rng& rng, bool with_residual = true) : residual(with_residual) {
    c1 = ConvBnAct<T>({C, C, 3, 1, 1, 1, true}, rng, true, Act::silu);
    c2 = ConvBnAct<T>({C, C, 3, 1, 1, 1, true}, rng, true, Act::silu);
  }

  Var<T> forward(const Var<T>& x, bool training) {
    Var<T> y = c2.forward(c1.forward(x, training), training);
    return residual ? add(x, y) : y;
  }

  void collect(ParamList<T>& out, const std::string& prefix) {
    c1.collect(out, prefix + ".c1");
    c2.collect(out, prefix + ".c2");
  }

  Cost cost(int h, int w) const {
    Cost c;
    c += conv_cost(c1.conv.spec, h, w);
    c += bn_cost(c1.conv.spec.out_ch, h, w);
    c += conv_cost(c2.conv.spec, h, w);
    c += bn_cost(c2.conv.spec.out_ch, h, w);
    return c;
  }
};

struct BlockConfig {
  int channels = 32;          // hidden width, must be even
  int n_bottlenecks = 1;
  int cbam_reduction = 4;
  bool use_repvit_camf = true;  // false -> plain bottlenecks
  bool use_camf = true;
};

// Split -> chained units -> concat -> squeeze, every unit's output retained.
template <typename T>
class C2fBlock {
 public:
  BlockConfig cfg;
  ConvBnAct<T> cv1, cv2;
  std::vector<RepVitCamfUnit<T>> units;
  std::vector<PlainBottleneck<T>> plain_units;

  C2fBlock() = default;

  C2fBlock(int in_ch, int out_ch, const BlockConfig& c, Rng& rng) : cfg(c) {
    check(cfg.channels % 2 == 0, "c2f block: channel count must be even");
    cv1 = ConvBnAct<T>({in_ch, cfg.channels, 1, 1, 1, 1, true}, rng, true, Act::silu);
    const int half = cfg.channels / 2;
    for (int i = 0; i < cfg.n_bottlenecks; ++i) {
      if (cfg.use_repvit_camf)
        units.emplace_back(half, cfg.cbam_reduction, cfg.use_camf, rng);
      else
        plain_units.emplace_back(half, rng);
    }
    const int concat_ch_count = (2 + cfg.n_bottlenecks) * half;
    cv2 = ConvBnAct<T>({concat_ch_count, out_ch, 1, 1, 1, 1, true}, rng, true, Act::silu);
  }

  Var<T> forward(const Var<T>& x, bool training) {
    Var<T> y = cv1.forward(x, training);
    const int half = cfg.channels / 2;
    std::vector<Var<T>> parts{slice_ch(y, 0, half), slice_ch(y, half, cfg.channels)};
    Var<T> cur = parts.back();
    for (int i = 0; i < cfg.n_bottlenecks; ++i) {
      cur = cfg.use_repvit_camf ? units[static_cast<std::size_t>(i)].forward(cur, training)
                                : plain_units[static_cast<std::size_t>(i)].forward(cur, training);
      parts.push_back(cur);
    }
    return cv2.forward(concat_ch(parts), training);
  }

  void collect(ParamList<T>& out, const std::string& prefix) {
    cv1.collect(out, prefix + ".cv1");
    for (std::size_t i = 0; i < units.size(); ++i)
      units[i].collect(out, prefix + ".unit" + std::to_string(i));
    for (std::size_t i = 0; i < plain_units.size(); ++i)
      plain_units[i].collect(out, prefix + ".unit" + std::to_string(i));
    cv2.collect(out, prefix + ".cv2");
  }

  Cost cost(int h, int w) const {
    Cost c;
    c += conv_cost(cv1.conv.spec, h, w);
    c += bn_cost(cfg.channels, h, w);
    for (const auto& u : units) c += u.cost(h, w);
    for (const auto& u : plain_units) c += u.cost(h, w);
    c += conv_cost(cv2.conv.spec, h, w);
    c += bn_cost(cv2.conv.spec.out_ch, h, w);
    return c;
  }
};

struct BackboneConfig {
  int in_ch = 1;
  double width_mult = 0.25;
  double depth_mult = 1.0;
  bool use_c2f_repvitcamf = true;
  bool use_camf = true;
  bool use_psa = true;
  int cbam_reduction = 4;

  // base widths at multiplier 1.0
  static constexpr int base_stem = 32;
  static constexpr int base_stage[4] = {64, 128, 256, 512};
  static constexpr int base_depth[4] = {1, 2, 2, 1};

  static int scale_ch(int base, double mult) {
    int c = static_cast<int>(std::lround(base * mult));
    if (c < 2) c = 2;
    if (c % 2) ++c;
    return c;
  }
  static int scale_depth(int base, double mult) {
    int n = static_cast<int>(std::lround(base * mult));
    return n < 1 ? 1 : n;
  }

  int stem_ch() const { return scale_ch(base_stem, width_mult); }
  int stage_ch(int i) const { return scale_ch(base_stage[i], width_mult); }
  int stage_depth(int i) const { return scale_depth(base_depth[i], depth_mult); }
};

template <typename T>
struct Pyramid {
  Var<T> p3, p4, p5;
};

// Stem + four stride-2 stages; emits stride {8,16,32} feature maps with the
// pixel gate applied after the last stage.
template <typename T>
class Backbone {
 public:
  BackboneConfig cfg;
  ConvBnAct<T> stem;
  std::vector<ConvBnAct<T>> downs;  // 4 stage transitions
  std::vector<C2fBlock<T>> blocks;  // 4 stages
  Psa<T> psa;

  Backbone() = default;

  Backbone(const BackboneConfig& c, Rng& rng) : cfg(c) {
    stem = ConvBnAct<T>({cfg.in_ch, cfg.stem_ch(), 3, 2, 1, 1, true}, rng, true, Act::silu);
    int prev = cfg.stem_ch();
    for (int i = 0; i < 4; ++i) {
      const int ch = cfg.stage_ch(i);
      downs.emplace_back(ConvSpec{prev, ch, 3, 2, 1, 1, true}, rng, true, Act::silu);
      BlockConfig bc;
      bc.channels = ch;
      bc.n_bottlenecks = cfg.stage_depth(i);
      bc.cbam_reduction = cfg.cbam_reduction;
      bc.use_repvit_camf = cfg.use_c2f_repvitcamf;
      bc.use_camf = cfg.use_camf;
      blocks.emplace_back(ch, ch, bc, rng);
      prev = ch;
    }
    if (cfg.use_psa) psa = Psa<T>(cfg.stage_ch(3), rng);
  }

  Pyramid<T> forward(const Var<T>& x, bool training) {
    const auto& v = x.value();
    check(v.rank() == 4 && v.dim(1) == cfg.in_ch, "backbone: bad input shape");
    check(v.dim(2) % 32 == 0 && v.dim(3) % 32 == 0, "backbone: H and W must be divisible by 32");
    Var<T> y = stem.forward(x, training);
    Pyramid<T> out;
    for (int i = 0; i < 4; ++i) {
      y = downs[static_cast<std::size_t>(i)].forward(y, training);
      y = blocks[static_cast<std::size_t>(i)].forward(y, training);
      if (i == 1) out.p3 = y;
      if (i == 2) out.p4 = y;
    }
    if (cfg.use_psa) y = psa.forward(y);
    out.p5 = y;
    return out;
  }

  void fuse_reparam() {
    for (auto& b : blocks)
      for (auto& u : b.units) u.repvit.fuse_reparam();
  }

  bool fused() const {
    for (const auto& b : blocks)
      for (const auto& u : b.units)
        if (u.repvit.fused()) return true;
    return false;
  }

  void set_fused_topology() {
    for (auto& b : blocks)
      for (auto& u : b.units) u.repvit.set_fused_topology();
  }

  void collect(ParamList<T>& out, const std::string& prefix) {
    stem.collect(out, prefix + ".stem");
    for (int i = 0; i < 4; ++i) {
      downs[static_cast<std::size_t>(i)].collect(out, prefix + ".down" + std::to_string(i + 1));
      blocks[static_cast<std::size_t>(i)].collect(out, prefix + ".stage" + std::to_string(i + 1));
    }
    if (cfg.use_psa) psa.collect(out, prefix + ".psa");
  }

  // Per-block inference cost at the given square input size.
  std::vector<std::pair<std::string, Cost>> cost_blocks(int img) const {
    std::vector<std::pair<std::string, Cost>> out;
    int s = img / 2;
    Cost cs;
    cs += conv_cost(stem.conv.spec, img, img);
    cs += bn_cost(cfg.stem_ch(), s, s);
    out.emplace_back("backbone.stem", cs);
    int h = s;
    for (int i = 0; i < 4; ++i) {
      Cost c;
      c += conv_cost(downs[static_cast<std::size_t>(i)].conv.spec, h, h);
      h /= 2;
      c += bn_cost(cfg.stage_ch(i), h, h);
      c += blocks[static_cast<std::size_t>(i)].cost(h, h);
      out.emplace_back("backbone.stage" + std::to_string(i + 1), c);
    }
    if (cfg.use_psa) {
      Cost c;
      c += conv_cost(psa.gate.spec, h, h);
      c.mults_adds += static_cast<std::int64_t>(cfg.stage_ch(3)) * h * h;
      out.emplace_back("backbone.psa", c);
    }
    return out;
  }
};

}  // namespace cployo
