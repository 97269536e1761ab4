#pragma once

#include "cployo/attention.hpp"
#include "cployo/backbone.hpp"
#include "cployo/kan.hpp"

namespace cployo {

struct NeckConfig {
  int in_c3 = 32, in_c4 = 64, in_c5 = 128;
  int width = 32;  // common channel width across levels
  bool use_mscaf = true;          // CBAM gating in both pathways
  bool use_kan_bottleneck = true;  // KAN-Bottleneck vs plain bottleneck after fusion
  int kan_grid = 8;
  int kan_degree = 3;
  int cbam_reduction = 4;
  bool residual = true;  // fusion output added onto the lateral projection
};

// Post-concat fusion: 1x1 fuse conv, then a KAN-Bottleneck (or plain
// bottleneck in the ablation), output added back onto the lateral.
template <typename T>
class NeckFusion {
 public:
  ConvBnAct<T> fuse;
  KanBottleneck<T> kb;
  PlainBottleneck<T> pb;
  bool use_kan = true;

  NeckFusion() = default;

  NeckFusion(int width, const NeckConfig& cfg, Rng& rng) : use_kan(cfg.use_kan_bottleneck) {
    fuse = ConvBnAct<T>({2 * width, width, 1, 1, 1, 1, true}, rng, true, Act::silu);
    if (use_kan)
      kb = KanBottleneck<T>(width, cfg.kan_grid, cfg.kan_degree, rng);
    else
      pb = PlainBottleneck<T>(width, rng);
  }

  Var<T> forward(const Var<T>& cat, bool training) {
    Var<T> y = fuse.forward(cat, training);
    return use_kan ? kb.forward(y) : pb.forward(y, training);
  }

  void collect(ParamList<T>& out, const std::string& prefix) {
    fuse.collect(out, prefix + ".fuse");
    if (use_kan)
      kb.collect(out, prefix + ".kb");
    else
      pb.collect(out, prefix + ".pb");
  }

  Cost cost(int h, int w) const {
    Cost c;
    c += conv_cost(fuse.conv.spec, h, w);
    c += bn_cost(fuse.conv.spec.out_ch, h, w);
    if (use_kan) {
      const int C = fuse.conv.spec.out_ch;
      c += conv_cost(kb.reduce.spec, h, w);
      c += conv_cost(kb.expand.spec, h, w);
      const std::int64_t pos = static_cast<std::int64_t>(h) * w;
      const int k1 = kb.kan.grid.degree + 1;
      c.params += kb.kan.coeff.value().numel() + kb.kan.w_base.value().numel() +
                  kb.kan.w_spline.value().numel();
      // per position: local basis + per-edge spline dot, base and spline mix
      c.mults_adds += pos * (static_cast<std::int64_t>(C / 2) * k1 * 3 +
                             static_cast<std::int64_t>(C / 2) * (C / 2) * (k1 + 2));
    } else {
      c += pb.cost(h, w);
    }
    return c;
  }
};

// FPN top-down + PAN bottom-up fusion neck with one CBAM per pathway, applied
// at every fusion point of that pathway (shared weights within the pathway).
template <typename T>
class Neck {
 public:
  NeckConfig cfg;
  ConvBnAct<T> lat3, lat4, lat5;
  NeckFusion<T> td4, td3, bu4, bu5;
  ConvBnAct<T> down3, down4;
  Cbam<T> cbam_td, cbam_bu;

  Neck() = default;

  Neck(const NeckConfig& c, Rng& rng) : cfg(c) {
    const int w = cfg.width;
    lat3 = ConvBnAct<T>({cfg.in_c3, w, 1, 1, 1, 1, true}, rng, true, Act::silu);
    lat4 = ConvBnAct<T>({cfg.in_c4, w, 1, 1, 1, 1, true}, rng, true, Act::silu);
    lat5 = ConvBnAct<T>({cfg.in_c5, w, 1, 1, 1, 1, true}, rng, true, Act::silu);
    td4 = NeckFusion<T>(w, cfg, rng);
    td3 = NeckFusion<T>(w, cfg, rng);
    bu4 = NeckFusion<T>(w, cfg, rng);
    bu5 = NeckFusion<T>(w, cfg, rng);
    down3 = ConvBnAct<T>({w, w, 3, 2, 1, 1, true}, rng, true, Act::silu);
    down4 = ConvBnAct<T>({w, w, 3, 2, 1, 1, true}, rng, true, Act::silu);
    if (cfg.use_mscaf) {
      cbam_td = Cbam<T>(w, cfg.cbam_reduction, rng);
      cbam_bu = Cbam<T>(w, cfg.cbam_reduction, rng);
    }
  }

  Pyramid<T> forward(const Pyramid<T>& p, bool training) {
    check(p.p3.value().dim(2) == 2 * p.p4.value().dim(2) &&
              p.p4.value().dim(2) == 2 * p.p5.value().dim(2),
          "neck: pyramid scale mismatch");
    Var<T> l3 = lat3.forward(p.p3, training);
    Var<T> l4 = lat4.forward(p.p4, training);
    Var<T> l5 = lat5.forward(p.p5, training);

    Var<T> t5 = l5;
    Var<T> t4 = fuse_step(td4, upsample2x_nearest(t5), l4, cbam_td, training);
    Var<T> t3 = fuse_step(td3, upsample2x_nearest(t4), l3, cbam_td, training);

    Var<T> n3 = t3;
    Var<T> n4 = fuse_step(bu4, down3.forward(n3, training), t4, cbam_bu, training);
    Var<T> n5 = fuse_step(bu5, down4.forward(n4, training), t5, cbam_bu, training);
    Pyramid<T> out;
    out.p3 = n3;
    out.p4 = n4;
    out.p5 = n5;
    return out;
  }

  void collect(ParamList<T>& out, const std::string& prefix) {
    lat3.collect(out, prefix + ".lat3");
    lat4.collect(out, prefix + ".lat4");
    lat5.collect(out, prefix + ".lat5");
    td4.collect(out, prefix + ".td4");
    td3.collect(out, prefix + ".td3");
    down3.collect(out, prefix + ".down3");
    down4.collect(out, prefix + ".down4");
    bu4.collect(out, prefix + ".bu4");
    bu5.collect(out, prefix + ".bu5");
    if (cfg.use_mscaf) {
      cbam_td.collect(out, prefix + ".cbam_td");
      cbam_bu.collect(out, prefix + ".cbam_bu");
    }
  }

  Cost cost(int img) const {
    const int h3 = img / 8, h4 = img / 16, h5 = img / 32;
    Cost c;
    c += conv_cost(lat3.conv.spec, h3, h3);
    c += conv_cost(lat4.conv.spec, h4, h4);
    c += conv_cost(lat5.conv.spec, h5, h5);
    for (int i = 0; i < 3; ++i) c += bn_cost(cfg.width, i == 0 ? h3 : (i == 1 ? h4 : h5), 1);
    c += td4.cost(h4, h4);
    c += td3.cost(h3, h3);
    c += conv_cost(down3.conv.spec, h3, h3);
    c += conv_cost(down4.conv.spec, h4, h4);
    c += bu4.cost(h4, h4);
    c += bu5.cost(h5, h5);
    if (cfg.use_mscaf) {
      // CBAM cost at each application point
      for (int hh : {h4, h3, h4, h5}) {
        c += conv_cost(cbam_td.ca.fc1.spec, 1, 1);
        c += conv_cost(cbam_td.ca.fc2.spec, 1, 1);
        c += conv_cost(cbam_td.sa.conv.spec, hh, hh);
        c.mults_adds += 4 * static_cast<std::int64_t>(cfg.width) * hh * hh;
      }
      c.params -= 2 * (conv_cost(cbam_td.ca.fc1.spec, 1, 1).params +
                       conv_cost(cbam_td.ca.fc2.spec, 1, 1).params +
                       conv_cost(cbam_td.sa.conv.spec, 1, 1).params);  // shared weights counted once
    }
    return c;
  }

 private:
  Var<T> fuse_step(NeckFusion<T>& fb, const Var<T>& other, const Var<T>& lateral, Cbam<T>& cbam,
                   bool training) {
    Var<T> y = fb.forward(concat_ch<T>({other, lateral}), training);
    if (cfg.use_mscaf) y = cbam.forward(y);
    return cfg.residual ? add(lateral, y) : y;
  }
};

}  // namespace cployo
