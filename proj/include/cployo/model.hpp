#pragma once

#include <nlohmann/json.hpp>

#include "cployo/head.hpp"
#include "cployo/neck.hpp"

namespace cployo {

// Largest divisor of C that is <= r; keeps attention blocks valid at any width.
inline int fit_reduction(int channels, int r) {
  r = std::min(r, channels);
  while (r > 1 && channels % r != 0) --r;
  return std::max(1, r);
}

struct ModelConfig {
  int in_ch = 1;
  int num_classes = 1;
  double width_mult = 0.25;
  double depth_mult = 1.0;
  bool use_c2f_repvitcamf = true;
  bool use_mscaf = true;
  bool use_kan_bottleneck = true;
  int cbam_reduction = 4;
  int kan_grid = 8;
  int kan_degree = 3;
  bool fused = false;

  static constexpr int base_neck_width = 128;
  int neck_width() const { return BackboneConfig::scale_ch(base_neck_width, width_mult); }

  nlohmann::json to_json() const {
    return nlohmann::json{{"in_ch", in_ch},
                          {"num_classes", num_classes},
                          {"width_mult", width_mult},
                          {"depth_mult", depth_mult},
                          {"use_c2f_repvitcamf", use_c2f_repvitcamf},
                          {"use_mscaf", use_mscaf},
                          {"use_kan_bottleneck", use_kan_bottleneck},
                          {"cbam_reduction", cbam_reduction},
                          {"kan_grid", kan_grid},
                          {"kan_degree", kan_degree},
                          {"fused", fused}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.in_ch = j.value("in_ch", 1);
    c.num_classes = j.value("num_classes", 1);
    c.width_mult = j.value("width_mult", 0.25);
    c.depth_mult = j.value("depth_mult", 1.0);
    c.use_c2f_repvitcamf = j.value("use_c2f_repvitcamf", true);
    c.use_mscaf = j.value("use_mscaf", true);
    c.use_kan_bottleneck = j.value("use_kan_bottleneck", true);
    c.cbam_reduction = j.value("cbam_reduction", 4);
    c.kan_grid = j.value("kan_grid", 8);
    c.kan_degree = j.value("kan_degree", 3);
    c.fused = j.value("fused", false);
    return c;
  }
};

// Full detector: backbone pyramid -> fusion neck -> anchor-free head.
template <typename T>
class Detector {
 public:
  ModelConfig cfg;
  Backbone<T> backbone;
  Neck<T> neck;
  Head<T> head;

  Detector() = default;

  Detector(const ModelConfig& c, std::uint64_t seed) : cfg(c) {
    Rng rng(seed);
    BackboneConfig bc;
    bc.in_ch = cfg.in_ch;
    bc.width_mult = cfg.width_mult;
    bc.depth_mult = cfg.depth_mult;
    bc.use_c2f_repvitcamf = cfg.use_c2f_repvitcamf;
    bc.cbam_reduction = fit_reduction(BackboneConfig::scale_ch(64, cfg.width_mult) / 2,
                                      cfg.cbam_reduction);
    backbone = Backbone<T>(bc, rng);
    NeckConfig nc;
    nc.in_c3 = bc.stage_ch(1);
    nc.in_c4 = bc.stage_ch(2);
    nc.in_c5 = bc.stage_ch(3);
    nc.width = cfg.neck_width();
    nc.use_mscaf = cfg.use_mscaf;
    nc.use_kan_bottleneck = cfg.use_kan_bottleneck;
    nc.kan_grid = cfg.kan_grid;
    nc.kan_degree = cfg.kan_degree;
    nc.cbam_reduction = fit_reduction(nc.width, cfg.cbam_reduction);
    neck = Neck<T>(nc, rng);
    head = Head<T>(nc.width, cfg.num_classes, rng);
    if (cfg.fused) backbone.set_fused_topology();
  }

  // A frozen backbone runs in eval mode even while training so its BN buffers
  // stay bit-identical (freezing is absolute, statistics included).
  RawPrediction<T> forward(const Var<T>& images, bool training, bool backbone_frozen = false) {
    Pyramid<T> p = backbone.forward(images, training && !backbone_frozen);
    Pyramid<T> n = neck.forward(p, training);
    return head.forward(n, training);
  }

  bool fused() const { return cfg.fused; }

  void fuse_reparam() {
    if (cfg.fused) throw ValueError("already fused");
    backbone.fuse_reparam();
    cfg.fused = true;
  }

  ParamList<T> params() {
    ParamList<T> out;
    backbone.collect(out, "backbone");
    neck.collect(out, "neck");
    head.collect(out, "head");
    return out;
  }

  // Per-block inference cost plus totals.
  nlohmann::json cost_report(int img_size) {
    nlohmann::json blocks = nlohmann::json::array();
    Cost total;
    for (const auto& [name, c] : backbone.cost_blocks(img_size)) {
      blocks.push_back({{"block", name}, {"params", c.params}, {"mults_adds", c.mults_adds}});
      total += c;
    }
    const Cost nc = neck.cost(img_size);
    blocks.push_back({{"block", "neck"}, {"params", nc.params}, {"mults_adds", nc.mults_adds}});
    total += nc;
    const Cost hc = head.cost(img_size);
    blocks.push_back({{"block", "head"}, {"params", hc.params}, {"mults_adds", hc.mults_adds}});
    total += hc;
    ParamList<T> pl = params();
    return nlohmann::json{{"img_size", img_size},
                          {"blocks", blocks},
                          {"params", total.params},
                          {"mults_adds", total.mults_adds},
                          {"stored_params", param_count(pl, false)},
                          {"trainable_params", param_count(pl, true)}};
  }
};

}  // namespace cployo
