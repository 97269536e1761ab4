#pragma once

#include <memory>

#include "cployo/assign.hpp"
#include "cployo/head.hpp"

namespace cployo {

struct LossWeights {
  double box = 7.5;
  double obj = 1.0;
  double cls = 0.5;
};

struct LossComponents {
  double total = 0, box = 0, obj = 0, cls = 0;
  int n_pos = 0;
};

namespace ad {

inline double bce_logits(double z, double y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

inline double sigd(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace ad

// lambda_box * mean CIoU over positive cells
// + lambda_obj * mean BCE over every cell of every scale
// + lambda_cls * mean BCE over positive cells' class logits.
// The box term backpropagates through the decode transform into the raw logits.
template <typename T>
Var<T> detection_loss(const RawPrediction<T>& raw, const Targets& targets, const LossWeights& lw,
                      LossComponents* comps = nullptr) {
  const int K = raw.num_classes;
  const std::int64_t total_cells = targets.total_cells();
  const int n_pos = targets.total_pos();
  check(total_cells > 0, "detection loss: empty grid");

  double obj_sum = 0.0, box_sum = 0.0, cls_sum = 0.0;
  for (int s = 0; s < 3; ++s) {
    const auto& v = raw.scales[static_cast<std::size_t>(s)].value();
    const auto& sh = targets.shapes[static_cast<std::size_t>(s)];
    check(v.dim(2) == sh.gh && v.dim(3) == sh.gw && v.dim(0) == targets.n_images,
          "detection loss: prediction/target shape mismatch");
    check(v.dim(1) == 5 + K, "detection loss: channel mismatch");
    const auto& obj = targets.obj[static_cast<std::size_t>(s)];
    for (int n = 0; n < targets.n_images; ++n)
      for (int i = 0; i < sh.gh; ++i)
        for (int j = 0; j < sh.gw; ++j) {
          const double y = obj[(static_cast<std::size_t>(n) * sh.gh + i) * sh.gw + j];
          obj_sum += ad::bce_logits(v.at(n, 4, i, j), y);
        }
    for (const PosCell& pc : targets.pos[static_cast<std::size_t>(s)]) {
      double cx, cy, w, h;
      decode_cell(v.at(pc.n, 0, pc.ci, pc.cj), v.at(pc.n, 1, pc.ci, pc.cj),
                  v.at(pc.n, 2, pc.ci, pc.cj), v.at(pc.n, 3, pc.ci, pc.cj), pc.ci, pc.cj,
                  sh.stride, cx, cy, w, h);
      box_sum += ciou_loss_csz(cx, cy, w, h, pc.box, nullptr);
      for (int k = 0; k < K; ++k) {
        const double y = (k == pc.class_id) ? 1.0 : 0.0;
        cls_sum += ad::bce_logits(v.at(pc.n, 5 + k, pc.ci, pc.cj), y);
      }
    }
  }
  const double obj_mean = obj_sum / static_cast<double>(total_cells);
  const double box_mean = n_pos > 0 ? box_sum / n_pos : 0.0;
  const double cls_mean = n_pos > 0 ? cls_sum / (static_cast<double>(n_pos) * K) : 0.0;
  const double total = lw.box * box_mean + lw.obj * obj_mean + lw.cls * cls_mean;
  if (!std::isfinite(total)) throw NumericError("non-finite detection loss");
  if (comps) {
    comps->total = total;
    comps->box = box_mean;
    comps->obj = obj_mean;
    comps->cls = cls_mean;
    comps->n_pos = n_pos;
  }

  auto tgt = std::make_shared<Targets>(targets);
  std::array<std::shared_ptr<VarNode<T>>, 3> nodes{raw.scales[0].node(), raw.scales[1].node(),
                                                   raw.scales[2].node()};
  LossWeights w = lw;
  return ad::make_op<T>(
      Tensor<T>::scalar(static_cast<T>(total)),
      {raw.scales[0], raw.scales[1], raw.scales[2]},
      [nodes, tgt, w, K, total_cells, n_pos](VarNode<T>& self) {
        const double go = static_cast<double>(self.grad[0]);
        const double obj_scale = go * w.obj / static_cast<double>(total_cells);
        const double box_scale = n_pos > 0 ? go * w.box / n_pos : 0.0;
        const double cls_scale = n_pos > 0 ? go * w.cls / (static_cast<double>(n_pos) * K) : 0.0;
        for (int s = 0; s < 3; ++s) {
          auto& node = nodes[static_cast<std::size_t>(s)];
          if (!node->requires_grad) continue;
          const auto& v = node->value;
          Tensor<T>& g = ad::grad_buf(*node);
          const auto& sh = tgt->shapes[static_cast<std::size_t>(s)];
          const auto& obj = tgt->obj[static_cast<std::size_t>(s)];
          for (int n = 0; n < tgt->n_images; ++n)
            for (int i = 0; i < sh.gh; ++i)
              for (int j = 0; j < sh.gw; ++j) {
                const double y = obj[(static_cast<std::size_t>(n) * sh.gh + i) * sh.gw + j];
                g.at(n, 4, i, j) += static_cast<T>(
                    obj_scale * (ad::sigd(static_cast<double>(v.at(n, 4, i, j))) - y));
              }
          for (const PosCell& pc : tgt->pos[static_cast<std::size_t>(s)]) {
            const double tx = v.at(pc.n, 0, pc.ci, pc.cj), ty = v.at(pc.n, 1, pc.ci, pc.cj);
            const double tw = v.at(pc.n, 2, pc.ci, pc.cj), th = v.at(pc.n, 3, pc.ci, pc.cj);
            double cx, cy, bw, bh;
            decode_cell(tx, ty, tw, th, pc.ci, pc.cj, sh.stride, cx, cy, bw, bh);
            CiouGrad cg;
            ciou_loss_csz(cx, cy, bw, bh, pc.box, &cg);
            // chain rule through the decode transform
            const double sx = ad::sigd(tx), sy = ad::sigd(ty);
            const double sw = ad::sigd(tw), sth = ad::sigd(th);
            const double dcx_dtx = 2.0 * sx * (1.0 - sx) * sh.stride;
            const double dcy_dty = 2.0 * sy * (1.0 - sy) * sh.stride;
            const double dw_dtw = 8.0 * sw * sw * (1.0 - sw) * sh.stride;
            const double dh_dth = 8.0 * sth * sth * (1.0 - sth) * sh.stride;
            g.at(pc.n, 0, pc.ci, pc.cj) += static_cast<T>(box_scale * cg.d_cx * dcx_dtx);
            g.at(pc.n, 1, pc.ci, pc.cj) += static_cast<T>(box_scale * cg.d_cy * dcy_dty);
            g.at(pc.n, 2, pc.ci, pc.cj) += static_cast<T>(box_scale * cg.d_w * dw_dtw);
            g.at(pc.n, 3, pc.ci, pc.cj) += static_cast<T>(box_scale * cg.d_h * dh_dth);
            for (int k = 0; k < K; ++k) {
              const double y = (k == pc.class_id) ? 1.0 : 0.0;
              g.at(pc.n, 5 + k, pc.ci, pc.cj) += static_cast<T>(
                  cls_scale * (ad::sigd(static_cast<double>(v.at(pc.n, 5 + k, pc.ci, pc.cj))) - y));
            }
          }
        }
      });
}

}  // namespace cployo
