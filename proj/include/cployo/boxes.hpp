#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "cployo/common.hpp"

namespace cployo {

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double w() const { return x2 - x1; }
  double h() const { return y2 - y1; }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  double area() const { return std::max(0.0, w()) * std::max(0.0, h()); }
};

struct Detection {
  Box box;
  double score = 0.0;
  int class_id = 0;
};

// Intersection over union; zero-area operands give 0.
inline double iou(const Box& a, const Box& b) {
  const double aa = a.area(), ab = b.area();
  if (aa <= 0.0 || ab <= 0.0) return 0.0;
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (aa + ab - inter);
}

struct CiouGrad {
  double d_cx = 0, d_cy = 0, d_w = 0, d_h = 0;
};

// CIoU loss of a predicted box given as center/size against a fixed target:
//   1 - IoU + rho^2/c^2 + alpha*v,  alpha = v / (1 - IoU + v)
// Fills grad w.r.t. (cx, cy, w, h) when requested. The gradient differentiates
// alpha along with v so the loss matches finite differences everywhere.
inline double ciou_loss_csz(double cx, double cy, double w, double h, const Box& t,
                            CiouGrad* grad = nullptr) {
  check(w > 0.0 && h > 0.0 && t.w() > 0.0 && t.h() > 0.0, "ciou: degenerate box");
  const double x1 = cx - 0.5 * w, x2 = cx + 0.5 * w;
  const double y1 = cy - 0.5 * h, y2 = cy + 0.5 * h;

  // IoU with indicator bookkeeping for the gradient
  const double ix1 = std::max(x1, t.x1), ix2 = std::min(x2, t.x2);
  const double iy1 = std::max(y1, t.y1), iy2 = std::min(y2, t.y2);
  const double iw = ix2 - ix1, ih = iy2 - iy1;
  const bool overlap = iw > 0.0 && ih > 0.0;
  const double inter = overlap ? iw * ih : 0.0;
  const double uni = w * h + t.area() - inter;
  const double iou_v = inter / uni;

  // center distance over enclosing diagonal
  const double ex1 = std::min(x1, t.x1), ex2 = std::max(x2, t.x2);
  const double ey1 = std::min(y1, t.y1), ey2 = std::max(y2, t.y2);
  const double cw = ex2 - ex1, ch = ey2 - ey1;
  const double c2 = cw * cw + ch * ch;
  const double dx = cx - t.cx(), dy = cy - t.cy();
  const double rho2 = dx * dx + dy * dy;

  // aspect consistency
  const double kPi2 = 9.869604401089358;  // pi^2
  const double dAtan = std::atan(t.w() / t.h()) - std::atan(w / h);
  const double v = 4.0 / kPi2 * dAtan * dAtan;
  const double alpha = v / (1.0 - iou_v + v + 1e-12);

  const double loss = 1.0 - iou_v + rho2 / c2 + alpha * v;

  if (grad) {
    // d inter / d pred corners (via which side the min/max picked)
    double di_dx1 = 0, di_dx2 = 0, di_dy1 = 0, di_dy2 = 0;
    if (overlap) {
      di_dx1 = (x1 > t.x1) ? -ih : 0.0;
      di_dx2 = (x2 < t.x2) ? ih : 0.0;
      di_dy1 = (y1 > t.y1) ? -iw : 0.0;
      di_dy2 = (y2 < t.y2) ? iw : 0.0;
    }
    // corner derivatives w.r.t. (cx, cy, w, h)
    // x1 = cx - w/2, x2 = cx + w/2
    const double di_dcx = di_dx1 + di_dx2;
    const double di_dcy = di_dy1 + di_dy2;
    const double di_dw = -0.5 * di_dx1 + 0.5 * di_dx2;
    const double di_dh = -0.5 * di_dy1 + 0.5 * di_dy2;
    // union = w*h + At - inter
    const double du_dcx = -di_dcx, du_dcy = -di_dcy;
    const double du_dw = h - di_dw, du_dh = w - di_dh;
    const double u2 = uni * uni;
    const double diou_dcx = (di_dcx * uni - inter * du_dcx) / u2;
    const double diou_dcy = (di_dcy * uni - inter * du_dcy) / u2;
    const double diou_dw = (di_dw * uni - inter * du_dw) / u2;
    const double diou_dh = (di_dh * uni - inter * du_dh) / u2;

    // enclosing box
    double dcw_dx1 = (x1 < t.x1) ? -1.0 : 0.0;
    double dcw_dx2 = (x2 > t.x2) ? 1.0 : 0.0;
    double dch_dy1 = (y1 < t.y1) ? -1.0 : 0.0;
    double dch_dy2 = (y2 > t.y2) ? 1.0 : 0.0;
    const double dc2_dcx = 2.0 * cw * (dcw_dx1 + dcw_dx2);
    const double dc2_dcy = 2.0 * ch * (dch_dy1 + dch_dy2);
    const double dc2_dw = 2.0 * cw * (-0.5 * dcw_dx1 + 0.5 * dcw_dx2);
    const double dc2_dh = 2.0 * ch * (-0.5 * dch_dy1 + 0.5 * dch_dy2);
    const double c4 = c2 * c2;
    const double drho_dcx = 2.0 * dx, drho_dcy = 2.0 * dy;
    const double dterm_dcx = (drho_dcx * c2 - rho2 * dc2_dcx) / c4;
    const double dterm_dcy = (drho_dcy * c2 - rho2 * dc2_dcy) / c4;
    const double dterm_dw = (-rho2 * dc2_dw) / c4;
    const double dterm_dh = (-rho2 * dc2_dh) / c4;

    // aspect term: alpha*v = v^2 / (1 - IoU + v + eps), differentiated fully
    const double datan_dw = h / (w * w + h * h);
    const double datan_dh = -w / (w * w + h * h);
    const double dv_dw = 4.0 / kPi2 * 2.0 * dAtan * (-datan_dw);
    const double dv_dh = 4.0 / kPi2 * 2.0 * dAtan * (-datan_dh);
    const double denom_av = 1.0 - iou_v + v + 1e-12;
    auto dterm_av = [&](double diou_d, double dv_d) {
      return (2.0 * v * dv_d * denom_av - v * v * (-diou_d + dv_d)) / (denom_av * denom_av);
    };

    grad->d_cx = -diou_dcx + dterm_dcx + dterm_av(diou_dcx, 0.0);
    grad->d_cy = -diou_dcy + dterm_dcy + dterm_av(diou_dcy, 0.0);
    grad->d_w = -diou_dw + dterm_dw + dterm_av(diou_dw, dv_dw);
    grad->d_h = -diou_dh + dterm_dh + dterm_av(diou_dh, dv_dh);
  }
  return loss;
}

inline double ciou_loss(const Box& pred, const Box& target) {
  return ciou_loss_csz(pred.cx(), pred.cy(), pred.w(), pred.h(), target, nullptr);
}

// Greedy per-class suppression: drop below score_thr, keep in descending score
// order (ties by earlier index), suppress IoU > iou_thr against kept boxes.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thr = 0.45,
                                  double score_thr = 0.25, int max_out = 300) {
  std::vector<int> order;
  for (int i = 0; i < static_cast<int>(dets.size()); ++i)
    if (dets[static_cast<std::size_t>(i)].score >= score_thr) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return dets[static_cast<std::size_t>(a)].score > dets[static_cast<std::size_t>(b)].score;
  });
  std::vector<Detection> kept;
  for (int idx : order) {
    const Detection& d = dets[static_cast<std::size_t>(idx)];
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.class_id == d.class_id && iou(k.box, d.box) > iou_thr) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) {
      kept.push_back(d);
      if (static_cast<int>(kept.size()) >= max_out) break;
    }
  }
  return kept;
}

}  // namespace cployo
