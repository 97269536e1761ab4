#pragma once

#include <map>
#include <utility>

#include "cployo/assign.hpp"
#include "cployo/boxes.hpp"

namespace cployo {

struct EvalResult {
  double precision = 0.0;
  double recall = 0.0;
  std::map<double, double> ap_per_iou;
  double map50 = 0.0;
  double map50_95 = 0.0;
};

// Canonical processing order: descending score, ties by box coordinates then
// class. Input order never influences the result.
inline std::vector<int> canonical_order(const std::vector<Detection>& dets) {
  std::vector<int> order(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const Detection& da = dets[static_cast<std::size_t>(a)];
    const Detection& db = dets[static_cast<std::size_t>(b)];
    if (da.score != db.score) return da.score > db.score;
    if (da.box.x1 != db.box.x1) return da.box.x1 < db.box.x1;
    if (da.box.y1 != db.box.y1) return da.box.y1 < db.box.y1;
    if (da.box.x2 != db.box.x2) return da.box.x2 < db.box.x2;
    if (da.box.y2 != db.box.y2) return da.box.y2 < db.box.y2;
    return da.class_id < db.class_id;
  });
  return order;
}

struct MatchResult {
  std::vector<std::uint8_t> tp;   // per detection, input order
  std::vector<int> matched_gt;    // gt index or -1, input order
};

// Greedy one-to-one matching: detections in canonical score order, each takes
// the unmatched ground truth of the same class with highest IoU >= iou_thr
// (exact ties by lowest gt index).
inline MatchResult match_detections_impl(const std::vector<Detection>& dets,
                                         const std::vector<Box>& gt_boxes,
                                         const std::vector<int>& gt_classes, double iou_thr) {
  MatchResult r;
  r.tp.assign(dets.size(), 0);
  r.matched_gt.assign(dets.size(), -1);
  std::vector<std::uint8_t> used(gt_boxes.size(), 0);
  for (int idx : canonical_order(dets)) {
    const Detection& d = dets[static_cast<std::size_t>(idx)];
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      if (used[g] || gt_classes[g] != d.class_id) continue;
      const double ov = iou(d.box, gt_boxes[g]);
      if (ov < iou_thr) continue;
      if (best < 0 || ov > best_iou) {
        best = static_cast<int>(g);
        best_iou = ov;
      }
    }
    if (best >= 0) {
      used[static_cast<std::size_t>(best)] = 1;
      r.tp[static_cast<std::size_t>(idx)] = 1;
      r.matched_gt[static_cast<std::size_t>(idx)] = best;
    }
  }
  return r;
}

inline MatchResult match_detections(const std::vector<Detection>& dets,
                                    const std::vector<Box>& gt_boxes, double iou_thr) {
  return match_detections_impl(dets, gt_boxes, std::vector<int>(gt_boxes.size(), 0), iou_thr);
}

// All-points interpolated AP from pooled (score, tp) pairs. Equal scores form
// one operating point, so same-score permutations cannot move the result.
inline double average_precision(std::vector<std::pair<double, bool>> scored_flags, int n_gt) {
  if (n_gt <= 0 || scored_flags.empty()) return 0.0;
  std::sort(scored_flags.begin(), scored_flags.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<double> recalls, precisions;
  int tp = 0, fp = 0;
  for (std::size_t i = 0; i < scored_flags.size(); ++i) {
    if (scored_flags[i].second)
      ++tp;
    else
      ++fp;
    const bool boundary =
        i + 1 == scored_flags.size() || scored_flags[i + 1].first != scored_flags[i].first;
    if (boundary) {
      recalls.push_back(static_cast<double>(tp) / n_gt);
      precisions.push_back(static_cast<double>(tp) / (tp + fp));
    }
  }
  // precision envelope over recall, integrated between consecutive points
  double ap = 0.0, prev_r = 0.0;
  for (std::size_t k = 0; k < recalls.size(); ++k) {
    double env = 0.0;
    for (std::size_t j = k; j < precisions.size(); ++j) env = std::max(env, precisions[j]);
    ap += (recalls[k] - prev_r) * env;
    prev_r = recalls[k];
  }
  return ap;
}

// Convenience form for ordered TP/FP flag sequences (descending score assumed,
// all scores distinct).
inline double average_precision(const std::vector<bool>& flags_desc, int n_gt) {
  std::vector<std::pair<double, bool>> scored;
  double s = 1.0;
  for (bool f : flags_desc) {
    scored.emplace_back(s, f);
    s -= 1e-6;
  }
  return average_precision(std::move(scored), n_gt);
}

// COCO-style evaluation over per-image detection/ground-truth lists.
// mAP50 = AP at IoU 0.5; mAP50-95 = mean AP over 0.50:0.05:0.95.
// precision/recall are computed at IoU 0.5 over detections with
// score >= score_thr; 0/0 is defined as 0.
inline EvalResult evaluate(const std::vector<std::vector<Detection>>& dets_per_image,
                           const std::vector<std::vector<GtBox>>& gts_per_image,
                           double score_thr = 0.25) {
  check(dets_per_image.size() == gts_per_image.size(), "evaluate: image count mismatch");
  const std::size_t n_img = dets_per_image.size();
  int n_gt = 0;
  for (const auto& g : gts_per_image) n_gt += static_cast<int>(g.size());

  EvalResult res;
  for (int t = 0; t < 10; ++t) {
    const double thr = 0.5 + 0.05 * t;
    std::vector<std::pair<double, bool>> pooled;
    for (std::size_t im = 0; im < n_img; ++im) {
      std::vector<Box> boxes;
      std::vector<int> classes;
      for (const auto& g : gts_per_image[im]) {
        boxes.push_back(g.box);
        classes.push_back(g.class_id);
      }
      MatchResult m = match_detections_impl(dets_per_image[im], boxes, classes, thr);
      for (std::size_t i = 0; i < dets_per_image[im].size(); ++i)
        pooled.emplace_back(dets_per_image[im][i].score, m.tp[i] != 0);
    }
    res.ap_per_iou[thr] = average_precision(std::move(pooled), n_gt);
  }
  res.map50 = res.ap_per_iou[0.5];
  double s = 0.0;
  for (const auto& [k, v] : res.ap_per_iou) s += v;
  res.map50_95 = s / 10.0;

  // operating-point precision/recall at IoU 0.5 and the score threshold
  int tp = 0, nd = 0;
  for (std::size_t im = 0; im < n_img; ++im) {
    std::vector<Detection> strong;
    for (const auto& d : dets_per_image[im])
      if (d.score >= score_thr) strong.push_back(d);
    std::vector<Box> boxes;
    std::vector<int> classes;
    for (const auto& g : gts_per_image[im]) {
      boxes.push_back(g.box);
      classes.push_back(g.class_id);
    }
    MatchResult m = match_detections_impl(strong, boxes, classes, 0.5);
    nd += static_cast<int>(strong.size());
    for (auto f : m.tp) tp += f;
  }
  res.precision = nd > 0 ? static_cast<double>(tp) / nd : 0.0;
  res.recall = n_gt > 0 ? static_cast<double>(tp) / n_gt : 0.0;
  return res;
}

}  // namespace cployo
