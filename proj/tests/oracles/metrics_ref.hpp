#pragma once

// Independent slow evaluator: same documented contract as the library path,
// re-derived from scratch with plain loops.

#include <vector>

#include "cployo/metrics.hpp"

namespace oracle {

// greedy matcher, input canonical order assumed pre-applied by caller
inline std::vector<bool> match_ref(const std::vector<cployo::Detection>& dets_sorted,
                                   const std::vector<cployo::GtBox>& gts, double thr) {
  std::vector<bool> taken(gts.size(), false), tp(dets_sorted.size(), false);
  for (std::size_t i = 0; i < dets_sorted.size(); ++i) {
    double best = -1.0;
    int pick = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].class_id != dets_sorted[i].class_id) continue;
      const double ov = cployo::iou(dets_sorted[i].box, gts[g].box);
      if (ov >= thr && ov > best) {
        best = ov;
        pick = static_cast<int>(g);
      }
    }
    if (pick >= 0) {
      taken[static_cast<std::size_t>(pick)] = true;
      tp[i] = true;
    }
  }
  return tp;
}

// AP via the PR staircase with an O(n^2) envelope lookup
inline double ap_ref(std::vector<std::pair<double, bool>> scored, int n_gt) {
  if (n_gt <= 0 || scored.empty()) return 0.0;
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<double> r, p;
  int tp = 0, fp = 0;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    scored[i].second ? ++tp : ++fp;
    if (i + 1 == scored.size() || scored[i + 1].first != scored[i].first) {
      r.push_back(double(tp) / n_gt);
      p.push_back(double(tp) / (tp + fp));
    }
  }
  double ap = 0.0;
  double prev = 0.0;
  for (std::size_t k = 0; k < r.size(); ++k) {
    double env = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j)
      if (r[j] >= r[k]) env = std::max(env, p[j]);
    ap += (r[k] - prev) * env;
    prev = r[k];
  }
  return ap;
}

inline cployo::EvalResult evaluate_ref(const std::vector<std::vector<cployo::Detection>>& dets,
                                       const std::vector<std::vector<cployo::GtBox>>& gts,
                                       double score_thr) {
  cployo::EvalResult res;
  int n_gt = 0;
  for (const auto& g : gts) n_gt += static_cast<int>(g.size());
  for (int t = 0; t < 10; ++t) {
    const double thr = 0.5 + 0.05 * t;
    std::vector<std::pair<double, bool>> pooled;
    for (std::size_t im = 0; im < dets.size(); ++im) {
      std::vector<cployo::Detection> sorted = dets[im];
      std::vector<int> order = cployo::canonical_order(sorted);
      std::vector<cployo::Detection> in_order;
      for (int idx : order) in_order.push_back(sorted[static_cast<std::size_t>(idx)]);
      auto tp = match_ref(in_order, gts[im], thr);
      for (std::size_t i = 0; i < in_order.size(); ++i)
        pooled.emplace_back(in_order[i].score, tp[i]);
    }
    res.ap_per_iou[thr] = ap_ref(pooled, n_gt);
  }
  res.map50 = res.ap_per_iou[0.5];
  double s = 0;
  for (auto& [k, v] : res.ap_per_iou) s += v;
  res.map50_95 = s / 10.0;
  int tp = 0, nd = 0;
  for (std::size_t im = 0; im < dets.size(); ++im) {
    std::vector<cployo::Detection> strong;
    for (const auto& d : dets[im])
      if (d.score >= score_thr) strong.push_back(d);
    std::vector<int> order = cployo::canonical_order(strong);
    std::vector<cployo::Detection> in_order;
    for (int idx : order) in_order.push_back(strong[static_cast<std::size_t>(idx)]);
    auto f = match_ref(in_order, gts[im], 0.5);
    nd += static_cast<int>(strong.size());
    for (bool b : f) tp += b ? 1 : 0;
  }
  res.precision = nd > 0 ? double(tp) / nd : 0.0;
  res.recall = n_gt > 0 ? double(tp) / n_gt : 0.0;
  return res;
}

}  // namespace oracle
