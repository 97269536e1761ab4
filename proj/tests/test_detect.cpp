#include <gtest/gtest.h>

#include "cployo/gradcheck.hpp"
#include "cployo/head.hpp"
#include "cployo/loss.hpp"
#include "cployo/neck.hpp"
#include "oracles/conv_ref.hpp"

using namespace cployo;

namespace {

Tensor<double> randn(std::initializer_list<int> dims, Rng& rng, double sd = 1.0) {
  return Tensor<double>::randn(std::vector<int>(dims), rng, sd);
}

// independent O(n^2) suppressor: repeatedly take the best unsuppressed score
std::vector<Detection> nms_ref(const std::vector<Detection>& dets, double iou_thr,
                               double score_thr, int max_out) {
  std::vector<int> state(dets.size(), 0);  // 0 alive, 1 kept, 2 suppressed
  for (std::size_t i = 0; i < dets.size(); ++i)
    if (dets[i].score < score_thr) state[i] = 2;
  std::vector<Detection> kept;
  while (static_cast<int>(kept.size()) < max_out) {
    int best = -1;
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (state[i] == 0 && (best < 0 || dets[i].score > dets[static_cast<std::size_t>(best)].score))
        best = static_cast<int>(i);
    if (best < 0) break;
    state[static_cast<std::size_t>(best)] = 1;
    kept.push_back(dets[static_cast<std::size_t>(best)]);
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (state[i] == 0 && dets[i].class_id == dets[static_cast<std::size_t>(best)].class_id &&
          iou(dets[i].box, dets[static_cast<std::size_t>(best)].box) > iou_thr)
        state[i] = 2;
  }
  return kept;
}

std::vector<Detection> random_dets(Rng& rng, int n, int classes = 2) {
  std::vector<Detection> out;
  for (int i = 0; i < n; ++i) {
    const double x1 = rng.uniform(0, 50), y1 = rng.uniform(0, 50);
    Detection d;
    d.box = {x1, y1, x1 + rng.uniform(2, 14), y1 + rng.uniform(2, 14)};
    d.score = rng.uniform();
    d.class_id = static_cast<int>(rng.uniform_int(classes));
    out.push_back(d);
  }
  return out;
}

}  // namespace

TEST(Iou, Basics) {
  Box a{0, 0, 2, 2};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, Box{5, 5, 7, 7}), 0.0);
  EXPECT_NEAR(iou(a, Box{1, 1, 3, 3}), 1.0 / 7.0, 1e-12);
  EXPECT_DOUBLE_EQ(iou(a, Box{3, 3, 3, 3}), 0.0);  // degenerate
  EXPECT_NEAR(iou(Box{1, 1, 3, 3}, a), 1.0 / 7.0, 1e-12);  // symmetric
}

TEST(Ciou, IdenticalBoxesZero) {
  Box a{3, 4, 10, 12};
  EXPECT_NEAR(ciou_loss(a, a), 0.0, 1e-9);
}

TEST(Ciou, CenterDistancePenalizesBeyondIou) {
  Box a{0, 0, 4, 4}, b{6, 0, 10, 4};  // same size, centers apart, disjoint
  const double l = ciou_loss(a, b);
  EXPECT_GT(l, 1.0 - iou(a, b));
}

TEST(Ciou, MatchesDirectFormulaOracle) {
  Rng rng(140);
  for (int trial = 0; trial < 200; ++trial) {
    const double cx = rng.uniform(5, 45), cy = rng.uniform(5, 45);
    const double w = rng.uniform(2, 20), h = rng.uniform(2, 20);
    Box t;
    t.x1 = rng.uniform(0, 40);
    t.y1 = rng.uniform(0, 40);
    t.x2 = t.x1 + rng.uniform(2, 20);
    t.y2 = t.y1 + rng.uniform(2, 20);
    Box p{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
    // direct formula, written out independently
    const double i = iou(p, t);
    const double ex1 = std::min(p.x1, t.x1), ex2 = std::max(p.x2, t.x2);
    const double ey1 = std::min(p.y1, t.y1), ey2 = std::max(p.y2, t.y2);
    const double c2 = (ex2 - ex1) * (ex2 - ex1) + (ey2 - ey1) * (ey2 - ey1);
    const double rho2 = (p.cx() - t.cx()) * (p.cx() - t.cx()) + (p.cy() - t.cy()) * (p.cy() - t.cy());
    const double pi = 3.14159265358979323846;
    const double v = 4.0 / (pi * pi) * std::pow(std::atan(t.w() / t.h()) - std::atan(w / h), 2);
    const double alpha = v / (1.0 - i + v + 1e-12);
    const double expect = 1.0 - i + rho2 / c2 + alpha * v;
    EXPECT_NEAR(ciou_loss(p, t), expect, 1e-9);
  }
}

TEST(Ciou, GradientMatchesFiniteDifference) {
  Rng rng(141);
  const double h0 = 1e-6;
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    double pr[4] = {rng.uniform(10, 40), rng.uniform(10, 40), rng.uniform(4, 16), rng.uniform(4, 16)};
    Box t;
    t.x1 = rng.uniform(5, 30);
    t.y1 = rng.uniform(5, 30);
    t.x2 = t.x1 + rng.uniform(4, 18);
    t.y2 = t.y1 + rng.uniform(4, 18);
    CiouGrad g;
    ciou_loss_csz(pr[0], pr[1], pr[2], pr[3], t, &g);
    const double anal[4] = {g.d_cx, g.d_cy, g.d_w, g.d_h};
    for (int i = 0; i < 4; ++i) {
      double a[4] = {pr[0], pr[1], pr[2], pr[3]};
      a[i] += h0;
      const double fp = ciou_loss_csz(a[0], a[1], a[2], a[3], t, nullptr);
      a[i] -= 2 * h0;
      const double fm = ciou_loss_csz(a[0], a[1], a[2], a[3], t, nullptr);
      const double num = (fp - fm) / (2 * h0);
      EXPECT_NEAR(anal[i], num, 1e-5 + 1e-5 * std::abs(num)) << "coord " << i;
      ++checked;
    }
  }
  EXPECT_EQ(checked, 400);
}

TEST(Nms, SingleBoxAboveThresholdKept) {
  std::vector<Detection> dets{{{1, 1, 5, 5}, 0.7, 0}};
  auto kept = nms(dets);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_DOUBLE_EQ(kept[0].score, 0.7);
}

TEST(Nms, DuplicateSuppressed) {
  std::vector<Detection> dets{{{1, 1, 5, 5}, 0.9, 0}, {{1, 1, 5, 5}, 0.8, 0}};
  auto kept = nms(dets);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_DOUBLE_EQ(kept[0].score, 0.9);
}

TEST(Nms, BelowThresholdDropped) {
  std::vector<Detection> dets{{{1, 1, 5, 5}, 0.2, 0}};
  EXPECT_TRUE(nms(dets).empty());
}

TEST(Nms, MatchesQuadraticOracle) {
  Rng rng(142);
  for (int trial = 0; trial < 100; ++trial) {
    auto dets = random_dets(rng, 50);
    auto a = nms(dets, 0.45, 0.25, 300);
    auto b = nms_ref(dets, 0.45, 0.25, 300);
    ASSERT_EQ(a.size(), b.size()) << "trial " << trial;
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_DOUBLE_EQ(a[i].score, b[i].score);
      EXPECT_DOUBLE_EQ(a[i].box.x1, b[i].box.x1);
      EXPECT_EQ(a[i].class_id, b[i].class_id);
    }
  }
}

TEST(Nms, KeptSetInvariants) {
  Rng rng(143);
  auto dets = random_dets(rng, 80);
  auto kept = nms(dets, 0.45, 0.25, 300);
  for (std::size_t i = 1; i < kept.size(); ++i) EXPECT_LE(kept[i].score, kept[i - 1].score);
  for (std::size_t i = 0; i < kept.size(); ++i)
    for (std::size_t j = i + 1; j < kept.size(); ++j)
      if (kept[i].class_id == kept[j].class_id)
        EXPECT_LE(iou(kept[i].box, kept[j].box), 0.45);
}

TEST(Assign, Centered16pxBoxGoesToStride8With9Cells) {
  std::vector<std::vector<GtBox>> gts(1);
  gts[0].push_back({Box{24, 24, 40, 40}, 0});  // 16 px box centered on 64x64
  Targets t = assign_targets(gts, 64);
  EXPECT_EQ(t.pos[0].size(), 9u);
  EXPECT_TRUE(t.pos[1].empty());
  EXPECT_TRUE(t.pos[2].empty());
  int count = 0;
  for (auto v : t.obj[0]) count += v;
  EXPECT_EQ(count, 9);
}

TEST(Assign, EmptyGroundTruthAllNegative) {
  std::vector<std::vector<GtBox>> gts(2);
  Targets t = assign_targets(gts, 64);
  EXPECT_EQ(t.total_pos(), 0);
  for (int s = 0; s < 3; ++s)
    for (auto v : t.obj[static_cast<std::size_t>(s)]) EXPECT_EQ(v, 0);
}

TEST(Assign, OutsideImageThrows) {
  std::vector<std::vector<GtBox>> gts(1);
  gts[0].push_back({Box{-2, 4, 10, 12}, 0});
  EXPECT_THROW(assign_targets(gts, 64), ValueError);
}

TEST(Assign, MatchesRuleOracle) {
  Rng rng(144);
  for (int trial = 0; trial < 50; ++trial) {
    const int S = 64;
    std::vector<std::vector<GtBox>> gts(2);
    for (int n = 0; n < 2; ++n) {
      const int count = static_cast<int>(rng.uniform_int(4));
      for (int b = 0; b < count; ++b) {
        const double w = rng.uniform(4, 40), h = rng.uniform(4, 40);
        const double cx = rng.uniform(w / 2, S - w / 2), cy = rng.uniform(h / 2, S - h / 2);
        gts[static_cast<std::size_t>(n)].push_back({Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}, 0});
      }
    }
    Targets t = assign_targets(gts, S);
    // rule-following brute force: recompute every positive cell independently
    for (int s = 0; s < 3; ++s) {
      const int stride = t.shapes[static_cast<std::size_t>(s)].stride;
      const int g = t.shapes[static_cast<std::size_t>(s)].gh;
      for (int n = 0; n < 2; ++n)
        for (int i = 0; i < g; ++i)
          for (int j = 0; j < g; ++j) {
            bool expect_pos = false;
            for (const auto& gt : gts[static_cast<std::size_t>(n)]) {
              const double side = std::sqrt(gt.box.w() * gt.box.h());
              int want = side <= S * 0.25 ? 0 : (side <= S * 0.5 ? 1 : 2);
              if (want != s) continue;
              int cj = std::min(std::max(static_cast<int>(std::floor(gt.box.cx() / stride)), 0), g - 1);
              int ci = std::min(std::max(static_cast<int>(std::floor(gt.box.cy() / stride)), 0), g - 1);
              if (std::abs(i - ci) <= 1 && std::abs(j - cj) <= 1) expect_pos = true;
            }
            const bool got = t.obj[static_cast<std::size_t>(s)]
                                  [(static_cast<std::size_t>(n) * g + i) * g + j] != 0;
            EXPECT_EQ(got, expect_pos) << "scale " << s << " cell " << i << "," << j;
          }
    }
  }
}

TEST(Decode, ZeroLogitsGiveCellCenteredStrideBox) {
  RawPrediction<double> raw;
  raw.num_classes = 1;
  raw.scales[0] = Var<double>(Tensor<double>({1, 6, 8, 8}));
  raw.scales[1] = Var<double>(Tensor<double>({1, 6, 4, 4}));
  raw.scales[2] = Var<double>(Tensor<double>({1, 6, 2, 2}));
  auto dets = decode(raw, 64);
  ASSERT_EQ(dets.size(), 1u);
  // find the stride-8 cell (2,3): center ((3+0.5)*8, (2+0.5)*8), size 8x8
  bool found = false;
  for (const auto& d : dets[0]) {
    if (std::abs(d.box.cx() - 28.0) < 1e-9 && std::abs(d.box.cy() - 20.0) < 1e-9 &&
        std::abs(d.box.w() - 8.0) < 1e-9) {
      EXPECT_NEAR(d.score, 0.25, 1e-12);
      found = true;
    }
  }
  EXPECT_TRUE(found);
}

TEST(Decode, LargeNegativeSizeLogitsShrinkToZero) {
  double cx, cy, w, h;
  decode_cell(0.0, 0.0, -40.0, -40.0, 3, 3, 8, cx, cy, w, h);
  EXPECT_LT(w, 1e-20);
  EXPECT_LT(h, 1e-20);
}

TEST(Decode, MatchesPerCellReference) {
  Rng rng(145);
  RawPrediction<double> raw;
  raw.num_classes = 1;
  raw.scales[0] = Var<double>(randn({2, 6, 8, 8}, rng));
  raw.scales[1] = Var<double>(randn({2, 6, 4, 4}, rng));
  raw.scales[2] = Var<double>(randn({2, 6, 2, 2}, rng));
  auto dets = decode(raw, 64);
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  // reference: recompute each box by hand for scale 0, image 1
  const auto& v = raw.scales[0].value();
  int checked = 0;
  for (int ci = 0; ci < 8; ++ci)
    for (int cj = 0; cj < 8; ++cj) {
      const double cx = (cj + 2 * sig(v.at(1, 0, ci, cj)) - 0.5) * 8;
      const double cy = (ci + 2 * sig(v.at(1, 1, ci, cj)) - 0.5) * 8;
      const double w = std::pow(2 * sig(v.at(1, 2, ci, cj)), 2) * 8;
      const double score = sig(v.at(1, 4, ci, cj)) * sig(v.at(1, 5, ci, cj));
      for (const auto& d : dets[1]) {
        if (std::abs(d.score - score) < 1e-14 && std::abs(d.box.cx() - std::max(0.0, cx)) < 1.0) {
          if (std::abs(d.box.x1 - std::max(0.0, cx - w / 2)) < 1e-9 &&
              std::abs(d.box.y1 - std::max(0.0, cy - std::pow(2 * sig(v.at(1, 3, ci, cj)), 2) * 4)) <
                  1e-9)
            ++checked;
          break;
        }
      }
    }
  EXPECT_GT(checked, 40);  // nearly every cell matched (clipping aside)
}

TEST(Decode, EncodeRoundTrip) {
  Rng rng(146);
  for (int trial = 0; trial < 200; ++trial) {
    const int stride = 8;
    const int ci = static_cast<int>(rng.uniform_int(8)), cj = static_cast<int>(rng.uniform_int(8));
    const double tx = rng.uniform(-2, 2), ty = rng.uniform(-2, 2);
    const double tw = rng.uniform(-2, 1), th = rng.uniform(-2, 1);
    double cx, cy, w, h;
    decode_cell(tx, ty, tw, th, ci, cj, stride, cx, cy, w, h);
    Box b{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
    double rx, ry, rw, rh;
    ASSERT_TRUE(encode_cell(b, ci, cj, stride, rx, ry, rw, rh));
    double cx2, cy2, w2, h2;
    decode_cell(rx, ry, rw, rh, ci, cj, stride, cx2, cy2, w2, h2);
    EXPECT_NEAR(cx2, cx, 1e-5);
    EXPECT_NEAR(cy2, cy, 1e-5);
    EXPECT_NEAR(w2, w, 1e-5);
    EXPECT_NEAR(h2, h, 1e-5);
  }
}

TEST(Head, ShapeContractAndZeroWeights) {
  Rng rng(147);
  Head<double> head(8, 1, rng);
  Pyramid<double> p;
  p.p3 = Var<double>(randn({2, 8, 8, 8}, rng));
  p.p4 = Var<double>(randn({2, 8, 4, 4}, rng));
  p.p5 = Var<double>(randn({2, 8, 2, 2}, rng));
  auto raw = head.forward(p, false);
  EXPECT_EQ(raw.scales[0].value().dim(1), 6);
  EXPECT_EQ(raw.scales[1].value().dim(2), 4);
  ParamList<double> params;
  head.collect(params, "head");
  for (auto& pr : params) pr.var->value().fill(0.0);
  raw = head.forward(p, false);
  for (int s = 0; s < 3; ++s) EXPECT_EQ(raw.scales[static_cast<std::size_t>(s)].value().max_abs(), 0.0);
}

TEST(Head, GradCheck) {
  Rng rng(148);
  Head<double> head(4, 1, rng);
  Var<double> x3(randn({1, 4, 8, 8}, rng), true);
  Var<double> x4(randn({1, 4, 4, 4}, rng), true);
  Var<double> x5(randn({1, 4, 2, 2}, rng), true);
  ParamList<double> leaves{{"p3", &x3, true}, {"p4", &x4, true}, {"p5", &x5, true}};
  head.collect(leaves, "head");
  Rng crng(149);
  GradCheckOptions opt;
  opt.max_coords = 8;
  auto rep = grad_check(
      [&] {
        Pyramid<double> p;
        p.p3 = x3;
        p.p4 = x4;
        p.p5 = x5;
        auto raw = head.forward(p, false);
        return add(sum_all(raw.scales[0]), add(sum_all(raw.scales[1]), sum_all(raw.scales[2])));
      },
      leaves, crng, opt);
  EXPECT_LT(rep.max_rel_err, 1e-4) << rep.worst_tensor;
}

namespace {

NeckConfig desk_neck() {
  NeckConfig nc;
  nc.in_c3 = 8;
  nc.in_c4 = 16;
  nc.in_c5 = 32;
  nc.width = 8;
  nc.kan_grid = 4;
  nc.kan_degree = 2;
  nc.cbam_reduction = 4;
  return nc;
}

Pyramid<double> random_pyramid(Rng& rng, int n = 2) {
  Pyramid<double> p;
  p.p3 = Var<double>(Tensor<double>::randn({n, 8, 8, 8}, rng));
  p.p4 = Var<double>(Tensor<double>::randn({n, 16, 4, 4}, rng));
  p.p5 = Var<double>(Tensor<double>::randn({n, 32, 2, 2}, rng));
  return p;
}

}  // namespace

TEST(Neck, ZeroFusionWeightsGiveLateralProjections) {
  Rng rng(150);
  NeckConfig nc = desk_neck();
  Neck<double> neck(nc, rng);
  // zero everything downstream of the laterals
  ParamList<double> params;
  neck.td4.collect(params, "td4");
  neck.td3.collect(params, "td3");
  neck.bu4.collect(params, "bu4");
  neck.bu5.collect(params, "bu5");
  neck.down3.collect(params, "down3");
  neck.down4.collect(params, "down4");
  neck.cbam_td.collect(params, "ctd");
  neck.cbam_bu.collect(params, "cbu");
  for (auto& pr : params) {
    if (pr.name.find("running_var") != std::string::npos)
      pr.var->value().fill(1.0);
    else if (pr.name.find(".gamma") != std::string::npos)
      pr.var->value().fill(1.0);  // keep BN identity-at-zero: gamma*0 stays 0
    else
      pr.var->value().fill(0.0);
  }
  // zero gamma actually suffices; set fuse conv weights to zero too (done above)
  auto p = random_pyramid(rng);
  auto out = neck.forward(p, false);
  Var<double> l3 = neck.lat3.forward(p.p3, false);
  Var<double> l4 = neck.lat4.forward(p.p4, false);
  Var<double> l5 = neck.lat5.forward(p.p5, false);
  EXPECT_LT(oracle::max_abs_diff(out.p3.value(), l3.value()), 1e-12);
  EXPECT_LT(oracle::max_abs_diff(out.p4.value(), l4.value()), 1e-12);
  EXPECT_LT(oracle::max_abs_diff(out.p5.value(), l5.value()), 1e-12);
}

TEST(Neck, OutputSpatialSizesMatchInputs) {
  Rng rng(151);
  Neck<double> neck(desk_neck(), rng);
  auto p = random_pyramid(rng);
  auto out = neck.forward(p, false);
  EXPECT_EQ(out.p3.value().dim(2), 8);
  EXPECT_EQ(out.p4.value().dim(2), 4);
  EXPECT_EQ(out.p5.value().dim(2), 2);
  for (const Var<double>* v : {&out.p3, &out.p4, &out.p5})
    EXPECT_EQ(v->value().dim(1), 8);
}

TEST(Neck, ScaleMismatchThrows) {
  Rng rng(152);
  Neck<double> neck(desk_neck(), rng);
  Pyramid<double> p;
  p.p3 = Var<double>(Tensor<double>::randn({1, 8, 8, 8}, rng));
  p.p4 = Var<double>(Tensor<double>::randn({1, 16, 8, 8}, rng));
  p.p5 = Var<double>(Tensor<double>::randn({1, 32, 2, 2}, rng));
  EXPECT_THROW(neck.forward(p, false), ValueError);
}

TEST(Neck, AblationVariantsRun) {
  Rng rng(153);
  for (bool mscaf : {true, false})
    for (bool kan : {true, false}) {
      NeckConfig nc = desk_neck();
      nc.use_mscaf = mscaf;
      nc.use_kan_bottleneck = kan;
      Neck<double> neck(nc, rng);
      auto p = random_pyramid(rng);
      auto out = neck.forward(p, true);
      EXPECT_TRUE(out.p5.value().all_finite());
    }
}

TEST(Neck, GradCheckDeskScale) {
  Rng rng(154);
  Neck<double> neck(desk_neck(), rng);
  Var<double> x3(Tensor<double>::randn({2, 8, 8, 8}, rng), true);
  Var<double> x4(Tensor<double>::randn({2, 16, 4, 4}, rng), true);
  Var<double> x5(Tensor<double>::randn({2, 32, 2, 2}, rng), true);
  ParamList<double> leaves{{"p3", &x3, true}, {"p4", &x4, true}, {"p5", &x5, true}};
  neck.collect(leaves, "neck");
  ParamList<double> diff;
  for (auto& l : leaves)
    if (l.trainable) diff.push_back(l);
  Rng crng(155);
  GradCheckOptions opt;
  opt.max_coords = 3;
  auto rep = grad_check(
      [&] {
        Pyramid<double> p;
        p.p3 = x3;
        p.p4 = x4;
        p.p5 = x5;
        auto out = neck.forward(p, true);
        return add(sum_all(out.p3), add(sum_all(out.p4), sum_all(out.p5)));
      },
      diff, crng, opt);
  EXPECT_LT(rep.max_rel_err, 1e-4) << rep.worst_tensor;
}

namespace {

RawPrediction<double> random_raw(Rng& rng, int n, bool requires_grad) {
  RawPrediction<double> raw;
  raw.num_classes = 1;
  raw.scales[0] = Var<double>(Tensor<double>::randn({n, 6, 8, 8}, rng), requires_grad);
  raw.scales[1] = Var<double>(Tensor<double>::randn({n, 6, 4, 4}, rng), requires_grad);
  raw.scales[2] = Var<double>(Tensor<double>::randn({n, 6, 2, 2}, rng), requires_grad);
  return raw;
}

}  // namespace

TEST(DetectionLoss, PerfectLogitsNearZero) {
  // box centered on a cell center so every neighbor cell can reach it with
  // near-saturating offset logits
  std::vector<std::vector<GtBox>> gts(1);
  Box target{20, 20, 36, 36};  // center (28,28) = cell (3,3) center at stride 8
  gts[0].push_back({target, 0});
  Targets t = assign_targets(gts, 64);
  ASSERT_EQ(t.total_pos(), 9);
  RawPrediction<double> raw;
  raw.num_classes = 1;
  Tensor<double> s0({1, 6, 8, 8});
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) s0.at(0, 4, i, j) = -14.0;
  auto saturated_logit = [](double p) {
    if (p <= 0.0) return -14.0;
    if (p >= 1.0) return 14.0;
    return std::log(p / (1.0 - p));
  };
  for (const auto& pc : t.pos[0]) {
    const double ox = (pc.box.cx() / 8.0 - pc.cj + 0.5) / 2.0;
    const double oy = (pc.box.cy() / 8.0 - pc.ci + 0.5) / 2.0;
    s0.at(0, 0, pc.ci, pc.cj) = saturated_logit(ox);
    s0.at(0, 1, pc.ci, pc.cj) = saturated_logit(oy);
    s0.at(0, 2, pc.ci, pc.cj) = saturated_logit(std::sqrt(pc.box.w() / 8.0) / 2.0);
    s0.at(0, 3, pc.ci, pc.cj) = saturated_logit(std::sqrt(pc.box.h() / 8.0) / 2.0);
    s0.at(0, 4, pc.ci, pc.cj) = 14.0;
    s0.at(0, 5, pc.ci, pc.cj) = 14.0;
  }
  Tensor<double> s1({1, 6, 4, 4}), s2({1, 6, 2, 2});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) s1.at(0, 4, i, j) = -14.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) s2.at(0, 4, i, j) = -14.0;
  raw.scales[0] = Var<double>(s0);
  raw.scales[1] = Var<double>(s1);
  raw.scales[2] = Var<double>(s2);
  LossComponents comps;
  detection_loss(raw, t, LossWeights{}, &comps);
  EXPECT_LT(comps.obj, 1e-5);
  EXPECT_LT(comps.cls, 1e-5);
  EXPECT_LT(comps.box, 1e-4);
  EXPECT_LT(comps.total, 0.01);
}

TEST(DetectionLoss, EmptyImageOnlyObjectness) {
  Rng rng(156);
  std::vector<std::vector<GtBox>> gts(2);
  Targets t = assign_targets(gts, 64);
  auto raw = random_raw(rng, 2, false);
  LossComponents comps;
  Var<double> loss = detection_loss(raw, t, LossWeights{}, &comps);
  EXPECT_EQ(comps.n_pos, 0);
  EXPECT_EQ(comps.box, 0.0);
  EXPECT_EQ(comps.cls, 0.0);
  EXPECT_GT(comps.obj, 0.0);
  EXPECT_NEAR(loss.value()[0], comps.obj, 1e-12);
  EXPECT_GE(loss.value()[0], 0.0);
}

TEST(DetectionLoss, GradCheck) {
  Rng rng(157);
  std::vector<std::vector<GtBox>> gts(2);
  gts[0].push_back({Box{20, 22, 34, 38}, 0});
  gts[0].push_back({Box{5, 5, 45, 47}, 0});
  gts[1].push_back({Box{10, 30, 22, 44}, 0});
  Targets t = assign_targets(gts, 64);
  ASSERT_GT(t.total_pos(), 0);
  auto raw = random_raw(rng, 2, true);
  ParamList<double> leaves{{"s8", &raw.scales[0], true},
                           {"s16", &raw.scales[1], true},
                           {"s32", &raw.scales[2], true}};
  Rng crng(158);
  GradCheckOptions opt;
  opt.max_coords = 64;
  auto rep = grad_check([&] { return detection_loss(raw, t, LossWeights{}, nullptr); }, leaves,
                        crng, opt);
  EXPECT_LT(rep.max_rel_err, 1e-4) << rep.worst_tensor << " coord " << rep.worst_coord;
}

TEST(DetectionLoss, AlwaysNonNegative) {
  Rng rng(159);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::vector<GtBox>> gts(1);
    if (trial % 2) gts[0].push_back({Box{8, 8, 24, 28}, 0});
    Targets t = assign_targets(gts, 64);
    auto raw = random_raw(rng, 1, false);
    Var<double> loss = detection_loss(raw, t, LossWeights{}, nullptr);
    EXPECT_GE(loss.value()[0], 0.0);
  }
}
