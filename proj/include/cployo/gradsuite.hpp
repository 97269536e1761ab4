#pragma once

#include "cployo/gradcheck.hpp"
#include "cployo/loss.hpp"
#include "cployo/model.hpp"

namespace cployo {

struct GradSuiteCase {
  std::string name;
  std::function<double(std::uint64_t)> run;  // seed -> max relative error
};

namespace detail {

inline ParamList<double> trainable_only(ParamList<double>& all) {
  ParamList<double> out;
  for (auto& p : all)
    if (p.trainable) out.push_back(p);
  return out;
}

}  // namespace detail

// Desk-scale finite-difference checks, one per differentiable block family.
// Every case runs in double precision with the default 1e-4 step.
inline std::vector<GradSuiteCase> grad_suite() {
  std::vector<GradSuiteCase> cases;
  cases.push_back({"conv2d", [](std::uint64_t seed) {
    Rng rng(seed);
    Conv2d<double> conv({3, 4, 3, 1, 1, 1, true}, rng);
    Var<double> x(Tensor<double>::randn({2, 3, 6, 6}, rng), true);
    ParamList<double> leaves{{"input", &x, true}};
    conv.collect(leaves, "conv");
    Rng crng(seed + 1000);
    return grad_check([&] { return conv.forward(x); }, leaves, crng).max_rel_err;
  }});
  cases.push_back({"batchnorm", [](std::uint64_t seed) {
    Rng rng(seed);
    BatchNorm2d<double> bn(4);
    Var<double> x(Tensor<double>::randn({2, 4, 5, 5}, rng), true);
    ParamList<double> leaves{{"input", &x, true}};
    bn.collect(leaves, "bn");
    auto diff = detail::trainable_only(leaves);
    Rng crng(seed + 1000);
    return grad_check([&] { return silu(bn.forward(x, true)); }, diff, crng).max_rel_err;
  }});
  cases.push_back({"cbam", [](std::uint64_t seed) {
    Rng rng(seed);
    Cbam<double> cbam(8, 4, rng);
    Var<double> x(Tensor<double>::randn({2, 8, 4, 4}, rng), true);
    ParamList<double> leaves{{"input", &x, true}};
    cbam.collect(leaves, "cbam");
    Rng crng(seed + 1000);
    return grad_check([&] { return cbam.forward(x); }, leaves, crng).max_rel_err;
  }});
  cases.push_back({"psa", [](std::uint64_t seed) {
    Rng rng(seed);
    Psa<double> psa(6, rng);
    Var<double> x(Tensor<double>::randn({2, 6, 6, 6}, rng), true);
    ParamList<double> leaves{{"input", &x, true}};
    psa.collect(leaves, "psa");
    Rng crng(seed + 1000);
    return grad_check([&] { return psa.forward(x); }, leaves, crng).max_rel_err;
  }});
  cases.push_back({"kan_layer", [](std::uint64_t seed) {
    Rng rng(seed);
    KanLayer<double> layer(4, 3, 8, 3, 3.0, rng);
    Var<double> x(Tensor<double>::randn({5, 4}, rng, 1.2), true);
    ParamList<double> leaves{{"input", &x, true}};
    layer.collect(leaves, "kan");
    Rng crng(seed + 1000);
    return grad_check([&] { return layer.forward(x); }, leaves, crng).max_rel_err;
  }});
  cases.push_back({"kan_bottleneck", [](std::uint64_t seed) {
    Rng rng(seed);
    KanBottleneck<double> kb(8, 8, 3, rng);
    Var<double> x(Tensor<double>::randn({2, 8, 4, 4}, rng), true);
    ParamList<double> leaves{{"input", &x, true}};
    kb.collect(leaves, "kb");
    Rng crng(seed + 1000);
    return grad_check([&] { return kb.forward(x); }, leaves, crng).max_rel_err;
  }});
  cases.push_back({"repvit_camf_unit", [](std::uint64_t seed) {
    Rng rng(seed);
    RepVitCamfUnit<double> unit(4, 2, true, rng);
    Var<double> x(Tensor<double>::randn({2, 4, 5, 5}, rng), true);
    ParamList<double> leaves{{"input", &x, true}};
    unit.collect(leaves, "unit");
    auto diff = detail::trainable_only(leaves);
    Rng crng(seed + 1000);
    GradCheckOptions opt;
    opt.max_coords = 8;
    return grad_check([&] { return unit.forward(x, true); }, diff, crng, opt).max_rel_err;
  }});
  cases.push_back({"c2f_block", [](std::uint64_t seed) {
    Rng rng(seed);
    BlockConfig bc;
    bc.channels = 8;
    bc.n_bottlenecks = 1;
    bc.cbam_reduction = 2;
    C2fBlock<double> block(8, 8, bc, rng);
    Var<double> x(Tensor<double>::randn({1, 8, 8, 8}, rng), true);
    ParamList<double> leaves{{"input", &x, true}};
    block.collect(leaves, "c2f");
    auto diff = detail::trainable_only(leaves);
    Rng crng(seed + 1000);
    GradCheckOptions opt;
    opt.max_coords = 6;
    return grad_check([&] { return block.forward(x, true); }, diff, crng, opt).max_rel_err;
  }});
  cases.push_back({"neck", [](std::uint64_t seed) {
    Rng rng(seed);
    NeckConfig nc;
    nc.in_c3 = 8;
    nc.in_c4 = 16;
    nc.in_c5 = 32;
    nc.width = 8;
    nc.kan_grid = 4;
    nc.kan_degree = 2;
    Neck<double> neck(nc, rng);
    Var<double> x3(Tensor<double>::randn({2, 8, 8, 8}, rng), true);
    Var<double> x4(Tensor<double>::randn({2, 16, 4, 4}, rng), true);
    Var<double> x5(Tensor<double>::randn({2, 32, 2, 2}, rng), true);
    ParamList<double> leaves{{"p3", &x3, true}, {"p4", &x4, true}, {"p5", &x5, true}};
    neck.collect(leaves, "neck");
    auto diff = detail::trainable_only(leaves);
    Rng crng(seed + 1000);
    GradCheckOptions opt;
    opt.max_coords = 3;
    return grad_check(
               [&] {
                 Pyramid<double> p;
                 p.p3 = x3;
                 p.p4 = x4;
                 p.p5 = x5;
                 auto out = neck.forward(p, true);
                 return add(sum_all(out.p3), add(sum_all(out.p4), sum_all(out.p5)));
               },
               diff, crng, opt)
        .max_rel_err;
  }});
  cases.push_back({"head", [](std::uint64_t seed) {
    Rng rng(seed);
    Head<double> head(4, 1, rng);
    Var<double> x3(Tensor<double>::randn({1, 4, 8, 8}, rng), true);
    Var<double> x4(Tensor<double>::randn({1, 4, 4, 4}, rng), true);
    Var<double> x5(Tensor<double>::randn({1, 4, 2, 2}, rng), true);
    ParamList<double> leaves{{"p3", &x3, true}, {"p4", &x4, true}, {"p5", &x5, true}};
    head.collect(leaves, "head");
    Rng crng(seed + 1000);
    GradCheckOptions opt;
    opt.max_coords = 8;
    return grad_check(
               [&] {
                 Pyramid<double> p;
                 p.p3 = x3;
                 p.p4 = x4;
                 p.p5 = x5;
                 auto raw = head.forward(p, false);
                 return add(sum_all(raw.scales[0]),
                            add(sum_all(raw.scales[1]), sum_all(raw.scales[2])));
               },
               leaves, crng, opt)
        .max_rel_err;
  }});
  cases.push_back({"detection_loss", [](std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<GtBox>> gts(2);
    gts[0].push_back({Box{20, 22, 34, 38}, 0});
    gts[1].push_back({Box{10, 30, 22, 44}, 0});
    Targets t = assign_targets(gts, 64);
    RawPrediction<double> raw;
    raw.num_classes = 1;
    raw.scales[0] = Var<double>(Tensor<double>::randn({2, 6, 8, 8}, rng), true);
    raw.scales[1] = Var<double>(Tensor<double>::randn({2, 6, 4, 4}, rng), true);
    raw.scales[2] = Var<double>(Tensor<double>::randn({2, 6, 2, 2}, rng), true);
    ParamList<double> leaves{{"s8", &raw.scales[0], true},
                             {"s16", &raw.scales[1], true},
                             {"s32", &raw.scales[2], true}};
    Rng crng(seed + 1000);
    GradCheckOptions opt;
    opt.max_coords = 48;
    return grad_check([&] { return detection_loss(raw, t, LossWeights{}, nullptr); }, leaves, crng,
                      opt)
        .max_rel_err;
  }});
  return cases;
}

}  // namespace cployo
