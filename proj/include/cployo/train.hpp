#pragma once

#include <functional>

#include "cployo/checkpoint.hpp"
#include "cployo/dataset.hpp"
#include "cployo/loss.hpp"
#include "cployo/metrics.hpp"

namespace cployo {

struct TrainConfig {
  int epochs = 150;
  int batch_size = 16;
  double lr = 0.001;
  std::string optimizer = "adamw";  // "adam" | "adamw"
  double weight_decay = 0.0001;
  std::uint64_t seed = 0;
  double width_mult = 0.25;
  double depth_mult = 1.0;
  bool use_c2f_repvitcamf = true;
  bool use_mscaf = true;
  bool use_kan_bottleneck = true;
  bool freeze_backbone = false;
  std::string lr_schedule = "constant";  // "constant" | "cosine"

  void validate() const {
    check(lr > 0.0, "train config: lr must be > 0");
    check(batch_size >= 1, "train config: batch_size must be >= 1");
    check(epochs >= 1, "train config: epochs must be >= 1");
    check(optimizer == "adam" || optimizer == "adamw", "train config: unknown optimizer");
    check(lr_schedule == "constant" || lr_schedule == "cosine",
          "train config: unknown lr_schedule");
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"epochs", epochs},
                          {"batch_size", batch_size},
                          {"lr", lr},
                          {"optimizer", optimizer},
                          {"weight_decay", weight_decay},
                          {"seed", seed},
                          {"width_mult", width_mult},
                          {"depth_mult", depth_mult},
                          {"use_c2f_repvitcamf", use_c2f_repvitcamf},
                          {"use_mscaf", use_mscaf},
                          {"use_kan_bottleneck", use_kan_bottleneck},
                          {"freeze_backbone", freeze_backbone},
                          {"lr_schedule", lr_schedule}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.optimizer = j.value("optimizer", c.optimizer);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    c.width_mult = j.value("width_mult", c.width_mult);
    c.depth_mult = j.value("depth_mult", c.depth_mult);
    c.use_c2f_repvitcamf = j.value("use_c2f_repvitcamf", c.use_c2f_repvitcamf);
    c.use_mscaf = j.value("use_mscaf", c.use_mscaf);
    c.use_kan_bottleneck = j.value("use_kan_bottleneck", c.use_kan_bottleneck);
    c.freeze_backbone = j.value("freeze_backbone", c.freeze_backbone);
    c.lr_schedule = j.value("lr_schedule", c.lr_schedule);
    c.validate();
    return c;
  }

  ModelConfig model_config() const {
    ModelConfig m;
    m.width_mult = width_mult;
    m.depth_mult = depth_mult;
    m.use_c2f_repvitcamf = use_c2f_repvitcamf;
    m.use_mscaf = use_mscaf;
    m.use_kan_bottleneck = use_kan_bottleneck;
    return m;
  }
};

// Adam / AdamW (decoupled weight decay). Frozen parameters are skipped
// entirely and stay bit-identical.
template <typename T>
class AdamOptimizer {
 public:
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;
  bool decoupled = true;  // AdamW

  explicit AdamOptimizer(std::size_t n_params) : m_(n_params), v_(n_params) {}

  void step(std::vector<ParamRef<T>>& params, const std::vector<bool>& frozen) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, t_);
    const double bc2 = 1.0 - std::pow(beta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!params[i].trainable || frozen[i]) continue;
      Var<T>& var = *params[i].var;
      if (!var.grad_set()) continue;
      Tensor<T>& val = var.value();
      const Tensor<T>& grad = var.grad();
      if (m_[i].numel() != val.numel()) {
        m_[i] = Tensor<T>(val.dims());
        v_[i] = Tensor<T>(val.dims());
      }
      for (std::int64_t k = 0; k < val.numel(); ++k) {
        double g = grad[k];
        if (!decoupled) g += weight_decay * static_cast<double>(val[k]);
        const double m = beta1 * static_cast<double>(m_[i][k]) + (1.0 - beta1) * g;
        const double v = beta2 * static_cast<double>(v_[i][k]) + (1.0 - beta2) * g * g;
        m_[i][k] = static_cast<T>(m);
        v_[i][k] = static_cast<T>(v);
        double upd = (m / bc1) / (std::sqrt(v / bc2) + eps);
        if (decoupled) upd += weight_decay * static_cast<double>(val[k]);
        val[k] = static_cast<T>(static_cast<double>(val[k]) - lr * upd);
      }
    }
  }

 private:
  std::vector<Tensor<T>> m_, v_;
  int t_ = 0;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0, box = 0, obj = 0, cls = 0;
  double map50 = -1.0;  // filled when evaluation ran this epoch
};

struct TrainResult {
  Detector<float> model;
  std::vector<EpochStats> history;
  int epochs_run = 0;

  nlohmann::json history_json() const {
    nlohmann::json h = nlohmann::json::array();
    for (const auto& e : history) {
      nlohmann::json row{{"epoch", e.epoch}, {"loss", e.loss}, {"box", e.box}, {"obj", e.obj},
                         {"cls", e.cls}};
      if (e.map50 >= 0.0) row["map50"] = e.map50;
      h.push_back(row);
    }
    return h;
  }
};

// Optional early stop: evaluate train-split mAP50 every eval_every epochs and
// stop once target_map50 is reached.
struct StopCondition {
  int eval_every = 0;
  double target_map50 = -1.0;
};

// Identity by default; stands in for an image-enhancement stage in the
// transfer-learning path.
using EnhanceFn = std::function<CtSlice(const CtSlice&)>;

namespace detail {

inline Tensor<float> batch_tensor(const Dataset& ds, const std::vector<int>& idx,
                                  const EnhanceFn& enhance) {
  const int S = ds.size;
  Tensor<float> x({static_cast<int>(idx.size()), 1, S, S});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const CtSlice* img = &ds.items[static_cast<std::size_t>(idx[b])].image;
    CtSlice enhanced;
    if (enhance) {
      enhanced = enhance(*img);
      img = &enhanced;
    }
    for (int i = 0; i < S * S; ++i)
      x[static_cast<std::int64_t>(b) * S * S + i] = img->pixels[static_cast<std::size_t>(i)] / 255.0f;
  }
  return x;
}

}  // namespace detail

// Runs fused-mode inference over the dataset and scores it. The model is
// used as-is (callers hand in an eval-ready instance).
inline EvalResult evaluate_model(Detector<float>& model, const Dataset& ds,
                                 double score_thr = 0.25, double nms_iou = 0.45) {
  NoGradGuard ng;
  const int S = ds.size;
  std::vector<std::vector<Detection>> dets(ds.items.size());
  std::vector<std::vector<GtBox>> gts(ds.items.size());
  const int chunk = 8;
  for (std::size_t base = 0; base < ds.items.size(); base += chunk) {
    std::vector<int> idx;
    for (std::size_t i = base; i < std::min(ds.items.size(), base + chunk); ++i)
      idx.push_back(static_cast<int>(i));
    Var<float> x(detail::batch_tensor(ds, idx, nullptr));
    RawPrediction<float> raw = model.forward(x, false);
    auto decoded = decode(raw, S);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      dets[base + b] = nms(decoded[b], nms_iou, score_thr);
      gts[base + b] = ds.items[base + b].boxes;
    }
  }
  return evaluate(dets, gts, score_thr);
}

inline TrainResult train_model(Detector<float>&& model, const TrainConfig& cfg, const Dataset& ds,
                               const StopCondition& stop = {}, const EnhanceFn& enhance = nullptr,
                               const std::vector<bool>* frozen_in = nullptr) {
  cfg.validate();
  check(!ds.items.empty(), "train: dataset is empty");
  TrainResult res{std::move(model), {}, 0};
  ParamList<float> params = res.model.params();
  std::vector<bool> frozen(params.size(), false);
  if (frozen_in) {
    frozen = *frozen_in;
  } else if (cfg.freeze_backbone) {
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i].name.rfind("backbone", 0) == 0) frozen[i] = true;
  }
  AdamOptimizer<float> opt(params.size());
  opt.lr = cfg.lr;
  opt.weight_decay = cfg.weight_decay;
  opt.decoupled = cfg.optimizer == "adamw";

  Rng order_rng(cfg.seed + 0x9e3779b97f4a7c15ull);
  std::vector<int> order(ds.items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.lr_schedule == "cosine")
      opt.lr = cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979 * epoch / cfg.epochs));
    order_rng.shuffle(order);
    double sum_loss = 0, sum_box = 0, sum_obj = 0, sum_cls = 0;
    int n_batches = 0;
    for (std::size_t base = 0; base < order.size(); base += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<int> idx(order.begin() + static_cast<std::ptrdiff_t>(base),
                           order.begin() + static_cast<std::ptrdiff_t>(std::min(
                                               order.size(), base + static_cast<std::size_t>(cfg.batch_size))));
      std::vector<std::vector<GtBox>> gts;
      for (int i : idx) gts.push_back(ds.items[static_cast<std::size_t>(i)].boxes);
      Targets targets = assign_targets(gts, ds.size);
      for (auto& p : params) p.var->zero_grad();
      Var<float> x(detail::batch_tensor(ds, idx, enhance));
      RawPrediction<float> raw = res.model.forward(x, true, cfg.freeze_backbone);
      LossComponents comps;
      Var<float> loss = detection_loss(raw, targets, LossWeights{}, &comps);
      if (!std::isfinite(comps.total))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(n_batches));
      backward(loss);
      opt.step(params, frozen);
      sum_loss += comps.total;
      sum_box += comps.box;
      sum_obj += comps.obj;
      sum_cls += comps.cls;
      ++n_batches;
    }
    EpochStats st;
    st.epoch = epoch;
    st.loss = sum_loss / n_batches;
    st.box = sum_box / n_batches;
    st.obj = sum_obj / n_batches;
    st.cls = sum_cls / n_batches;
    res.epochs_run = epoch + 1;
    if (stop.eval_every > 0 && (epoch + 1) % stop.eval_every == 0) {
      st.map50 = evaluate_model(res.model, ds).map50;
      res.history.push_back(st);
      if (st.map50 >= stop.target_map50 && stop.target_map50 >= 0.0) break;
    } else {
      res.history.push_back(st);
    }
  }
  return res;
}

inline TrainResult train(const TrainConfig& cfg, const Dataset& ds, const StopCondition& stop = {}) {
  cfg.validate();
  Detector<float> model(cfg.model_config(), cfg.seed);
  return train_model(std::move(model), cfg, ds, stop);
}

// Transfer-learning entry: rebuilds the architecture from the config, loads
// every name/shape-matching tensor from the pretrained checkpoint (returning
// the skipped names), optionally freezes the backbone, then trains.
inline TrainResult finetune(const TrainConfig& cfg, const Checkpoint& pretrained, const Dataset& ds,
                            std::vector<std::string>* skipped_out = nullptr,
                            const StopCondition& stop = {}, const EnhanceFn& enhance = nullptr) {
  cfg.validate();
  ModelConfig mc = cfg.model_config();
  mc.fused = pretrained.model_config().fused;
  check(!mc.fused, "finetune: fused checkpoints cannot be fine-tuned");
  Detector<float> model(mc, cfg.seed);
  std::vector<std::string> skipped = load_matching(model, pretrained);
  if (skipped_out) *skipped_out = skipped;
  return train_model(std::move(model), cfg, ds, stop, enhance);
}

// Fused-mode evaluation of a stored model.
inline EvalResult evaluate_checkpoint(const Checkpoint& ck, const Dataset& ds,
                                      double score_thr = 0.25) {
  Detector<float> model = build_detector(ck);
  if (!model.fused()) model.fuse_reparam();
  return evaluate_model(model, ds, score_thr);
}

}  // namespace cployo
