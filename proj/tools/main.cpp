// cployo: lung-nodule detection toolkit CLI.
//
// Subcommands: gen-data, segment, train, eval, detect, fuse, gradcheck.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
// With --format json, exactly one JSON document is printed on stdout.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>

#include "cployo/cployo.hpp"
#include "cployo/gradsuite.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cployo;

namespace {

struct Output {
  std::string format = "text";

  void emit(const json& doc, const std::string& text) const {
    if (format == "json")
      std::cout << doc.dump(2) << "\n";
    else
      std::cout << text;
  }
};

int run_gen_data(int n, int size, std::uint64_t seed, const std::string& out, int max_nodules,
                 const Output& fmt) {
  SyntheticSpec spec;
  spec.n_images = n;
  spec.size = size;
  spec.seed = seed;
  spec.max_nodules = max_nodules;
  generate_synthetic(spec, out);
  json doc{{"command", "gen-data"}, {"images", n}, {"size", size}, {"seed", seed}, {"dir", out}};
  fmt.emit(doc, "wrote " + std::to_string(n) + " images to " + out + "\n");
  return 0;
}

int run_segment(const std::string& in, const std::string& out, int min_area, int kmeans_k,
                const Output& fmt) {
  fs::create_directories(out);
  std::vector<fs::path> inputs;
  if (fs::is_directory(in)) {
    for (const auto& e : fs::directory_iterator(in)) {
      const std::string ext = e.path().extension().string();
      if (ext == ".png" || ext == ".pgm" || ext == ".PNG" || ext == ".PGM")
        inputs.push_back(e.path());
    }
    std::sort(inputs.begin(), inputs.end());
    check(!inputs.empty(), in + ": no PNG/PGM images found");
  } else {
    inputs.push_back(in);
  }
  json per_image = json::array();
  std::string text;
  for (const auto& p : inputs) {
    CtSlice img = read_image(p.string());
    SegmentationConfig cfg;
    if (min_area > 0) {
      cfg.min_area_px = min_area;
      cfg.min_area2_px = 8 * min_area;
      cfg.scale_by_area = false;
    }
    BinaryMask mask;
    int threshold = -1;
    if (kmeans_k >= 2) {
      mask = kmeans_segment(img, kmeans_k);
      mask = clear_border_components(mask);
      mask = area_open(mask, cfg.scaled_area(cfg.min_area_px, img.width, img.height));
      mask = fill_holes(mask);
      mask = area_open(mask, cfg.scaled_area(cfg.min_area2_px, img.width, img.height));
    } else {
      threshold = otsu_threshold(img);
      mask = segment_lung(img, cfg);
    }
    const fs::path mask_path = fs::path(out) / (p.stem().string() + "_mask.png");
    write_mask_png(mask_path.string(), mask);
    CtSlice masked = apply_mask(img, mask);
    const fs::path masked_path = fs::path(out) / (p.stem().string() + "_masked.png");
    write_png_gray8(masked_path.string(), masked);
    json row{{"image", p.filename().string()},
             {"mask", mask_path.filename().string()},
             {"masked", masked_path.filename().string()},
             {"lung_px", mask.count()},
             {"method", kmeans_k >= 2 ? "kmeans" : "otsu"}};
    if (threshold >= 0) row["otsu_threshold"] = threshold;
    per_image.push_back(row);
    text += p.filename().string() + ": " + std::to_string(mask.count()) + " lung px\n";
  }
  fmt.emit(json{{"command", "segment"}, {"out_dir", out}, {"images", per_image}}, text);
  return 0;
}

int run_train(const std::string& config_path, const std::string& data, const std::string& out,
              const Output& fmt) {
  json cfg_json;
  {
    std::ifstream in(config_path);
    check(in.good(), "cannot open " + config_path);
    try {
      in >> cfg_json;
    } catch (const std::exception& e) {
      throw ValueError(config_path + ": bad JSON: " + std::string(e.what()));
    }
  }
  TrainConfig cfg = TrainConfig::from_json(cfg_json);
  Dataset ds = load_dataset(data);
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult r = train(cfg, ds);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_checkpoint(out, r.model, cfg.to_json(), r.epochs_run, r.history_json());
  const std::string history_path = out + ".history.json";
  {
    std::ofstream h(history_path);
    h << r.history_json().dump(2) << "\n";
  }
  json doc{{"command", "train"},
           {"checkpoint", out},
           {"history", history_path},
           {"epochs", r.epochs_run},
           {"final_loss", r.history.back().loss},
           {"seconds", secs}};
  fmt.emit(doc, "trained " + std::to_string(r.epochs_run) + " epochs (" + std::to_string(secs) +
                    " s), final loss " + std::to_string(r.history.back().loss) + "\n" +
                    "checkpoint: " + out + "\n");
  return 0;
}

json metrics_json(const EvalResult& ev) {
  json ap;
  for (const auto& [thr, v] : ev.ap_per_iou) {
    char key[8];
    std::snprintf(key, sizeof(key), "%.2f", thr);
    ap[key] = v;
  }
  return json{{"precision", ev.precision},
              {"recall", ev.recall},
              {"map50", ev.map50},
              {"map50_95", ev.map50_95},
              {"ap_per_iou", ap}};
}

int run_eval(const std::string& ckpt, const std::string& data, const Output& fmt) {
  Checkpoint ck = load_checkpoint(ckpt);
  Dataset ds = load_dataset(data);
  EvalResult ev = evaluate_checkpoint(ck, ds);
  json doc = metrics_json(ev);
  doc["command"] = "eval";
  doc["checkpoint"] = ckpt;
  char line[160];
  std::snprintf(line, sizeof(line),
                "precision %.4f  recall %.4f  mAP50 %.4f  mAP50-95 %.4f\n", ev.precision,
                ev.recall, ev.map50, ev.map50_95);
  fmt.emit(doc, line);
  return 0;
}

int run_detect(const std::string& ckpt, const std::string& image, const std::string& out,
               const std::string& annotate, double score_thr, const Output& fmt) {
  Checkpoint ck = load_checkpoint(ckpt);
  Detector<float> model = build_detector(ck);
  if (!model.fused()) model.fuse_reparam();
  CtSlice img = read_image(image);
  check(img.width == img.height && img.width % 32 == 0,
        image + ": image must be square with side divisible by 32");
  const int S = img.width;
  Tensor<float> x({1, 1, S, S});
  for (int i = 0; i < S * S; ++i) x[i] = img.pixels[static_cast<std::size_t>(i)] / 255.0f;
  NoGradGuard ng;
  RawPrediction<float> raw = model.forward(Var<float>(x), false);
  auto decoded = decode(raw, S);
  std::vector<Detection> dets = nms(decoded[0], 0.45, score_thr);
  // JSON lines, one detection per line
  {
    std::ofstream o(out);
    check(o.good(), "cannot write " + out);
    for (const auto& d : dets) {
      json row{{"image", img.source_id},
               {"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}},
               {"score", d.score},
               {"class", d.class_id}};
      o << row.dump() << "\n";
    }
  }
  if (!annotate.empty()) {
    std::vector<unsigned char> rgb(static_cast<std::size_t>(S) * S * 3);
    for (int i = 0; i < S * S; ++i) {
      const auto v = static_cast<unsigned char>(
          std::lround(std::min(255.0f, std::max(0.0f, img.pixels[static_cast<std::size_t>(i)]))));
      rgb[static_cast<std::size_t>(i) * 3] = v;
      rgb[static_cast<std::size_t>(i) * 3 + 1] = v;
      rgb[static_cast<std::size_t>(i) * 3 + 2] = v;
    }
    auto mark = [&](int y, int x) {
      if (y < 0 || y >= S || x < 0 || x >= S) return;
      rgb[(static_cast<std::size_t>(y) * S + x) * 3] = 255;
      rgb[(static_cast<std::size_t>(y) * S + x) * 3 + 1] = 32;
      rgb[(static_cast<std::size_t>(y) * S + x) * 3 + 2] = 32;
    };
    for (const auto& d : dets) {
      const int x1 = static_cast<int>(std::lround(d.box.x1));
      const int y1 = static_cast<int>(std::lround(d.box.y1));
      const int x2 = static_cast<int>(std::lround(d.box.x2));
      const int y2 = static_cast<int>(std::lround(d.box.y2));
      for (int x = x1; x <= x2; ++x) {
        mark(y1, x);
        mark(y2, x);
      }
      for (int y = y1; y <= y2; ++y) {
        mark(y, x1);
        mark(y, x2);
      }
    }
    write_png_rgb8(annotate, S, S, rgb);
  }
  json doc{{"command", "detect"},
           {"image", image},
           {"detections", dets.size()},
           {"out", out}};
  if (!annotate.empty()) doc["annotated"] = annotate;
  fmt.emit(doc, std::to_string(dets.size()) + " detections -> " + out + "\n");
  return 0;
}

int run_fuse(const std::string& ckpt, const std::string& out, int probes, const Output& fmt) {
  Checkpoint ck = load_checkpoint(ckpt);
  Detector<float> model = build_detector(ck);
  check(!model.fused(), ckpt + ": checkpoint is already fused");
  Detector<float> fused = build_detector(ck);
  fused.fuse_reparam();
  // equivalence report over random probes
  Rng rng(12345);
  double max_diff = 0.0;
  NoGradGuard ng;
  for (int p = 0; p < probes; ++p) {
    Tensor<float> x({1, 1, 64, 64});
    for (std::int64_t i = 0; i < x.numel(); ++i)
      x[i] = static_cast<float>(rng.uniform());
    auto a = model.forward(Var<float>(x), false);
    auto b = fused.forward(Var<float>(x), false);
    for (int s = 0; s < 3; ++s) {
      const auto& ta = a.scales[static_cast<std::size_t>(s)].value();
      const auto& tb = b.scales[static_cast<std::size_t>(s)].value();
      for (std::int64_t i = 0; i < ta.numel(); ++i)
        max_diff = std::max(max_diff, std::abs(static_cast<double>(ta[i]) - tb[i]));
    }
  }
  ParamList<float> before = model.params();
  ParamList<float> after = fused.params();
  save_checkpoint(out, fused, ck.header.at("train_config"), ck.header.value("epoch", 0),
                  ck.header.value("history", json::array()));
  json doc{{"command", "fuse"},
           {"checkpoint", out},
           {"max_abs_diff", max_diff},
           {"probes", probes},
           {"params_before", param_count(before, false)},
           {"params_after", param_count(after, false)}};
  char line[160];
  std::snprintf(line, sizeof(line), "fused -> %s  max |diff| %.3g over %d probes, params %lld -> %lld\n",
                out.c_str(), max_diff, probes, static_cast<long long>(param_count(before, false)),
                static_cast<long long>(param_count(after, false)));
  fmt.emit(doc, line);
  if (max_diff >= 1e-3) return 3;
  return 0;
}

int run_gradcheck(const std::string& module, const Output& fmt) {
  auto cases = grad_suite();
  json rows = json::array();
  std::string text;
  double worst = 0.0;
  bool found = false;
  for (const auto& c : cases) {
    if (module != "all" && module != c.name) continue;
    found = true;
    double err = 0.0;
    for (std::uint64_t seed : {11u, 22u, 33u}) err = std::max(err, c.run(seed));
    worst = std::max(worst, err);
    rows.push_back({{"block", c.name}, {"max_rel_err", err}, {"pass", err < 1e-4}});
    char line[128];
    std::snprintf(line, sizeof(line), "%-16s max rel err %.3e  %s\n", c.name.c_str(), err,
                  err < 1e-4 ? "ok" : "FAIL");
    text += line;
  }
  if (!found) throw ValueError("unknown module '" + module + "' (try --module all)");
  fmt.emit(json{{"command", "gradcheck"}, {"blocks", rows}, {"max_rel_err", worst}}, text);
  return worst >= 1e-3 ? 3 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cployo: pulmonary-nodule detection toolkit (training, evaluation, segmentation)"};
  app.require_subcommand(1);
  app.fallthrough();
  Output fmt;
  app.add_option("--format", fmt.format, "Output format: text or json")
      ->check(CLI::IsMember({"text", "json"}));

  // gen-data
  int gd_n = 32, gd_size = 64, gd_max_nodules = 3;
  std::uint64_t gd_seed = 0;
  std::string gd_out;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic nodule dataset");
  gen->add_option("--n", gd_n, "Number of images")->check(CLI::PositiveNumber);
  gen->add_option("--size", gd_size, "Image side (multiple of 32)");
  gen->add_option("--seed", gd_seed, "RNG seed");
  gen->add_option("--max-nodules", gd_max_nodules, "Maximum nodules per image");
  gen->add_option("--out", gd_out, "Output directory")->required();

  // segment
  std::string sg_in, sg_out;
  int sg_min_area = 0, sg_kmeans = 0;
  auto* seg = app.add_subcommand("segment", "Extract lung parenchyma masks");
  seg->add_option("--in", sg_in, "Input image or directory")->required();
  seg->add_option("--out", sg_out, "Output directory")->required();
  seg->add_option("--min-area", sg_min_area, "Noise-pass area opening threshold in px");
  seg->add_option("--kmeans", sg_kmeans, "Use k-means clustering with K clusters instead of Otsu");

  // train
  std::string tr_config, tr_data, tr_out;
  auto* trn = app.add_subcommand("train", "Train a detector");
  trn->add_option("--config", tr_config, "TrainConfig JSON file")->required();
  trn->add_option("--data", tr_data, "Dataset directory")->required();
  trn->add_option("--out", tr_out, "Checkpoint output path")->required();

  // eval
  std::string ev_ckpt, ev_data;
  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint (fused inference)");
  evl->add_option("--ckpt", ev_ckpt, "Checkpoint path")->required();
  evl->add_option("--data", ev_data, "Dataset directory")->required();

  // detect
  std::string dt_ckpt, dt_image, dt_out, dt_annotate;
  double dt_score = 0.25;
  auto* det = app.add_subcommand("detect", "Run detection on one image");
  det->add_option("--ckpt", dt_ckpt, "Checkpoint path")->required();
  det->add_option("--image", dt_image, "Input image (PNG/PGM)")->required();
  det->add_option("--out", dt_out, "Detections output (JSON lines)")->required();
  det->add_option("--annotate", dt_annotate, "Write annotated PNG here");
  det->add_option("--score-thr", dt_score, "Score threshold");

  // fuse
  std::string fu_ckpt, fu_out;
  int fu_probes = 32;
  auto* fus = app.add_subcommand("fuse", "Fold reparameterizable branches for inference");
  fus->add_option("--ckpt", fu_ckpt, "Checkpoint path")->required();
  fus->add_option("--out", fu_out, "Fused checkpoint output path")->required();
  fus->add_option("--probes", fu_probes, "Equivalence probes");

  // gradcheck
  std::string gc_module = "all";
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference checks per block");
  gc->add_option("--module", gc_module, "Block name or 'all'");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return run_gen_data(gd_n, gd_size, gd_seed, gd_out, gd_max_nodules, fmt);
    if (seg->parsed()) return run_segment(sg_in, sg_out, sg_min_area, sg_kmeans, fmt);
    if (trn->parsed()) return run_train(tr_config, tr_data, tr_out, fmt);
    if (evl->parsed()) return run_eval(ev_ckpt, ev_data, fmt);
    if (det->parsed()) return run_detect(dt_ckpt, dt_image, dt_out, dt_annotate, dt_score, fmt);
    if (fus->parsed()) return run_fuse(fu_ckpt, fu_out, fu_probes, fmt);
    if (gc->parsed()) return run_gradcheck(gc_module, fmt);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
