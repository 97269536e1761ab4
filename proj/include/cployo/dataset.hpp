#pragma once

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "cployo/synthetic.hpp"

namespace cployo {

// Label format: one text file per image, one line per box,
// "class cx cy w h" with coordinates normalized to [0,1] by the image size.

inline void write_labels(const std::string& path, const std::vector<GtBox>& boxes, int img_size) {
  std::ofstream out(path);
  check(out.good(), "cannot write " + path);
  char line[160];
  for (const auto& g : boxes) {
    std::snprintf(line, sizeof(line), "%d %.8f %.8f %.8f %.8f\n", g.class_id,
                  g.box.cx() / img_size, g.box.cy() / img_size, g.box.w() / img_size,
                  g.box.h() / img_size);
    out << line;
  }
}

inline std::vector<GtBox> parse_label_file(const std::string& path, int img_size) {
  std::ifstream in(path);
  check(in.good(), "cannot open " + path);
  std::vector<GtBox> boxes;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    int cls;
    double cx, cy, w, h;
    if (!(ss >> cls >> cx >> cy >> w >> h)) {
      throw ValueError(path + ":" + std::to_string(lineno) + ": malformed label line");
    }
    std::string extra;
    if (ss >> extra) throw ValueError(path + ":" + std::to_string(lineno) + ": trailing tokens");
    for (double v : {cx, cy, w, h})
      if (!(v >= 0.0 && v <= 1.0))
        throw ValueError(path + ":" + std::to_string(lineno) + ": coordinate out of [0,1]");
    Box b{(cx - w / 2) * img_size, (cy - h / 2) * img_size, (cx + w / 2) * img_size,
          (cy + h / 2) * img_size};
    boxes.push_back({b, cls});
  }
  return boxes;
}

struct DatasetItem {
  std::string id;
  CtSlice image;
  std::vector<GtBox> boxes;
};

struct Dataset {
  int size = 0;  // square image side
  std::vector<std::string> classes;
  std::vector<DatasetItem> items;
};

// Directory layout: images/*.png + labels/*.txt + manifest.json
inline void generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "labels");
  Rng rng(spec.seed);
  for (int i = 0; i < spec.n_images; ++i) {
    LabeledImage li = make_synthetic_image(rng, spec);
    char name[32];
    std::snprintf(name, sizeof(name), "img_%04d", i);
    write_png_gray8((fs::path(out_dir) / "images" / (std::string(name) + ".png")).string(),
                    li.image);
    write_labels((fs::path(out_dir) / "labels" / (std::string(name) + ".txt")).string(), li.boxes,
                 spec.size);
  }
  nlohmann::json manifest;
  manifest["size"] = spec.size;
  manifest["classes"] = {"nodule"};
  std::ofstream mf(fs::path(out_dir) / "manifest.json");
  mf << manifest.dump(2) << "\n";
}

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  check(fs::exists(root / "manifest.json"), dir + ": missing manifest.json");
  nlohmann::json manifest;
  {
    std::ifstream in(root / "manifest.json");
    try {
      in >> manifest;
    } catch (const std::exception& e) {
      throw ValueError(dir + ": bad manifest.json: " + std::string(e.what()));
    }
  }
  Dataset ds;
  ds.size = manifest.at("size").get<int>();
  check(ds.size >= 32 && ds.size % 32 == 0, dir + ": manifest size must be a multiple of 32");
  for (const auto& c : manifest.at("classes")) ds.classes.push_back(c.get<std::string>());
  std::vector<fs::path> image_files;
  for (const auto& e : fs::directory_iterator(root / "images")) {
    const std::string ext = e.path().extension().string();
    if (ext == ".png" || ext == ".pgm") image_files.push_back(e.path());
  }
  std::sort(image_files.begin(), image_files.end());
  check(!image_files.empty(), dir + ": no images found");
  for (const auto& p : image_files) {
    DatasetItem item;
    item.id = p.stem().string();
    item.image = read_image(p.string());
    check(item.image.width == ds.size && item.image.height == ds.size,
          p.string() + ": image size differs from manifest");
    const fs::path label = root / "labels" / (item.id + ".txt");
    if (fs::exists(label)) item.boxes = parse_label_file(label.string(), ds.size);
    ds.items.push_back(std::move(item));
  }
  return ds;
}

}  // namespace cployo
