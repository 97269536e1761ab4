#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "cployo/boxes.hpp"

namespace cployo {

struct GtBox {
  Box box;
  int class_id = 0;
};

struct ScaleShape {
  int stride = 0, gh = 0, gw = 0;
};

struct PosCell {
  int n = 0;       // image index in batch
  int ci = 0;      // cell row
  int cj = 0;      // cell col
  Box box;         // target box in pixels
  int class_id = 0;
};

struct Targets {
  int img_size = 0;
  int n_images = 0;
  std::array<ScaleShape, 3> shapes;
  std::array<std::vector<std::uint8_t>, 3> obj;  // n*gh*gw objectness targets
  std::array<std::vector<PosCell>, 3> pos;
  std::int64_t total_cells() const {
    std::int64_t t = 0;
    for (int s = 0; s < 3; ++s) t += static_cast<std::int64_t>(obj[static_cast<std::size_t>(s)].size());
    return t;
  }
  int total_pos() const {
    int t = 0;
    for (int s = 0; s < 3; ++s) t += static_cast<int>(pos[static_cast<std::size_t>(s)].size());
    return t;
  }
};

// Scale selection boundaries: 64 px and 128 px defined at a 256-px reference
// image, scaled linearly with the actual image size.
inline int assign_scale_for(double side, int img_size) {
  const double b1 = img_size * (64.0 / 256.0);
  const double b2 = img_size * (128.0 / 256.0);
  if (side <= b1) return 0;
  if (side <= b2) return 1;
  return 2;
}

// Each ground-truth box goes to the stride matching sqrt(w*h) and to the 3x3
// cell neighborhood of its center. When two boxes claim a cell the one whose
// center lies closest to the cell center wins.
inline Targets assign_targets(const std::vector<std::vector<GtBox>>& gts, int img_size) {
  check(img_size >= 32 && img_size % 32 == 0, "assign: image size must be a multiple of 32");
  Targets t;
  t.img_size = img_size;
  t.n_images = static_cast<int>(gts.size());
  const int strides[3] = {8, 16, 32};
  struct Claim {
    bool used = false;
    double dist2 = 0.0;
    Box box;
    int class_id = 0;
  };
  for (int s = 0; s < 3; ++s) {
    const int g = img_size / strides[s];
    t.shapes[static_cast<std::size_t>(s)] = {strides[s], g, g};
    t.obj[static_cast<std::size_t>(s)].assign(static_cast<std::size_t>(t.n_images) * g * g, 0);
  }
  for (int n = 0; n < t.n_images; ++n) {
    std::array<std::vector<Claim>, 3> claims;
    for (int s = 0; s < 3; ++s) {
      const int g = t.shapes[static_cast<std::size_t>(s)].gh;
      claims[static_cast<std::size_t>(s)].assign(static_cast<std::size_t>(g) * g, Claim{});
    }
    for (const GtBox& gt : gts[static_cast<std::size_t>(n)]) {
      check(gt.box.x1 >= 0 && gt.box.y1 >= 0 && gt.box.x2 <= img_size && gt.box.y2 <= img_size &&
                gt.box.w() > 0 && gt.box.h() > 0,
            "assign: ground truth outside image");
      const int s = assign_scale_for(std::sqrt(gt.box.w() * gt.box.h()), img_size);
      const int stride = t.shapes[static_cast<std::size_t>(s)].stride;
      const int g = t.shapes[static_cast<std::size_t>(s)].gh;
      int cj = static_cast<int>(std::floor(gt.box.cx() / stride));
      int ci = static_cast<int>(std::floor(gt.box.cy() / stride));
      cj = std::min(std::max(cj, 0), g - 1);
      ci = std::min(std::max(ci, 0), g - 1);
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          const int i = ci + di, j = cj + dj;
          if (i < 0 || i >= g || j < 0 || j >= g) continue;
          const double ccx = (j + 0.5) * stride, ccy = (i + 0.5) * stride;
          const double d2 = (gt.box.cx() - ccx) * (gt.box.cx() - ccx) +
                            (gt.box.cy() - ccy) * (gt.box.cy() - ccy);
          Claim& cl = claims[static_cast<std::size_t>(s)][static_cast<std::size_t>(i) * g + j];
          if (!cl.used || d2 < cl.dist2) {
            cl.used = true;
            cl.dist2 = d2;
            cl.box = gt.box;
            cl.class_id = gt.class_id;
          }
        }
    }
    for (int s = 0; s < 3; ++s) {
      const int g = t.shapes[static_cast<std::size_t>(s)].gh;
      for (int i = 0; i < g; ++i)
        for (int j = 0; j < g; ++j) {
          const Claim& cl = claims[static_cast<std::size_t>(s)][static_cast<std::size_t>(i) * g + j];
          if (!cl.used) continue;
          t.obj[static_cast<std::size_t>(s)][(static_cast<std::size_t>(n) * g + i) * g + j] = 1;
          t.pos[static_cast<std::size_t>(s)].push_back({n, i, j, cl.box, cl.class_id});
        }
    }
  }
  return t;
}

}  // namespace cployo
