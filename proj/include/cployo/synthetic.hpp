#pragma once

#include <filesystem>
#include <fstream>

#include "cployo/assign.hpp"
#include "cployo/image_io.hpp"

namespace cployo {

// --- segmentation phantom: bright body, dark lungs, known mask ---

struct PhantomSpec {
  int size = 128;
  double noise_sigma = 4.0;
  int n_speckles = 0;   // 1..3-px blobs of the opposite intensity
  bool with_nodules = true;
  std::uint64_t seed = 0;
};

struct Phantom {
  CtSlice image;
  BinaryMask lung_mask;
};

// Dark elliptical lungs inside a bright body on a dark background. Speckles
// are placed with a margin from every lung boundary so that area opening and
// hole filling restore the noiseless mask exactly.
inline Phantom make_phantom(const PhantomSpec& spec) {
  const int S = spec.size;
  check(S >= 32, "phantom: size too small");
  Rng rng(spec.seed);
  Phantom ph;
  ph.image = CtSlice(S, S);
  ph.lung_mask = BinaryMask(S, S);
  const double cx = S / 2.0, cy = S / 2.0;
  const double body_a = 0.44 * S, body_b = 0.40 * S;
  const double lung_a = 0.14 * S, lung_b = 0.24 * S;
  const double lung_off = 0.19 * S;
  auto inside = [](double px, double py, double ex, double ey, double a, double b) {
    const double nx = (px - ex) / a, ny = (py - ey) / b;
    return nx * nx + ny * ny <= 1.0;
  };
  auto lung_dist = [&](double px, double py, double ex, double ey) {
    const double nx = (px - ex) / lung_a, ny = (py - ey) / lung_b;
    return std::sqrt(nx * nx + ny * ny);
  };
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      double v = 20.0;  // background air
      if (inside(x, y, cx, cy, body_a, body_b)) v = 190.0;  // body
      const bool in_lung = inside(x, y, cx - lung_off, cy, lung_a, lung_b) ||
                           inside(x, y, cx + lung_off, cy, lung_a, lung_b);
      if (in_lung) {
        v = 45.0;
        ph.lung_mask.set(y, x, true);
      }
      v += rng.normal(0.0, spec.noise_sigma);
      ph.image.at(y, x) = static_cast<float>(std::min(255.0, std::max(0.0, std::round(v))));
    }
  if (spec.with_nodules) {
    // one bright nodule per lung, well inside
    for (double side : {-1.0, 1.0}) {
      const double nx = cx + side * lung_off + rng.uniform(-0.3, 0.3) * lung_a;
      const double ny = cy + rng.uniform(-0.4, 0.4) * lung_b;
      const double r = rng.uniform(0.02, 0.04) * S;
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
          const double d = std::hypot(x - nx, y - ny);
          if (d <= r && ph.lung_mask.get(y, x))
            ph.image.at(y, x) = static_cast<float>(
                std::min(255.0, ph.image.at(y, x) + 130.0 * (1.0 - (d / r) * (d / r))));
        }
    }
  }
  // speckles: dark dots on the body, bright dots inside the lungs, each at
  // least 4 px away from any lung boundary
  int placed = 0, attempts = 0;
  while (placed < spec.n_speckles && attempts < 1000) {
    ++attempts;
    const int x = 2 + static_cast<int>(rng.uniform_int(S - 4));
    const int y = 2 + static_cast<int>(rng.uniform_int(S - 4));
    const double dl = lung_dist(x, y, cx - lung_off, cy);
    const double dr = lung_dist(x, y, cx + lung_off, cy);
    const bool deep_lung = std::min(dl, dr) < 0.6;
    const bool on_body = inside(x, y, cx, cy, body_a * 0.9, body_b * 0.9) &&
                         std::min(dl, dr) > 1.5;
    if (!deep_lung && !on_body) continue;
    const float v = deep_lung ? 190.0f : 45.0f;
    const int npx = 1 + static_cast<int>(rng.uniform_int(3));
    ph.image.at(y, x) = v;
    if (npx >= 2) ph.image.at(y, x + 1) = v;
    if (npx >= 3) ph.image.at(y + 1, x) = v;
    ++placed;
  }
  ph.image.source_id = "phantom_" + std::to_string(spec.seed);
  return ph;
}

// --- detection dataset: dark lung field with bright soft-edged nodules ---

struct SyntheticSpec {
  int n_images = 32;
  int size = 64;
  int min_nodules = 0;
  int max_nodules = 3;
  double min_radius = 2.0;
  double max_radius = 8.0;
  double min_contrast = 90.0;
  double max_contrast = 160.0;
  double noise_sigma = 4.0;
  std::uint64_t seed = 0;

  void validate() const {
    check(n_images >= 1, "synthetic: n_images must be >= 1");
    check(size >= 32 && size % 32 == 0, "synthetic: size must be a multiple of 32");
    check(min_radius >= 2.0, "synthetic: radius must be >= 2 so boxes are non-degenerate");
    check(min_nodules >= 0 && max_nodules >= min_nodules, "synthetic: bad nodule range");
  }
};

struct LabeledImage {
  CtSlice image;
  std::vector<GtBox> boxes;
};

// One image: mid-gray background, dark elliptical lung field, additive
// parabolic-profile nodules. Boxes are the exact disk extents.
inline LabeledImage make_synthetic_image(Rng& rng, const SyntheticSpec& spec) {
  const int S = spec.size;
  LabeledImage out;
  out.image = CtSlice(S, S);
  const double cx = S / 2.0, cy = S / 2.0;
  const double fa = 0.42 * S, fb = 0.36 * S;
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const double nx = (x - cx) / fa, ny = (y - cy) / fb;
      double v = (nx * nx + ny * ny <= 1.0) ? 50.0 : 120.0;
      v += rng.normal(0.0, spec.noise_sigma);
      out.image.at(y, x) = static_cast<float>(v);
    }
  const int count = spec.min_nodules +
                    static_cast<int>(rng.uniform_int(spec.max_nodules - spec.min_nodules + 1));
  int placed = 0, attempts = 0;
  while (placed < count && attempts < 200) {
    ++attempts;
    const double r = rng.uniform(spec.min_radius, spec.max_radius);
    const double px = cx + rng.uniform(-0.6, 0.6) * fa;
    const double py = cy + rng.uniform(-0.6, 0.6) * fb;
    Box b{px - r, py - r, px + r, py + r};
    if (b.x1 < 1 || b.y1 < 1 || b.x2 > S - 1 || b.y2 > S - 1) continue;
    bool clash = false;
    for (const auto& g : out.boxes)
      if (iou(b, g.box) > 0.05) clash = true;
    if (clash) continue;
    const double contrast = rng.uniform(spec.min_contrast, spec.max_contrast);
    for (int y = static_cast<int>(std::floor(b.y1)); y <= static_cast<int>(std::ceil(b.y2)); ++y)
      for (int x = static_cast<int>(std::floor(b.x1)); x <= static_cast<int>(std::ceil(b.x2)); ++x) {
        if (y < 0 || y >= S || x < 0 || x >= S) continue;
        const double d = std::hypot(x - px, y - py);
        if (d <= r) {
          // parabolic falloff with a 2-unit pedestal so every in-disk pixel
          // stays visible and the rendered extent matches the label box
          const double bump = std::max(2.0, contrast * (1.0 - (d / r) * (d / r)));
          out.image.at(y, x) = static_cast<float>(out.image.at(y, x) + bump);
        }
      }
    out.boxes.push_back({b, 0});
    ++placed;
  }
  for (float& v : out.image.pixels)
    v = static_cast<float>(std::min(255.0, std::max(0.0, std::round(static_cast<double>(v)))));
  return out;
}

}  // namespace cployo
