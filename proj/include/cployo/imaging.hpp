#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cployo/common.hpp"

namespace cployo {

// Grayscale slice. Pixels are stored as float so 8-bit, 16-bit and rescaled
// HU data share one representation.
struct CtSlice {
  int width = 0, height = 0;
  std::vector<float> pixels;  // row-major
  std::optional<std::pair<double, double>> spacing_mm;
  std::string source_id;

  CtSlice() = default;
  CtSlice(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, 0.0f) {}

  float& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

  void validate() const {
    check(width >= 8 && height >= 8, "slice must be at least 8x8");
    check(pixels.size() == static_cast<std::size_t>(width) * height, "pixel buffer size mismatch");
    for (float v : pixels) check(std::isfinite(v), "slice has non-finite pixels");
  }
};

struct BinaryMask {
  int width = 0, height = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}

  bool get(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int y, int x, bool v) { bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
  std::int64_t count() const {
    std::int64_t c = 0;
    for (auto b : bits) c += b;
    return c;
  }
  bool operator==(const BinaryMask& o) const {
    return width == o.width && height == o.height && bits == o.bits;
  }
};

struct SegmentationConfig {
  // area-opening thresholds, defined at a 512x512 reference and scaled by
  // image area when scale_by_area is set
  int min_area_px = 64;    // noise pass
  int min_area2_px = 512;  // second pass
  bool scale_by_area = true;
  int kmeans_k = 2;
  int morph_radius_px = 0;  // optional closing radius applied to the final mask
  bool border_clear = true;

  void validate() const {
    check(min_area_px >= 1 && min_area2_px >= 1, "min_area_px must be >= 1");
    check(kmeans_k >= 2, "kmeans_k must be >= 2");
    check(morph_radius_px >= 0, "morph_radius_px must be >= 0");
  }

  int scaled_area(int base, int w, int h) const {
    if (!scale_by_area) return base;
    const double f = static_cast<double>(w) * h / (512.0 * 512.0);
    const int v = static_cast<int>(std::lround(base * f));
    return v < 1 ? 1 : v;
  }
};

// 8-bit histogram quantization: images whose pixels are already integers in
// [0,255] map bin = value; anything else is min-max scaled into 256 bins.
inline std::vector<int> quantize8(const CtSlice& img) {
  bool identity = true;
  for (float v : img.pixels) {
    if (v < 0.0f || v > 255.0f || v != std::floor(v)) {
      identity = false;
      break;
    }
  }
  std::vector<int> bins(img.pixels.size());
  if (identity) {
    for (std::size_t i = 0; i < img.pixels.size(); ++i) bins[i] = static_cast<int>(img.pixels[i]);
    return bins;
  }
  float mn = img.pixels[0], mx = img.pixels[0];
  for (float v : img.pixels) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  const double span = static_cast<double>(mx) - mn;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const double b = std::floor((img.pixels[i] - mn) / span * 256.0);
    bins[i] = static_cast<int>(std::min(255.0, std::max(0.0, b)));
  }
  return bins;
}

// Otsu's threshold on the 8-bit histogram: maximizes the between-class
// variance w0*w1*(mu0-mu1)^2 with class 0 = bins <= t; smallest maximizing t.
inline int otsu_threshold(const CtSlice& img) {
  img.validate();
  std::vector<std::int64_t> hist(256, 0);
  for (int b : quantize8(img)) ++hist[static_cast<std::size_t>(b)];
  int distinct = 0;
  for (auto h : hist)
    if (h > 0) ++distinct;
  if (distinct < 2) throw ValueError("degenerate histogram");
  const double total = static_cast<double>(img.pixels.size());
  double sum_all = 0.0;
  for (int i = 0; i < 256; ++i) sum_all += static_cast<double>(i) * hist[static_cast<std::size_t>(i)];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_t = 0;
  for (int t = 0; t < 256; ++t) {
    w0 += static_cast<double>(hist[static_cast<std::size_t>(t)]);
    sum0 += static_cast<double>(t) * hist[static_cast<std::size_t>(t)];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double mu0 = sum0 / w0, mu1 = (sum_all - sum0) / w1;
    const double var = (w0 / total) * (w1 / total) * (mu0 - mu1) * (mu0 - mu1);
    if (var > best) {
      best = var;
      best_t = t;
    }
  }
  return best_t;
}

// Lung tissue is dark: the mask is true where pixel <= t.
inline BinaryMask binarize(const CtSlice& img, double t) {
  BinaryMask m(img.width, img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) m.bits[i] = img.pixels[i] <= t ? 1 : 0;
  return m;
}

namespace detail {

// 8-connected component labeling by flood fill; label 0 = background.
inline std::vector<int> label_components(const BinaryMask& m, int& n_labels) {
  std::vector<int> labels(m.bits.size(), 0);
  n_labels = 0;
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m.get(y, x) || labels[static_cast<std::size_t>(y) * m.width + x] != 0) continue;
      const int lab = ++n_labels;
      stack.push_back({y, x});
      labels[static_cast<std::size_t>(y) * m.width + x] = lab;
      while (!stack.empty()) {
        auto [cy, cx] = stack.back();
        stack.pop_back();
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (dy == 0 && dx == 0) continue;
            const int ny = cy + dy, nx = cx + dx;
            if (ny < 0 || ny >= m.height || nx < 0 || nx >= m.width) continue;
            if (!m.get(ny, nx) || labels[static_cast<std::size_t>(ny) * m.width + nx] != 0) continue;
            labels[static_cast<std::size_t>(ny) * m.width + nx] = lab;
            stack.push_back({ny, nx});
          }
      }
    }
  return labels;
}

}  // namespace detail

// Removes 8-connected components with area < min_area_px.
inline BinaryMask area_open(const BinaryMask& m, int min_area_px) {
  check(min_area_px >= 1, "min_area_px must be >= 1");
  int n = 0;
  std::vector<int> labels = detail::label_components(m, n);
  std::vector<std::int64_t> area(static_cast<std::size_t>(n) + 1, 0);
  for (int lab : labels) ++area[static_cast<std::size_t>(lab)];
  BinaryMask out(m.width, m.height);
  for (std::size_t i = 0; i < m.bits.size(); ++i)
    out.bits[i] = (labels[i] != 0 && area[static_cast<std::size_t>(labels[i])] >= min_area_px) ? 1 : 0;
  return out;
}

// Removes components touching any image edge.
inline BinaryMask clear_border_components(const BinaryMask& m) {
  int n = 0;
  std::vector<int> labels = detail::label_components(m, n);
  std::vector<std::uint8_t> touches(static_cast<std::size_t>(n) + 1, 0);
  for (int x = 0; x < m.width; ++x) {
    touches[static_cast<std::size_t>(labels[static_cast<std::size_t>(x)])] = 1;
    touches[static_cast<std::size_t>(
        labels[static_cast<std::size_t>(m.height - 1) * m.width + x])] = 1;
  }
  for (int y = 0; y < m.height; ++y) {
    touches[static_cast<std::size_t>(labels[static_cast<std::size_t>(y) * m.width])] = 1;
    touches[static_cast<std::size_t>(
        labels[static_cast<std::size_t>(y) * m.width + m.width - 1])] = 1;
  }
  BinaryMask out(m.width, m.height);
  for (std::size_t i = 0; i < m.bits.size(); ++i)
    out.bits[i] = (labels[i] != 0 && !touches[static_cast<std::size_t>(labels[i])]) ? 1 : 0;
  return out;
}

// Fills holes: false regions not 4-connected to the border become true.
inline BinaryMask fill_holes(const BinaryMask& m) {
  BinaryMask reach(m.width, m.height);
  std::vector<std::pair<int, int>> stack;
  auto push = [&](int y, int x) {
    if (y < 0 || y >= m.height || x < 0 || x >= m.width) return;
    if (m.get(y, x) || reach.get(y, x)) return;
    reach.set(y, x, true);
    stack.push_back({y, x});
  };
  for (int x = 0; x < m.width; ++x) {
    push(0, x);
    push(m.height - 1, x);
  }
  for (int y = 0; y < m.height; ++y) {
    push(y, 0);
    push(y, m.width - 1);
  }
  while (!stack.empty()) {
    auto [y, x] = stack.back();
    stack.pop_back();
    push(y - 1, x);
    push(y + 1, x);
    push(y, x - 1);
    push(y, x + 1);
  }
  BinaryMask out(m.width, m.height);
  for (std::size_t i = 0; i < m.bits.size(); ++i)
    out.bits[i] = (m.bits[i] != 0 || reach.bits[i] == 0) ? 1 : 0;
  return out;
}

enum class MorphOp { erode, dilate };

// Binary morphology with a disk element (dy^2 + dx^2 <= r^2). Erosion
// quantifies over in-grid neighbors only, which gives the exact duality
// erode(!m) == !dilate(m) on finite grids.
inline BinaryMask morph(const BinaryMask& m, MorphOp op, int radius_px) {
  check(radius_px >= 0, "morph radius must be >= 0");
  if (radius_px == 0) return m;
  std::vector<std::pair<int, int>> disk;
  for (int dy = -radius_px; dy <= radius_px; ++dy)
    for (int dx = -radius_px; dx <= radius_px; ++dx)
      if (dy * dy + dx * dx <= radius_px * radius_px) disk.push_back({dy, dx});
  BinaryMask out(m.width, m.height);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      bool acc = (op == MorphOp::erode);
      for (auto [dy, dx] : disk) {
        const int ny = y + dy, nx = x + dx;
        if (ny < 0 || ny >= m.height || nx < 0 || nx >= m.width) continue;
        if (op == MorphOp::erode)
          acc = acc && m.get(ny, nx);
        else
          acc = acc || m.get(ny, nx);
        if (op == MorphOp::dilate && acc) break;
        if (op == MorphOp::erode && !acc) break;
      }
      out.set(y, x, acc);
    }
  return out;
}

// Threshold-based parenchyma extraction:
//   otsu -> binarize -> clear border -> area open (noise) -> fill holes
//   -> area open (second pass) [-> optional closing]
// Slices with no genuinely dark tissue class (below-threshold mean above
// mid-scale) have no parenchyma and give an empty mask.
inline BinaryMask segment_lung(const CtSlice& img, const SegmentationConfig& cfg = {}) {
  img.validate();
  cfg.validate();
  std::vector<int> bins = quantize8(img);
  CtSlice q(img.width, img.height);
  for (std::size_t i = 0; i < bins.size(); ++i) q.pixels[i] = static_cast<float>(bins[i]);
  const int t = otsu_threshold(img);
  {
    double dark_sum = 0.0;
    std::int64_t dark_n = 0;
    for (int b : bins)
      if (b <= t) {
        dark_sum += b;
        ++dark_n;
      }
    if (dark_n == 0 || dark_sum / static_cast<double>(dark_n) > 127.5)
      return BinaryMask(img.width, img.height);
  }
  BinaryMask m = binarize(q, t);
  if (cfg.border_clear) m = clear_border_components(m);
  m = area_open(m, cfg.scaled_area(cfg.min_area_px, img.width, img.height));
  m = fill_holes(m);
  m = area_open(m, cfg.scaled_area(cfg.min_area2_px, img.width, img.height));
  if (cfg.morph_radius_px > 0) {
    m = morph(m, MorphOp::dilate, cfg.morph_radius_px);
    m = morph(m, MorphOp::erode, cfg.morph_radius_px);
  }
  return m;
}

// Pixel-wise AND of image and mask: pixels outside the mask become 0.
inline CtSlice apply_mask(const CtSlice& img, const BinaryMask& m) {
  check(img.width == m.width && img.height == m.height, "apply_mask: shape mismatch");
  CtSlice out = img;
  for (std::size_t i = 0; i < out.pixels.size(); ++i)
    if (!m.bits[i]) out.pixels[i] = 0.0f;
  return out;
}

// Lloyd's k-means on pixel intensities; centroids start at evenly spaced
// quantiles so the result is deterministic. The lung class is the cluster
// with the lowest mean intensity.
inline BinaryMask kmeans_segment(const CtSlice& img, int k, std::uint64_t seed = 0) {
  (void)seed;  // init is quantile-based; the seed is accepted for interface stability
  img.validate();
  check(k >= 2, "kmeans: k must be >= 2");
  std::vector<float> sorted = img.pixels;
  std::sort(sorted.begin(), sorted.end());
  {
    int distinct = 1;
    for (std::size_t i = 1; i < sorted.size(); ++i)
      if (sorted[i] != sorted[i - 1]) ++distinct;
    check(distinct >= k, "kmeans: fewer distinct values than clusters");
  }
  std::vector<double> centroid(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const double qpos = (i + 0.5) / k * (static_cast<double>(sorted.size()) - 1);
    centroid[static_cast<std::size_t>(i)] = sorted[static_cast<std::size_t>(std::llround(qpos))];
  }
  std::vector<int> assign(img.pixels.size(), 0);
  for (int iter = 0; iter < 100; ++iter) {
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      int best = 0;
      double bd = std::abs(img.pixels[i] - centroid[0]);
      for (int c = 1; c < k; ++c) {
        const double d = std::abs(img.pixels[i] - centroid[static_cast<std::size_t>(c)]);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      assign[i] = best;
    }
    std::vector<double> sum(static_cast<std::size_t>(k), 0.0);
    std::vector<std::int64_t> cnt(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      sum[static_cast<std::size_t>(assign[i])] += img.pixels[i];
      ++cnt[static_cast<std::size_t>(assign[i])];
    }
    double shift = 0.0;
    for (int c = 0; c < k; ++c) {
      if (cnt[static_cast<std::size_t>(c)] == 0) continue;
      const double nc = sum[static_cast<std::size_t>(c)] / cnt[static_cast<std::size_t>(c)];
      shift = std::max(shift, std::abs(nc - centroid[static_cast<std::size_t>(c)]));
      centroid[static_cast<std::size_t>(c)] = nc;
    }
    if (shift < 1e-6) break;
  }
  int lung = 0;
  for (int c = 1; c < k; ++c)
    if (centroid[static_cast<std::size_t>(c)] < centroid[static_cast<std::size_t>(lung)]) lung = c;
  BinaryMask out(img.width, img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) out.bits[i] = assign[i] == lung ? 1 : 0;
  return out;
}

inline double dice(const BinaryMask& a, const BinaryMask& b) {
  check(a.width == b.width && a.height == b.height, "dice: shape mismatch");
  std::int64_t inter = 0, total = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    inter += (a.bits[i] && b.bits[i]) ? 1 : 0;
    total += a.bits[i] + b.bits[i];
  }
  return total == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

}  // namespace cployo
