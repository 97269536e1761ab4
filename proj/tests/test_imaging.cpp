#include <gtest/gtest.h>

#include <filesystem>

#include "cployo/dataset.hpp"
#include "cployo/imaging.hpp"
#include "cployo/synthetic.hpp"

using namespace cployo;

namespace {

CtSlice from_values(int w, int h, const std::vector<float>& v) {
  CtSlice s(w, h);
  s.pixels = v;
  return s;
}

// exhaustive 256-threshold search, recomputing class stats per threshold
int otsu_ref(const CtSlice& img) {
  std::vector<int> bins = quantize8(img);
  std::vector<std::int64_t> hist(256, 0);
  for (int b : bins) ++hist[static_cast<std::size_t>(b)];
  double best = -1.0;
  int best_t = 0;
  const double total = static_cast<double>(bins.size());
  for (int t = 0; t < 256; ++t) {
    double w0 = 0, w1 = 0, s0 = 0, s1 = 0;
    for (int i = 0; i <= t; ++i) {
      w0 += static_cast<double>(hist[static_cast<std::size_t>(i)]);
      s0 += static_cast<double>(i) * hist[static_cast<std::size_t>(i)];
    }
    for (int i = t + 1; i < 256; ++i) {
      w1 += static_cast<double>(hist[static_cast<std::size_t>(i)]);
      s1 += static_cast<double>(i) * hist[static_cast<std::size_t>(i)];
    }
    if (w0 == 0 || w1 == 0) continue;
    const double mu0 = s0 / w0, mu1 = s1 / w1;
    const double var = (w0 / total) * (w1 / total) * (mu0 - mu1) * (mu0 - mu1);
    if (var > best) {
      best = var;
      best_t = t;
    }
  }
  return best_t;
}

// independent component labeling via union-find on 8-neighbors
std::vector<int> label_ref(const BinaryMask& m) {
  std::vector<int> parent(m.bits.size());
  for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = static_cast<int>(i);
  std::function<int(int)> find = [&](int a) {
    while (parent[static_cast<std::size_t>(a)] != a) {
      parent[static_cast<std::size_t>(a)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
      a = parent[static_cast<std::size_t>(a)];
    }
    return a;
  };
  auto unite = [&](int a, int b) { parent[static_cast<std::size_t>(find(a))] = find(b); };
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m.get(y, x)) continue;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= m.height || nx < 0 || nx >= m.width) continue;
          if (m.get(ny, nx)) unite(y * m.width + x, ny * m.width + nx);
        }
    }
  std::vector<int> roots(m.bits.size(), -1);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.get(y, x)) roots[static_cast<std::size_t>(y) * m.width + x] = find(y * m.width + x);
  return roots;
}

BinaryMask random_mask(int w, int h, Rng& rng, double p = 0.4) {
  BinaryMask m(w, h);
  for (auto& b : m.bits) b = rng.uniform() < p ? 1 : 0;
  return m;
}

}  // namespace

TEST(Otsu, TwoDeltaHistogramTieBreak) {
  // 50% at 10, 50% at 240: every t in [10,239] ties; smallest wins
  std::vector<float> v(64);
  for (int i = 0; i < 64; ++i) v[static_cast<std::size_t>(i)] = (i % 2) ? 240.0f : 10.0f;
  EXPECT_EQ(otsu_threshold(from_values(8, 8, v)), 10);
}

TEST(Otsu, SingleBrightPixel) {
  std::vector<float> v(100, 0.0f);
  v[37] = 255.0f;
  EXPECT_EQ(otsu_threshold(from_values(10, 10, v)), otsu_ref(from_values(10, 10, v)));
  EXPECT_EQ(otsu_threshold(from_values(10, 10, v)), 0);
}

TEST(Otsu, ConstantImageThrows) {
  std::vector<float> v(64, 128.0f);
  EXPECT_THROW(otsu_threshold(from_values(8, 8, v)), ValueError);
}

TEST(Otsu, MatchesExhaustiveOracle) {
  Rng rng(200);
  for (int trial = 0; trial < 200; ++trial) {
    CtSlice img(16, 16);
    const int mode = trial % 4;
    for (auto& p : img.pixels) {
      double v = 0;
      if (mode == 0) v = rng.uniform(0, 256);                      // uniform
      else if (mode == 1) v = rng.uniform() < 0.5 ? rng.normal(60, 12) : rng.normal(190, 15);  // bimodal
      else if (mode == 2) v = rng.normal(128, 30);                 // unimodal
      else v = (rng.uniform_int(4)) * 80;                          // few levels
      p = static_cast<float>(std::min(255.0, std::max(0.0, std::floor(v))));
    }
    EXPECT_EQ(otsu_threshold(img), otsu_ref(img)) << "trial " << trial;
  }
}

TEST(Otsu, SixteenBitInputQuantizes) {
  Rng rng(201);
  CtSlice img(16, 16);
  for (auto& p : img.pixels)
    p = static_cast<float>(rng.uniform() < 0.5 ? rng.uniform(0, 8000) : rng.uniform(40000, 65535));
  const int t = otsu_threshold(img);
  EXPECT_GE(t, 0);
  EXPECT_LE(t, 255);
  EXPECT_EQ(t, otsu_ref(img));
}

TEST(Binarize, Constants) {
  std::vector<float> low(64, 5.0f), high(64, 200.0f);
  EXPECT_EQ(binarize(from_values(8, 8, low), 10).count(), 64);
  EXPECT_EQ(binarize(from_values(8, 8, high), 10).count(), 0);
}

TEST(Binarize, Checkerboard) {
  CtSlice img(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) img.at(y, x) = ((x + y) % 2) ? 255.0f : 0.0f;
  BinaryMask m = binarize(img, 10);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) EXPECT_EQ(m.get(y, x), (x + y) % 2 == 0);
}

TEST(AreaOpen, SmallComponentRemoved) {
  BinaryMask m(8, 8);
  m.set(2, 2, true);
  m.set(2, 3, true);
  m.set(3, 2, true);
  m.set(3, 3, true);
  EXPECT_EQ(area_open(m, 5).count(), 0);
  EXPECT_EQ(area_open(m, 4).count(), 4);
}

TEST(AreaOpen, MinAreaOneIsIdentity) {
  Rng rng(202);
  BinaryMask m = random_mask(16, 16, rng);
  EXPECT_TRUE(area_open(m, 1) == m);
}

TEST(AreaOpen, MatchesFloodFillOracle) {
  Rng rng(203);
  for (int trial = 0; trial < 50; ++trial) {
    BinaryMask m = random_mask(32, 32, rng, 0.35);
    const int min_area = 1 + static_cast<int>(rng.uniform_int(12));
    BinaryMask got = area_open(m, min_area);
    // oracle: union-find labels + per-root area
    auto roots = label_ref(m);
    std::map<int, int> area;
    for (int r : roots)
      if (r >= 0) ++area[r];
    for (std::size_t i = 0; i < m.bits.size(); ++i) {
      const bool expect = roots[i] >= 0 && area[roots[i]] >= min_area;
      EXPECT_EQ(got.bits[i] != 0, expect);
    }
  }
}

TEST(AreaOpen, Idempotent) {
  Rng rng(204);
  for (int trial = 0; trial < 20; ++trial) {
    BinaryMask m = random_mask(24, 24, rng);
    const int a = 1 + static_cast<int>(rng.uniform_int(10));
    BinaryMask once = area_open(m, a);
    EXPECT_TRUE(area_open(once, a) == once);
  }
}

TEST(ClearBorder, FullFrameCleared) {
  BinaryMask m(8, 8);
  for (auto& b : m.bits) b = 1;
  EXPECT_EQ(clear_border_components(m).count(), 0);
}

TEST(ClearBorder, InteriorBlobSurvives) {
  BinaryMask m(10, 10);
  for (int y = 3; y < 6; ++y)
    for (int x = 3; x < 6; ++x) m.set(y, x, true);
  EXPECT_TRUE(clear_border_components(m) == m);
  // add an edge-touching blob: only the interior one survives
  BinaryMask m2 = m;
  m2.set(0, 0, true);
  m2.set(1, 0, true);
  EXPECT_TRUE(clear_border_components(m2) == m);
}

TEST(Morph, OpeningPreservesSolidSquare) {
  BinaryMask m(16, 16);
  for (int y = 3; y < 13; ++y)
    for (int x = 3; x < 13; ++x) m.set(y, x, true);
  BinaryMask opened = morph(morph(m, MorphOp::erode, 1), MorphOp::dilate, 1);
  for (int y = 4; y < 12; ++y)
    for (int x = 4; x < 12; ++x) EXPECT_TRUE(opened.get(y, x));
}

TEST(Morph, ErodeSinglePixelEmpty) {
  BinaryMask m(8, 8);
  m.set(4, 4, true);
  EXPECT_EQ(morph(m, MorphOp::erode, 1).count(), 0);
}

TEST(Morph, DilateSinglePixelIsCross) {
  BinaryMask m(9, 9);
  m.set(4, 4, true);
  BinaryMask d = morph(m, MorphOp::dilate, 1);
  EXPECT_EQ(d.count(), 5);
  EXPECT_TRUE(d.get(4, 4));
  EXPECT_TRUE(d.get(3, 4));
  EXPECT_TRUE(d.get(5, 4));
  EXPECT_TRUE(d.get(4, 3));
  EXPECT_TRUE(d.get(4, 5));
}

TEST(Morph, ErodeDilateDuality) {
  Rng rng(205);
  for (int r : {1, 2, 3}) {
    BinaryMask m = random_mask(20, 20, rng);
    BinaryMask neg(20, 20);
    for (std::size_t i = 0; i < m.bits.size(); ++i) neg.bits[i] = m.bits[i] ? 0 : 1;
    BinaryMask lhs = morph(neg, MorphOp::erode, r);
    BinaryMask rhs = morph(m, MorphOp::dilate, r);
    for (std::size_t i = 0; i < m.bits.size(); ++i) EXPECT_EQ(lhs.bits[i], rhs.bits[i] ? 0 : 1);
  }
}

TEST(ApplyMask, Basics) {
  Rng rng(206);
  CtSlice img(8, 8);
  for (auto& p : img.pixels) p = static_cast<float>(std::floor(rng.uniform(1, 255)));
  BinaryMask all(8, 8);
  for (auto& b : all.bits) b = 1;
  EXPECT_EQ(apply_mask(img, all).pixels, img.pixels);
  BinaryMask none(8, 8);
  for (float v : apply_mask(img, none).pixels) EXPECT_EQ(v, 0.0f);
  BinaryMask half(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 4; ++x) half.set(y, x, true);
  CtSlice masked = apply_mask(img, half);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 4; ++x) EXPECT_EQ(masked.at(y, x), img.at(y, x));
    for (int x = 4; x < 8; ++x) EXPECT_EQ(masked.at(y, x), 0.0f);
  }
  BinaryMask wrong(4, 4);
  EXPECT_THROW(apply_mask(img, wrong), ValueError);
}

TEST(SegmentLung, PhantomDiceHigh) {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    PhantomSpec spec;
    spec.seed = seed;
    Phantom ph = make_phantom(spec);
    BinaryMask m = segment_lung(ph.image);
    EXPECT_GE(dice(m, ph.lung_mask), 0.95) << "seed " << seed;
  }
}

TEST(SegmentLung, AllBrightSliceEmptyMask) {
  CtSlice img(64, 64);
  Rng rng(207);
  for (auto& p : img.pixels) p = static_cast<float>(std::floor(rng.uniform(200, 256)));
  BinaryMask m = segment_lung(img);
  EXPECT_EQ(m.count(), 0);
}

TEST(SegmentLung, SpeckleNoiseRemoved) {
  PhantomSpec clean;
  clean.seed = 11;
  clean.n_speckles = 0;
  PhantomSpec noisy = clean;
  noisy.n_speckles = 12;
  Phantom a = make_phantom(clean);
  Phantom b = make_phantom(noisy);
  SegmentationConfig cfg;
  cfg.min_area_px = 20;
  cfg.scale_by_area = false;
  cfg.min_area2_px = 60;
  BinaryMask ma = segment_lung(a.image, cfg);
  BinaryMask mb = segment_lung(b.image, cfg);
  EXPECT_TRUE(ma == mb);
}

TEST(SegmentLung, DeterministicAcrossRuns) {
  PhantomSpec spec;
  spec.seed = 21;
  Phantom ph = make_phantom(spec);
  BinaryMask a = segment_lung(ph.image);
  BinaryMask b = segment_lung(ph.image);
  EXPECT_TRUE(a == b);
}

TEST(SegmentLung, MaskedImageZeroOutsideMask) {
  PhantomSpec spec;
  spec.seed = 31;
  Phantom ph = make_phantom(spec);
  BinaryMask m = segment_lung(ph.image);
  CtSlice masked = apply_mask(ph.image, m);
  for (std::size_t i = 0; i < m.bits.size(); ++i)
    if (!m.bits[i]) EXPECT_EQ(masked.pixels[i], 0.0f);
}

TEST(Kmeans, TwoDeltaMatchesOtsuPartition) {
  std::vector<float> v(64);
  for (int i = 0; i < 64; ++i) v[static_cast<std::size_t>(i)] = (i % 2) ? 240.0f : 10.0f;
  CtSlice img = from_values(8, 8, v);
  BinaryMask km = kmeans_segment(img, 2, 0);
  BinaryMask ot = binarize(img, otsu_threshold(img));
  EXPECT_TRUE(km == ot);
}

TEST(Kmeans, ConstantImageThrows) {
  std::vector<float> v(64, 99.0f);
  EXPECT_THROW(kmeans_segment(from_values(8, 8, v), 2, 0), ValueError);
}

TEST(Kmeans, MatchesExhaustiveSplitOracle) {
  Rng rng(208);
  for (int trial = 0; trial < 20; ++trial) {
    CtSlice img(16, 16);
    for (auto& p : img.pixels)
      p = static_cast<float>(std::min(
          255.0, std::max(0.0, rng.uniform() < 0.5 ? rng.normal(60, 10) : rng.normal(190, 12))));
    BinaryMask km = kmeans_segment(img, 2, 0);
    // oracle: exhaustive 1-D optimal 2-means over all split points
    std::vector<float> sorted = img.pixels;
    std::sort(sorted.begin(), sorted.end());
    double best_sse = 1e300;
    double best_split = 0;
    for (std::size_t cut = 1; cut < sorted.size(); ++cut) {
      if (sorted[cut] == sorted[cut - 1]) continue;
      double m0 = 0, m1 = 0;
      for (std::size_t i = 0; i < cut; ++i) m0 += sorted[i];
      for (std::size_t i = cut; i < sorted.size(); ++i) m1 += sorted[i];
      m0 /= static_cast<double>(cut);
      m1 /= static_cast<double>(sorted.size() - cut);
      double sse = 0;
      for (std::size_t i = 0; i < cut; ++i) sse += (sorted[i] - m0) * (sorted[i] - m0);
      for (std::size_t i = cut; i < sorted.size(); ++i) sse += (sorted[i] - m1) * (sorted[i] - m1);
      if (sse < best_sse) {
        best_sse = sse;
        best_split = 0.5 * (sorted[cut] + sorted[cut - 1]);
      }
    }
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
      EXPECT_EQ(km.bits[i] != 0, img.pixels[i] < best_split) << "trial " << trial;
  }
}

TEST(FillHoles, FillsEnclosedRegion) {
  BinaryMask m(10, 10);
  for (int y = 2; y < 8; ++y)
    for (int x = 2; x < 8; ++x)
      if (y == 2 || y == 7 || x == 2 || x == 7) m.set(y, x, true);
  BinaryMask filled = fill_holes(m);
  for (int y = 2; y < 8; ++y)
    for (int x = 2; x < 8; ++x) EXPECT_TRUE(filled.get(y, x));
  EXPECT_FALSE(filled.get(0, 0));
}
