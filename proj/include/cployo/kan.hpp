#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "cployo/nn.hpp"

namespace cployo {

// Uniform B-spline grid on [-bound, bound]: G intervals, knot vector extended
// by `degree` on each side, G + degree basis functions.
template <typename T>
struct BsplineGrid {
  int grid_size = 8;   // G
  int degree = 3;      // k
  T bound = T(3);
  std::vector<T> knots;  // size G + 2k + 1, strictly increasing

  BsplineGrid() { rebuild(); }

  BsplineGrid(int G, int k, T b) : grid_size(G), degree(k), bound(b) { rebuild(); }

  void rebuild() {
    check(grid_size >= 1 && degree >= 0 && bound > T(0), "bspline grid: bad parameters");
    const T h = T(2) * bound / static_cast<T>(grid_size);
    knots.resize(static_cast<std::size_t>(grid_size + 2 * degree + 1));
    for (int i = 0; i < static_cast<int>(knots.size()); ++i)
      knots[static_cast<std::size_t>(i)] = -bound + static_cast<T>(i - degree) * h;
  }

  int num_basis() const { return grid_size + degree; }

  T clamp(T x) const { return std::min(bound, std::max(-bound, x)); }

  // Knot span index m with t[m] <= u < t[m+1], clamped to valid range.
  int span(T u) const {
    const T h = T(2) * bound / static_cast<T>(grid_size);
    int m = degree + static_cast<int>(std::floor((u + bound) / h));
    if (m < degree) m = degree;
    if (m > grid_size + degree - 1) m = grid_size + degree - 1;
    return m;
  }

  // Nonzero basis values at clamped x: N[r] = B_{m-k+r, k}(u), r = 0..k.
  // Standard knot-span evaluation (Cox-de Boor in triangular form).
  void eval_local(T x, int& m, T* N) const {
    const T u = clamp(x);
    m = span(u);
    const int k = degree;
    T left[8], right[8];
    N[0] = T(1);
    for (int j = 1; j <= k; ++j) {
      left[j] = u - knots[static_cast<std::size_t>(m + 1 - j)];
      right[j] = knots[static_cast<std::size_t>(m + j)] - u;
      T saved = T(0);
      for (int r = 0; r < j; ++r) {
        const T tmp = N[r] / (right[r + 1] + left[j - r]);
        N[r] = saved + right[r + 1] * tmp;
        saved = left[j - r] * tmp;
      }
      N[j] = saved;
    }
  }

  // Derivatives of the same nonzero window: dN[r] = B'_{m-k+r, k}(u).
  // Uses B'_{i,k} = k (B_{i,k-1}/(t[i+k]-t[i]) - B_{i+1,k-1}/(t[i+k+1]-t[i+1])).
  void eval_local_deriv(T x, int m, T* dN) const {
    const int k = degree;
    if (k == 0) {
      dN[0] = T(0);
      return;
    }
    const T u = clamp(x);
    // degree k-1 basis at the same span: indices m-k+1 .. m
    T N1[8];
    T left[8], right[8];
    N1[0] = T(1);
    for (int j = 1; j <= k - 1; ++j) {
      left[j] = u - knots[static_cast<std::size_t>(m + 1 - j)];
      right[j] = knots[static_cast<std::size_t>(m + j)] - u;
      T saved = T(0);
      for (int r = 0; r < j; ++r) {
        const T tmp = N1[r] / (right[r + 1] + left[j - r]);
        N1[r] = saved + right[r + 1] * tmp;
        saved = left[j - r] * tmp;
      }
      N1[j] = saved;
    }
    auto lower = [&](int i) -> T {  // B_{i, k-1}(u), nonzero for i in [m-k+1, m]
      const int r = i - (m - k + 1);
      if (r < 0 || r > k - 1) return T(0);
      return N1[r];
    };
    for (int r = 0; r <= k; ++r) {
      const int i = m - k + r;
      const T d1 = knots[static_cast<std::size_t>(i + k)] - knots[static_cast<std::size_t>(i)];
      const T d2 = knots[static_cast<std::size_t>(i + k + 1)] - knots[static_cast<std::size_t>(i + 1)];
      T v = T(0);
      if (d1 > T(0)) v += lower(i) / d1;
      if (d2 > T(0)) v -= lower(i + 1) / d2;
      dN[r] = static_cast<T>(k) * v;
    }
  }

  // Full basis row (num_basis values), mostly zero; for inspection and tests.
  std::vector<T> eval_full(T x) const {
    std::vector<T> row(static_cast<std::size_t>(num_basis()), T(0));
    T N[8];
    int m = 0;
    eval_local(x, m, N);
    for (int r = 0; r <= degree; ++r) row[static_cast<std::size_t>(m - degree + r)] = N[r];
    return row;
  }
};

// Full basis matrix for a batch of points (one row of G+k values per point).
template <typename T>
std::vector<std::vector<T>> bspline_basis(const std::vector<T>& xs, const BsplineGrid<T>& grid) {
  std::vector<std::vector<T>> rows;
  rows.reserve(xs.size());
  for (const T x : xs) {
    check(std::isfinite(static_cast<double>(x)), "bspline_basis: non-finite input");
    rows.push_back(grid.eval_full(x));
  }
  return rows;
}

// One KAN layer: every edge (q,p) carries a learnable univariate function
//   phi_{q,p}(x) = w_base[q,p] * silu(x) + w_spline[q,p] * sum_i c[q,p,i] B_i(x)
// and outputs sum over inputs: y_q = sum_p phi_{q,p}(x_p).
template <typename T>
class KanLayer {
 public:
  int in_dim = 0, out_dim = 0;
  BsplineGrid<T> grid;
  Var<T> coeff;     // [out, in, G+k]
  Var<T> w_base;    // [out, in]
  Var<T> w_spline;  // [out, in]

  KanLayer() = default;

  KanLayer(int n, int m, int G, int k, T bound, Rng& rng) : in_dim(n), out_dim(m), grid(G, k, bound) {
    check(n >= 1 && m >= 1, "kan layer: dims must be positive");
    check(k <= 5, "kan layer: degree > 5 unsupported");
    const double s = 1.0 / std::sqrt(static_cast<double>(n));
    coeff = Var<T>(Tensor<T>::randn({m, n, grid.num_basis()}, rng, 0.1), true);
    w_base = Var<T>(Tensor<T>::randn({m, n}, rng, s), true);
    Tensor<T> ws({m, n});
    ws.fill(static_cast<T>(s));
    w_spline = Var<T>(std::move(ws), true);
  }

  // Single-edge evaluation (plain scalar, no graph).
  T phi(T x, int q, int p) const {
    T N[8];
    int m = 0;
    grid.eval_local(x, m, N);
    T spline = T(0);
    for (int r = 0; r <= grid.degree; ++r)
      spline += coeff.value()[(static_cast<std::int64_t>(q) * in_dim + p) * grid.num_basis() +
                              (m - grid.degree + r)] *
                N[r];
    const T sig = ad::sigmoid_scalar(x);
    return w_base.value()[static_cast<std::int64_t>(q) * in_dim + p] * x * sig +
           w_spline.value()[static_cast<std::int64_t>(q) * in_dim + p] * spline;
  }

  // [B, in] -> [B, out]
  Var<T> forward(const Var<T>& x) const {
    const auto& xv = x.value();
    check(xv.rank() == 2 && xv.dim(1) == in_dim, "kan forward: dimension mismatch");
    return run_rows(x, xv.dim(0), [this](const Tensor<T>& v, std::int64_t b, int p) {
      return v[b * in_dim + p];
    });
  }

  // [N, in, H, W] -> [N, out, H, W]; the layer acts on the channel vector at
  // every spatial position independently.
  Var<T> forward_nchw(const Var<T>& x) const {
    const auto& xv = x.value();
    check(xv.rank() == 4 && xv.dim(1) == in_dim, "kan forward_nchw: channel mismatch");
    const int N = xv.dim(0), H = xv.dim(2), W = xv.dim(3);
    const std::int64_t HW = static_cast<std::int64_t>(H) * W;
    auto getter = [this, HW](const Tensor<T>& v, std::int64_t b, int p) {
      const std::int64_t n = b / HW, hw = b % HW;
      return v[(n * in_dim + p) * HW + hw];
    };
    return run_rows(x, static_cast<std::int64_t>(N) * HW, getter, true, N, H, W);
  }

  void collect(ParamList<T>& out, const std::string& prefix) {
    out.push_back({prefix + ".coeff", const_cast<Var<T>*>(&coeff), true});
    out.push_back({prefix + ".w_base", const_cast<Var<T>*>(&w_base), true});
    out.push_back({prefix + ".w_spline", const_cast<Var<T>*>(&w_spline), true});
  }

 private:
  template <typename Getter>
  Var<T> run_rows(const Var<T>& x, std::int64_t B, Getter get, bool nchw = false, int N = 0,
                  int H = 0, int W = 0) const {
    const int k = grid.degree;
    const int nb = grid.num_basis();
    const int n_in = in_dim, n_out = out_dim;
    const std::int64_t HW = nchw ? static_cast<std::int64_t>(H) * W : 0;

    // caches filled in forward, reused in backward
    auto spans = std::make_shared<std::vector<int>>(static_cast<std::size_t>(B * n_in));
    auto basis = std::make_shared<std::vector<T>>(static_cast<std::size_t>(B * n_in * (k + 1)));
    auto siluv = std::make_shared<std::vector<T>>(static_cast<std::size_t>(B * n_in));
    auto xvals = std::make_shared<std::vector<T>>(static_cast<std::size_t>(B * n_in));

    const auto& xv = x.value();
    const T* cp = coeff.value().data();
    const T* wb = w_base.value().data();
    const T* ws = w_spline.value().data();

    Tensor<T> out(nchw ? std::vector<int>{N, n_out, H, W} : std::vector<int>{static_cast<int>(B), n_out});
    T* op = out.data();

    auto run = [&](std::int64_t b0, std::int64_t b1) {
      std::vector<T> spline(static_cast<std::size_t>(n_in));
      for (std::int64_t b = b0; b < b1; ++b) {
        for (int p = 0; p < n_in; ++p) {
          const T xval = get(xv, b, p);
          (*xvals)[static_cast<std::size_t>(b * n_in + p)] = xval;
          int m = 0;
          T* Nv = basis->data() + (b * n_in + p) * (k + 1);
          grid.eval_local(xval, m, Nv);
          (*spans)[static_cast<std::size_t>(b * n_in + p)] = m;
          const T sig = ad::sigmoid_scalar(xval);
          (*siluv)[static_cast<std::size_t>(b * n_in + p)] = xval * sig;
        }
        for (int q = 0; q < n_out; ++q) {
          T acc = T(0);
          for (int p = 0; p < n_in; ++p) {
            const std::int64_t e = static_cast<std::int64_t>(q) * n_in + p;
            const int m = (*spans)[static_cast<std::size_t>(b * n_in + p)];
            const T* Nv = basis->data() + (b * n_in + p) * (k + 1);
            const T* ce = cp + e * nb + (m - k);
            T s = T(0);
            for (int r = 0; r <= k; ++r) s += ce[r] * Nv[r];
            acc += wb[e] * (*siluv)[static_cast<std::size_t>(b * n_in + p)] + ws[e] * s;
          }
          if (nchw) {
            const std::int64_t n = b / HW, hw = b % HW;
            op[(n * n_out + q) * HW + hw] = acc;
          } else {
            op[b * n_out + q] = acc;
          }
        }
      }
    };
    parallel_for(B, 16, run);

    auto xn = x.node();
    auto cn = coeff.node();
    auto wbn = w_base.node();
    auto wsn = w_spline.node();
    BsplineGrid<T> g = grid;
    const T bound = grid.bound;
    return ad::make_op<T>(
        std::move(out), {x, coeff, w_base, w_spline},
        [xn, cn, wbn, wsn, spans, basis, siluv, xvals, g, bound, B, n_in, n_out, k, nb, nchw,
         HW](VarNode<T>& self) {
          T* gx = xn->requires_grad ? ad::grad_buf(*xn).data() : nullptr;
          T* gc = cn->requires_grad ? ad::grad_buf(*cn).data() : nullptr;
          T* gwb = wbn->requires_grad ? ad::grad_buf(*wbn).data() : nullptr;
          T* gws = wsn->requires_grad ? ad::grad_buf(*wsn).data() : nullptr;
          const T* cp = cn->value.data();
          const T* wb = wbn->value.data();
          const T* ws = wsn->value.data();
          const T* sg = self.grad.data();
          std::vector<T> dN(static_cast<std::size_t>(k + 1));
          for (std::int64_t b = 0; b < B; ++b) {
            for (int p = 0; p < n_in; ++p) {
              const std::int64_t bp = b * n_in + p;
              const T xval = (*xvals)[static_cast<std::size_t>(bp)];
              const int m = (*spans)[static_cast<std::size_t>(bp)];
              const T* Nv = basis->data() + bp * (k + 1);
              const bool in_range = xval >= -bound && xval <= bound;
              if (gx && in_range) g.eval_local_deriv(xval, m, dN.data());
              const T sig = ad::sigmoid_scalar(xval);
              const T dsilu = sig * (T(1) + xval * (T(1) - sig));
              const T sl = (*siluv)[static_cast<std::size_t>(bp)];
              T gx_acc = T(0);
              for (int q = 0; q < n_out; ++q) {
                T gval;
                if (nchw) {
                  const std::int64_t n = b / HW, hw = b % HW;
                  gval = sg[(n * n_out + q) * HW + hw];
                } else {
                  gval = sg[b * n_out + q];
                }
                if (gval == T(0)) continue;
                const std::int64_t e = static_cast<std::int64_t>(q) * n_in + p;
                const T* ce = cp + e * nb + (m - k);
                T sval = T(0), dsval = T(0);
                for (int r = 0; r <= k; ++r) {
                  sval += ce[r] * Nv[r];
                  if (gx && in_range) dsval += ce[r] * dN[static_cast<std::size_t>(r)];
                }
                if (gwb) gwb[e] += gval * sl;
                if (gws) gws[e] += gval * sval;
                if (gc) {
                  T* gce = gc + e * nb + (m - k);
                  for (int r = 0; r <= k; ++r) gce[r] += gval * ws[e] * Nv[r];
                }
                if (gx) gx_acc += gval * (wb[e] * dsilu + (in_range ? ws[e] * dsval : T(0)));
              }
              if (gx) {
                if (nchw) {
                  const std::int64_t n = b / HW, hw = b % HW;
                  gx[(n * n_in + p) * HW + hw] += gx_acc;
                } else {
                  gx[bp] += gx_acc;
                }
              }
            }
          }
        });
  }
};

// 1x1 reduce -> per-position KAN over channels -> 1x1 expand (+ residual).
template <typename T>
class KanBottleneck {
 public:
  Conv2d<T> reduce;
  Conv2d<T> expand;
  KanLayer<T> kan;
  bool residual = true;

  KanBottleneck() = default;

  KanBottleneck(int C, int grid_size, int degree, Rng& rng, bool with_residual = true)
      : residual(with_residual) {
    check(C >= 2 && C % 2 == 0, "kan bottleneck: channel count must be even");
    reduce = Conv2d<T>({C, C / 2, 1, 1, 1, 1, true}, rng);
    kan = KanLayer<T>(C / 2, C / 2, grid_size, degree, T(3), rng);
    expand = Conv2d<T>({C / 2, C, 1, 1, 1, 1, true}, rng);
  }

  Var<T> forward(const Var<T>& x) const {
    Var<T> e = expand.forward(kan.forward_nchw(reduce.forward(x)));
    return residual ? add(x, e) : e;
  }

  void collect(ParamList<T>& out, const std::string& prefix) {
    reduce.collect(out, prefix + ".reduce");
    kan.collect(out, prefix + ".kan");
    expand.collect(out, prefix + ".expand");
  }
};

}  // namespace cployo
