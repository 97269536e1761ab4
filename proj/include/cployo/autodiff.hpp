#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cployo/tensor.hpp"

namespace cployo {

template <typename T>
struct VarNode {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool grad_set = false;
  std::vector<std::shared_ptr<VarNode<T>>> parents;
  std::function<void(VarNode<T>&)> backfn;
};

inline bool& grad_mode() {
  thread_local bool on = true;
  return on;
}

// Disables graph construction in scope; forwards become plain evaluation.
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
};

// Handle to a node in the (implicit) computation graph. Copy is shallow.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> v, bool requires_grad = false) : n_(std::make_shared<VarNode<T>>()) {
    n_->value = std::move(v);
    n_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<VarNode<T>> n) : n_(std::move(n)) {}

  bool defined() const { return n_ != nullptr; }
  const Tensor<T>& value() const { return n_->value; }
  Tensor<T>& value() { return n_->value; }
  const Tensor<T>& grad() const { return n_->grad; }
  bool grad_set() const { return n_->grad_set; }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  std::shared_ptr<VarNode<T>> node() const { return n_; }

  void zero_grad() {
    if (!n_) return;
    n_->grad_set = false;
    n_->grad = Tensor<T>();
  }

 private:
  std::shared_ptr<VarNode<T>> n_;
};

namespace ad {

// Returns the grad buffer, zero-initialized on first touch.
template <typename T>
inline Tensor<T>& grad_buf(VarNode<T>& n) {
  if (!n.grad_set) {
    n.grad = Tensor<T>(n.value.dims());
    n.grad_set = true;
  }
  return n.grad;
}

template <typename T>
inline Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents,
                      std::function<void(VarNode<T>&)> backfn) {
  auto node = std::make_shared<VarNode<T>>();
  node->value = std::move(value);
  bool req = false;
  if (grad_mode()) {
    for (const auto& p : parents)
      if (p.defined() && p.requires_grad()) req = true;
  }
  if (req) {
    node->requires_grad = true;
    for (const auto& p : parents)
      if (p.defined()) node->parents.push_back(p.node());
    node->backfn = std::move(backfn);
  }
  return Var<T>(node);
}

}  // namespace ad

// Runs reverse-mode accumulation from a scalar (or any) root with seed grad 1.
template <typename T>
void backward(const Var<T>& root) {
  check(root.defined(), "backward on undefined Var");
  if (!root.requires_grad()) return;
  std::vector<VarNode<T>*> order;
  std::vector<std::pair<VarNode<T>*, std::size_t>> stack;
  std::unordered_set<VarNode<T>*> visited;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      VarNode<T>* p = node->parents[idx++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  auto* rn = root.node().get();
  rn->grad = Tensor<T>(rn->value.dims());
  rn->grad.fill(T(1));
  rn->grad_set = true;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    VarNode<T>* n = *it;
    if (n->backfn && n->grad_set) n->backfn(*n);
  }
}

// ---- core ops ----

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check(a.value().same_shape(b.value()), "add: shape mismatch " + a.value().shape_str() + " vs " +
                                             b.value().shape_str());
  Tensor<T> out = a.value();
  const std::int64_t n = out.numel();
  const T* pb = b.value().data();
  T* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] += pb[i];
  auto an = a.node(), bn = b.node();
  return ad::make_op<T>(std::move(out), {a, b}, [an, bn](VarNode<T>& self) {
    const std::int64_t m = self.grad.numel();
    if (an->requires_grad) {
      T* g = ad::grad_buf(*an).data();
      const T* s = self.grad.data();
      for (std::int64_t i = 0; i < m; ++i) g[i] += s[i];
    }
    if (bn->requires_grad) {
      T* g = ad::grad_buf(*bn).data();
      const T* s = self.grad.data();
      for (std::int64_t i = 0; i < m; ++i) g[i] += s[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, double s) {
  Tensor<T> out = a.value();
  out.scale_(static_cast<T>(s));
  auto an = a.node();
  return ad::make_op<T>(std::move(out), {a}, [an, s](VarNode<T>& self) {
    if (!an->requires_grad) return;
    T* g = ad::grad_buf(*an).data();
    const T* sg = self.grad.data();
    const std::int64_t m = self.grad.numel();
    for (std::int64_t i = 0; i < m; ++i) g[i] += static_cast<T>(s) * sg[i];
  });
}

// Elementwise product with rank-4 broadcasting (each dim equal or 1).
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  check(av.rank() == 4 && bv.rank() == 4, "mul: rank-4 tensors required");
  std::vector<int> od(4);
  for (int i = 0; i < 4; ++i) {
    const int da = av.dim(i), db = bv.dim(i);
    check(da == db || da == 1 || db == 1, "mul: broadcast mismatch");
    od[i] = std::max(da, db);
  }
  Tensor<T> out(od);
  const int N = od[0], C = od[1], H = od[2], W = od[3];
  auto idx = [](const Tensor<T>& t, int n, int c, int h, int w) -> std::int64_t {
    const int nn = t.dim(0) == 1 ? 0 : n;
    const int cc = t.dim(1) == 1 ? 0 : c;
    const int hh = t.dim(2) == 1 ? 0 : h;
    const int ww = t.dim(3) == 1 ? 0 : w;
    return ((static_cast<std::int64_t>(nn) * t.dim(1) + cc) * t.dim(2) + hh) * t.dim(3) + ww;
  };
  std::int64_t o = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w, ++o) out[o] = av[idx(av, n, c, h, w)] * bv[idx(bv, n, c, h, w)];
  auto an = a.node(), bn = b.node();
  return ad::make_op<T>(std::move(out), {a, b}, [an, bn, od, idx](VarNode<T>& self) {
    const int N = od[0], C = od[1], H = od[2], W = od[3];
    const auto& av = an->value;
    const auto& bv = bn->value;
    Tensor<T>* ga = an->requires_grad ? &ad::grad_buf(*an) : nullptr;
    Tensor<T>* gb = bn->requires_grad ? &ad::grad_buf(*bn) : nullptr;
    std::int64_t o = 0;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w, ++o) {
            const T g = self.grad[o];
            if (ga) (*ga)[idx(av, n, c, h, w)] += g * bv[idx(bv, n, c, h, w)];
            if (gb) (*gb)[idx(bv, n, c, h, w)] += g * av[idx(av, n, c, h, w)];
          }
  });
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  double acc = 0.0;
  const T* p = a.value().data();
  const std::int64_t n = a.value().numel();
  for (std::int64_t i = 0; i < n; ++i) acc += static_cast<double>(p[i]);
  auto an = a.node();
  return ad::make_op<T>(Tensor<T>::scalar(static_cast<T>(acc)), {a}, [an](VarNode<T>& self) {
    if (!an->requires_grad) return;
    T* g = ad::grad_buf(*an).data();
    const T s = self.grad[0];
    const std::int64_t m = an->value.numel();
    for (std::int64_t i = 0; i < m; ++i) g[i] += s;
  });
}

template <typename T>
Var<T> concat_ch(const std::vector<Var<T>>& xs) {
  check(!xs.empty(), "concat_ch: empty input");
  const int N = xs[0].value().dim(0), H = xs[0].value().dim(2), W = xs[0].value().dim(3);
  int C = 0;
  for (const auto& x : xs) {
    check(x.value().rank() == 4, "concat_ch: rank-4 required");
    check(x.value().dim(0) == N && x.value().dim(2) == H && x.value().dim(3) == W,
          "concat_ch: N/H/W mismatch");
    C += x.value().dim(1);
  }
  Tensor<T> out({N, C, H, W});
  const std::int64_t hw = static_cast<std::int64_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    int co = 0;
    for (const auto& x : xs) {
      const int ci = x.value().dim(1);
      const T* src = x.value().data() + static_cast<std::int64_t>(n) * ci * hw;
      T* dst = out.data() + (static_cast<std::int64_t>(n) * C + co) * hw;
      std::copy(src, src + static_cast<std::int64_t>(ci) * hw, dst);
      co += ci;
    }
  }
  std::vector<std::shared_ptr<VarNode<T>>> nodes;
  for (const auto& x : xs) nodes.push_back(x.node());
  return ad::make_op<T>(std::move(out), xs, [nodes, N, C, H, W](VarNode<T>& self) {
    const std::int64_t hw = static_cast<std::int64_t>(H) * W;
    for (int n = 0; n < N; ++n) {
      int co = 0;
      for (const auto& xn : nodes) {
        const int ci = xn->value.dim(1);
        if (xn->requires_grad) {
          T* g = ad::grad_buf(*xn).data() + static_cast<std::int64_t>(n) * ci * hw;
          const T* s = self.grad.data() + (static_cast<std::int64_t>(n) * C + co) * hw;
          for (std::int64_t i = 0; i < static_cast<std::int64_t>(ci) * hw; ++i) g[i] += s[i];
        }
        co += ci;
      }
    }
  });
}

template <typename T>
Var<T> slice_ch(const Var<T>& x, int c0, int c1) {
  const auto& v = x.value();
  check(v.rank() == 4 && 0 <= c0 && c0 < c1 && c1 <= v.dim(1), "slice_ch: bad range");
  const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  Tensor<T> out({N, c1 - c0, H, W});
  const std::int64_t hw = static_cast<std::int64_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    const T* src = v.data() + (static_cast<std::int64_t>(n) * C + c0) * hw;
    T* dst = out.data() + static_cast<std::int64_t>(n) * (c1 - c0) * hw;
    std::copy(src, src + static_cast<std::int64_t>(c1 - c0) * hw, dst);
  }
  auto xn = x.node();
  return ad::make_op<T>(std::move(out), {x}, [xn, c0, c1, N, C, H, W](VarNode<T>& self) {
    if (!xn->requires_grad) return;
    const std::int64_t hw = static_cast<std::int64_t>(H) * W;
    Tensor<T>& g = ad::grad_buf(*xn);
    for (int n = 0; n < N; ++n) {
      T* dst = g.data() + (static_cast<std::int64_t>(n) * C + c0) * hw;
      const T* src = self.grad.data() + static_cast<std::int64_t>(n) * (c1 - c0) * hw;
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(c1 - c0) * hw; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> upsample2x_nearest(const Var<T>& x) {
  const auto& v = x.value();
  check(v.rank() == 4, "upsample2x: rank-4 required");
  const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  Tensor<T> out({N, C, 2 * H, 2 * W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          const T val = v.at(n, c, h, w);
          out.at(n, c, 2 * h, 2 * w) = val;
          out.at(n, c, 2 * h, 2 * w + 1) = val;
          out.at(n, c, 2 * h + 1, 2 * w) = val;
          out.at(n, c, 2 * h + 1, 2 * w + 1) = val;
        }
  auto xn = x.node();
  return ad::make_op<T>(std::move(out), {x}, [xn, N, C, H, W](VarNode<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& g = ad::grad_buf(*xn);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w)
            g.at(n, c, h, w) += self.grad.at(n, c, 2 * h, 2 * w) +
                                self.grad.at(n, c, 2 * h, 2 * w + 1) +
                                self.grad.at(n, c, 2 * h + 1, 2 * w) +
                                self.grad.at(n, c, 2 * h + 1, 2 * w + 1);
  });
}

namespace ad {

// Sum of a small value set in canonical (sorted) order: the result is a pure
// function of the multiset, so permutation invariance holds bit-for-bit.
template <typename T>
inline T sorted_mean(std::vector<T>& scratch) {
  std::sort(scratch.begin(), scratch.end());
  double acc = 0.0;
  for (const T v : scratch) acc += static_cast<double>(v);
  return static_cast<T>(acc / static_cast<double>(scratch.size()));
}

}  // namespace ad

// Mean over the channel dimension -> N x 1 x H x W.
template <typename T>
Var<T> channel_mean(const Var<T>& x) {
  const auto& v = x.value();
  check(v.rank() == 4, "channel_mean: rank-4 required");
  const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  Tensor<T> out({N, 1, H, W});
  std::vector<T> scratch(static_cast<std::size_t>(C));
  for (int n = 0; n < N; ++n)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        for (int c = 0; c < C; ++c) scratch[static_cast<std::size_t>(c)] = v.at(n, c, h, w);
        out.at(n, 0, h, w) = ad::sorted_mean(scratch);
      }
  auto xn = x.node();
  return ad::make_op<T>(std::move(out), {x}, [xn, N, C, H, W](VarNode<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& g = ad::grad_buf(*xn);
    const T inv = T(1) / static_cast<T>(C);
    for (int n = 0; n < N; ++n)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          const T s = self.grad.at(n, 0, h, w) * inv;
          for (int c = 0; c < C; ++c) g.at(n, c, h, w) += s;
        }
  });
}

// Max over the channel dimension -> N x 1 x H x W.
template <typename T>
Var<T> channel_max(const Var<T>& x) {
  const auto& v = x.value();
  check(v.rank() == 4, "channel_max: rank-4 required");
  const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  Tensor<T> out({N, 1, H, W});
  auto arg = std::make_shared<std::vector<int>>(static_cast<std::size_t>(N) * H * W);
  std::int64_t o = 0;
  for (int n = 0; n < N; ++n)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w, ++o) {
        T best = v.at(n, 0, h, w);
        int bi = 0;
        for (int c = 1; c < C; ++c) {
          const T cand = v.at(n, c, h, w);
          if (cand > best) {
            best = cand;
            bi = c;
          }
        }
        out.at(n, 0, h, w) = best;
        (*arg)[static_cast<std::size_t>(o)] = bi;
      }
  auto xn = x.node();
  return ad::make_op<T>(std::move(out), {x}, [xn, arg, N, H, W](VarNode<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& g = ad::grad_buf(*xn);
    std::int64_t o = 0;
    for (int n = 0; n < N; ++n)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w, ++o)
          g.at(n, (*arg)[static_cast<std::size_t>(o)], h, w) += self.grad.at(n, 0, h, w);
  });
}

}  // namespace cployo
