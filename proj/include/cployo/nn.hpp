#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "cployo/autodiff.hpp"

namespace cployo {

template <typename T>
struct ParamRef {
  std::string name;
  Var<T>* var;
  bool trainable;  // false for buffers (running statistics)
};

template <typename T>
using ParamList = std::vector<ParamRef<T>>;

struct ConvSpec {
  int in_ch = 1;
  int out_ch = 1;
  int kernel = 3;
  int stride = 1;
  int dilation = 1;
  int groups = 1;
  bool bias = true;

  int padding() const { return dilation * (kernel - 1) / 2; }
  int out_size(int in) const {
    return (in + 2 * padding() - dilation * (kernel - 1) - 1) / stride + 1;
  }
  void validate() const {
    check(in_ch >= 1 && out_ch >= 1, "conv: channel counts must be positive");
    check(kernel >= 1 && kernel % 2 == 1, "conv: kernel must be odd");
    check(stride >= 1 && dilation >= 1 && groups >= 1, "conv: bad stride/dilation/groups");
    check(in_ch % groups == 0, "conv: in_ch not divisible by groups");
    check(out_ch % groups == 0, "conv: out_ch not divisible by groups");
  }
};

// Cross-correlation with zero padding ("same" at stride 1).
// weight: [out_ch, in_ch/groups, k, k], bias: [out_ch] (optional, undefined Var).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const ConvSpec& spec) {
  spec.validate();
  const auto& xv = x.value();
  const auto& wv = weight.value();
  check(xv.rank() == 4, "conv2d: input must be NCHW");
  check(xv.dim(1) == spec.in_ch, "conv2d: input channels mismatch");
  const int icg = spec.in_ch / spec.groups;
  check(wv.rank() == 4 && wv.dim(0) == spec.out_ch && wv.dim(1) == icg &&
            wv.dim(2) == spec.kernel && wv.dim(3) == spec.kernel,
        "conv2d: weight shape mismatch");
  const bool has_bias = bias.defined();
  if (has_bias)
    check(bias.value().rank() == 1 && bias.value().dim(0) == spec.out_ch,
          "conv2d: bias shape mismatch");

  const int N = xv.dim(0), H = xv.dim(2), W = xv.dim(3);
  const int OC = spec.out_ch, K = spec.kernel, S = spec.stride, D = spec.dilation;
  const int P = spec.padding();
  const int OH = spec.out_size(H), OW = spec.out_size(W);
  check(OH >= 1 && OW >= 1, "conv2d: output would be empty");
  const int ocg = OC / spec.groups;

  Tensor<T> out({N, OC, OH, OW});
  const T* xp = xv.data();
  const T* wp = wv.data();
  const T* bp = has_bias ? bias.value().data() : nullptr;
  T* op = out.data();

  auto run_fwd = [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t t = b; t < e; ++t) {
      const int n = static_cast<int>(t / OC);
      const int oc = static_cast<int>(t % OC);
      const int g = oc / ocg;
      const T* wbase = wp + static_cast<std::int64_t>(oc) * icg * K * K;
      T* obase = op + ((static_cast<std::int64_t>(n) * OC + oc) * OH) * OW;
      const T bval = bp ? bp[oc] : T(0);
      for (int oh = 0; oh < OH; ++oh) {
        const int ih0 = oh * S - P;
        for (int ow = 0; ow < OW; ++ow) {
          const int iw0 = ow * S - P;
          T acc = bval;
          for (int icl = 0; icl < icg; ++icl) {
            const int ic = g * icg + icl;
            const T* xch = xp + ((static_cast<std::int64_t>(n) * spec.in_ch + ic) * H) * W;
            const T* wch = wbase + static_cast<std::int64_t>(icl) * K * K;
            for (int kh = 0; kh < K; ++kh) {
              const int ih = ih0 + kh * D;
              if (ih < 0 || ih >= H) continue;
              const T* xrow = xch + static_cast<std::int64_t>(ih) * W;
              const T* wrow = wch + static_cast<std::int64_t>(kh) * K;
              for (int kw = 0; kw < K; ++kw) {
                const int iw = iw0 + kw * D;
                if (iw < 0 || iw >= W) continue;
                acc += wrow[kw] * xrow[iw];
              }
            }
          }
          obase[static_cast<std::int64_t>(oh) * OW + ow] = acc;
        }
      }
    }
  };
  parallel_for(static_cast<std::int64_t>(N) * OC, 4, run_fwd);

  auto xn = x.node(), wn = weight.node();
  auto bn = has_bias ? bias.node() : nullptr;
  ConvSpec sp = spec;
  return ad::make_op<T>(
      std::move(out), has_bias ? std::vector<Var<T>>{x, weight, bias} : std::vector<Var<T>>{x, weight},
      [xn, wn, bn, sp, N, H, W, OH, OW](VarNode<T>& self) {
        const int OC = sp.out_ch, K = sp.kernel, S = sp.stride, D = sp.dilation;
        const int P = sp.padding();
        const int icg = sp.in_ch / sp.groups;
        const int ocg = OC / sp.groups;
        const T* go = self.grad.data();
        const T* xp = xn->value.data();
        const T* wp = wn->value.data();
        if (bn && bn->requires_grad) {
          T* gb = ad::grad_buf(*bn).data();
          for (int oc = 0; oc < OC; ++oc) {
            double acc = 0.0;
            for (int n = 0; n < N; ++n) {
              const T* g = go + ((static_cast<std::int64_t>(n) * OC + oc) * OH) * OW;
              for (std::int64_t i = 0; i < static_cast<std::int64_t>(OH) * OW; ++i)
                acc += static_cast<double>(g[i]);
            }
            gb[oc] += static_cast<T>(acc);
          }
        }
        if (wn->requires_grad) {
          T* gw = ad::grad_buf(*wn).data();
          auto run_gw = [&](std::int64_t b, std::int64_t e) {
            for (std::int64_t oc = b; oc < e; ++oc) {
              const int g = static_cast<int>(oc) / ocg;
              T* gwc = gw + oc * icg * K * K;
              for (int n = 0; n < N; ++n) {
                const T* gch = go + ((static_cast<std::int64_t>(n) * OC + oc) * OH) * OW;
                for (int icl = 0; icl < icg; ++icl) {
                  const int ic = g * icg + icl;
                  const T* xch = xp + ((static_cast<std::int64_t>(n) * sp.in_ch + ic) * H) * W;
                  for (int kh = 0; kh < K; ++kh)
                    for (int kw = 0; kw < K; ++kw) {
                      T acc = T(0);
                      for (int oh = 0; oh < OH; ++oh) {
                        const int ih = oh * S - P + kh * D;
                        if (ih < 0 || ih >= H) continue;
                        const T* xrow = xch + static_cast<std::int64_t>(ih) * W;
                        const T* grow = gch + static_cast<std::int64_t>(oh) * OW;
                        for (int ow = 0; ow < OW; ++ow) {
                          const int iw = ow * S - P + kw * D;
                          if (iw < 0 || iw >= W) continue;
                          acc += grow[ow] * xrow[iw];
                        }
                      }
                      gwc[(static_cast<std::int64_t>(icl) * K + kh) * K + kw] += acc;
                    }
                }
              }
            }
          };
          parallel_for(OC, 1, run_gw);
        }
        if (xn->requires_grad) {
          T* gx = ad::grad_buf(*xn).data();
          auto run_gx = [&](std::int64_t b, std::int64_t e) {
            for (std::int64_t n = b; n < e; ++n) {
              for (int oc = 0; oc < OC; ++oc) {
                const int g = oc / ocg;
                const T* gch = go + ((n * OC + oc) * OH) * OW;
                const T* wbase = wp + static_cast<std::int64_t>(oc) * icg * K * K;
                for (int oh = 0; oh < OH; ++oh) {
                  const int ih0 = oh * S - P;
                  for (int ow = 0; ow < OW; ++ow) {
                    const int iw0 = ow * S - P;
                    const T gval = gch[static_cast<std::int64_t>(oh) * OW + ow];
                    if (gval == T(0)) continue;
                    for (int icl = 0; icl < icg; ++icl) {
                      const int ic = g * icg + icl;
                      T* gxch = gx + ((n * sp.in_ch + ic) * H) * W;
                      const T* wch = wbase + static_cast<std::int64_t>(icl) * K * K;
                      for (int kh = 0; kh < K; ++kh) {
                        const int ih = ih0 + kh * D;
                        if (ih < 0 || ih >= H) continue;
                        for (int kw = 0; kw < K; ++kw) {
                          const int iw = iw0 + kw * D;
                          if (iw < 0 || iw >= W) continue;
                          gxch[static_cast<std::int64_t>(ih) * W + iw] +=
                              gval * wch[static_cast<std::int64_t>(kh) * K + kw];
                        }
                      }
                    }
                  }
                }
              }
            }
          };
          parallel_for(N, 1, run_gx);
        }
      });
}

// ---- elementwise activations ----

namespace ad {

template <typename T, typename F, typename DF>
Var<T> unary_op(const Var<T>& x, F f, DF dfdx) {
  Tensor<T> out = x.value();
  T* p = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) p[i] = f(p[i]);
  auto xn = x.node();
  return make_op<T>(std::move(out), {x}, [xn, dfdx](VarNode<T>& self) {
    if (!xn->requires_grad) return;
    T* g = grad_buf(*xn).data();
    const T* sg = self.grad.data();
    const T* xv = xn->value.data();
    const std::int64_t m = xn->value.numel();
    for (std::int64_t i = 0; i < m; ++i) g[i] += sg[i] * dfdx(xv[i]);
  });
}

template <typename T>
inline T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace ad

template <typename T>
Var<T> relu(const Var<T>& x) {
  return ad::unary_op(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return ad::unary_op(
      x, [](T v) { return ad::sigmoid_scalar(v); },
      [](T v) {
        const T s = ad::sigmoid_scalar(v);
        return s * (T(1) - s);
      });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
  return ad::unary_op(
      x, [](T v) { return v * ad::sigmoid_scalar(v); },
      [](T v) {
        const T s = ad::sigmoid_scalar(v);
        return s * (T(1) + v * (T(1) - s));
      });
}

enum class Act { none, relu, sigmoid, silu };

template <typename T>
Var<T> act(const Var<T>& x, Act kind) {
  switch (kind) {
    case Act::relu: return relu(x);
    case Act::sigmoid: return sigmoid(x);
    case Act::silu: return silu(x);
    case Act::none: default: return x;
  }
}

// ---- pooling ----

// Global average pool -> N x C x 1 x 1. Canonical-order reduction (see
// ad::sorted_mean): spatially permuting the input cannot change the result.
template <typename T>
Var<T> gap(const Var<T>& x) {
  const auto& v = x.value();
  check(v.rank() == 4, "gap: rank-4 required");
  const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  Tensor<T> out({N, C, 1, 1});
  std::vector<T> scratch(static_cast<std::size_t>(H) * W);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* src = v.data() + ((static_cast<std::int64_t>(n) * C + c) * H) * W;
      std::copy(src, src + static_cast<std::int64_t>(H) * W, scratch.begin());
      out.at(n, c, 0, 0) = ad::sorted_mean(scratch);
    }
  auto xn = x.node();
  return ad::make_op<T>(std::move(out), {x}, [xn, N, C, H, W](VarNode<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& g = ad::grad_buf(*xn);
    const T inv = T(1) / static_cast<T>(static_cast<std::int64_t>(H) * W);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const T s = self.grad.at(n, c, 0, 0) * inv;
        T* dst = g.data() + ((static_cast<std::int64_t>(n) * C + c) * H) * W;
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i) dst[i] += s;
      }
  });
}

// Global max pool -> N x C x 1 x 1.
template <typename T>
Var<T> gmp(const Var<T>& x) {
  const auto& v = x.value();
  check(v.rank() == 4, "gmp: rank-4 required");
  const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  Tensor<T> out({N, C, 1, 1});
  auto arg = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(N) * C);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* src = v.data() + ((static_cast<std::int64_t>(n) * C + c) * H) * W;
      T best = src[0];
      std::int64_t bi = 0;
      for (std::int64_t i = 1; i < static_cast<std::int64_t>(H) * W; ++i)
        if (src[i] > best) {
          best = src[i];
          bi = i;
        }
      out.at(n, c, 0, 0) = best;
      (*arg)[static_cast<std::size_t>(n) * C + c] = bi;
    }
  auto xn = x.node();
  return ad::make_op<T>(std::move(out), {x}, [xn, arg, N, C, H, W](VarNode<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& g = ad::grad_buf(*xn);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        T* dst = g.data() + ((static_cast<std::int64_t>(n) * C + c) * H) * W;
        dst[(*arg)[static_cast<std::size_t>(n) * C + c]] += self.grad.at(n, c, 0, 0);
      }
  });
}

// Windowed max pool, no padding.
template <typename T>
Var<T> maxpool2d(const Var<T>& x, int window, int stride) {
  const auto& v = x.value();
  check(v.rank() == 4 && window >= 1 && stride >= 1, "maxpool2d: bad args");
  const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  check(H >= window && W >= window, "maxpool2d: window larger than input");
  const int OH = (H - window) / stride + 1, OW = (W - window) / stride + 1;
  Tensor<T> out({N, C, OH, OW});
  auto arg = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out.numel()));
  std::int64_t o = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow, ++o) {
          T best = v.at(n, c, oh * stride, ow * stride);
          std::int64_t bi = (static_cast<std::int64_t>(oh * stride)) * W + ow * stride;
          for (int kh = 0; kh < window; ++kh)
            for (int kw = 0; kw < window; ++kw) {
              const T cand = v.at(n, c, oh * stride + kh, ow * stride + kw);
              if (cand > best) {
                best = cand;
                bi = static_cast<std::int64_t>(oh * stride + kh) * W + ow * stride + kw;
              }
            }
          out[o] = best;
          (*arg)[static_cast<std::size_t>(o)] = bi;
        }
  auto xn = x.node();
  return ad::make_op<T>(std::move(out), {x}, [xn, arg, N, C, H, W, OH, OW](VarNode<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& g = ad::grad_buf(*xn);
    std::int64_t o = 0;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        T* dst = g.data() + ((static_cast<std::int64_t>(n) * C + c) * H) * W;
        for (int oh = 0; oh < OH; ++oh)
          for (int ow = 0; ow < OW; ++ow, ++o) dst[(*arg)[static_cast<std::size_t>(o)]] += self.grad[o];
      }
  });
}

enum class Pool { gap, gmp, max2d };

template <typename T>
Var<T> pool(const Var<T>& x, Pool kind, int window = 2, int stride = -1) {
  switch (kind) {
    case Pool::gap: return gap(x);
    case Pool::gmp: return gmp(x);
    case Pool::max2d: default: return maxpool2d(x, window, stride < 1 ? window : stride);
  }
}

// ---- modules ----

template <typename T>
class Conv2d {
 public:
  ConvSpec spec;
  Var<T> weight;
  Var<T> bias;

  Conv2d() = default;

  Conv2d(const ConvSpec& s, Rng& rng) : spec(s) {
    spec.validate();
    const int icg = spec.in_ch / spec.groups;
    const double fan_in = static_cast<double>(icg) * spec.kernel * spec.kernel;
    weight = Var<T>(Tensor<T>::randn({spec.out_ch, icg, spec.kernel, spec.kernel}, rng,
                                     std::sqrt(2.0 / fan_in)),
                    true);
    if (spec.bias) bias = Var<T>(Tensor<T>({spec.out_ch}), true);
  }

  Var<T> forward(const Var<T>& x) const { return conv2d(x, weight, bias, spec); }

  void collect(ParamList<T>& out, const std::string& prefix) {
    out.push_back({prefix + ".weight", &weight, true});
    if (bias.defined()) out.push_back({prefix + ".bias", &bias, true});
  }
};

template <typename T>
class BatchNorm2d {
 public:
  int channels = 0;
  T eps = static_cast<T>(1e-5);
  T momentum = static_cast<T>(0.1);
  Var<T> gamma, beta;
  Var<T> running_mean, running_var;  // buffers

  BatchNorm2d() = default;

  explicit BatchNorm2d(int C) : channels(C) {
    Tensor<T> g({C});
    g.fill(T(1));
    gamma = Var<T>(std::move(g), true);
    beta = Var<T>(Tensor<T>({C}), true);
    running_mean = Var<T>(Tensor<T>({C}), false);
    Tensor<T> rv({C});
    rv.fill(T(1));
    running_var = Var<T>(std::move(rv), false);
  }

  Var<T> forward(const Var<T>& x, bool training) {
    const auto& v = x.value();
    check(v.rank() == 4 && v.dim(1) == channels, "batchnorm: channel mismatch");
    const int N = v.dim(0), C = channels, H = v.dim(2), W = v.dim(3);
    const std::int64_t m = static_cast<std::int64_t>(N) * H * W;

    if (training) {
      if (m == 1) throw NumericError("insufficient statistics");
      auto mean = std::make_shared<std::vector<T>>(C);
      auto invstd = std::make_shared<std::vector<T>>(C);
      auto xhat = std::make_shared<Tensor<T>>(v.dims());
      for (int c = 0; c < C; ++c) {
        double s = 0.0, s2 = 0.0;
        for (int n = 0; n < N; ++n) {
          const T* src = v.data() + ((static_cast<std::int64_t>(n) * C + c) * H) * W;
          for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i) {
            s += static_cast<double>(src[i]);
            s2 += static_cast<double>(src[i]) * static_cast<double>(src[i]);
          }
        }
        const double mu = s / static_cast<double>(m);
        double var = s2 / static_cast<double>(m) - mu * mu;
        if (var < 0.0) var = 0.0;
        (*mean)[c] = static_cast<T>(mu);
        (*invstd)[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        // running stats: unbiased variance, momentum update
        running_mean.value()[c] =
            (T(1) - momentum) * running_mean.value()[c] + momentum * static_cast<T>(mu);
        running_var.value()[c] =
            (T(1) - momentum) * running_var.value()[c] +
            momentum * static_cast<T>(var * static_cast<double>(m) / static_cast<double>(m - 1));
      }
      Tensor<T> out(v.dims());
      const T* gm = gamma.value().data();
      const T* bt = beta.value().data();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const T* src = v.data() + ((static_cast<std::int64_t>(n) * C + c) * H) * W;
          T* xh = xhat->data() + ((static_cast<std::int64_t>(n) * C + c) * H) * W;
          T* dst = out.data() + ((static_cast<std::int64_t>(n) * C + c) * H) * W;
          for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i) {
            xh[i] = (src[i] - (*mean)[c]) * (*invstd)[c];
            dst[i] = gm[c] * xh[i] + bt[c];
          }
        }
      auto xn = x.node();
      auto gn = gamma.node();
      auto bn_ = beta.node();
      return ad::make_op<T>(std::move(out), {x, gamma, beta},
                            [xn, gn, bn_, xhat, invstd, N, C, H, W, m](VarNode<T>& self) {
        std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c) {
            const T* sg = self.grad.data() + ((static_cast<std::int64_t>(n) * C + c) * H) * W;
            const T* xh = xhat->data() + ((static_cast<std::int64_t>(n) * C + c) * H) * W;
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i) {
              sum_dy[c] += static_cast<double>(sg[i]);
              sum_dy_xhat[c] += static_cast<double>(sg[i]) * static_cast<double>(xh[i]);
            }
          }
        if (gn->requires_grad) {
          T* gg = ad::grad_buf(*gn).data();
          for (int c = 0; c < C; ++c) gg[c] += static_cast<T>(sum_dy_xhat[c]);
        }
        if (bn_->requires_grad) {
          T* gb = ad::grad_buf(*bn_).data();
          for (int c = 0; c < C; ++c) gb[c] += static_cast<T>(sum_dy[c]);
        }
        if (xn->requires_grad) {
          Tensor<T>& gx = ad::grad_buf(*xn);
          const T* gm = gn->value.data();
          for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
              const T* sg = self.grad.data() + ((static_cast<std::int64_t>(n) * C + c) * H) * W;
              const T* xh = xhat->data() + ((static_cast<std::int64_t>(n) * C + c) * H) * W;
              T* dst = gx.data() + ((static_cast<std::int64_t>(n) * C + c) * H) * W;
              const T k1 = static_cast<T>(sum_dy[c] / static_cast<double>(m));
              const T k2 = static_cast<T>(sum_dy_xhat[c] / static_cast<double>(m));
              const T gis = gm[c] * (*invstd)[c];
              for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i)
                dst[i] += gis * (sg[i] - k1 - xh[i] * k2);
            }
        }
      });
    }

    // eval mode: affine transform with running statistics
    Tensor<T> out(v.dims());
    std::vector<T> invstd(C);
    for (int c = 0; c < C; ++c)
      invstd[c] = static_cast<T>(
          1.0 / std::sqrt(static_cast<double>(running_var.value()[c]) + static_cast<double>(eps)));
    const T* gm = gamma.value().data();
    const T* bt = beta.value().data();
    const T* rm = running_mean.value().data();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const T* src = v.data() + ((static_cast<std::int64_t>(n) * C + c) * H) * W;
        T* dst = out.data() + ((static_cast<std::int64_t>(n) * C + c) * H) * W;
        const T a = gm[c] * invstd[c];
        const T b = bt[c] - rm[c] * a;
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i) dst[i] = a * src[i] + b;
      }
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn_ = beta.node();
    auto inv = std::make_shared<std::vector<T>>(std::move(invstd));
    auto rmv = std::make_shared<std::vector<T>>(rm, rm + C);
    return ad::make_op<T>(std::move(out), {x, gamma, beta},
                          [xn, gn, bn_, inv, rmv, N, C, H, W](VarNode<T>& self) {
      const T* gm = gn->value.data();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const T* sg = self.grad.data() + ((static_cast<std::int64_t>(n) * C + c) * H) * W;
          const T* xv = xn->value.data() + ((static_cast<std::int64_t>(n) * C + c) * H) * W;
          if (xn->requires_grad) {
            T* dst = ad::grad_buf(*xn).data() + ((static_cast<std::int64_t>(n) * C + c) * H) * W;
            const T a = gm[c] * (*inv)[c];
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i) dst[i] += a * sg[i];
          }
          if (gn->requires_grad) {
            T* gg = ad::grad_buf(*gn).data();
            double acc = 0.0;
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i)
              acc += static_cast<double>(sg[i]) *
                     static_cast<double>((xv[i] - (*rmv)[c]) * (*inv)[c]);
            gg[c] += static_cast<T>(acc);
          }
          if (bn_->requires_grad) {
            T* gb = ad::grad_buf(*bn_).data();
            double acc = 0.0;
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i)
              acc += static_cast<double>(sg[i]);
            gb[c] += static_cast<T>(acc);
          }
        }
    });
  }

  void collect(ParamList<T>& out, const std::string& prefix) {
    out.push_back({prefix + ".gamma", &gamma, true});
    out.push_back({prefix + ".beta", &beta, true});
    out.push_back({prefix + ".running_mean", &running_mean, false});
    out.push_back({prefix + ".running_var", &running_var, false});
  }
};

// conv -> optional BN -> activation, the workhorse block.
template <typename T>
class ConvBnAct {
 public:
  Conv2d<T> conv;
  BatchNorm2d<T> bn;
  bool has_bn = false;
  Act activation = Act::silu;

  ConvBnAct() = default;

  ConvBnAct(ConvSpec spec, Rng& rng, bool with_bn = true, Act a = Act::silu)
      : has_bn(with_bn), activation(a) {
    if (with_bn) spec.bias = false;
    conv = Conv2d<T>(spec, rng);
    if (with_bn) bn = BatchNorm2d<T>(spec.out_ch);
  }

  Var<T> forward(const Var<T>& x, bool training) {
    Var<T> y = conv.forward(x);
    if (has_bn) y = bn.forward(y, training);
    return act(y, activation);
  }

  void collect(ParamList<T>& out, const std::string& prefix) {
    conv.collect(out, prefix + ".conv");
    if (has_bn) bn.collect(out, prefix + ".bn");
  }
};

// Depthwise conv followed by pointwise 1x1 conv.
template <typename T>
class DepthwiseSeparable {
 public:
  Conv2d<T> dw;
  Conv2d<T> pw;

  DepthwiseSeparable() = default;

  DepthwiseSeparable(int in_ch, int out_ch, int kernel, int stride, Rng& rng) {
    ConvSpec ds{in_ch, in_ch, kernel, stride, 1, in_ch, true};
    ConvSpec ps{in_ch, out_ch, 1, 1, 1, 1, true};
    dw = Conv2d<T>(ds, rng);
    pw = Conv2d<T>(ps, rng);
  }

  Var<T> forward(const Var<T>& x) const { return pw.forward(dw.forward(x)); }

  void collect(ParamList<T>& out, const std::string& prefix) {
    dw.collect(out, prefix + ".dw");
    pw.collect(out, prefix + ".pw");
  }
};

template <typename T>
Var<T> depthwise_separable(const Var<T>& x, const Var<T>& dw_w, const Var<T>& dw_b,
                           const ConvSpec& dw_spec, const Var<T>& pw_w, const Var<T>& pw_b,
                           const ConvSpec& pw_spec) {
  return conv2d(conv2d(x, dw_w, dw_b, dw_spec), pw_w, pw_b, pw_spec);
}

// Inference cost: parameter scalars and multiply-add count at eval mode.
struct Cost {
  std::int64_t params = 0;
  std::int64_t mults_adds = 0;
  Cost& operator+=(const Cost& o) {
    params += o.params;
    mults_adds += o.mults_adds;
    return *this;
  }
};

inline Cost conv_cost(const ConvSpec& spec, int h, int w) {
  const int oh = spec.out_size(h), ow = spec.out_size(w);
  const std::int64_t icg = spec.in_ch / spec.groups;
  Cost c;
  c.params = static_cast<std::int64_t>(spec.out_ch) * icg * spec.kernel * spec.kernel +
             (spec.bias ? spec.out_ch : 0);
  c.mults_adds = static_cast<std::int64_t>(oh) * ow * spec.out_ch * icg * spec.kernel * spec.kernel +
                 (spec.bias ? static_cast<std::int64_t>(oh) * ow * spec.out_ch : 0);
  return c;
}

inline Cost bn_cost(int channels, int h, int w) {
  Cost c;
  c.params = 2 * channels;
  c.mults_adds = 2 * static_cast<std::int64_t>(channels) * h * w;
  return c;
}

template <typename T>
std::int64_t param_count(const ParamList<T>& params, bool trainable_only = false) {
  std::int64_t n = 0;
  for (const auto& p : params)
    if (!trainable_only || p.trainable) n += p.var->value().numel();
  return n;
}

}  // namespace cployo
