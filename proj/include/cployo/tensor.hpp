#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <vector>

#include "cployo/common.hpp"

namespace cployo {

// Dense row-major tensor, rank 1..4. Feature maps are NCHW; conv weights are
// [out_ch, in_ch/groups, kh, kw].
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> dims) {
    check(!dims.empty() && dims.size() <= 4, "tensor rank must be 1..4");
    rank_ = static_cast<int>(dims.size());
    std::int64_t n = 1;
    for (int i = 0; i < rank_; ++i) {
      check(dims[i] >= 1, "tensor dims must be positive");
      shape_[i] = dims[i];
      n *= dims[i];
    }
    data_.assign(static_cast<std::size_t>(n), T(0));
  }

  Tensor(std::initializer_list<int> dims) : Tensor(std::vector<int>(dims)) {}

  static Tensor scalar(T v) {
    Tensor t({1});
    t.data_[0] = v;
    return t;
  }

  int rank() const { return rank_; }
  int dim(int i) const { return i < rank_ ? shape_[i] : 1; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool defined() const { return rank_ > 0; }

  std::vector<int> dims() const {
    return std::vector<int>(shape_.begin(), shape_.begin() + rank_);
  }

  bool same_shape(const Tensor& o) const {
    if (rank_ != o.rank_) return false;
    for (int i = 0; i < rank_; ++i)
      if (shape_[i] != o.shape_[i]) return false;
    return true;
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // rank-4 accessor
  T& at(int n, int c, int h, int w) {
    return data_[((static_cast<std::int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(int n, int c, int h, int w) const {
    return data_[((static_cast<std::int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  void add_(const Tensor& o) {
    check(same_shape(o), "tensor shape mismatch in add_");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  }

  void scale_(T s) {
    for (auto& v : data_) v *= s;
  }

  bool all_finite() const {
    for (const auto& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  T max_abs() const {
    T m = T(0);
    for (const auto& v : data_) m = std::max(m, static_cast<T>(std::abs(static_cast<double>(v))));
    return m;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.rank_ = rank_;
    out.shape_ = shape_;
    out.data_.resize(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out.data_[i] = static_cast<U>(data_[i]);
    return out;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (int i = 0; i < rank_; ++i) os << (i ? "x" : "") << shape_[i];
    os << ']';
    return os.str();
  }

  static Tensor randn(const std::vector<int>& dims, Rng& rng, double stddev = 1.0) {
    Tensor t(dims);
    for (auto& v : t.data_) v = static_cast<T>(rng.normal() * stddev);
    return t;
  }

  template <typename U>
  friend class Tensor;

 private:
  std::array<int, 4> shape_{1, 1, 1, 1};
  int rank_ = 0;
  std::vector<T> data_;
};

}  // namespace cployo
