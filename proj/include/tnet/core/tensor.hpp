#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tnet/core/error.hpp"

namespace tnet {

// Dense 3-D tensor stored channel-major: (channels, batch, length).
// A conv weight reuses the layout as (out, in, kernel).
// Storage is aligned so vectorized reductions see the same element grouping on
// every allocation, which keeps results bitwise reproducible.
template <typename S>
using AlignedVector = std::vector<S, Eigen::aligned_allocator<S>>;

template <typename S>
class Tensor {
 public:
  Tensor() = default;
  Tensor(int channels, int batch, int length, S fill = S(0))
      : c_(channels), n_(batch), l_(length),
        data_(static_cast<std::size_t>(channels) * batch * length, fill) {}

  int channels() const noexcept { return c_; }
  int batch() const noexcept { return n_; }
  int length() const noexcept { return l_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  bool same_shape(const Tensor& o) const noexcept {
    return c_ == o.c_ && n_ == o.n_ && l_ == o.l_;
  }

  std::string shape_string() const {
    return "(" + std::to_string(c_) + "," + std::to_string(n_) + "," + std::to_string(l_) + ")";
  }

  std::size_t index(int c, int n, int l) const noexcept {
    return (static_cast<std::size_t>(c) * n_ + n) * l_ + l;
  }
  S& operator()(int c, int n, int l) noexcept { return data_[index(c, n, l)]; }
  S operator()(int c, int n, int l) const noexcept { return data_[index(c, n, l)]; }
  S& operator[](std::size_t i) noexcept { return data_[i]; }
  S operator[](std::size_t i) const noexcept { return data_[i]; }

  S* data() noexcept { return data_.data(); }
  const S* data() const noexcept { return data_.data(); }
  std::span<S> span() noexcept { return data_; }
  std::span<const S> span() const noexcept { return data_; }
  AlignedVector<S>& vec() noexcept { return data_; }
  const AlignedVector<S>& vec() const noexcept { return data_; }

  // Contiguous row for (channel, sample).
  std::span<S> row(int c, int n) noexcept { return {data_.data() + index(c, n, 0), static_cast<std::size_t>(l_)}; }
  std::span<const S> row(int c, int n) const noexcept {
    return {data_.data() + index(c, n, 0), static_cast<std::size_t>(l_)};
  }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename D>
  Tensor<D> cast() const {
    Tensor<D> out(c_, n_, l_);
    std::transform(data_.begin(), data_.end(), out.vec().begin(), [](S v) { return static_cast<D>(v); });
    return out;
  }

 private:
  int c_ = 0;
  int n_ = 0;
  int l_ = 0;
  AlignedVector<S> data_;
};

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* where) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(where) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
}

}  // namespace tnet
