#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "chandiff/errors.hpp"

namespace chandiff {

/// Dense row-major array with a dynamic shape. Maps are laid out as
/// [N, C, H, W]; vectors as [N, F]; a single snapshot as [2, H, W].
template <class S>
class Tensor {
 public:
  using value_type = S;

  Tensor() = default;

  explicit Tensor(std::vector<int> shape, S fill = S(0)) : shape_(std::move(shape)) {
    for (int d : shape_) detail::require(d >= 0, "Tensor: negative dimension");
    data_.assign(count(shape_), fill);
  }

  Tensor(std::vector<int> shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
    detail::require(data_.size() == count(shape_), "Tensor: data size does not match shape");
  }

  static std::size_t count(const std::vector<int>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

  const std::vector<int>& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i < 0 ? rank() + i : i)); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  S* data() noexcept { return data_.data(); }
  const S* data() const noexcept { return data_.data(); }
  std::span<S> values() noexcept { return data_; }
  std::span<const S> values() const noexcept { return data_; }
  std::vector<S>& storage() noexcept { return data_; }
  const std::vector<S>& storage() const noexcept { return data_; }

  S& operator[](std::size_t i) noexcept { return data_[i]; }
  const S& operator[](std::size_t i) const noexcept { return data_[i]; }

  bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }

  /// Shares nothing; returns a tensor with a new shape over a copy of the data.
  Tensor reshaped(std::vector<int> shape) const {
    detail::require(count(shape) == data_.size(), "Tensor::reshaped: element count mismatch");
    return Tensor(std::move(shape), data_);
  }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    detail::require(same_shape(o), "Tensor +=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) s += (i ? "," : "") + std::to_string(shape_[i]);
    return s + "]";
  }

 private:
  std::vector<int> shape_;
  std::vector<S> data_;
};

/// Stacks equally shaped tensors along a new leading axis.
template <class S>
Tensor<S> stack(const std::vector<const Tensor<S>*>& items) {
  detail::require(!items.empty(), "stack: no items");
  const auto& s0 = items.front()->shape();
  std::vector<int> shape{static_cast<int>(items.size())};
  shape.insert(shape.end(), s0.begin(), s0.end());
  Tensor<S> out(shape);
  const std::size_t row = items.front()->size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    detail::require(items[i]->shape() == s0, "stack: shape mismatch");
    std::copy(items[i]->data(), items[i]->data() + row, out.data() + i * row);
  }
  return out;
}

/// Row i of the leading axis as its own tensor.
template <class S>
Tensor<S> take_row(const Tensor<S>& x, int i) {
  detail::require(x.rank() >= 1 && i >= 0 && i < x.dim(0), "take_row: index out of range");
  std::vector<int> shape(x.shape().begin() + 1, x.shape().end());
  const std::size_t row = x.size() / static_cast<std::size_t>(x.dim(0));
  std::vector<S> data(x.data() + i * row, x.data() + (i + 1) * row);
  return Tensor<S>(std::move(shape), std::move(data));
}

template <class S>
Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<int>& idx) {
  std::vector<int> shape = x.shape();
  const std::size_t row = x.size() / static_cast<std::size_t>(shape[0]);
  shape[0] = static_cast<int>(idx.size());
  Tensor<S> out(shape);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    detail::require(idx[i] >= 0 && idx[i] < x.dim(0), "gather_rows: index out of range");
    std::copy(x.data() + idx[i] * row, x.data() + (idx[i] + 1) * row, out.data() + i * row);
  }
  return out;
}

template <class S>
void scatter_rows(Tensor<S>& dst, const std::vector<int>& idx, const Tensor<S>& src) {
  const std::size_t row = dst.size() / static_cast<std::size_t>(dst.dim(0));
  detail::require(src.size() == idx.size() * row, "scatter_rows: size mismatch");
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy(src.data() + i * row, src.data() + (i + 1) * row, dst.data() + idx[i] * row);
}

template <class S>
S squared_norm(std::span<const S> v) {
  S acc = 0;
  for (S x : v) acc += x * x;
  return acc;
}

template <class S>
S squared_distance(std::span<const S> a, std::span<const S> b) {
  detail::require(a.size() == b.size(), "squared_distance: size mismatch");
  S acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc;
}

}  // namespace chandiff
