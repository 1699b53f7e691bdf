#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dimlight/errors.h"

namespace dimlight {

/// Extents in (batch, channel, height, width) order.
using Shape = std::array<std::size_t, 4>;

inline std::size_t numel(const Shape& s) { return s[0] * s[1] * s[2] * s[3]; }
std::string to_string(const Shape& s);

/// Dense rank-4 array, row-major in batch-channel-height-width order.
///
/// A Tensor is a shared handle: copies alias the same storage, which is how
/// the tape keeps saved intermediates alive and how parameters are shared
/// between a model's block structs and its parameter list. Use clone() for
/// an independent copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(const Shape& shape, T fill = T(0))
      : impl_(std::make_shared<Impl>(Impl{shape, std::vector<T>(dimlight::numel(shape), fill), {}, false})) {}
  Tensor(const Shape& shape, std::vector<T> values) {
    if (values.size() != dimlight::numel(shape)) {
      throw DimensionError("tensor of shape " + to_string(shape) + " needs " +
                           std::to_string(dimlight::numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
    impl_ = std::make_shared<Impl>(Impl{shape, std::move(values), {}, false});
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t batch() const { return impl_->shape[0]; }
  std::size_t channels() const { return impl_->shape[1]; }
  std::size_t height() const { return impl_->shape[2]; }
  std::size_t width() const { return impl_->shape[3]; }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }

  std::size_t offset(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
    const Shape& s = impl_->shape;
    return ((b * s[1] + c) * s[2] + y) * s[3] + x;
  }
  T& operator()(std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
    return impl_->data[offset(b, c, y, x)];
  }
  T operator()(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
    return impl_->data[offset(b, c, y, x)];
  }

  /// Value of a single-element tensor.
  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  std::span<T> grad() { return impl_->grad; }
  std::span<const T> grad() const { return impl_->grad; }
  /// Gradient buffer, allocated zero-filled on first use.
  std::span<T> ensure_grad() const {
    if (impl_->grad.empty()) impl_->grad.assign(numel(), T(0));
    return impl_->grad;
  }
  void zero_grad() { impl_->grad.assign(numel(), T(0)); }
  void release_grad() { std::vector<T>().swap(impl_->grad); }

  Tensor clone() const { return Tensor(shape(), impl_->data); }
  /// Same values reinterpreted under a new shape of equal element count.
  Tensor reshaped(const Shape& s) const { return Tensor(s, impl_->data); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> v(impl_->data.begin(), impl_->data.end());
    return Tensor<U>(shape(), std::move(v));
  }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad;
  };
  std::shared_ptr<Impl> impl_;
};

}  // namespace dimlight
