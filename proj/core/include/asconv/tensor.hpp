#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "asconv/error.hpp"

namespace asconv {

/// Extents of a tensor, outermost first. Image tensors use B,C,H,W order with
/// W varying fastest in memory. Kernel stacks ([B,C_o,C_i,kh,kw]) need a
/// fifth axis, so the limit is five.
class Shape {
 public:
  static constexpr std::size_t kMaxRank = 5;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::span<const std::size_t> dims);

  std::size_t rank() const { return rank_; }
  std::size_t operator[](std::size_t axis) const { return dims_[axis]; }
  std::size_t numel() const;

  std::span<const std::size_t> dims() const { return {dims_.data(), rank_}; }

  bool operator==(const Shape& other) const;

  std::string str() const;

 private:
  std::array<std::size_t, kMaxRank> dims_{};
  std::size_t rank_ = 0;
};

/// Dense row-major array. A default-constructed tensor is empty (rank 0, no
/// data) and is only used as a placeholder; every tensor built through the
/// factories below has rank >= 1 and extents >= 1.
template <typename Real>
class Tensor {
  static_assert(std::is_same_v<Real, float> || std::is_same_v<Real, double>,
                "Tensor supports float and double elements");

 public:
  using value_type = Real;

  Tensor() = default;
  explicit Tensor(const Shape& shape, Real fill = Real(0));
  Tensor(const Shape& shape, std::vector<Real> data);

  static Tensor zeros(const Shape& shape) { return Tensor(shape); }
  static Tensor full(const Shape& shape, Real value) { return Tensor(shape, value); }

  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t axis) const { return shape_[axis]; }
  std::size_t rank() const { return shape_.rank(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  const std::vector<Real>& storage() const { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  // Rank-4 accessors; no bounds checks.
  Real& at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  Real at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// Same elements, same order, new extents.
  Tensor reshape(const Shape& shape) const;

  /// Reorders axes; `axes[i]` names the source axis of output axis i. The
  /// result is contiguous.
  Tensor permute(std::span<const std::size_t> axes) const;
  Tensor permute(std::initializer_list<std::size_t> axes) const {
    return permute(std::span<const std::size_t>(axes.begin(), axes.size()));
  }

  void fill(Real value);

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return Tensor<Other>(shape_, std::move(out));
  }

  /// Exact element-wise equality (shape included).
  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  Shape shape_;
  std::vector<Real> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace asconv
