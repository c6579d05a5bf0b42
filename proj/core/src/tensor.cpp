#include "asconv/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace asconv {

Shape::Shape(std::initializer_list<std::size_t> dims)
    : Shape(std::span<const std::size_t>(dims.begin(), dims.size())) {}

Shape::Shape(std::span<const std::size_t> dims) {
  if (dims.empty() || dims.size() > kMaxRank) {
    throw ShapeError("tensor rank must be in [1, " + std::to_string(kMaxRank) +
                     "], got " + std::to_string(dims.size()));
  }
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (dims[i] == 0) {
      throw ShapeError("tensor extents must be >= 1, axis " + std::to_string(i) + " is 0");
    }
    dims_[i] = dims[i];
  }
  rank_ = dims.size();
}

std::size_t Shape::numel() const {
  if (rank_ == 0) return 0;
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
  return n;
}

bool Shape::operator==(const Shape& other) const {
  if (rank_ != other.rank_) return false;
  return std::equal(dims_.begin(), dims_.begin() + rank_, other.dims_.begin());
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < rank_; ++i) {
    if (i) os << ',';
    os << dims_[i];
  }
  os << ']';
  return os.str();
}

template <typename Real>
Tensor<Real>::Tensor(const Shape& shape, Real fill) : shape_(shape) {
  if (!std::isfinite(fill)) throw ValueError("tensor fill value must be finite");
  data_.assign(shape.numel(), fill);
}

template <typename Real>
Tensor<Real>::Tensor(const Shape& shape, std::vector<Real> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw ShapeError("data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_.str());
  }
}

template <typename Real>
Tensor<Real> Tensor<Real>::reshape(const Shape& shape) const {
  if (shape.numel() != numel()) {
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  return Tensor(shape, data_);
}

template <typename Real>
Tensor<Real> Tensor<Real>::permute(std::span<const std::size_t> axes) const {
  const std::size_t rank = shape_.rank();
  if (axes.size() != rank) throw ShapeError("permutation length does not match rank");
  std::array<bool, Shape::kMaxRank> seen{};
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) throw ShapeError("invalid permutation of axes");
    seen[a] = true;
  }

  std::array<std::size_t, Shape::kMaxRank> src_stride{};
  src_stride[rank - 1] = 1;
  for (std::size_t i = rank - 1; i > 0; --i) src_stride[i - 1] = src_stride[i] * shape_[i];

  std::array<std::size_t, Shape::kMaxRank> out_dims{};
  std::array<std::size_t, Shape::kMaxRank> stride{};
  for (std::size_t i = 0; i < rank; ++i) {
    out_dims[i] = shape_[axes[i]];
    stride[i] = src_stride[axes[i]];
  }
  Shape out_shape(std::span<const std::size_t>(out_dims.data(), rank));

  std::vector<Real> out(numel());
  std::array<std::size_t, Shape::kMaxRank> idx{};
  for (std::size_t n = 0; n < out.size(); ++n) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < rank; ++i) offset += idx[i] * stride[i];
    out[n] = data_[offset];
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < out_dims[i]) break;
      idx[i] = 0;
    }
  }
  return Tensor(out_shape, std::move(out));
}

template <typename Real>
void Tensor<Real>::fill(Real value) {
  std::fill(data_.begin(), data_.end(), value);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace asconv
