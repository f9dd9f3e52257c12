#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mifcn/errors.hpp"

namespace mifcn {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major n-dimensional array backed by an Eigen column array.
///
/// Images are rank 2 [H,W], feature maps rank 3 [C,H,W], kernels rank 4
/// [Cout,Cin,k,k], biases rank 1 [Cout]. Elementwise math goes through
/// array(), which returns the underlying Eigen expression-friendly storage.
template <typename Scalar>
class BasicTensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(Array::Constant(checked_size(shape_), fill)) {}

  BasicTensor(Shape shape, Array data) : shape_(std::move(shape)), data_(std::move(data)) {
    require(data_.size() == checked_size(shape_),
            "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                shape_string(shape_));
  }

  BasicTensor(Shape shape, std::initializer_list<Scalar> values)
      : BasicTensor(std::move(shape), Array(Eigen::Map<const Array>(values.begin(),
                                                                   static_cast<Index>(values.size())))) {}

  static BasicTensor zeros_like(const BasicTensor& other) { return BasicTensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> values() const {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& operator()(Index r, Index c) { return data_[r * shape_[1] + c]; }
  Scalar operator()(Index r, Index c) const { return data_[r * shape_[1] + c]; }
  Scalar& operator()(Index ch, Index r, Index c) { return data_[(ch * shape_[1] + r) * shape_[2] + c]; }
  Scalar operator()(Index ch, Index r, Index c) const {
    return data_[(ch * shape_[1] + r) * shape_[2] + c];
  }
  Scalar& operator()(Index o, Index i, Index r, Index c) {
    return data_[((o * shape_[1] + i) * shape_[2] + r) * shape_[3] + c];
  }
  Scalar operator()(Index o, Index i, Index r, Index c) const {
    return data_[((o * shape_[1] + i) * shape_[2] + r) * shape_[3] + c];
  }

  /// View of a rank-2 tensor (or one plane of a rank-3 tensor) as a row-major matrix.
  MatrixMap matrix() {
    require(rank() == 2, "matrix() needs a rank-2 tensor, got " + shape_string(shape_));
    return MatrixMap(data_.data(), shape_[0], shape_[1]);
  }
  ConstMatrixMap matrix() const {
    require(rank() == 2, "matrix() needs a rank-2 tensor, got " + shape_string(shape_));
    return ConstMatrixMap(data_.data(), shape_[0], shape_[1]);
  }
  MatrixMap plane(Index channel) {
    require(rank() == 3, "plane() needs a rank-3 tensor, got " + shape_string(shape_));
    return MatrixMap(data_.data() + channel * shape_[1] * shape_[2], shape_[1], shape_[2]);
  }
  ConstMatrixMap plane(Index channel) const {
    require(rank() == 3, "plane() needs a rank-3 tensor, got " + shape_string(shape_));
    return ConstMatrixMap(data_.data() + channel * shape_[1] * shape_[2], shape_[1], shape_[2]);
  }

  /// Same data, new extents; the element count must not change.
  BasicTensor reshaped(Shape shape) const { return BasicTensor(std::move(shape), data_); }

  template <typename Other>
  BasicTensor<Other> cast() const {
    return BasicTensor<Other>(shape_, data_.template cast<Other>().eval());
  }

  bool all_finite() const { return data_.isFinite().all(); }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && (a.data_ == b.data_).all();
  }

 private:
  static Index checked_size(const Shape& shape) {
    for (Index extent : shape) require(extent >= 0, "negative extent in shape " + shape_string(shape));
    return shape_size(shape);
  }

  Shape shape_;
  Array data_;
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;

// Elementwise operations. Operands must have identical shapes.

template <typename Scalar>
void require_same_shape(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                      " vs " + shape_string(b.shape()));
}

template <typename Scalar>
BasicTensor<Scalar> add(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  require_same_shape(a, b, "add");
  return BasicTensor<Scalar>(a.shape(), a.array() + b.array());
}

template <typename Scalar>
BasicTensor<Scalar> sub(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  require_same_shape(a, b, "sub");
  return BasicTensor<Scalar>(a.shape(), a.array() - b.array());
}

template <typename Scalar>
BasicTensor<Scalar> hadamard(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  require_same_shape(a, b, "hadamard");
  return BasicTensor<Scalar>(a.shape(), a.array() * b.array());
}

template <typename Scalar>
BasicTensor<Scalar> square(const BasicTensor<Scalar>& a) {
  return BasicTensor<Scalar>(a.shape(), a.array().square());
}

template <typename Scalar>
BasicTensor<Scalar> exp(const BasicTensor<Scalar>& a) {
  return BasicTensor<Scalar>(a.shape(), a.array().exp());
}

template <typename Scalar>
BasicTensor<Scalar> scale(const BasicTensor<Scalar>& a, Scalar factor) {
  return BasicTensor<Scalar>(a.shape(), a.array() * factor);
}

template <typename Scalar>
BasicTensor<Scalar> div(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  require_same_shape(a, b, "div");
  if ((b.array() == Scalar(0)).any()) throw DomainError("div: zero entry in denominator");
  return BasicTensor<Scalar>(a.shape(), a.array() / b.array());
}

/// Leaky ReLU, max(alpha*x, x).
template <typename Scalar>
BasicTensor<Scalar> lrelu(const BasicTensor<Scalar>& x, Scalar alpha) {
  require(alpha >= Scalar(0) && alpha < Scalar(1), "lrelu: alpha must lie in [0,1)");
  return BasicTensor<Scalar>(x.shape(), x.array().max(alpha * x.array()));
}

template <typename Scalar>
Scalar reduce_mean(const BasicTensor<Scalar>& x) {
  require(!x.empty(), "reduce_mean: empty tensor");
  return x.array().mean();
}

template <typename Scalar>
Scalar max_abs_diff(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  require_same_shape(a, b, "max_abs_diff");
  return a.empty() ? Scalar(0) : (a.array() - b.array()).abs().maxCoeff();
}

}  // namespace mifcn
