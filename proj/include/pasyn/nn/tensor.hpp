#pragma once

#include <Eigen/Core>

#include <array>
#include <cassert>
#include <string>

#include "pasyn/error.hpp"

namespace pasyn::nn {

struct Shape4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  Eigen::Index size() const { return Eigen::Index(n) * c * h * w; }
  Eigen::Index plane() const { return Eigen::Index(h) * w; }
  friend bool operator==(const Shape4&, const Shape4&) = default;
};

inline std::string to_string(const Shape4& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + ")";
}

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Contiguous NCHW tensor.
template <typename Scalar>
class Tensor4 {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor4() = default;
  explicit Tensor4(Shape4 s, Scalar fill = Scalar(0)) : shape_(s), data_(Array::Constant(s.size(), fill)) {}
  Tensor4(int n, int c, int h, int w, Scalar fill = Scalar(0)) : Tensor4(Shape4{n, c, h, w}, fill) {}

  const Shape4& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  Eigen::Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Eigen::Index offset(int n, int c, int h, int w) const {
    return ((Eigen::Index(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  Scalar& operator()(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  Scalar operator()(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

  // Sample `n` viewed as a (C, H*W) matrix.
  MatrixMap sample(int n) { return MatrixMap(data() + offset(n, 0, 0, 0), shape_.c, shape_.plane()); }
  ConstMatrixMap sample(int n) const {
    return ConstMatrixMap(data() + offset(n, 0, 0, 0), shape_.c, shape_.plane());
  }

  void set_zero() { data_.setZero(); }
  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  Tensor4<Other> cast() const {
    Tensor4<Other> out(shape_);
    out.array() = data_.template cast<Other>();
    return out;
  }

 private:
  Shape4 shape_;
  Array data_;
};

template <typename Scalar>
void require_shape(const Tensor4<Scalar>& t, const Shape4& expected, const char* what) {
  require(t.shape() == expected, ErrorCode::kShapeMismatch,
          std::string(what) + ": expected " + to_string(expected) + ", got " + to_string(t.shape()));
}

// Sum over elements of a ⊙ b.
template <typename Scalar>
Scalar dot(const Tensor4<Scalar>& a, const Tensor4<Scalar>& b) {
  require_shape(b, a.shape(), "dot");
  return (a.array() * b.array()).sum();
}

}  // namespace pasyn::nn
