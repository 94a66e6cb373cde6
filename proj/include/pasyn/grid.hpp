#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>

namespace pasyn {

struct Shape2 {
  int x = 0;
  int z = 0;

  std::size_t size() const { return static_cast<std::size_t>(x) * static_cast<std::size_t>(z); }
  friend bool operator==(const Shape2&, const Shape2&) = default;
};

struct Shape3 {
  int x = 0;
  int y = 0;
  int z = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
  }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

// Dense x-z image, x fastest. Row z is a depth.
template <typename Scalar>
struct Grid2 {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Shape2 shape;
  Array data;

  Grid2() = default;
  explicit Grid2(Shape2 s, Scalar fill = Scalar(0))
      : shape(s), data(Array::Constant(static_cast<Eigen::Index>(s.size()), fill)) {}

  Eigen::Index index(int x, int z) const { return static_cast<Eigen::Index>(z) * shape.x + x; }
  Scalar& operator()(int x, int z) { return data[index(x, z)]; }
  Scalar operator()(int x, int z) const { return data[index(x, z)]; }
  bool contains(int x, int z) const { return x >= 0 && z >= 0 && x < shape.x && z < shape.z; }
};

// Dense volume, x fastest, then y, then z.
template <typename Scalar>
struct Grid3 {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Shape3 shape;
  Array data;

  Grid3() = default;
  explicit Grid3(Shape3 s, Scalar fill = Scalar(0))
      : shape(s), data(Array::Constant(static_cast<Eigen::Index>(s.size()), fill)) {}

  Eigen::Index index(int x, int y, int z) const {
    return (static_cast<Eigen::Index>(z) * shape.y + y) * shape.x + x;
  }
  Scalar& operator()(int x, int y, int z) { return data[index(x, y, z)]; }
  Scalar operator()(int x, int y, int z) const { return data[index(x, y, z)]; }
  bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < shape.x && y < shape.y && z < shape.z;
  }
};

}  // namespace pasyn
