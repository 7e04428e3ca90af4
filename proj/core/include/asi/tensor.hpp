#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace asi {

/// Thrown when operand dimensions do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Extents of a 4-mode activation tensor: batch, channels, height, width.
struct Shape4 {
  std::size_t b = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  Shape4() = default;
  Shape4(std::size_t b_, std::size_t c_, std::size_t h_, std::size_t w_);

  std::size_t size() const { return b * c * h * w; }

  /// Extent of a 1-based mode (1 = batch ... 4 = width).
  std::size_t extent(int mode) const;
  Shape4 with_extent(int mode, std::size_t value) const;
  /// Product of the three extents other than `mode`.
  std::size_t complement(int mode) const { return size() / extent(mode); }
  std::array<std::size_t, 4> as_array() const { return {b, c, h, w}; }

  bool operator==(const Shape4&) const = default;

  std::string to_string() const;
};

void check_mode(int mode);

/// Row-major dense matrix.
template <class T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{});
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& storage() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

/// Dense 4-mode tensor, row-major (width fastest).
template <class T>
class Tensor4 {
 public:
  using value_type = T;

  Tensor4() = default;
  explicit Tensor4(Shape4 shape, T fill = T{});
  Tensor4(Shape4 shape, std::vector<T> data);

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[offset(n, c, h, w)];
  }
  const T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[offset(n, c, h, w)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& storage() const { return data_; }

  bool operator==(const Tensor4&) const = default;

 private:
  Shape4 shape_;
  std::vector<T> data_;
};

template <class To, class From>
Tensor4<To> tensor_cast(const Tensor4<From>& t) {
  std::vector<To> out(t.data().begin(), t.data().end());
  return Tensor4<To>(t.shape(), std::move(out));
}

template <class To, class From>
Matrix<To> matrix_cast(const Matrix<From>& m) {
  std::vector<To> out(m.data().begin(), m.data().end());
  return Matrix<To>(m.rows(), m.cols(), std::move(out));
}

/// Frobenius norm accumulated in double.
template <class T>
double frobenius_norm(std::span<const T> values);

template <class T>
double frobenius_norm(const Tensor4<T>& t) {
  return frobenius_norm<T>(t.data());
}
template <class T>
double frobenius_norm(const Matrix<T>& m) {
  return frobenius_norm<T>(m.data());
}

/// ||a - b||_F, accumulated in double.
template <class T>
double frobenius_distance(std::span<const T> a, std::span<const T> b);

template <class T>
double relative_error(const Tensor4<T>& approx, const Tensor4<T>& exact) {
  const double denom = frobenius_norm(exact);
  const double diff = frobenius_distance<T>(approx.data(), exact.data());
  return denom > 0.0 ? diff / denom : diff;
}

}  // namespace asi
