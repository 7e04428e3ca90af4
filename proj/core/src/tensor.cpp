#include "asi/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace asi {

Shape4::Shape4(std::size_t b_, std::size_t c_, std::size_t h_, std::size_t w_)
    : b(b_), c(c_), h(h_), w(w_) {
  if (b == 0 || c == 0 || h == 0 || w == 0) {
    throw ShapeError("Shape4 extents must be >= 1, got " + to_string());
  }
  std::size_t total = 1;
  for (std::size_t e : as_array()) {
    if (total > std::numeric_limits<std::size_t>::max() / e) {
      throw ShapeError("Shape4 element count overflows: " + to_string());
    }
    total *= e;
  }
}

void check_mode(int mode) {
  if (mode < 1 || mode > 4) {
    throw std::out_of_range("mode must be in 1..4, got " + std::to_string(mode));
  }
}

std::size_t Shape4::extent(int mode) const {
  check_mode(mode);
  return as_array()[static_cast<std::size_t>(mode - 1)];
}

Shape4 Shape4::with_extent(int mode, std::size_t value) const {
  check_mode(mode);
  auto e = as_array();
  e[static_cast<std::size_t>(mode - 1)] = value;
  return Shape4(e[0], e[1], e[2], e[3]);
}

std::string Shape4::to_string() const {
  std::ostringstream os;
  os << '(' << b << ',' << c << ',' << h << ',' << w << ')';
  return os.str();
}

template <class T>
Matrix<T>::Matrix(std::size_t rows, std::size_t cols, T fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

template <class T>
Matrix<T>::Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("Matrix data length " + std::to_string(data_.size()) + " != " +
                     std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

template <class T>
Matrix<T> Matrix<T>::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
  return m;
}

template <class T>
Tensor4<T>::Tensor4(Shape4 shape, T fill) : shape_(shape), data_(shape.size(), fill) {}

template <class T>
Tensor4<T>::Tensor4(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) {
    throw ShapeError("Tensor4 data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_.to_string());
  }
}

template <class T>
double frobenius_norm(std::span<const T> values) {
  double acc = 0.0;
  for (T v : values) acc += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(acc);
}

template <class T>
double frobenius_distance(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ShapeError("frobenius_distance: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

template class Matrix<float>;
template class Matrix<double>;
template class Tensor4<float>;
template class Tensor4<double>;
template double frobenius_norm<float>(std::span<const float>);
template double frobenius_norm<double>(std::span<const double>);
template double frobenius_distance<float>(std::span<const float>, std::span<const float>);
template double frobenius_distance<double>(std::span<const double>, std::span<const double>);

}  // namespace asi
