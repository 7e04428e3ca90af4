#pragma once

#include <cstdint>
#include <vector>

#include "asi/events.hpp"
#include "asi/tensor.hpp"

namespace asi {

/// Multiply-accumulate tally. Kernels take a nullable pointer; passing
/// nullptr selects the uninstrumented code path.
struct MacCounter {
  std::uint64_t macs = 0;
  void reset() { macs = 0; }
};

enum class MatrixOp { Normal, Transposed };

/// Mode-m matricization. Mode m indexes rows; columns enumerate the
/// remaining modes in ascending order with the last one varying fastest.
template <class T>
Matrix<T> unfold(const Tensor4<T>& t, int mode);

/// Exact inverse of unfold.
template <class T>
Tensor4<T> fold(const Matrix<T>& m, int mode, const Shape4& shape);

/// m-mode product t x_mode M. With op == Normal M is Q x P_mode; with
/// op == Transposed M is P_mode x Q and M^T is applied without copying.
template <class T>
Tensor4<T> mode_product(const Tensor4<T>& t, const Matrix<T>& m, int mode,
                        MatrixOp op = MatrixOp::Normal, MacCounter* counter = nullptr);

template <class T>
Matrix<T> transpose(const Matrix<T>& m);

/// C = op(A) * op(B), double accumulation.
template <class T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b, MatrixOp op_a = MatrixOp::Normal,
                 MatrixOp op_b = MatrixOp::Normal, MacCounter* counter = nullptr);

/// max_ij |(U^T U - I)_ij|
template <class T>
double orthonormality_error(const Matrix<T>& u);

struct OrthogonalizeOptions {
  /// A column whose residual norm after projection falls below
  /// `tolerance * (its norm before projection)` is treated as dependent.
  double tolerance = 1e-10;
  /// Seed for re-drawing dependent columns.
  std::uint64_t seed = 0x5eed5eedULL;
};

/// Modified Gram-Schmidt with one re-projection pass per column. Dependent
/// columns are replaced by fresh Gaussian draws and each replacement is
/// reported as EventLog::Kind::RankDeficientColumn.
template <class T>
Matrix<T> orthogonalize(const Matrix<T>& m, const OrthogonalizeOptions& options = {},
                        EventLog* log = nullptr);

/// Nonincreasing, nonnegative singular values.
class SingularSpectrum {
 public:
  SingularSpectrum() = default;
  explicit SingularSpectrum(std::vector<double> values);

  const std::vector<double>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  double energy() const;
  /// Sum of s_k^2 for k >= rank (0-based), i.e. energy discarded by a rank cut.
  double tail_energy(std::size_t rank) const;

 private:
  std::vector<double> values_;
};

template <class T>
struct TruncatedSvd {
  Matrix<T> u;
  SingularSpectrum s;
  Matrix<T> v;
};

/// Exact dense SVD truncated to rank r.
template <class T>
TruncatedSvd<T> truncated_svd(const Matrix<T>& m, std::size_t r);

/// All min(rows, cols) singular values.
template <class T>
SingularSpectrum singular_values(const Matrix<T>& m);

template <class T>
struct LeftSingularBasis {
  /// rows x min(rows, cols), columns ordered by decreasing singular value.
  Matrix<double> u;
  SingularSpectrum s;
};

/// Left singular vectors through the eigendecomposition of the smaller Gram
/// matrix (A A^T when rows <= cols, A^T A otherwise).
template <class T>
LeftSingularBasis<T> gram_left_singular(const Matrix<T>& m, EventLog* log = nullptr);

/// Smallest r with cumulative energy ratio >= eps. eps >= 1 keeps every
/// strictly positive value. An all-zero spectrum yields 1 and reports
/// EventLog::Kind::DegenerateSpectrum.
std::size_t rank_for_variance(const SingularSpectrum& s, double eps, EventLog* log = nullptr);

}  // namespace asi
