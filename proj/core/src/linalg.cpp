#include "asi/linalg.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace asi {
namespace {

// Strides of the 4 modes in row-major storage.
std::array<std::size_t, 4> strides_of(const Shape4& s) {
  return {s.c * s.h * s.w, s.h * s.w, s.w, 1};
}

// Column index decomposition for mode-m unfolding: the remaining modes in
// ascending order, last fastest.
std::array<int, 3> other_modes(int mode) {
  std::array<int, 3> out{};
  int k = 0;
  for (int m = 1; m <= 4; ++m) {
    if (m != mode) out[static_cast<std::size_t>(k++)] = m;
  }
  return out;
}

using DynMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
DynMat to_eigen(const Matrix<T>& m) {
  DynMat out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = static_cast<double>(m(i, j));
  return out;
}

template <class T>
Matrix<T> from_eigen(const DynMat& m) {
  Matrix<T> out(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      out(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = static_cast<T>(m(i, j));
  return out;
}

}  // namespace

template <class T>
Matrix<T> unfold(const Tensor4<T>& t, int mode) {
  check_mode(mode);
  const Shape4& s = t.shape();
  const auto ext = s.as_array();
  const auto str = strides_of(s);
  const auto rest = other_modes(mode);
  const std::size_t rows = s.extent(mode);
  const std::size_t cols = s.complement(mode);
  const std::size_t e0 = ext[rest[0] - 1], e1 = ext[rest[1] - 1], e2 = ext[rest[2] - 1];
  const std::size_t s0 = str[rest[0] - 1], s1 = str[rest[1] - 1], s2 = str[rest[2] - 1];
  const std::size_t srow = str[mode - 1];

  Matrix<T> out(rows, cols);
  const auto src = t.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t col = 0;
    for (std::size_t i = 0; i < e0; ++i)
      for (std::size_t j = 0; j < e1; ++j)
        for (std::size_t k = 0; k < e2; ++k) out(r, col++) = src[r * srow + i * s0 + j * s1 + k * s2];
  }
  return out;
}

template <class T>
Tensor4<T> fold(const Matrix<T>& m, int mode, const Shape4& shape) {
  check_mode(mode);
  if (m.rows() != shape.extent(mode) || m.cols() != shape.complement(mode)) {
    throw ShapeError("fold: matrix " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                     " is inconsistent with mode " + std::to_string(mode) + " of shape " +
                     shape.to_string());
  }
  const auto ext = shape.as_array();
  const auto str = strides_of(shape);
  const auto rest = other_modes(mode);
  const std::size_t e0 = ext[rest[0] - 1], e1 = ext[rest[1] - 1], e2 = ext[rest[2] - 1];
  const std::size_t s0 = str[rest[0] - 1], s1 = str[rest[1] - 1], s2 = str[rest[2] - 1];
  const std::size_t srow = str[mode - 1];

  Tensor4<T> out(shape);
  auto dst = out.data();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    std::size_t col = 0;
    for (std::size_t i = 0; i < e0; ++i)
      for (std::size_t j = 0; j < e1; ++j)
        for (std::size_t k = 0; k < e2; ++k) dst[r * srow + i * s0 + j * s1 + k * s2] = m(r, col++);
  }
  return out;
}

template <class T>
Tensor4<T> mode_product(const Tensor4<T>& t, const Matrix<T>& m, int mode, MatrixOp op,
                        MacCounter* counter) {
  check_mode(mode);
  const bool trans = op == MatrixOp::Transposed;
  const std::size_t p_extent = t.shape().extent(mode);
  const std::size_t q_extent = trans ? m.cols() : m.rows();
  const std::size_t contracted = trans ? m.rows() : m.cols();
  if (contracted != p_extent) {
    throw ShapeError("mode_product: matrix contracts " + std::to_string(contracted) +
                     " but mode " + std::to_string(mode) + " of " + t.shape().to_string() +
                     " has extent " + std::to_string(p_extent));
  }
  const auto ext = t.shape().as_array();
  std::size_t outer = 1, inner = 1;
  for (int k = 1; k < mode; ++k) outer *= ext[k - 1];
  for (int k = mode + 1; k <= 4; ++k) inner *= ext[k - 1];

  Tensor4<T> out(t.shape().with_extent(mode, q_extent));
  const auto src = t.data();
  auto dst = out.data();
  std::vector<double> acc(inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t q = 0; q < q_extent; ++q) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t p = 0; p < p_extent; ++p) {
        const double coef = static_cast<double>(trans ? m(p, q) : m(q, p));
        const T* row = src.data() + (o * p_extent + p) * inner;
        for (std::size_t i = 0; i < inner; ++i) acc[i] += coef * static_cast<double>(row[i]);
      }
      T* out_row = dst.data() + (o * q_extent + q) * inner;
      for (std::size_t i = 0; i < inner; ++i) out_row[i] = static_cast<T>(acc[i]);
    }
  }
  if (counter != nullptr) counter->macs += outer * q_extent * p_extent * inner;
  return out;
}

template <class T>
Matrix<T> transpose(const Matrix<T>& m) {
  Matrix<T> out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

template <class T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b, MatrixOp op_a, MatrixOp op_b,
                 MacCounter* counter) {
  const bool ta = op_a == MatrixOp::Transposed;
  const bool tb = op_b == MatrixOp::Transposed;
  const std::size_t n = ta ? a.cols() : a.rows();
  const std::size_t k = ta ? a.rows() : a.cols();
  const std::size_t kb = tb ? b.cols() : b.rows();
  const std::size_t p = tb ? b.rows() : b.cols();
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(k) + " and " +
                     std::to_string(kb) + " differ");
  }
  Matrix<T> out(n, p);
  std::vector<double> acc(p);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t l = 0; l < k; ++l) {
      const double av = static_cast<double>(ta ? a(l, i) : a(i, l));
      if (tb) {
        for (std::size_t j = 0; j < p; ++j) acc[j] += av * static_cast<double>(b(j, l));
      } else {
        const T* brow = b.data().data() + l * p;
        for (std::size_t j = 0; j < p; ++j) acc[j] += av * static_cast<double>(brow[j]);
      }
    }
    for (std::size_t j = 0; j < p; ++j) out(i, j) = static_cast<T>(acc[j]);
  }
  if (counter != nullptr) counter->macs += n * k * p;
  return out;
}

template <class T>
double orthonormality_error(const Matrix<T>& u) {
  double worst = 0.0;
  for (std::size_t i = 0; i < u.cols(); ++i) {
    for (std::size_t j = i; j < u.cols(); ++j) {
      double dot = 0.0;
      for (std::size_t r = 0; r < u.rows(); ++r)
        dot += static_cast<double>(u(r, i)) * static_cast<double>(u(r, j));
      worst = std::max(worst, std::abs(dot - (i == j ? 1.0 : 0.0)));
    }
  }
  return worst;
}

template <class T>
Matrix<T> orthogonalize(const Matrix<T>& m, const OrthogonalizeOptions& options, EventLog* log) {
  const std::size_t a = m.rows();
  const std::size_t r = m.cols();
  if (r > a) {
    throw ShapeError("orthogonalize: " + std::to_string(a) + "x" + std::to_string(r) +
                     " has more columns than rows");
  }
  // Column-major working copy in double.
  std::vector<std::vector<double>> q(r, std::vector<double>(a));
  for (std::size_t j = 0; j < r; ++j)
    for (std::size_t i = 0; i < a; ++i) q[j][i] = static_cast<double>(m(i, j));

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto norm = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  auto project_out = [&](std::vector<double>& v, std::size_t upto) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < upto; ++k) {
        double dot = 0.0;
        for (std::size_t i = 0; i < a; ++i) dot += q[k][i] * v[i];
        for (std::size_t i = 0; i < a; ++i) v[i] -= dot * q[k][i];
      }
    }
  };

  constexpr int kMaxRedraws = 64;
  for (std::size_t j = 0; j < r; ++j) {
    double before = norm(q[j]);
    project_out(q[j], j);
    double after = norm(q[j]);
    int redraws = 0;
    while (before == 0.0 || after <= options.tolerance * before) {
      if (redraws++ == kMaxRedraws) {
        throw std::runtime_error("orthogonalize: could not complete an orthonormal basis");
      }
      report(log, EventLog::Kind::RankDeficientColumn,
             "column " + std::to_string(j) + " of " + std::to_string(a) + "x" +
                 std::to_string(r) + " is numerically dependent; re-drawn");
      for (double& x : q[j]) x = normal(rng);
      before = norm(q[j]);
      project_out(q[j], j);
      after = norm(q[j]);
    }
    for (double& x : q[j]) x /= after;
  }

  Matrix<T> out(a, r);
  for (std::size_t j = 0; j < r; ++j)
    for (std::size_t i = 0; i < a; ++i) out(i, j) = static_cast<T>(q[j][i]);
  return out;
}

SingularSpectrum::SingularSpectrum(std::vector<double> values) : values_(std::move(values)) {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!(values_[i] >= 0.0) || !std::isfinite(values_[i])) {
      throw std::invalid_argument("SingularSpectrum: values must be finite and nonnegative");
    }
    if (i > 0 && values_[i] > values_[i - 1]) {
      throw std::invalid_argument("SingularSpectrum: values must be nonincreasing");
    }
  }
}

double SingularSpectrum::energy() const { return tail_energy(0); }

double SingularSpectrum::tail_energy(std::size_t rank) const {
  double e = 0.0;
  for (std::size_t k = rank; k < values_.size(); ++k) e += values_[k] * values_[k];
  return e;
}

template <class T>
TruncatedSvd<T> truncated_svd(const Matrix<T>& m, std::size_t r) {
  const std::size_t full = std::min(m.rows(), m.cols());
  if (r < 1 || r > full) {
    throw std::out_of_range("truncated_svd: rank " + std::to_string(r) + " outside [1, " +
                            std::to_string(full) + "]");
  }
  const DynMat a = to_eigen(m);
  Eigen::BDCSVD<DynMat> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto rr = static_cast<Eigen::Index>(r);
  std::vector<double> s(r);
  for (std::size_t k = 0; k < r; ++k) s[k] = svd.singularValues()(static_cast<Eigen::Index>(k));
  DynMat u = svd.matrixU().leftCols(rr);
  DynMat v = svd.matrixV().leftCols(rr);
  return {from_eigen<T>(u), SingularSpectrum(std::move(s)), from_eigen<T>(v)};
}

template <class T>
SingularSpectrum singular_values(const Matrix<T>& m) {
  const DynMat a = to_eigen(m);
  Eigen::BDCSVD<DynMat> svd(a);
  const auto& sv = svd.singularValues();
  std::vector<double> s(static_cast<std::size_t>(sv.size()));
  for (Eigen::Index k = 0; k < sv.size(); ++k) s[static_cast<std::size_t>(k)] = sv(k);
  return SingularSpectrum(std::move(s));
}

template <class T>
LeftSingularBasis<T> gram_left_singular(const Matrix<T>& m, EventLog* log) {
  const DynMat a = to_eigen(m);
  const bool rows_side = m.rows() <= m.cols();
  const DynMat gram = rows_side ? DynMat(a * a.transpose()) : DynMat(a.transpose() * a);
  Eigen::SelfAdjointEigenSolver<DynMat> eig(gram);
  const auto n = gram.rows();
  // Eigen sorts eigenvalues ascending.
  std::vector<double> s(static_cast<std::size_t>(n));
  DynMat vecs(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index src = n - 1 - k;
    s[static_cast<std::size_t>(k)] = std::sqrt(std::max(0.0, eig.eigenvalues()(src)));
    vecs.col(k) = eig.eigenvectors().col(src);
  }
  for (std::size_t k = 1; k < s.size(); ++k) s[k] = std::min(s[k], s[k - 1]);

  Matrix<double> u;
  if (rows_side) {
    u = from_eigen<double>(vecs);
  } else {
    // U_k = A v_k / s_k; columns with negligible s_k get completed below.
    DynMat av = a * vecs;
    const double cutoff = (s.empty() ? 0.0 : s.front()) * 1e-12;
    for (Eigen::Index k = 0; k < n; ++k) {
      const double sk = s[static_cast<std::size_t>(k)];
      if (sk > cutoff && sk > 0.0) {
        av.col(k) /= sk;
      } else {
        av.col(k).setZero();
      }
    }
    u = orthogonalize(from_eigen<double>(av), {}, log);
  }
  return {std::move(u), SingularSpectrum(std::move(s))};
}

std::size_t rank_for_variance(const SingularSpectrum& s, double eps, EventLog* log) {
  if (s.size() == 0) throw std::invalid_argument("rank_for_variance: empty spectrum");
  if (!(eps > 0.0 && eps <= 1.0)) {
    throw std::out_of_range("rank_for_variance: eps must lie in (0, 1]");
  }
  const double total = s.energy();
  if (total <= 0.0) {
    report(log, EventLog::Kind::DegenerateSpectrum, "all-zero spectrum; using rank 1");
    return 1;
  }
  // Relative slack so that exact ratios like 8/10 == 0.8 are not lost to rounding.
  constexpr double kSlack = 1e-12;
  if (eps >= 1.0) {
    // Values below this carry under kSlack of the energy: roundoff, not signal.
    const double floor = s[0] * std::sqrt(kSlack);
    std::size_t last = 1;
    for (std::size_t k = 0; k < s.size(); ++k)
      if (s[k] > floor) last = k + 1;
    return last;
  }
  double cum = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    cum += s[k] * s[k];
    if (cum / total >= eps - kSlack) return k + 1;
  }
  return s.size();
}

#define ASI_INSTANTIATE_LINALG(T)                                                             \
  template Matrix<T> unfold<T>(const Tensor4<T>&, int);                                       \
  template Tensor4<T> fold<T>(const Matrix<T>&, int, const Shape4&);                          \
  template Tensor4<T> mode_product<T>(const Tensor4<T>&, const Matrix<T>&, int, MatrixOp,     \
                                      MacCounter*);                                           \
  template Matrix<T> transpose<T>(const Matrix<T>&);                                          \
  template Matrix<T> matmul<T>(const Matrix<T>&, const Matrix<T>&, MatrixOp, MatrixOp,        \
                               MacCounter*);                                                  \
  template double orthonormality_error<T>(const Matrix<T>&);                                  \
  template Matrix<T> orthogonalize<T>(const Matrix<T>&, const OrthogonalizeOptions&,          \
                                      EventLog*);                                             \
  template TruncatedSvd<T> truncated_svd<T>(const Matrix<T>&, std::size_t);                   \
  template SingularSpectrum singular_values<T>(const Matrix<T>&);                             \
  template LeftSingularBasis<T> gram_left_singular<T>(const Matrix<T>&, EventLog*);

ASI_INSTANTIATE_LINALG(float)
ASI_INSTANTIATE_LINALG(double)

#undef ASI_INSTANTIATE_LINALG

}  // namespace asi
