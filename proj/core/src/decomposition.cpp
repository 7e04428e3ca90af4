#include "asi/decomposition.hpp"

#include <random>
#include <sstream>

namespace asi {

RankVector RankVector::full(const Shape4& shape) {
  RankVector r;
  for (int m = 1; m <= 4; ++m) {
    r.r[static_cast<std::size_t>(m - 1)] = std::min(shape.extent(m), shape.complement(m));
  }
  return r;
}

std::string RankVector::to_string() const {
  std::ostringstream os;
  os << '(' << r[0] << ',' << r[1] << ',' << r[2] << ',' << r[3] << ')';
  return os.str();
}

void validate_ranks(const RankVector& r, const Shape4& shape) {
  const RankVector full = RankVector::full(shape);
  for (int m = 1; m <= 4; ++m) {
    if (r[m] < 1 || r[m] > full[m]) {
      throw std::out_of_range("rank " + r.to_string() + " invalid for shape " + shape.to_string() +
                              " (mode " + std::to_string(m) + " allows 1.." +
                              std::to_string(full[m]) + ")");
    }
  }
}

std::uint64_t stored_elements(const RankVector& r, const Shape4& s) {
  validate_ranks(r, s);
  std::uint64_t total = r.product();
  for (int m = 1; m <= 4; ++m) total += static_cast<std::uint64_t>(s.extent(m)) * r[m];
  return total;
}

template <class T>
RankVector TuckerFactors<T>::ranks() const {
  const Shape4& s = core.shape();
  return {s.b, s.c, s.h, s.w};
}

template <class T>
std::size_t TuckerFactors<T>::stored_elements() const {
  std::size_t n = core.size();
  for (const auto& u : factors) n += u.size();
  return n;
}

template <class T>
void TuckerFactors<T>::validate() const {
  for (int m = 1; m <= 4; ++m) {
    const auto& u = factor(m);
    if (u.rows() != source_shape.extent(m) || u.cols() != core.shape().extent(m)) {
      throw ShapeError("TuckerFactors: factor " + std::to_string(m) + " is " +
                       std::to_string(u.rows()) + "x" + std::to_string(u.cols()) +
                       " but source " + source_shape.to_string() + " and core " +
                       core.shape().to_string() + " require " +
                       std::to_string(source_shape.extent(m)) + "x" +
                       std::to_string(core.shape().extent(m)));
    }
  }
}

template <class T>
double TuckerFactors<T>::captured_energy() const {
  const double n = frobenius_norm(core);
  return n * n;
}

namespace {

template <class T>
Tensor4<T> project_core(const Tensor4<T>& t, const std::array<Matrix<T>, 4>& factors) {
  Tensor4<T> core = t;
  for (int m = 1; m <= 4; ++m) {
    core = mode_product(core, factors[static_cast<std::size_t>(m - 1)], m, MatrixOp::Transposed);
  }
  return core;
}

template <class T>
Matrix<T> leading_columns(const Matrix<double>& u, std::size_t r) {
  Matrix<T> out(u.rows(), r);
  for (std::size_t i = 0; i < u.rows(); ++i)
    for (std::size_t j = 0; j < r; ++j) out(i, j) = static_cast<T>(u(i, j));
  return out;
}

}  // namespace

template <class T>
HosvdResult<T> hosvd_variance(const Tensor4<T>& t, double eps, EventLog* log) {
  HosvdResult<T> out;
  out.factors.source_shape = t.shape();
  for (int m = 1; m <= 4; ++m) {
    const auto idx = static_cast<std::size_t>(m - 1);
    auto basis = gram_left_singular(unfold(t, m), log);
    const std::size_t r = rank_for_variance(basis.s, eps, log);
    out.ranks.r[idx] = r;
    out.factors.factors[idx] = leading_columns<T>(basis.u, r);
    out.spectra[idx] = std::move(basis.s);
  }
  out.factors.core = project_core(t, out.factors.factors);
  return out;
}

template <class T>
TuckerFactors<T> hosvd_fixed(const Tensor4<T>& t, const RankVector& r, EventLog* log) {
  validate_ranks(r, t.shape());
  TuckerFactors<T> out;
  out.source_shape = t.shape();
  for (int m = 1; m <= 4; ++m) {
    auto basis = gram_left_singular(unfold(t, m), log);
    out.factors[static_cast<std::size_t>(m - 1)] = leading_columns<T>(basis.u, r[m]);
  }
  out.core = project_core(t, out.factors);
  return out;
}

template <class T>
Tensor4<T> reconstruct(const TuckerFactors<T>& f) {
  f.validate();
  Tensor4<T> out = f.core;
  for (int m = 1; m <= 4; ++m) out = mode_product(out, f.factor(m), m);
  return out;
}

template <class T>
bool WarmStartCache<T>::matches(const Shape4& shape, const RankVector& r) const {
  for (int m = 1; m <= 4; ++m) {
    const auto& u = factors[static_cast<std::size_t>(m - 1)];
    if (u.rows() != shape.extent(m) || u.cols() != r[m]) return false;
  }
  return true;
}

std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t layer, std::uint64_t mode) {
  // splitmix64 finalizer over a combined key.
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(global_seed) ^ layer) ^ (mode + 0x632be59bd9b4e019ULL));
}

template <class T>
AsiResult<T> asi_compress(const Tensor4<T>& t, const RankVector& r,
                          const std::optional<WarmStartCache<T>>& cache, std::uint64_t seed,
                          EventLog* log) {
  validate_ranks(r, t.shape());
  bool warm = cache.has_value();
  if (warm && !cache->matches(t.shape(), r)) {
    report(log, EventLog::Kind::CacheShapeMismatch,
           "warm-start cache does not match shape " + t.shape().to_string() + " ranks " +
               r.to_string() + "; cold start");
    warm = false;
  }

  AsiResult<T> out;
  out.warm_started = warm;
  out.factors.source_shape = t.shape();
  Tensor4<T> core = t;
  for (int m = 1; m <= 4; ++m) {
    const auto idx = static_cast<std::size_t>(m - 1);
    const Matrix<T> a = unfold(t, m);
    Matrix<T> v;
    if (warm) {
      v = matmul(a, cache->factors[idx], MatrixOp::Transposed);
    } else {
      std::mt19937_64 rng(derive_seed(seed, 0, static_cast<std::uint64_t>(m)));
      std::normal_distribution<double> normal(0.0, 1.0);
      v = Matrix<T>(a.cols(), r[m]);
      for (T& x : v.data()) x = static_cast<T>(normal(rng));
    }
    OrthogonalizeOptions opts;
    opts.seed = derive_seed(seed, 1, static_cast<std::uint64_t>(m));
    Matrix<T> u = orthogonalize(matmul(a, v), opts, log);
    core = mode_product(core, u, m, MatrixOp::Transposed);
    out.factors.factors[idx] = std::move(u);
  }
  out.factors.core = std::move(core);
  out.cache.factors = out.factors.factors;
  out.cache.step = warm ? cache->step + 1 : 1;
  return out;
}

#define ASI_INSTANTIATE_DECOMPOSITION(T)                                                      \
  template struct TuckerFactors<T>;                                                           \
  template struct WarmStartCache<T>;                                                          \
  template HosvdResult<T> hosvd_variance<T>(const Tensor4<T>&, double, EventLog*);            \
  template TuckerFactors<T> hosvd_fixed<T>(const Tensor4<T>&, const RankVector&, EventLog*);  \
  template Tensor4<T> reconstruct<T>(const TuckerFactors<T>&);                                \
  template AsiResult<T> asi_compress<T>(const Tensor4<T>&, const RankVector&,                 \
                                        const std::optional<WarmStartCache<T>>&,              \
                                        std::uint64_t, EventLog*);

ASI_INSTANTIATE_DECOMPOSITION(float)
ASI_INSTANTIATE_DECOMPOSITION(double)

#undef ASI_INSTANTIATE_DECOMPOSITION

}  // namespace asi
