#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "asi/events.hpp"
#include "asi/linalg.hpp"
#include "asi/tensor.hpp"

namespace asi {

/// One truncation rank per mode (batch, channel, height, width).
struct RankVector {
  std::array<std::size_t, 4> r{1, 1, 1, 1};

  RankVector() = default;
  RankVector(std::size_t r1, std::size_t r2, std::size_t r3, std::size_t r4) : r{r1, r2, r3, r4} {}

  std::size_t operator[](int mode) const { return r[static_cast<std::size_t>(mode - 1)]; }
  std::size_t product() const { return r[0] * r[1] * r[2] * r[3]; }

  /// Full ranks for `shape`: min(extent, complement) per mode.
  static RankVector full(const Shape4& shape);

  bool operator==(const RankVector&) const = default;
  std::string to_string() const;
};

/// Throws std::out_of_range unless 1 <= r_m <= min(a_m, b_m) for every mode.
void validate_ranks(const RankVector& r, const Shape4& shape);

/// Tucker form: core (r1,r2,r3,r4) and orthonormal factors U_m (extent_m x r_m).
template <class T>
struct TuckerFactors {
  Tensor4<T> core;
  std::array<Matrix<T>, 4> factors;
  Shape4 source_shape;

  const Matrix<T>& factor(int mode) const { return factors[static_cast<std::size_t>(mode - 1)]; }
  RankVector ranks() const;
  /// Number of scalars actually held (core plus all factor entries).
  std::size_t stored_elements() const;
  /// Throws ShapeError if the core, factors and source shape disagree.
  void validate() const;
  /// ||core||_F^2, the energy captured by the projection.
  double captured_energy() const;
};

/// Storage of a Tucker form with ranks r on shape s:
/// r1 r2 r3 r4 + B r1 + C r2 + H r3 + W r4.
std::uint64_t stored_elements(const RankVector& r, const Shape4& s);

template <class T>
struct HosvdResult {
  TuckerFactors<T> factors;
  RankVector ranks;
  /// Spectrum of each mode-m unfolding.
  std::array<SingularSpectrum, 4> spectra;
};

/// HOSVD with per-mode ranks from the explained-variance threshold eps.
template <class T>
HosvdResult<T> hosvd_variance(const Tensor4<T>& t, double eps, EventLog* log = nullptr);

/// HOSVD truncated to the given ranks.
template <class T>
TuckerFactors<T> hosvd_fixed(const Tensor4<T>& t, const RankVector& r, EventLog* log = nullptr);

/// core x_1 U_1 x_2 U_2 x_3 U_3 x_4 U_4
template <class T>
Tensor4<T> reconstruct(const TuckerFactors<T>& f);

/// Previous-step factors for one layer.
template <class T>
struct WarmStartCache {
  std::array<Matrix<T>, 4> factors;
  /// Number of compress calls folded into this cache.
  std::uint64_t step = 0;

  bool matches(const Shape4& shape, const RankVector& r) const;
};

template <class T>
struct AsiResult {
  TuckerFactors<T> factors;
  WarmStartCache<T> cache;
  bool warm_started = false;
};

/// Derives an independent per-(layer, mode) seed from a global seed.
std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t layer, std::uint64_t mode);

/// One warm-started subspace-iteration step per mode. Without a cache (or
/// with a cache whose shapes no longer match, reported as
/// CacheShapeMismatch) the iteration starts from a Gaussian draw seeded by
/// derive_seed(seed, 0, mode).
template <class T>
AsiResult<T> asi_compress(const Tensor4<T>& t, const RankVector& r,
                          const std::optional<WarmStartCache<T>>& cache, std::uint64_t seed,
                          EventLog* log = nullptr);

}  // namespace asi
