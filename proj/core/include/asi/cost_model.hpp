#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "asi/conv.hpp"
#include "asi/decomposition.hpp"

namespace asi::cost {

// All counts are multiply-accumulate operations: one MAC is one FLOP.

/// One warm-started subspace iteration on an a x b matrix at rank r:
/// 2abr + r^3.
std::uint64_t flops_siw(std::uint64_t a, std::uint64_t b, std::uint64_t r);

/// Per-step HOSVD overhead: sum over modes of max(d, P_d)^2 min(d, P_d),
/// P_d the product of the other three extents.
std::uint64_t flops_hosvd(const Shape4& s);

/// Per-step ASI overhead: sum over modes of 2 d d' r_m + r_m^3.
std::uint64_t flops_asi_overhead(const Shape4& s, const RankVector& r);

/// Symbols of one convolution layer.
struct LayerCostInputs {
  Shape4 shape;      // input activation (B, C, H, W)
  ConvSpec conv;     // C', D
  Shape4 out_shape;  // (B, C', H', W')
  RankVector ranks;

  static LayerCostInputs make(const Shape4& input, const ConvSpec& conv, const RankVector& ranks);
};

/// Backward weight-gradient cost from Tucker factors:
/// r1 B C' H' W' + r1 r2 r3 r4 H + r1 r2 r4 H W + r1 r2 C' H' W' D^2 + r2 C' C D^2.
std::uint64_t flops_asi_backward(const LayerCostInputs& in);

struct VanillaFlops {
  std::uint64_t forward = 0;   // D^2 C C' B H W
  std::uint64_t backward = 0;  // D^2 C C' B H' W'
};
VanillaFlops flops_vanilla(const LayerCostInputs& in);

/// (O_vanilla + C_vanilla) / (O_vanilla + O_ASI + C_ASI)
double speedup_ratio(const LayerCostInputs& in);

/// Exact ratio of two integers, kept unreduced so that the numerator is the
/// dense element count and the denominator the stored element count.
struct Ratio {
  std::uint64_t numerator = 0;
  std::uint64_t denominator = 1;
  double value() const { return static_cast<double>(numerator) / static_cast<double>(denominator); }
};

/// B C H W / (r1 r2 r3 r4 + B r1 + C r2 + H r3 + W r4)
Ratio compression_ratio(const Shape4& s, const RankVector& r);

enum class Regime { Vanilla, Hosvd, Asi };
std::string to_string(Regime regime);
Regime parse_regime(const std::string& text);

struct LayerCost {
  std::string layer;
  Regime regime = Regime::Vanilla;
  std::uint64_t forward_flops = 0;
  std::uint64_t backward_flops = 0;
  std::uint64_t compression_overhead_flops = 0;
  std::uint64_t stored_activation_elements = 0;
  double speedup_ratio = 1.0;
  double compression_ratio = 1.0;
  // Reference quantities behind the two ratios (not part of the CSV).
  std::uint64_t vanilla_flops = 0;
  std::uint64_t dense_elements = 0;
};

struct CostReport {
  std::vector<LayerCost> layers;
  /// One totals row per regime present in `layers`.
  std::vector<LayerCost> totals;
};

/// Cost of one layer under a regime. Ranks are ignored for Vanilla.
LayerCost layer_cost(const std::string& name, Regime regime, const LayerCostInputs& in);

/// Builds totals for every regime in `layers` (ratios recomputed from the sums).
CostReport make_report(std::vector<LayerCost> layers);

/// Header: layer,regime,forward_flops,backward_flops,compression_overhead_flops,
/// stored_activation_elements,speedup_ratio,compression_ratio
void write_csv(std::ostream& os, const CostReport& report);

enum class SweepAxis { Rank, Spatial };

/// Plot-ready sweep. Rank: ranks (k,k,k,k) for k = 1..max on `shape`.
/// Spatial: H = W over `spatial_sizes` at ranks `ranks`.
struct SweepRow {
  std::uint64_t h = 0;
  std::uint64_t w = 0;
  RankVector ranks;
  std::uint64_t o_vanilla = 0;
  std::uint64_t c_vanilla = 0;
  std::uint64_t o_hosvd = 0;
  std::uint64_t o_asi = 0;
  std::uint64_t c_asi = 0;
  double speedup_ratio = 0.0;
  double compression_ratio = 0.0;
};

std::vector<SweepRow> sweep_rank(const Shape4& shape, const ConvSpec& conv, std::size_t max_rank);
std::vector<SweepRow> sweep_spatial(const Shape4& shape, const ConvSpec& conv, const RankVector& ranks,
                                    const std::vector<std::size_t>& sizes);
void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);

}  // namespace asi::cost
