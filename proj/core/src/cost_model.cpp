#include "asi/cost_model.hpp"

#include <algorithm>
#include <iomanip>
#include <map>
#include <ostream>
#include <stdexcept>

namespace asi::cost {
namespace {

std::uint64_t mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t out = 0;
  if (__builtin_mul_overflow(a, b, &out)) throw std::overflow_error("cost model: 64-bit overflow");
  return out;
}

std::uint64_t add(std::uint64_t a, std::uint64_t b) {
  std::uint64_t out = 0;
  if (__builtin_add_overflow(a, b, &out)) throw std::overflow_error("cost model: 64-bit overflow");
  return out;
}

template <class... Ts>
std::uint64_t mul(std::uint64_t a, std::uint64_t b, Ts... rest) {
  return mul(mul(a, b), static_cast<std::uint64_t>(rest)...);
}

}  // namespace

std::uint64_t flops_siw(std::uint64_t a, std::uint64_t b, std::uint64_t r) {
  if (a == 0 || b == 0) throw std::invalid_argument("flops_siw: matrix extents must be >= 1");
  if (r < 1 || r > std::min(a, b)) {
    throw std::out_of_range("flops_siw: rank " + std::to_string(r) + " outside [1, min(a, b)]");
  }
  return add(mul(2, a, b, r), mul(r, r, r));
}

std::uint64_t flops_hosvd(const Shape4& s) {
  std::uint64_t total = 0;
  for (int m = 1; m <= 4; ++m) {
    const std::uint64_t d = s.extent(m);
    const std::uint64_t p = s.complement(m);
    const std::uint64_t hi = std::max(d, p), lo = std::min(d, p);
    total = add(total, mul(hi, hi, lo));
  }
  return total;
}

std::uint64_t flops_asi_overhead(const Shape4& s, const RankVector& r) {
  validate_ranks(r, s);
  std::uint64_t total = 0;
  for (int m = 1; m <= 4; ++m) total = add(total, flops_siw(s.extent(m), s.complement(m), r[m]));
  return total;
}

LayerCostInputs LayerCostInputs::make(const Shape4& input, const ConvSpec& conv, const RankVector& ranks) {
  return {input, conv, conv.output_shape(input), ranks};
}

namespace {

void require_stride_one(const LayerCostInputs& in) {
  if (in.conv.stride != 1) {
    throw std::invalid_argument("cost formulas are defined for stride-1 convolutions");
  }
  if (!(in.out_shape == in.conv.output_shape(in.shape))) {
    throw ShapeError("LayerCostInputs: out_shape inconsistent with shape and conv");
  }
}

}  // namespace

std::uint64_t flops_asi_backward(const LayerCostInputs& in) {
  require_stride_one(in);
  validate_ranks(in.ranks, in.shape);
  const auto& r = in.ranks;
  const std::uint64_t b = in.shape.b, c = in.shape.c, h = in.shape.h, w = in.shape.w;
  const std::uint64_t cp = in.out_shape.c, hp = in.out_shape.h, wp = in.out_shape.w;
  const std::uint64_t d2 = mul(in.conv.kernel, in.conv.kernel);
  std::uint64_t total = mul(r[1], b, cp, hp, wp);
  total = add(total, mul(r[1], r[2], r[3], r[4], h));
  total = add(total, mul(r[1], r[2], r[4], h, w));
  total = add(total, mul(r[1], r[2], cp, hp, wp, d2));
  total = add(total, mul(r[2], cp, c, d2));
  return total;
}

VanillaFlops flops_vanilla(const LayerCostInputs& in) {
  require_stride_one(in);
  const std::uint64_t d2 = mul(in.conv.kernel, in.conv.kernel);
  const std::uint64_t base = mul(d2, in.shape.c, in.out_shape.c, in.shape.b);
  return {mul(base, in.shape.h, in.shape.w), mul(base, in.out_shape.h, in.out_shape.w)};
}

double speedup_ratio(const LayerCostInputs& in) {
  const auto v = flops_vanilla(in);
  const double num = static_cast<double>(add(v.forward, v.backward));
  const double den = static_cast<double>(
      add(add(v.forward, flops_asi_overhead(in.shape, in.ranks)), flops_asi_backward(in)));
  return num / den;
}

Ratio compression_ratio(const Shape4& s, const RankVector& r) {
  return {static_cast<std::uint64_t>(s.size()), stored_elements(r, s)};
}

std::string to_string(Regime regime) {
  switch (regime) {
    case Regime::Vanilla: return "vanilla";
    case Regime::Hosvd: return "hosvd";
    case Regime::Asi: return "asi";
  }
  return "unknown";
}

Regime parse_regime(const std::string& text) {
  if (text == "vanilla") return Regime::Vanilla;
  if (text == "hosvd") return Regime::Hosvd;
  if (text == "asi") return Regime::Asi;
  throw std::invalid_argument("unknown regime '" + text + "' (expected vanilla, hosvd or asi)");
}

LayerCost layer_cost(const std::string& name, Regime regime, const LayerCostInputs& in) {
  const auto v = flops_vanilla(in);
  LayerCost out;
  out.layer = name;
  out.regime = regime;
  out.forward_flops = v.forward;
  const std::uint64_t dense = in.shape.size();
  switch (regime) {
    case Regime::Vanilla:
      out.backward_flops = v.backward;
      out.stored_activation_elements = dense;
      break;
    case Regime::Hosvd:
      out.backward_flops = flops_asi_backward(in);
      out.compression_overhead_flops = flops_hosvd(in.shape);
      out.stored_activation_elements = stored_elements(in.ranks, in.shape);
      break;
    case Regime::Asi:
      out.backward_flops = flops_asi_backward(in);
      out.compression_overhead_flops = flops_asi_overhead(in.shape, in.ranks);
      out.stored_activation_elements = stored_elements(in.ranks, in.shape);
      break;
  }
  out.vanilla_flops = add(v.forward, v.backward);
  out.dense_elements = dense;
  out.speedup_ratio = static_cast<double>(out.vanilla_flops) /
                      static_cast<double>(out.forward_flops + out.compression_overhead_flops + out.backward_flops);
  out.compression_ratio = static_cast<double>(dense) / static_cast<double>(out.stored_activation_elements);
  return out;
}

CostReport make_report(std::vector<LayerCost> layers) {
  CostReport report;
  std::map<Regime, LayerCost> totals;
  for (const auto& l : layers) {
    auto& t = totals[l.regime];
    t.layer = "total";
    t.regime = l.regime;
    t.forward_flops = add(t.forward_flops, l.forward_flops);
    t.backward_flops = add(t.backward_flops, l.backward_flops);
    t.compression_overhead_flops = add(t.compression_overhead_flops, l.compression_overhead_flops);
    t.stored_activation_elements = add(t.stored_activation_elements, l.stored_activation_elements);
    t.vanilla_flops = add(t.vanilla_flops, l.vanilla_flops);
    t.dense_elements = add(t.dense_elements, l.dense_elements);
  }
  for (auto& [regime, t] : totals) {
    t.speedup_ratio = static_cast<double>(t.vanilla_flops) /
                      static_cast<double>(t.forward_flops + t.compression_overhead_flops + t.backward_flops);
    t.compression_ratio = static_cast<double>(t.dense_elements) / static_cast<double>(t.stored_activation_elements);
    report.totals.push_back(t);
  }
  report.layers = std::move(layers);
  return report;
}

void write_csv(std::ostream& os, const CostReport& report) {
  os << "layer,regime,forward_flops,backward_flops,compression_overhead_flops,"
        "stored_activation_elements,speedup_ratio,compression_ratio\n";
  auto row = [&os](const LayerCost& l) {
    os << l.layer << ',' << to_string(l.regime) << ',' << l.forward_flops << ',' << l.backward_flops << ','
       << l.compression_overhead_flops << ',' << l.stored_activation_elements << ',' << std::setprecision(10)
       << l.speedup_ratio << ',' << l.compression_ratio << '\n';
  };
  for (const auto& l : report.layers) row(l);
  for (const auto& t : report.totals) row(t);
}

namespace {

SweepRow sweep_row(const Shape4& shape, const ConvSpec& conv, const RankVector& r) {
  const auto in = LayerCostInputs::make(shape, conv, r);
  const auto v = flops_vanilla(in);
  SweepRow row;
  row.h = shape.h;
  row.w = shape.w;
  row.ranks = r;
  row.o_vanilla = v.forward;
  row.c_vanilla = v.backward;
  row.o_hosvd = flops_hosvd(shape);
  row.o_asi = flops_asi_overhead(shape, r);
  row.c_asi = flops_asi_backward(in);
  row.speedup_ratio = speedup_ratio(in);
  row.compression_ratio = compression_ratio(shape, r).value();
  return row;
}

}  // namespace

std::vector<SweepRow> sweep_rank(const Shape4& shape, const ConvSpec& conv, std::size_t max_rank) {
  const RankVector full = RankVector::full(shape);
  std::size_t limit = max_rank;
  for (int m = 1; m <= 4; ++m) limit = std::min(limit, full[m]);
  std::vector<SweepRow> rows;
  for (std::size_t k = 1; k <= limit; ++k) rows.push_back(sweep_row(shape, conv, {k, k, k, k}));
  return rows;
}

std::vector<SweepRow> sweep_spatial(const Shape4& shape, const ConvSpec& conv, const RankVector& ranks,
                                    const std::vector<std::size_t>& sizes) {
  std::vector<SweepRow> rows;
  for (std::size_t hw : sizes) rows.push_back(sweep_row(Shape4(shape.b, shape.c, hw, hw), conv, ranks));
  return rows;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "h,w,r1,r2,r3,r4,o_vanilla,c_vanilla,o_hosvd,o_asi,c_asi,speedup_ratio,compression_ratio\n";
  for (const auto& r : rows) {
    os << r.h << ',' << r.w << ',' << r.ranks[1] << ',' << r.ranks[2] << ',' << r.ranks[3] << ','
       << r.ranks[4] << ',' << r.o_vanilla << ',' << r.c_vanilla << ',' << r.o_hosvd << ',' << r.o_asi << ','
       << r.c_asi << ',' << std::setprecision(10) << r.speedup_ratio << ',' << r.compression_ratio << '\n';
  }
}

}  // namespace asi::cost
