#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "asi/decomposition.hpp"
#include "asi/events.hpp"
#include "asi/network.hpp"

namespace asi {

/// Strictly increasing explained-variance thresholds in (0, 1].
class ThresholdSet {
 public:
  explicit ThresholdSet(std::vector<double> eps);
  /// {0.4, 0.5, 0.6, 0.7, 0.8, 0.9}
  static ThresholdSet defaults();
  static ThresholdSet parse(const std::string& comma_list);

  const std::vector<double>& values() const { return eps_; }
  std::size_t size() const { return eps_.size(); }

 private:
  std::vector<double> eps_;
};

/// Per-layer, per-threshold gradient error, ranks and Tucker storage cost.
struct PerplexityTable {
  std::vector<std::string> layer_names;
  std::vector<Shape4> layer_shapes;
  std::vector<double> eps;
  std::vector<std::vector<double>> perplexity;
  std::vector<std::vector<RankVector>> ranks;
  std::vector<std::vector<std::uint64_t>> mem;

  // Provenance, persisted in the side manifest.
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
  std::string model_hash;

  std::size_t layers() const { return perplexity.size(); }
  std::size_t thresholds() const { return eps.size(); }

  /// Dimensions agree and every mem cell equals stored_elements(ranks, shape).
  void validate() const;
  /// Largest relative increase of perplexity along increasing eps, i.e.
  /// max over layers and j of (P[j+1] - P[j]) / max(P[j], tiny). <= 0 when
  /// every row is nonincreasing.
  double max_monotonicity_violation() const;
};

/// Activation memory limit, in stored elements.
struct MemoryBudget {
  std::uint64_t limit = 0;
};

struct SelectionResult {
  std::vector<std::string> layer_names;
  std::vector<Shape4> layer_shapes;
  std::vector<std::size_t> choice;  // threshold index per layer
  std::vector<double> eps;          // eps of the chosen cell
  std::vector<RankVector> ranks;
  std::vector<std::uint64_t> memory;
  double total_perplexity = 0.0;
  std::uint64_t total_memory = 0;
  std::uint64_t budget = 0;
};

class InfeasibleBudget : public std::runtime_error {
 public:
  InfeasibleBudget(std::uint64_t budget, std::uint64_t minimal);
  std::uint64_t budget() const { return budget_; }
  std::uint64_t minimal_memory() const { return minimal_; }

 private:
  std::uint64_t budget_;
  std::uint64_t minimal_;
};

/// Sum over layers of the smallest mem cell.
std::uint64_t minimal_memory(const PerplexityTable& t);

/// Minimizes sum_i P[i][j_i] subject to sum_i mem[i][j_i] <= budget by
/// depth-first branch-and-bound. Ties resolve to the lexicographically
/// smallest index vector. Throws InfeasibleBudget.
SelectionResult select_ranks(const PerplexityTable& t, const MemoryBudget& b);

/// Exhaustive enumeration with the same objective and tie-break. Throws
/// std::length_error when E^N exceeds 1e7.
SelectionResult brute_force_select(const PerplexityTable& t, const MemoryBudget& b);

/// For each trainable convolution: one dense forward/backward on the batch,
/// then for each threshold the HOSVD_eps truncation of the stored input and
/// ||dW - dW_lowrank||_F. Throws std::runtime_error on non-finite loss or
/// gradients. Parameter gradients are left zeroed.
PerplexityTable measure_perplexity(Network& net, const Tensor4<float>& batch, const std::vector<int>& labels,
                                   const ThresholdSet& thresholds, EventLog* log = nullptr);

// Persistence.

/// CSV `layer,eps,perplexity,r1,r2,r3,r4,mem_elements` plus `<path>.manifest`.
void write_table(const PerplexityTable& t, const std::string& csv_path);
PerplexityTable read_table(const std::string& csv_path);

void write_selection(const SelectionResult& s, const std::string& path);
SelectionResult read_selection(const std::string& path);

}  // namespace asi
