#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "asi/cost_model.hpp"
#include "asi/events.hpp"
#include "asi/harness/checkpoint.hpp"
#include "asi/harness/config.hpp"
#include "asi/harness/dataset.hpp"
#include "asi/network.hpp"
#include "asi/rank_selection.hpp"

namespace asi::harness {

/// One line of the metrics stream, emitted at the end of every epoch.
struct MetricsRecord {
  std::size_t step = 0;   // global steps completed
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean training loss over the epoch's steps
  double accuracy = 0.0;  // validation accuracy in [0, 1]
  double train_accuracy = 0.0;
  /// Peak per-step stored elements of the trainable convolutions in this
  /// epoch (the budgeted quantity). Bytes = elements * 4.
  std::uint64_t stored_activation_elements = 0;
  std::uint64_t head_stored_elements = 0;  // dense fc inputs, outside the budget
  std::uint64_t relu_mask_elements = 0;    // outside the budget
  std::uint64_t cumulative_flops = 0;
  double wall_seconds = 0.0;
  double mean_reconstruction_error = 0.0;
};

std::string to_json_line(const MetricsRecord& m);

struct StepRecord {
  std::size_t step = 0;  // 1-based
  std::size_t epoch = 0;
  double loss = 0.0;
  std::uint64_t stored_elements = 0;
  /// Mean relative reconstruction error over compressed layers (0 when
  /// nothing is compressed or tracking is off).
  double reconstruction_error = 0.0;
};

struct TrainingOptions {
  /// Continue from a checkpoint written by an earlier run of the same config.
  std::optional<CheckpointBundle> resume;
  /// Precomputed selection; overrides cfg.selection / cfg.budget lookup.
  std::optional<SelectionResult> selection;
  std::function<void(const MetricsRecord&)> on_epoch;
  std::function<void(const StepRecord&)> on_step;
};

struct TrainingOutcome {
  std::vector<MetricsRecord> epochs;
  std::vector<StepRecord> steps;
  CheckpointBundle checkpoint;
  std::uint64_t peak_stored_elements = 0;
  /// Dense element count of the trainable convolutions' inputs.
  std::uint64_t dense_trainable_elements = 0;
  std::optional<SelectionResult> selection;
  /// Per trainable convolution, ranks used for the cost report (for hosvd
  /// the ranks of the peak-memory step).
  std::map<std::string, RankVector> ranks;
  cost::CostReport cost;
  double mean_reconstruction_error = 0.0;
  double final_validation_accuracy = 0.0;
  EventLog events;
};

/// Thrown by the divergence guard.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when the asi regime exceeds its budget at some step.
class BudgetViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// The layer list used for cfg.model (expands "toy").
std::string model_spec(const TrainConfig& cfg, const Dataset& data);

/// Network with initial weights (seeded, or from cfg.init_checkpoint) and the
/// trainable suffix applied.
Network build_network(const TrainConfig& cfg, const Dataset& data);

/// Perplexity table on the first calib_batch samples of the epoch-0 order,
/// measured at the initial weights.
PerplexityTable calibrate(const TrainConfig& cfg, EventLog* log = nullptr);

/// Calibration followed by branch-and-bound selection under cfg.budget.
SelectionResult calibrate_and_select(const TrainConfig& cfg, EventLog* log = nullptr);

TrainingOutcome run_training(const TrainConfig& cfg, const TrainingOptions& options = {});

}  // namespace asi::harness
