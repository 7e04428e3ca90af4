#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "asi/cost_model.hpp"
#include "asi/kv_text.hpp"

namespace asi::harness {

enum class LrSchedule { Constant, Cosine };

/// Training configuration. Every field maps to one config key (see
/// docs in README.md); unknown keys are rejected.
struct TrainConfig {
  /// Layer list (Network::from_spec grammar) or "toy" for the default
  /// conv(3->8) relu conv(8->16) relu gap fc model sized to the dataset.
  std::string model = "toy";
  cost::Regime regime = cost::Regime::Vanilla;
  double eps = 0.8;
  std::uint64_t budget = 0;          // elements; 0 = not set
  std::string selection;             // SelectionResult file for the asi regime
  std::string asi_ranks;             // "" or "full"
  std::string thresholds = "0.4,0.5,0.6,0.7,0.8,0.9";
  std::size_t layers = 0;            // fine-tuned parametric layers from the end; 0 = all
  std::size_t epochs = 5;
  std::size_t batch_size = 8;
  std::size_t calib_batch = 8;
  double lr = 0.05;
  LrSchedule lr_schedule = LrSchedule::Cosine;
  double momentum = 0.0;
  double weight_decay = 1e-4;
  double clip = 2.0;
  std::uint64_t seed = 0;
  std::string dataset = "synthetic:4:100:7";
  bool warm_start = true;
  std::size_t max_steps = 0;         // 0 = run all epochs
  bool track_error = true;
  std::string init_checkpoint;       // optional pre-trained weights

  /// Applies one key. Throws std::invalid_argument for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  static TrainConfig from_document(const KeyValueDocument& doc);
  static TrainConfig load(const std::string& path);
  /// Every key with its current value.
  KeyValueDocument to_document() const;
  /// CRC-32 of the canonical document, excluding keys that do not change
  /// the training trajectory (max_steps, track_error).
  std::string hash() const;
  /// Regime-specific consistency checks.
  void validate() const;

  static const std::vector<std::string>& keys();
};

std::string to_string(LrSchedule s);

/// Learning rate at `step` of `total_steps`.
double learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t total_steps);

}  // namespace asi::harness
