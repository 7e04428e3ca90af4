#pragma once

#include <span>
#include <string>
#include <vector>

namespace asi {

/// A trainable array with its gradient and momentum buffer.
struct Parameter {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> value;
  std::vector<float> grad;
  std::vector<float> momentum;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string name_, std::vector<std::size_t> shape_);

  std::size_t size() const { return value.size(); }
  void zero_grad();
};

struct SgdOptions {
  double lr = 0.05;
  double momentum = 0.0;
  double weight_decay = 0.0;
  /// Global L2 clipping threshold; <= 0 disables clipping.
  double clip_l2 = 0.0;
};

struct SgdStats {
  double grad_norm = 0.0;
  double clip_scale = 1.0;
};

/// One SGD step over the trainable parameters: global L2 clip, weight
/// decay, momentum buffer update, parameter update (in that order).
SgdStats sgd_step(std::span<Parameter* const> params, const SgdOptions& options);

}  // namespace asi
