#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "asi/conv.hpp"
#include "asi/optim.hpp"

namespace asi {

struct ConvLayer {
  ConvSpec spec;
  Parameter weight;
  Parameter bias;
};

struct FcLayer {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  Parameter weight;
  Parameter bias;
};

struct ReluLayer {};
struct GlobalAvgPoolLayer {};

using Layer = std::variant<ConvLayer, ReluLayer, GlobalAvgPoolLayer, FcLayer>;

/// Decides what a trainable convolution keeps from its forward pass.
class ActivationPolicy {
 public:
  virtual ~ActivationPolicy() = default;
  /// `conv_index` counts convolutions from the network input (0-based).
  virtual ActivationStore<float> store(std::size_t conv_index, const Tensor4<float>& input) = 0;
};

/// Per-layer forward state needed by backward.
struct Tape {
  struct Entry {
    Shape4 input_shape;
    ActivationStore<float> conv_store;
    Matrix<float> fc_input;
    bool has_fc_input = false;
    std::vector<std::uint8_t> relu_mask;
  };
  std::vector<Entry> entries;
  /// Filled by backward when record_conv_grad_out is set: dL/dY per layer
  /// index (empty tensors for non-conv layers).
  std::vector<Tensor4<float>> conv_grad_out;
  bool record_conv_grad_out = false;

  std::size_t conv_stored_elements() const;
  std::size_t fc_stored_elements() const;
  std::size_t relu_mask_elements() const;
};

struct LossResult {
  double loss = 0.0;
  std::size_t correct = 0;
  Matrix<float> grad;
};

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.
LossResult softmax_cross_entropy(const Matrix<float>& logits, const std::vector<int>& labels);

/// Sequential stack of conv / ReLU / global-average-pool / fully-connected
/// layers with a fixed backward schedule.
class Network {
 public:
  /// Grammar: comma-separated items `conv:C:C':D:stride:pad`, `relu`, `gap`,
  /// `fc:in:out`.
  static Network from_spec(const std::string& spec);

  const std::string& spec() const { return spec_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  /// He-normal weights, zero biases.
  void initialize(std::uint64_t seed);

  /// Layer indices holding parameters, in network order.
  std::vector<std::size_t> parametric_layers() const;
  /// Marks the last `count` parametric layers trainable, the rest frozen.
  void set_trainable_suffix(std::size_t count);
  bool is_trainable(std::size_t layer) const;
  /// Ordinal among convolutions, or npos for other layers.
  std::size_t conv_index(std::size_t layer) const;
  std::size_t conv_count() const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  void zero_grad();

  /// Input shape of every layer for a given network input shape.
  std::vector<Shape4> layer_input_shapes(const Shape4& input) const;

  /// Returns logits as a (B x classes) matrix. Trainable convolutions store
  /// their input through `policy` (dense copies when null).
  Matrix<float> forward(const Tensor4<float>& x, ActivationPolicy* policy, Tape& tape,
                        MacCounter* counter = nullptr) const;

  /// Accumulates weight gradients of trainable layers into Parameter::grad.
  /// Input gradients flow through frozen layers as long as some earlier
  /// layer is trainable.
  void backward(Tape& tape, const Matrix<float>& grad_logits, MacCounter* counter = nullptr);

 private:
  std::string spec_;
  std::vector<Layer> layers_;
};

}  // namespace asi
