#pragma once

#include <span>
#include <variant>
#include <vector>

#include "asi/decomposition.hpp"
#include "asi/linalg.hpp"
#include "asi/tensor.hpp"

namespace asi {

/// 2-D convolution hyperparameters. Weights are laid out (C', C, D, D).
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  void validate() const;
  Shape4 weight_shape() const { return {out_channels, in_channels, kernel, kernel}; }
  /// floor((H + 2p - D) / s) + 1 per spatial axis.
  Shape4 output_shape(const Shape4& input) const;
};

/// Weight and input gradients of one layer.
template <class T>
struct LayerGradients {
  Tensor4<T> weight;
  Tensor4<T> input;
  std::vector<T> bias;
};

/// What a layer kept from its forward pass for the weight gradient.
/// monostate marks a frozen layer.
template <class T>
using ActivationStore = std::variant<std::monostate, Tensor4<T>, TuckerFactors<T>>;

template <class T>
std::size_t stored_elements(const ActivationStore<T>& store);

/// Cross-correlation with zero padding. One MAC is counted per (output
/// element, input channel, kernel tap), padded taps included.
template <class T>
Tensor4<T> conv_forward(const Tensor4<T>& x, const Tensor4<T>& w, const ConvSpec& spec,
                        MacCounter* counter = nullptr);

/// y[:, c, :, :] += bias[c]
template <class T>
void add_channel_bias(Tensor4<T>& y, std::span<const T> bias);

/// dL/db: sum of grad_out over batch and spatial positions.
template <class T>
std::vector<T> bias_gradient(const Tensor4<T>& grad_out);

/// dL/dW = conv(A, dL/dY). Counts D^2 C C' B H' W' MACs.
template <class T>
Tensor4<T> conv_backward_weight(const Tensor4<T>& x, const Tensor4<T>& grad_out,
                                const ConvSpec& spec, MacCounter* counter = nullptr);

/// dL/dA: full correlation of grad_out with the 180-degree rotated kernel.
template <class T>
Tensor4<T> conv_backward_input(const Tensor4<T>& w, const Tensor4<T>& grad_out,
                               const ConvSpec& spec, const Shape4& input_shape,
                               MacCounter* counter = nullptr);

/// dL/dW computed from Tucker factors of the stored input without
/// reconstructing it. Contraction order:
///   1. grad_out x_1 U_1^T                (r1 B C' H' W')
///   2. core x_3 U_3                      (r1 r2 r3 r4 H)
///   3.      x_4 U_4                      (r1 r2 r4 H W)
///   4. spatial weight-gradient contraction of 2-3 against 1 (r1 r2 C' H' W' D^2)
///   5. x_2 U_2 back to input channels    (r2 C' C D^2)
template <class T>
Tensor4<T> conv_backward_weight_lowrank(const TuckerFactors<T>& f, const Tensor4<T>& grad_out,
                                        const ConvSpec& spec, MacCounter* counter = nullptr);

// Fully-connected layer: x is (B x F), w is (O x F).

template <class T>
Matrix<T> fc_forward(const Matrix<T>& x, const Matrix<T>& w, std::span<const T> bias,
                     MacCounter* counter = nullptr);

template <class T>
struct FcGradients {
  Matrix<T> weight;
  Matrix<T> input;
  std::vector<T> bias;
};

template <class T>
FcGradients<T> fc_backward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& grad_out,
                           MacCounter* counter = nullptr);

/// Rank-r factorization x ~= left * right^T of a stored (B x F) activation,
/// left = U diag(s) (B x r), right = V (F x r).
template <class T>
struct LowRankActivation {
  Matrix<T> left;
  Matrix<T> right;

  std::size_t stored_elements() const { return left.size() + right.size(); }
};

template <class T>
LowRankActivation<T> compress_activation(const Matrix<T>& x, std::size_t rank);

/// dL/dW = (grad_out^T left) right^T
template <class T>
Matrix<T> fc_backward_weight_lowrank(const LowRankActivation<T>& x, const Matrix<T>& grad_out,
                                     MacCounter* counter = nullptr);

/// ReLU forward returning the output; mask holds 1 where input > 0.
template <class T>
Tensor4<T> relu_forward(const Tensor4<T>& x, std::vector<std::uint8_t>& mask);

template <class T>
Tensor4<T> relu_backward(const Tensor4<T>& grad_out, const std::vector<std::uint8_t>& mask);

}  // namespace asi
