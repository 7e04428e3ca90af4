#include "asi/conv.hpp"

#include <stdexcept>

namespace asi {

void ConvSpec::validate() const {
  if (in_channels < 1 || out_channels < 1 || kernel < 1 || stride < 1) {
    throw std::invalid_argument("ConvSpec: channels, kernel and stride must be >= 1");
  }
}

Shape4 ConvSpec::output_shape(const Shape4& input) const {
  validate();
  if (input.c != in_channels) {
    throw ShapeError("conv: input " + input.to_string() + " has " + std::to_string(input.c) +
                     " channels, layer expects " + std::to_string(in_channels));
  }
  if (input.h + 2 * padding < kernel || input.w + 2 * padding < kernel) {
    throw ShapeError("conv: kernel " + std::to_string(kernel) + " larger than padded input " +
                     input.to_string());
  }
  return {input.b, out_channels, (input.h + 2 * padding - kernel) / stride + 1,
          (input.w + 2 * padding - kernel) / stride + 1};
}

template <class T>
std::size_t stored_elements(const ActivationStore<T>& store) {
  if (const auto* dense = std::get_if<Tensor4<T>>(&store)) return dense->size();
  if (const auto* tucker = std::get_if<TuckerFactors<T>>(&store)) return tucker->stored_elements();
  return 0;
}

namespace {

void check_weight(const Shape4& w, const ConvSpec& spec) {
  if (!(w == spec.weight_shape())) {
    throw ShapeError("conv: weight " + w.to_string() + " does not match spec " +
                     spec.weight_shape().to_string());
  }
}

void check_grad_out(const Shape4& g, const Shape4& expected) {
  if (!(g == expected)) {
    throw ShapeError("conv: grad_out " + g.to_string() + " expected " + expected.to_string());
  }
}

// Input coordinate for an output coordinate and kernel tap; false when the
// tap lands in the zero padding.
inline bool input_coord(std::size_t out, std::size_t tap, const ConvSpec& s, std::size_t extent,
                        std::size_t& in) {
  const std::size_t shifted = out * s.stride + tap;
  if (shifted < s.padding) return false;
  in = shifted - s.padding;
  return in < extent;
}

template <bool kCount, class T>
Tensor4<T> forward_kernel(const Tensor4<T>& x, const Tensor4<T>& w, const ConvSpec& spec,
                          std::uint64_t& macs) {
  const Shape4 xs = x.shape();
  const Shape4 ys = spec.output_shape(xs);
  const std::size_t d = spec.kernel;
  Tensor4<T> y(ys);
  for (std::size_t n = 0; n < ys.b; ++n)
    for (std::size_t co = 0; co < ys.c; ++co)
      for (std::size_t oh = 0; oh < ys.h; ++oh)
        for (std::size_t ow = 0; ow < ys.w; ++ow) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < xs.c; ++ci)
            for (std::size_t kh = 0; kh < d; ++kh) {
              std::size_t ih = 0;
              const bool row_ok = input_coord(oh, kh, spec, xs.h, ih);
              for (std::size_t kw = 0; kw < d; ++kw) {
                std::size_t iw = 0;
                const double xv =
                    (row_ok && input_coord(ow, kw, spec, xs.w, iw)) ? static_cast<double>(x(n, ci, ih, iw)) : 0.0;
                acc += static_cast<double>(w(co, ci, kh, kw)) * xv;
                if constexpr (kCount) ++macs;
              }
            }
          y(n, co, oh, ow) = static_cast<T>(acc);
        }
  return y;
}

template <bool kCount, class T>
Tensor4<T> weight_grad_kernel(const Tensor4<T>& x, const Tensor4<T>& g, const ConvSpec& spec,
                              std::uint64_t& macs) {
  const Shape4 xs = x.shape();
  const Shape4 gs = g.shape();
  const std::size_t d = spec.kernel;
  Tensor4<T> dw(spec.weight_shape());
  for (std::size_t co = 0; co < spec.out_channels; ++co)
    for (std::size_t ci = 0; ci < spec.in_channels; ++ci)
      for (std::size_t kh = 0; kh < d; ++kh)
        for (std::size_t kw = 0; kw < d; ++kw) {
          double acc = 0.0;
          for (std::size_t n = 0; n < gs.b; ++n)
            for (std::size_t oh = 0; oh < gs.h; ++oh) {
              std::size_t ih = 0;
              const bool row_ok = input_coord(oh, kh, spec, xs.h, ih);
              for (std::size_t ow = 0; ow < gs.w; ++ow) {
                std::size_t iw = 0;
                const double xv =
                    (row_ok && input_coord(ow, kw, spec, xs.w, iw)) ? static_cast<double>(x(n, ci, ih, iw)) : 0.0;
                acc += static_cast<double>(g(n, co, oh, ow)) * xv;
                if constexpr (kCount) ++macs;
              }
            }
          dw(co, ci, kh, kw) = static_cast<T>(acc);
        }
  return dw;
}

template <bool kCount, class T>
Tensor4<T> input_grad_kernel(const Tensor4<T>& w, const Tensor4<T>& g, const ConvSpec& spec,
                             const Shape4& xs, std::uint64_t& macs) {
  const Shape4 gs = g.shape();
  const std::size_t d = spec.kernel;
  std::vector<double> acc(xs.size(), 0.0);
  const std::size_t plane = xs.h * xs.w;
  for (std::size_t n = 0; n < gs.b; ++n)
    for (std::size_t co = 0; co < gs.c; ++co)
      for (std::size_t oh = 0; oh < gs.h; ++oh)
        for (std::size_t ow = 0; ow < gs.w; ++ow) {
          const double gv = static_cast<double>(g(n, co, oh, ow));
          for (std::size_t ci = 0; ci < xs.c; ++ci) {
            double* dst = acc.data() + (n * xs.c + ci) * plane;
            for (std::size_t kh = 0; kh < d; ++kh) {
              std::size_t ih = 0;
              if (!input_coord(oh, kh, spec, xs.h, ih)) continue;
              for (std::size_t kw = 0; kw < d; ++kw) {
                std::size_t iw = 0;
                if (!input_coord(ow, kw, spec, xs.w, iw)) continue;
                dst[ih * xs.w + iw] += gv * static_cast<double>(w(co, ci, kh, kw));
                if constexpr (kCount) ++macs;
              }
            }
          }
        }
  std::vector<T> out(acc.begin(), acc.end());
  return Tensor4<T>(xs, std::move(out));
}

}  // namespace

template <class T>
Tensor4<T> conv_forward(const Tensor4<T>& x, const Tensor4<T>& w, const ConvSpec& spec,
                        MacCounter* counter) {
  check_weight(w.shape(), spec);
  std::uint64_t macs = 0;
  if (counter == nullptr) return forward_kernel<false>(x, w, spec, macs);
  auto y = forward_kernel<true>(x, w, spec, macs);
  counter->macs += macs;
  return y;
}

template <class T>
void add_channel_bias(Tensor4<T>& y, std::span<const T> bias) {
  const Shape4 s = y.shape();
  if (bias.size() != s.c) throw ShapeError("bias length does not match channel count");
  const std::size_t plane = s.h * s.w;
  auto data = y.data();
  for (std::size_t n = 0; n < s.b; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      T* p = data.data() + (n * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += bias[c];
    }
}

template <class T>
std::vector<T> bias_gradient(const Tensor4<T>& g) {
  const Shape4 s = g.shape();
  const std::size_t plane = s.h * s.w;
  std::vector<double> acc(s.c, 0.0);
  const auto data = g.data();
  for (std::size_t n = 0; n < s.b; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* p = data.data() + (n * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) acc[c] += static_cast<double>(p[i]);
    }
  return std::vector<T>(acc.begin(), acc.end());
}

template <class T>
Tensor4<T> conv_backward_weight(const Tensor4<T>& x, const Tensor4<T>& grad_out,
                                const ConvSpec& spec, MacCounter* counter) {
  check_grad_out(grad_out.shape(), spec.output_shape(x.shape()));
  std::uint64_t macs = 0;
  if (counter == nullptr) return weight_grad_kernel<false>(x, grad_out, spec, macs);
  auto dw = weight_grad_kernel<true>(x, grad_out, spec, macs);
  counter->macs += macs;
  return dw;
}

template <class T>
Tensor4<T> conv_backward_input(const Tensor4<T>& w, const Tensor4<T>& grad_out,
                               const ConvSpec& spec, const Shape4& input_shape,
                               MacCounter* counter) {
  check_weight(w.shape(), spec);
  check_grad_out(grad_out.shape(), spec.output_shape(input_shape));
  std::uint64_t macs = 0;
  if (counter == nullptr) return input_grad_kernel<false>(w, grad_out, spec, input_shape, macs);
  auto dx = input_grad_kernel<true>(w, grad_out, spec, input_shape, macs);
  counter->macs += macs;
  return dx;
}

template <class T>
Tensor4<T> conv_backward_weight_lowrank(const TuckerFactors<T>& f, const Tensor4<T>& grad_out,
                                        const ConvSpec& spec, MacCounter* counter) {
  f.validate();
  check_grad_out(grad_out.shape(), spec.output_shape(f.source_shape));

  // (r1, C', H', W')
  const Tensor4<T> projected_grad =
      mode_product(grad_out, f.factor(1), 1, MatrixOp::Transposed, counter);
  // (r1, r2, H, r4) then (r1, r2, H, W)
  Tensor4<T> spatial = mode_product(f.core, f.factor(3), 3, MatrixOp::Normal, counter);
  spatial = mode_product(spatial, f.factor(4), 4, MatrixOp::Normal, counter);

  ConvSpec reduced = spec;
  reduced.in_channels = f.core.shape().c;
  // (C', r2, D, D)
  const Tensor4<T> reduced_grad = conv_backward_weight(spatial, projected_grad, reduced, counter);
  // (C', C, D, D)
  return mode_product(reduced_grad, f.factor(2), 2, MatrixOp::Normal, counter);
}

template <class T>
Matrix<T> fc_forward(const Matrix<T>& x, const Matrix<T>& w, std::span<const T> bias,
                     MacCounter* counter) {
  if (x.cols() != w.cols()) {
    throw ShapeError("fc_forward: input has " + std::to_string(x.cols()) +
                     " features, weight expects " + std::to_string(w.cols()));
  }
  Matrix<T> y = matmul(x, w, MatrixOp::Normal, MatrixOp::Transposed, counter);
  if (!bias.empty()) {
    if (bias.size() != w.rows()) throw ShapeError("fc_forward: bias length mismatch");
    for (std::size_t i = 0; i < y.rows(); ++i)
      for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += bias[j];
  }
  return y;
}

template <class T>
FcGradients<T> fc_backward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& grad_out,
                           MacCounter* counter) {
  if (x.cols() != w.cols() || grad_out.rows() != x.rows() || grad_out.cols() != w.rows()) {
    throw ShapeError("fc_backward: inconsistent shapes");
  }
  FcGradients<T> g;
  g.weight = matmul(grad_out, x, MatrixOp::Transposed, MatrixOp::Normal, counter);
  g.input = matmul(grad_out, w, MatrixOp::Normal, MatrixOp::Normal, counter);
  g.bias.assign(w.rows(), T{});
  for (std::size_t j = 0; j < grad_out.cols(); ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < grad_out.rows(); ++i) acc += static_cast<double>(grad_out(i, j));
    g.bias[j] = static_cast<T>(acc);
  }
  return g;
}

template <class T>
LowRankActivation<T> compress_activation(const Matrix<T>& x, std::size_t rank) {
  auto svd = truncated_svd(x, rank);
  LowRankActivation<T> out{std::move(svd.u), std::move(svd.v)};
  for (std::size_t i = 0; i < out.left.rows(); ++i)
    for (std::size_t k = 0; k < rank; ++k)
      out.left(i, k) = static_cast<T>(static_cast<double>(out.left(i, k)) * svd.s[k]);
  return out;
}

template <class T>
Matrix<T> fc_backward_weight_lowrank(const LowRankActivation<T>& x, const Matrix<T>& grad_out,
                                     MacCounter* counter) {
  if (grad_out.rows() != x.left.rows()) throw ShapeError("fc_backward_weight_lowrank: batch mismatch");
  const Matrix<T> reduced = matmul(grad_out, x.left, MatrixOp::Transposed, MatrixOp::Normal, counter);
  return matmul(reduced, x.right, MatrixOp::Normal, MatrixOp::Transposed, counter);
}

template <class T>
Tensor4<T> relu_forward(const Tensor4<T>& x, std::vector<std::uint8_t>& mask) {
  Tensor4<T> y(x.shape());
  mask.assign(x.size(), 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] > T{0}) {
      y[i] = x[i];
      mask[i] = 1;
    }
  }
  return y;
}

template <class T>
Tensor4<T> relu_backward(const Tensor4<T>& grad_out, const std::vector<std::uint8_t>& mask) {
  if (mask.size() != grad_out.size()) throw ShapeError("relu_backward: mask size mismatch");
  Tensor4<T> dx(grad_out.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) dx[i] = mask[i] ? grad_out[i] : T{0};
  return dx;
}

#define ASI_INSTANTIATE_CONV(T)                                                               \
  template std::size_t stored_elements<T>(const ActivationStore<T>&);                         \
  template Tensor4<T> conv_forward<T>(const Tensor4<T>&, const Tensor4<T>&, const ConvSpec&,  \
                                      MacCounter*);                                           \
  template void add_channel_bias<T>(Tensor4<T>&, std::span<const T>);                         \
  template std::vector<T> bias_gradient<T>(const Tensor4<T>&);                                \
  template Tensor4<T> conv_backward_weight<T>(const Tensor4<T>&, const Tensor4<T>&,           \
                                              const ConvSpec&, MacCounter*);                  \
  template Tensor4<T> conv_backward_input<T>(const Tensor4<T>&, const Tensor4<T>&,            \
                                             const ConvSpec&, const Shape4&, MacCounter*);    \
  template Tensor4<T> conv_backward_weight_lowrank<T>(const TuckerFactors<T>&,                \
                                                      const Tensor4<T>&, const ConvSpec&,     \
                                                      MacCounter*);                           \
  template Matrix<T> fc_forward<T>(const Matrix<T>&, const Matrix<T>&, std::span<const T>,    \
                                   MacCounter*);                                              \
  template FcGradients<T> fc_backward<T>(const Matrix<T>&, const Matrix<T>&,                  \
                                         const Matrix<T>&, MacCounter*);                      \
  template LowRankActivation<T> compress_activation<T>(const Matrix<T>&, std::size_t);        \
  template Matrix<T> fc_backward_weight_lowrank<T>(const LowRankActivation<T>&,               \
                                                   const Matrix<T>&, MacCounter*);            \
  template Tensor4<T> relu_forward<T>(const Tensor4<T>&, std::vector<std::uint8_t>&);         \
  template Tensor4<T> relu_backward<T>(const Tensor4<T>&, const std::vector<std::uint8_t>&);

ASI_INSTANTIATE_CONV(float)
ASI_INSTANTIATE_CONV(double)

#undef ASI_INSTANTIATE_CONV

}  // namespace asi
