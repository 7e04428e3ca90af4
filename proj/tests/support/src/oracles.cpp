#include "asi_test/oracles.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace asi::testing {

std::size_t uniform_size(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor4<double> separable_tensor(const Shape4& s, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> a(s.b), b(s.c), c(s.h), d(s.w);
  for (auto* v : {&a, &b, &c, &d})
    for (double& x : *v) x = n(rng) + 0.5;
  Tensor4<double> t(s);
  for (std::size_t i = 0; i < s.b; ++i)
    for (std::size_t j = 0; j < s.c; ++j)
      for (std::size_t k = 0; k < s.h; ++k)
        for (std::size_t l = 0; l < s.w; ++l) t(i, j, k, l) = a[i] * b[j] * c[k] * d[l];
  return t;
}

namespace {

bool in_bounds(std::ptrdiff_t v, std::size_t extent) { return v >= 0 && v < static_cast<std::ptrdiff_t>(extent); }

std::ptrdiff_t tap(std::size_t out, std::size_t k, const ConvSpec& s) {
  return static_cast<std::ptrdiff_t>(out * s.stride + k) - static_cast<std::ptrdiff_t>(s.padding);
}

}  // namespace

Tensor4<double> naive_conv_forward(const Tensor4<double>& x, const Tensor4<double>& w, const ConvSpec& spec) {
  const Shape4 xs = x.shape();
  const Shape4 ys = spec.output_shape(xs);
  Tensor4<double> y(ys);
  for (std::size_t n = 0; n < ys.b; ++n)
    for (std::size_t co = 0; co < ys.c; ++co)
      for (std::size_t i = 0; i < ys.h; ++i)
        for (std::size_t j = 0; j < ys.w; ++j) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < xs.c; ++ci)
            for (std::size_t ki = 0; ki < spec.kernel; ++ki)
              for (std::size_t kj = 0; kj < spec.kernel; ++kj) {
                const auto hi = tap(i, ki, spec), wj = tap(j, kj, spec);
                if (in_bounds(hi, xs.h) && in_bounds(wj, xs.w)) {
                  acc += w(co, ci, ki, kj) * x(n, ci, static_cast<std::size_t>(hi), static_cast<std::size_t>(wj));
                }
              }
          y(n, co, i, j) = acc;
        }
  return y;
}

Tensor4<double> naive_conv_backward_weight(const Tensor4<double>& x, const Tensor4<double>& g, const ConvSpec& spec) {
  const Shape4 xs = x.shape();
  const Shape4 gs = g.shape();
  Tensor4<double> dw(spec.weight_shape());
  for (std::size_t co = 0; co < spec.out_channels; ++co)
    for (std::size_t ci = 0; ci < spec.in_channels; ++ci)
      for (std::size_t ki = 0; ki < spec.kernel; ++ki)
        for (std::size_t kj = 0; kj < spec.kernel; ++kj) {
          double acc = 0.0;
          for (std::size_t n = 0; n < gs.b; ++n)
            for (std::size_t i = 0; i < gs.h; ++i)
              for (std::size_t j = 0; j < gs.w; ++j) {
                const auto hi = tap(i, ki, spec), wj = tap(j, kj, spec);
                if (in_bounds(hi, xs.h) && in_bounds(wj, xs.w)) {
                  acc += g(n, co, i, j) * x(n, ci, static_cast<std::size_t>(hi), static_cast<std::size_t>(wj));
                }
              }
          dw(co, ci, ki, kj) = acc;
        }
  return dw;
}

Tensor4<double> naive_conv_backward_input(const Tensor4<double>& w, const Tensor4<double>& g, const ConvSpec& spec,
                                          const Shape4& input_shape) {
  Tensor4<double> dx(input_shape);
  const Shape4 gs = g.shape();
  for (std::size_t n = 0; n < gs.b; ++n)
    for (std::size_t co = 0; co < gs.c; ++co)
      for (std::size_t i = 0; i < gs.h; ++i)
        for (std::size_t j = 0; j < gs.w; ++j)
          for (std::size_t ci = 0; ci < input_shape.c; ++ci)
            for (std::size_t ki = 0; ki < spec.kernel; ++ki)
              for (std::size_t kj = 0; kj < spec.kernel; ++kj) {
                const auto hi = tap(i, ki, spec), wj = tap(j, kj, spec);
                if (in_bounds(hi, input_shape.h) && in_bounds(wj, input_shape.w)) {
                  dx(n, ci, static_cast<std::size_t>(hi), static_cast<std::size_t>(wj)) +=
                      g(n, co, i, j) * w(co, ci, ki, kj);
                }
              }
  return dx;
}

namespace {

Eigen::MatrixXd to_eigen(const Matrix<double>& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(i, j);
  return e;
}

}  // namespace

std::vector<double> jacobi_singular_values(const Matrix<double>& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(m));
  const auto& s = svd.singularValues();
  return {s.data(), s.data() + s.size()};
}

double sequential_svd_captured_energy(const Tensor4<double>& t, const RankVector& r) {
  Tensor4<double> core = t;
  for (int m = 1; m <= 4; ++m) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(unfold(t, m)), Eigen::ComputeThinU);
    const Eigen::MatrixXd u = svd.matrixU().leftCols(static_cast<Eigen::Index>(r[m]));
    Matrix<double> um(static_cast<std::size_t>(u.rows()), static_cast<std::size_t>(u.cols()));
    for (Eigen::Index i = 0; i < u.rows(); ++i)
      for (Eigen::Index j = 0; j < u.cols(); ++j) um(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = u(i, j);
    core = mode_product(core, um, m, MatrixOp::Transposed);
  }
  const double n = frobenius_norm(core);
  return n * n;
}

double rel_diff(std::span<const double> a, std::span<const double> b) {
  const double d = frobenius_distance<double>(a, b);
  const double n = frobenius_norm<double>(b);
  return n > 0.0 ? d / n : d;
}

std::vector<double> central_differences(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, const std::vector<std::size_t>& coords,
                                        double h) {
  std::vector<double> out;
  out.reserve(coords.size());
  for (std::size_t k : coords) {
    const double x0 = x[k];
    x[k] = x0 + h;
    const double fp = f(x);
    x[k] = x0 - h;
    const double fm = f(x);
    x[k] = x0;
    out.push_back((fp - fm) / (2.0 * h));
  }
  return out;
}

PerplexityTable random_table(std::mt19937_64& rng, std::size_t layers, std::size_t thresholds) {
  PerplexityTable t;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t j = 0; j < thresholds; ++j) t.eps.push_back(0.4 + 0.5 * static_cast<double>(j) / static_cast<double>(std::max<std::size_t>(1, thresholds - 1)));
  for (std::size_t i = 0; i < layers; ++i) {
    const Shape4 s(4 + uniform_size(rng, 0, 4), 4 + uniform_size(rng, 0, 4), 8, 8);
    t.layer_names.push_back("conv" + std::to_string(i));
    t.layer_shapes.push_back(s);
    auto& p = t.perplexity.emplace_back();
    auto& r = t.ranks.emplace_back();
    auto& m = t.mem.emplace_back();
    double pv = 1.0 + 10.0 * u(rng);
    std::size_t k = 1;
    for (std::size_t j = 0; j < thresholds; ++j) {
      // Coarse quantization produces ties across layers.
      p.push_back(std::round(pv * 4.0) / 4.0);
      pv *= 0.5 + 0.4 * u(rng);
      k = std::min<std::size_t>(k + uniform_size(rng, 0, 1), 4);
      RankVector rv(std::min(k, s.b), std::min(k + uniform_size(rng, 0, 1), s.c), k, std::min<std::size_t>(k + 1, 8));
      r.push_back(rv);
      m.push_back(stored_elements(rv, s));
    }
  }
  return t;
}

}  // namespace asi::testing
