#include "asi/network.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace asi {
namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? std::string() : item.substr(b, e - b + 1));
  }
  return out;
}

std::size_t parse_positive(const std::string& s, const std::string& item, bool allow_zero = false) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty() || (!allow_zero && v == 0)) {
    throw std::invalid_argument("model spec: bad number '" + s + "' in '" + item + "'");
  }
  return static_cast<std::size_t>(v);
}

Tensor4<float> as_tensor(const Matrix<float>& m) {
  return Tensor4<float>(Shape4(m.rows(), m.cols(), 1, 1),
                        std::vector<float>(m.data().begin(), m.data().end()));
}

Matrix<float> as_matrix(const Tensor4<float>& t) {
  const Shape4& s = t.shape();
  return Matrix<float>(s.b, s.c * s.h * s.w, std::vector<float>(t.data().begin(), t.data().end()));
}

Tensor4<float> param_tensor(const Parameter& p) {
  return Tensor4<float>(Shape4(p.shape[0], p.shape[1], p.shape[2], p.shape[3]), p.value);
}

Matrix<float> param_matrix(const Parameter& p) { return Matrix<float>(p.shape[0], p.shape[1], p.value); }

void accumulate(Parameter& p, std::span<const float> g) {
  for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
}

}  // namespace

std::size_t Tape::conv_stored_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += stored_elements(e.conv_store);
  return n;
}

std::size_t Tape::fc_stored_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.has_fc_input ? e.fc_input.size() : 0;
  return n;
}

std::size_t Tape::relu_mask_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.relu_mask.size();
  return n;
}

LossResult softmax_cross_entropy(const Matrix<float>& logits, const std::vector<int>& labels) {
  if (labels.size() != logits.rows()) throw ShapeError("softmax_cross_entropy: label count mismatch");
  LossResult out;
  out.grad = Matrix<float>(logits.rows(), logits.cols());
  const double inv_b = 1.0 / static_cast<double>(logits.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto label = static_cast<std::size_t>(labels[i]);
    if (labels[i] < 0 || label >= logits.cols()) throw std::out_of_range("label out of range");
    double mx = -std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      if (logits(i, j) > mx) {
        mx = logits(i, j);
        arg = j;
      }
    }
    double z = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) z += std::exp(logits(i, j) - mx);
    const double log_z = std::log(z) + mx;
    total += log_z - logits(i, label);
    out.correct += (arg == label);
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      const double p = std::exp(logits(i, j) - log_z);
      out.grad(i, j) = static_cast<float>((p - (j == label ? 1.0 : 0.0)) * inv_b);
    }
  }
  out.loss = total * inv_b;
  return out;
}

Network Network::from_spec(const std::string& spec) {
  Network net;
  net.spec_ = spec;
  std::size_t conv_i = 0, fc_i = 0;
  for (const auto& item : split(spec, ',')) {
    const auto parts = split(item, ':');
    const std::string& kind = parts.at(0);
    if (kind == "conv") {
      if (parts.size() != 6) throw std::invalid_argument("model spec: expected conv:C:C':D:stride:pad, got '" + item + "'");
      ConvLayer layer;
      layer.spec.in_channels = parse_positive(parts[1], item);
      layer.spec.out_channels = parse_positive(parts[2], item);
      layer.spec.kernel = parse_positive(parts[3], item);
      layer.spec.stride = parse_positive(parts[4], item);
      layer.spec.padding = parse_positive(parts[5], item, true);
      const auto ws = layer.spec.weight_shape();
      const std::string name = "conv" + std::to_string(conv_i++);
      layer.weight = Parameter(name + ".weight", {ws.b, ws.c, ws.h, ws.w});
      layer.bias = Parameter(name + ".bias", {ws.b});
      net.layers_.emplace_back(std::move(layer));
    } else if (kind == "relu" && parts.size() == 1) {
      net.layers_.emplace_back(ReluLayer{});
    } else if (kind == "gap" && parts.size() == 1) {
      net.layers_.emplace_back(GlobalAvgPoolLayer{});
    } else if (kind == "fc") {
      if (parts.size() != 3) throw std::invalid_argument("model spec: expected fc:in:out, got '" + item + "'");
      FcLayer layer;
      layer.in_features = parse_positive(parts[1], item);
      layer.out_features = parse_positive(parts[2], item);
      const std::string name = "fc" + std::to_string(fc_i++);
      layer.weight = Parameter(name + ".weight", {layer.out_features, layer.in_features});
      layer.bias = Parameter(name + ".bias", {layer.out_features});
      net.layers_.emplace_back(std::move(layer));
    } else {
      throw std::invalid_argument("model spec: unknown layer '" + item + "'");
    }
  }
  if (net.layers_.empty()) throw std::invalid_argument("model spec: no layers");
  return net;
}

void Network::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto fill = [&](Parameter& p, double fan_in) {
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
    for (float& v : p.value) v = static_cast<float>(normal(rng));
  };
  for (auto& layer : layers_) {
    if (auto* c = std::get_if<ConvLayer>(&layer)) {
      fill(c->weight, static_cast<double>(c->spec.in_channels * c->spec.kernel * c->spec.kernel));
      std::fill(c->bias.value.begin(), c->bias.value.end(), 0.0f);
    } else if (auto* f = std::get_if<FcLayer>(&layer)) {
      fill(f->weight, static_cast<double>(f->in_features));
      std::fill(f->bias.value.begin(), f->bias.value.end(), 0.0f);
    }
  }
  for (Parameter* p : parameters()) std::fill(p->momentum.begin(), p->momentum.end(), 0.0f);
}

std::vector<std::size_t> Network::parametric_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (std::holds_alternative<ConvLayer>(layers_[i]) || std::holds_alternative<FcLayer>(layers_[i])) {
      out.push_back(i);
    }
  }
  return out;
}

void Network::set_trainable_suffix(std::size_t count) {
  const auto idx = parametric_layers();
  if (count > idx.size()) {
    throw std::invalid_argument("fine-tuned layer count " + std::to_string(count) +
                                " exceeds model depth " + std::to_string(idx.size()));
  }
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const bool on = k + count >= idx.size();
    std::visit(
        [on](auto& l) {
          if constexpr (requires { l.weight; }) {
            l.weight.trainable = on;
            l.bias.trainable = on;
          }
        },
        layers_[idx[k]]);
  }
}

bool Network::is_trainable(std::size_t layer) const {
  return std::visit(
      [](const auto& l) {
        if constexpr (requires { l.weight; }) {
          return l.weight.trainable;
        } else {
          return false;
        }
      },
      layers_.at(layer));
}

std::size_t Network::conv_index(std::size_t layer) const {
  if (!std::holds_alternative<ConvLayer>(layers_.at(layer))) return static_cast<std::size_t>(-1);
  std::size_t k = 0;
  for (std::size_t i = 0; i < layer; ++i) k += std::holds_alternative<ConvLayer>(layers_[i]);
  return k;
}

std::size_t Network::conv_count() const {
  std::size_t k = 0;
  for (const auto& l : layers_) k += std::holds_alternative<ConvLayer>(l);
  return k;
}

std::vector<Parameter*> Network::parameters() {
  std::vector<Parameter*> out;
  for (auto& layer : layers_) {
    if (auto* c = std::get_if<ConvLayer>(&layer)) {
      out.push_back(&c->weight);
      out.push_back(&c->bias);
    } else if (auto* f = std::get_if<FcLayer>(&layer)) {
      out.push_back(&f->weight);
      out.push_back(&f->bias);
    }
  }
  return out;
}

std::vector<const Parameter*> Network::parameters() const {
  std::vector<const Parameter*> out;
  for (Parameter* p : const_cast<Network*>(this)->parameters()) out.push_back(p);
  return out;
}

void Network::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

std::vector<Shape4> Network::layer_input_shapes(const Shape4& input) const {
  std::vector<Shape4> shapes;
  Shape4 s = input;
  for (const auto& layer : layers_) {
    shapes.push_back(s);
    if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      s = c->spec.output_shape(s);
    } else if (std::holds_alternative<GlobalAvgPoolLayer>(layer)) {
      s = Shape4(s.b, s.c, 1, 1);
    } else if (const auto* f = std::get_if<FcLayer>(&layer)) {
      if (s.c * s.h * s.w != f->in_features) {
        throw ShapeError("fc layer expects " + std::to_string(f->in_features) + " features, got " +
                         s.to_string());
      }
      s = Shape4(s.b, f->out_features, 1, 1);
    }
  }
  return shapes;
}

Matrix<float> Network::forward(const Tensor4<float>& x, ActivationPolicy* policy, Tape& tape,
                               MacCounter* counter) const {
  tape.entries.assign(layers_.size(), {});
  tape.conv_grad_out.clear();
  Tensor4<float> h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto& entry = tape.entries[i];
    entry.input_shape = h.shape();
    const Layer& layer = layers_[i];
    if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      if (c->weight.trainable) {
        entry.conv_store = policy != nullptr ? policy->store(conv_index(i), h) : ActivationStore<float>(h);
      }
      Tensor4<float> y = conv_forward(h, param_tensor(c->weight), c->spec, counter);
      add_channel_bias<float>(y, c->bias.value);
      h = std::move(y);
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      h = relu_forward(h, entry.relu_mask);
    } else if (std::holds_alternative<GlobalAvgPoolLayer>(layer)) {
      const Shape4 s = h.shape();
      Tensor4<float> y(Shape4(s.b, s.c, 1, 1));
      const double inv = 1.0 / static_cast<double>(s.h * s.w);
      for (std::size_t n = 0; n < s.b; ++n)
        for (std::size_t ch = 0; ch < s.c; ++ch) {
          double acc = 0.0;
          for (std::size_t a = 0; a < s.h; ++a)
            for (std::size_t b = 0; b < s.w; ++b) acc += h(n, ch, a, b);
          y(n, ch, 0, 0) = static_cast<float>(acc * inv);
        }
      h = std::move(y);
    } else if (const auto* f = std::get_if<FcLayer>(&layer)) {
      Matrix<float> in = as_matrix(h);
      Matrix<float> y = fc_forward<float>(in, param_matrix(f->weight), f->bias.value, counter);
      if (f->weight.trainable) {
        entry.fc_input = std::move(in);
        entry.has_fc_input = true;
      }
      h = as_tensor(y);
    }
  }
  return as_matrix(h);
}

void Network::backward(Tape& tape, const Matrix<float>& grad_logits, MacCounter* counter) {
  if (tape.entries.size() != layers_.size()) throw std::logic_error("backward: tape does not match network");
  if (tape.record_conv_grad_out) tape.conv_grad_out.assign(layers_.size(), {});

  std::size_t first_trainable = layers_.size();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (is_trainable(i)) {
      first_trainable = i;
      break;
    }
  }

  Tensor4<float> g = as_tensor(grad_logits);
  for (std::size_t idx = layers_.size(); idx-- > 0;) {
    if (idx < first_trainable) break;
    auto& entry = tape.entries[idx];
    const bool need_input_grad = idx > first_trainable;
    Layer& layer = layers_[idx];
    if (auto* c = std::get_if<ConvLayer>(&layer)) {
      if (tape.record_conv_grad_out) tape.conv_grad_out[idx] = g;
      if (c->weight.trainable) {
        Tensor4<float> dw;
        if (const auto* dense = std::get_if<Tensor4<float>>(&entry.conv_store)) {
          dw = conv_backward_weight(*dense, g, c->spec, counter);
        } else if (const auto* tucker = std::get_if<TuckerFactors<float>>(&entry.conv_store)) {
          dw = conv_backward_weight_lowrank(*tucker, g, c->spec, counter);
        } else {
          throw std::logic_error("backward: trainable conv without stored activation");
        }
        accumulate(c->weight, dw.data());
        accumulate(c->bias, bias_gradient(g));
      }
      if (need_input_grad) g = conv_backward_input(param_tensor(c->weight), g, c->spec, entry.input_shape);
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      g = relu_backward(g, entry.relu_mask);
    } else if (std::holds_alternative<GlobalAvgPoolLayer>(layer)) {
      const Shape4 s = entry.input_shape;
      Tensor4<float> dx(s);
      const float inv = static_cast<float>(1.0 / static_cast<double>(s.h * s.w));
      for (std::size_t n = 0; n < s.b; ++n)
        for (std::size_t ch = 0; ch < s.c; ++ch) {
          const float v = g(n, ch, 0, 0) * inv;
          for (std::size_t a = 0; a < s.h; ++a)
            for (std::size_t b = 0; b < s.w; ++b) dx(n, ch, a, b) = v;
        }
      g = std::move(dx);
    } else if (auto* f = std::get_if<FcLayer>(&layer)) {
      const Matrix<float> go = as_matrix(g);
      const Matrix<float> w = param_matrix(f->weight);
      if (f->weight.trainable) {
        if (!entry.has_fc_input) throw std::logic_error("backward: trainable fc without stored input");
        auto grads = fc_backward(entry.fc_input, w, go, counter);
        accumulate(f->weight, grads.weight.data());
        accumulate(f->bias, grads.bias);
      }
      if (need_input_grad) {
        const Matrix<float> dx = matmul(go, w);
        g = Tensor4<float>(entry.input_shape, std::vector<float>(dx.data().begin(), dx.data().end()));
      }
    }
  }
}

}  // namespace asi
