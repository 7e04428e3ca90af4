#include "asi/harness/training.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "asi/decomposition.hpp"
#include "asi/kv_text.hpp"

namespace asi::harness {

std::string to_json_line(const MetricsRecord& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["epoch"] = m.epoch;
  j["loss"] = m.loss;
  j["accuracy"] = m.accuracy;
  j["train_accuracy"] = m.train_accuracy;
  j["stored_activation_elements"] = m.stored_activation_elements;
  j["activation_bytes"] = m.stored_activation_elements * 4;
  j["head_stored_elements"] = m.head_stored_elements;
  j["relu_mask_elements"] = m.relu_mask_elements;
  j["cumulative_flops"] = m.cumulative_flops;
  j["wall_seconds"] = m.wall_seconds;
  j["mean_reconstruction_error"] = m.mean_reconstruction_error;
  return j.dump();
}

std::string model_spec(const TrainConfig& cfg, const Dataset& data) {
  if (cfg.model != "toy") return cfg.model;
  std::ostringstream os;
  os << "conv:" << data.channels << ":8:3:1:1,relu,conv:8:16:3:1:1,relu,gap,fc:16:" << data.classes;
  return os.str();
}

namespace {

void load_weights(Network& net, const CheckpointBundle& b, bool momentum) {
  for (Parameter* p : net.parameters()) {
    const NamedArray& a = b.array(p->name);
    if (a.data.size() != p->size()) throw std::runtime_error("checkpoint array '" + p->name + "' has wrong size");
    p->value = a.data;
    if (momentum) {
      const NamedArray& m = b.array(p->name + ".momentum");
      if (m.data.size() != p->size()) throw std::runtime_error("checkpoint momentum of '" + p->name + "' has wrong size");
      p->momentum = m.data;
    }
  }
}

Network build_network_for(const TrainConfig& cfg, const Dataset& data) {
  Network net = Network::from_spec(model_spec(cfg, data));
  net.initialize(cfg.seed);
  if (!cfg.init_checkpoint.empty()) load_weights(net, CheckpointBundle::load(cfg.init_checkpoint), false);
  const std::size_t depth = net.parametric_layers().size();
  if (cfg.layers > depth) {
    throw std::invalid_argument("layers = " + std::to_string(cfg.layers) + " exceeds the model's " +
                                std::to_string(depth) + " parametric layers");
  }
  net.set_trainable_suffix(cfg.layers == 0 ? depth : cfg.layers);
  return net;
}

std::string layer_name(const ConvLayer& c) { return c.weight.name.substr(0, c.weight.name.find('.')); }

class HosvdPolicy final : public ActivationPolicy {
 public:
  HosvdPolicy(double eps, EventLog* log) : eps_(eps), log_(log) {}
  ActivationStore<float> store(std::size_t conv_index, const Tensor4<float>& input) override {
    auto h = hosvd_variance(input, eps_, log_);
    ranks[conv_index] = h.ranks;
    if (track) errors.push_back(relative_error(reconstruct(h.factors), input));
    return std::move(h.factors);
  }
  std::map<std::size_t, RankVector> ranks;
  std::vector<double> errors;
  bool track = true;

 private:
  double eps_;
  EventLog* log_;
};

class AsiPolicy final : public ActivationPolicy {
 public:
  AsiPolicy(std::map<std::size_t, RankVector> ranks, bool warm, std::uint64_t seed, EventLog* log)
      : ranks(std::move(ranks)), warm_(warm), seed_(seed), log_(log) {}
  ActivationStore<float> store(std::size_t conv_index, const Tensor4<float>& input) override {
    const auto it = ranks.find(conv_index);
    if (it == ranks.end()) throw std::logic_error("asi policy: no ranks for convolution " + std::to_string(conv_index));
    std::optional<WarmStartCache<float>> cache;
    if (warm_) {
      const auto c = caches.find(conv_index);
      if (c != caches.end()) cache = c->second;
    }
    auto r = asi_compress(input, it->second, cache, derive_seed(seed_, 0x100 + conv_index, step), log_);
    caches[conv_index] = std::move(r.cache);
    if (track) errors.push_back(relative_error(reconstruct(r.factors), input));
    return std::move(r.factors);
  }
  std::map<std::size_t, RankVector> ranks;
  std::map<std::size_t, WarmStartCache<float>> caches;
  std::vector<double> errors;
  std::uint64_t step = 0;
  bool track = true;

 private:
  bool warm_;
  std::uint64_t seed_;
  EventLog* log_;
};

Tensor4<float> calibration_batch(const TrainConfig& cfg, const Dataset& train, std::vector<int>& labels) {
  if (cfg.calib_batch > train.size()) {
    throw std::invalid_argument("calib_batch exceeds the training split (" + std::to_string(train.size()) + ")");
  }
  const auto order = epoch_order(train.size(), cfg.seed, 0);
  const std::span<const std::size_t> idx = std::span(order).first(cfg.calib_batch);
  labels = train.batch_labels(idx);
  return train.batch(idx);
}

std::string ranks_text(const RankVector& r) {
  return std::to_string(r.r[0]) + "," + std::to_string(r.r[1]) + "," + std::to_string(r.r[2]) + "," +
         std::to_string(r.r[3]);
}

RankVector parse_ranks(const std::string& s) {
  const auto parts = split_list(s, ',');
  if (parts.size() != 4) throw std::runtime_error("bad rank vector '" + s + "'");
  return {parse_u64(parts[0], "rank"), parse_u64(parts[1], "rank"), parse_u64(parts[2], "rank"),
          parse_u64(parts[3], "rank")};
}

double accuracy_of(const Network& net, const Dataset& d, std::size_t batch) {
  if (d.size() == 0) return 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < d.size(); start += batch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(d.size(), start + batch); ++i) idx.push_back(i);
    Tape tape;
    const Matrix<float> logits = net.forward(d.batch(idx), nullptr, tape);
    correct += softmax_cross_entropy(logits, d.batch_labels(idx)).correct;
  }
  return static_cast<double>(correct) / static_cast<double>(d.size());
}

}  // namespace

Network build_network(const TrainConfig& cfg, const Dataset& data) { return build_network_for(cfg, data); }

PerplexityTable calibrate(const TrainConfig& cfg, EventLog* log) {
  const DatasetSplit data = load_dataset(cfg.dataset);
  Network net = build_network_for(cfg, data.train);
  std::vector<int> labels;
  const Tensor4<float> batch = calibration_batch(cfg, data.train, labels);
  PerplexityTable t = measure_perplexity(net, batch, labels, ThresholdSet::parse(cfg.thresholds), log);
  t.seed = cfg.seed;
  t.model_hash = net.spec();
  return t;
}

SelectionResult calibrate_and_select(const TrainConfig& cfg, EventLog* log) {
  return select_ranks(calibrate(cfg, log), MemoryBudget{cfg.budget});
}

TrainingOutcome run_training(const TrainConfig& cfg, const TrainingOptions& options) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  TrainingOutcome out;
  const DatasetSplit data = load_dataset(cfg.dataset);
  Network net = build_network_for(cfg, data.train);

  const std::size_t steps_per_epoch = data.train.size() / cfg.batch_size;
  if (steps_per_epoch == 0) {
    throw std::invalid_argument("batch_size " + std::to_string(cfg.batch_size) + " exceeds the training split (" +
                                std::to_string(data.train.size()) + ")");
  }
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;
  const std::size_t stop_at = cfg.max_steps == 0 ? total_steps : std::min(total_steps, cfg.max_steps);

  const Shape4 batch_shape(cfg.batch_size, data.train.channels, data.train.height, data.train.width);
  const std::vector<Shape4> input_shapes = net.layer_input_shapes(batch_shape);
  std::vector<std::size_t> trainable_convs;  // layer indices
  for (std::size_t li = 0; li < net.layers().size(); ++li) {
    if (std::holds_alternative<ConvLayer>(net.layers()[li]) && net.is_trainable(li)) {
      trainable_convs.push_back(li);
      out.dense_trainable_elements += input_shapes[li].size();
    }
  }

  // Ranks for the asi regime: resumed, full, from a selection file, or calibrated.
  std::map<std::size_t, RankVector> asi_ranks;
  if (cfg.regime == cost::Regime::Asi) {
    if (options.resume) {
      for (std::size_t li : trainable_convs) {
        asi_ranks[net.conv_index(li)] =
            parse_ranks(options.resume->meta.at("rank." + std::to_string(net.conv_index(li))));
      }
    } else if (cfg.asi_ranks == "full") {
      for (std::size_t li : trainable_convs) asi_ranks[net.conv_index(li)] = RankVector::full(input_shapes[li]);
    } else {
      SelectionResult sel = options.selection      ? *options.selection
                            : !cfg.selection.empty() ? read_selection(cfg.selection)
                                                     : calibrate_and_select(cfg, &out.events);
      for (std::size_t li : trainable_convs) {
        const auto& conv = std::get<ConvLayer>(net.layers()[li]);
        const std::string name = layer_name(conv);
        std::size_t k = 0;
        while (k < sel.layer_names.size() && sel.layer_names[k] != name) ++k;
        if (k == sel.layer_names.size()) throw std::runtime_error("selection has no entry for trainable layer " + name);
        if (sel.layer_shapes[k] != input_shapes[li]) {
          throw std::runtime_error("selection for " + name + " was made for activation shape " +
                                   sel.layer_shapes[k].to_string() + " but training produces " +
                                   input_shapes[li].to_string() + " (calib_batch must equal batch_size)");
        }
        validate_ranks(sel.ranks[k], input_shapes[li]);
        asi_ranks[net.conv_index(li)] = sel.ranks[k];
      }
      out.selection = std::move(sel);
    }
  }

  HosvdPolicy hosvd(cfg.eps, &out.events);
  AsiPolicy asi(asi_ranks, cfg.warm_start, cfg.seed, &out.events);
  hosvd.track = asi.track = cfg.track_error;
  ActivationPolicy* policy = nullptr;
  if (cfg.regime == cost::Regime::Hosvd) policy = &hosvd;
  if (cfg.regime == cost::Regime::Asi) policy = &asi;

  // Restore state.
  std::size_t step = 0;
  std::uint64_t cumulative_flops = 0;
  double epoch_loss = 0.0;
  std::size_t epoch_correct = 0, epoch_steps = 0;
  std::uint64_t epoch_peak = 0;
  double epoch_err = 0.0;
  if (options.resume) {
    const CheckpointBundle& b = *options.resume;
    if (b.meta.at("config_hash") != cfg.hash()) {
      throw std::runtime_error("checkpoint config_hash " + b.meta.at("config_hash") +
                               " does not match this config (" + cfg.hash() + ")");
    }
    load_weights(net, b, true);
    step = parse_u64(b.meta.at("step"), "step");
    cumulative_flops = parse_u64(b.meta.at("cumulative_flops"), "cumulative_flops");
    epoch_loss = parse_double(b.meta.at("epoch_loss"), "epoch_loss");
    epoch_correct = parse_u64(b.meta.at("epoch_correct"), "epoch_correct");
    epoch_steps = parse_u64(b.meta.at("epoch_steps"), "epoch_steps");
    epoch_peak = parse_u64(b.meta.at("epoch_peak"), "epoch_peak");
    epoch_err = parse_double(b.meta.at("epoch_err"), "epoch_err");
    out.peak_stored_elements = parse_u64(b.meta.at("peak_stored"), "peak_stored");
    for (std::size_t li : trainable_convs) {
      const std::size_t ci = net.conv_index(li);
      const std::string p = "cache." + std::to_string(ci);
      if (!b.meta.contains(p + ".step")) continue;
      WarmStartCache<float> c;
      c.step = parse_u64(b.meta.at(p + ".step"), "cache step");
      for (int m = 1; m <= 4; ++m) {
        const NamedArray& a = b.array(p + ".U" + std::to_string(m));
        c.factors[static_cast<std::size_t>(m - 1)] = Matrix<float>(a.shape.at(0), a.shape.at(1), a.data);
      }
      asi.caches[ci] = std::move(c);
    }
  }

  std::vector<std::size_t> order;
  std::size_t order_epoch = std::numeric_limits<std::size_t>::max();
  double err_sum = 0.0;
  std::size_t err_count = 0;
  const SgdOptions sgd_base{cfg.lr, cfg.momentum, cfg.weight_decay, cfg.clip};
  std::vector<Parameter*> params = net.parameters();
  Tape last_tape;

  while (step < stop_at) {
    const std::size_t epoch = step / steps_per_epoch;
    const std::size_t within = step % steps_per_epoch;
    if (epoch != order_epoch) {
      order = epoch_order(data.train.size(), cfg.seed, epoch);
      order_epoch = epoch;
    }
    const std::span<const std::size_t> idx = std::span(order).subspan(within * cfg.batch_size, cfg.batch_size);
    const Tensor4<float> x = data.train.batch(idx);
    const std::vector<int> y = data.train.batch_labels(idx);

    hosvd.errors.clear();
    asi.errors.clear();
    asi.step = step;
    Tape tape;
    net.zero_grad();
    const Matrix<float> logits = net.forward(x, policy, tape);
    const LossResult loss = softmax_cross_entropy(logits, y);
    if (!std::isfinite(loss.loss)) {
      throw TrainingDiverged("divergence at step " + std::to_string(step + 1) + " (epoch " +
                             std::to_string(epoch + 1) + "): loss is not finite; lr=" +
                             format_double(learning_rate(cfg, step, total_steps)) +
                             ", stored elements=" + std::to_string(tape.conv_stored_elements()));
    }
    net.backward(tape, loss.grad);
    SgdOptions sgd = sgd_base;
    sgd.lr = learning_rate(cfg, step, total_steps);
    const SgdStats stats = sgd_step(params, sgd);
    if (!std::isfinite(stats.grad_norm)) {
      throw TrainingDiverged("divergence at step " + std::to_string(step + 1) + ": gradient norm is not finite");
    }

    const std::uint64_t stored = tape.conv_stored_elements();
    if (cfg.regime == cost::Regime::Asi && out.selection && stored > out.selection->budget) {
      throw BudgetViolation("step " + std::to_string(step + 1) + " stores " + std::to_string(stored) +
                            " elements, budget " + std::to_string(out.selection->budget));
    }
    if (stored > out.peak_stored_elements) {
      out.peak_stored_elements = stored;
      if (cfg.regime == cost::Regime::Hosvd) {
        for (std::size_t li : trainable_convs) out.ranks[layer_name(std::get<ConvLayer>(net.layers()[li]))] =
            hosvd.ranks.at(net.conv_index(li));
      }
    }

    // Cost-model FLOPs of this step.
    for (std::size_t li = 0; li < net.layers().size(); ++li) {
      const auto* conv = std::get_if<ConvLayer>(&net.layers()[li]);
      if (conv == nullptr) continue;
      const std::size_t ci = net.conv_index(li);
      RankVector r = RankVector::full(input_shapes[li]);
      if (cfg.regime == cost::Regime::Hosvd && hosvd.ranks.contains(ci)) r = hosvd.ranks.at(ci);
      if (cfg.regime == cost::Regime::Asi && asi_ranks.contains(ci)) r = asi_ranks.at(ci);
      const auto in = cost::LayerCostInputs::make(input_shapes[li], conv->spec, r);
      if (net.is_trainable(li)) {
        const auto c = cost::layer_cost(layer_name(*conv), cfg.regime, in);
        cumulative_flops += c.forward_flops + c.backward_flops + c.compression_overhead_flops;
      } else {
        cumulative_flops += cost::flops_vanilla(in).forward;
      }
    }

    const std::vector<double>& errs = cfg.regime == cost::Regime::Asi ? asi.errors : hosvd.errors;
    double step_err = 0.0;
    for (double e : errs) step_err += e;
    if (!errs.empty()) step_err /= static_cast<double>(errs.size());
    err_sum += step_err;
    ++err_count;

    ++step;
    epoch_loss += loss.loss;
    epoch_correct += loss.correct;
    epoch_err += step_err;
    ++epoch_steps;
    epoch_peak = std::max(epoch_peak, stored);

    StepRecord sr{step, epoch + 1, loss.loss, stored, step_err};
    out.steps.push_back(sr);
    if (options.on_step) options.on_step(sr);

    if (step % steps_per_epoch == 0) {
      MetricsRecord m;
      m.step = step;
      m.epoch = epoch + 1;
      m.loss = epoch_loss / static_cast<double>(epoch_steps);
      m.train_accuracy =
          static_cast<double>(epoch_correct) / static_cast<double>(epoch_steps * cfg.batch_size);
      m.accuracy = accuracy_of(net, data.validation, cfg.batch_size);
      m.stored_activation_elements = epoch_peak;
      m.head_stored_elements = tape.fc_stored_elements();
      m.relu_mask_elements = tape.relu_mask_elements();
      m.cumulative_flops = cumulative_flops;
      m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      m.mean_reconstruction_error = epoch_err / static_cast<double>(epoch_steps);
      out.epochs.push_back(m);
      if (options.on_epoch) options.on_epoch(m);
      epoch_loss = 0.0;
      epoch_correct = epoch_steps = 0;
      epoch_peak = 0;
      epoch_err = 0.0;
    }
  }

  out.mean_reconstruction_error = err_count ? err_sum / static_cast<double>(err_count) : 0.0;
  out.final_validation_accuracy = out.epochs.empty() ? accuracy_of(net, data.validation, cfg.batch_size)
                                                     : out.epochs.back().accuracy;

  // Cost report of the trainable convolutions.
  std::vector<cost::LayerCost> rows;
  for (std::size_t li : trainable_convs) {
    const auto& conv = std::get<ConvLayer>(net.layers()[li]);
    const std::string name = layer_name(conv);
    RankVector r = RankVector::full(input_shapes[li]);
    if (cfg.regime == cost::Regime::Asi) r = asi_ranks.at(net.conv_index(li));
    if (cfg.regime == cost::Regime::Hosvd && out.ranks.contains(name)) r = out.ranks.at(name);
    out.ranks[name] = r;
    rows.push_back(cost::layer_cost(name, cfg.regime, cost::LayerCostInputs::make(input_shapes[li], conv.spec, r)));
  }
  out.cost = cost::make_report(std::move(rows));

  // Checkpoint.
  CheckpointBundle& b = out.checkpoint;
  for (const Parameter* p : std::as_const(net).parameters()) {
    b.arrays.push_back({p->name, p->shape, p->value});
    b.arrays.push_back({p->name + ".momentum", p->shape, p->momentum});
  }
  for (const auto& [ci, c] : asi.caches) {
    const std::string p = "cache." + std::to_string(ci);
    b.meta[p + ".step"] = std::to_string(c.step);
    for (int m = 1; m <= 4; ++m) {
      const Matrix<float>& u = c.factors[static_cast<std::size_t>(m - 1)];
      b.arrays.push_back({p + ".U" + std::to_string(m), {u.rows(), u.cols()}, u.storage()});
    }
  }
  for (const auto& [ci, r] : asi_ranks) b.meta["rank." + std::to_string(ci)] = ranks_text(r);
  b.meta["config_hash"] = cfg.hash();
  b.meta["model"] = net.spec();
  b.meta["step"] = std::to_string(step);
  b.meta["cumulative_flops"] = std::to_string(cumulative_flops);
  b.meta["epoch_loss"] = format_double(epoch_loss);
  b.meta["epoch_correct"] = std::to_string(epoch_correct);
  b.meta["epoch_steps"] = std::to_string(epoch_steps);
  b.meta["epoch_peak"] = std::to_string(epoch_peak);
  b.meta["epoch_err"] = format_double(epoch_err);
  b.meta["peak_stored"] = std::to_string(out.peak_stored_elements);
  return out;
}

}  // namespace asi::harness
