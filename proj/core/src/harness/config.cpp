#include "asi/harness/config.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace asi::harness {

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k = {
      "model",  "regime",     "eps",      "budget",       "selection", "asi_ranks",   "thresholds",
      "layers", "epochs",     "batch_size", "calib_batch", "lr",       "lr_schedule", "momentum",
      "weight_decay", "clip", "seed",     "dataset",      "warm_start", "max_steps",  "track_error",
      "init_checkpoint"};
  return k;
}

std::string to_string(LrSchedule s) { return s == LrSchedule::Cosine ? "cosine" : "constant"; }

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "model") {
    model = value;
  } else if (key == "regime") {
    regime = cost::parse_regime(value);
  } else if (key == "eps") {
    eps = parse_double(value, key);
  } else if (key == "budget") {
    budget = parse_u64(value, key);
  } else if (key == "selection") {
    selection = value;
  } else if (key == "asi_ranks") {
    if (!value.empty() && value != "full") throw std::invalid_argument("asi_ranks: expected '' or 'full'");
    asi_ranks = value;
  } else if (key == "thresholds") {
    thresholds = value;
  } else if (key == "layers") {
    layers = parse_u64(value, key);
  } else if (key == "epochs") {
    epochs = parse_u64(value, key);
  } else if (key == "batch_size") {
    batch_size = parse_u64(value, key);
  } else if (key == "calib_batch") {
    calib_batch = parse_u64(value, key);
  } else if (key == "lr") {
    lr = parse_double(value, key);
  } else if (key == "lr_schedule") {
    if (value == "cosine") {
      lr_schedule = LrSchedule::Cosine;
    } else if (value == "constant") {
      lr_schedule = LrSchedule::Constant;
    } else {
      throw std::invalid_argument("lr_schedule: expected constant or cosine, got '" + value + "'");
    }
  } else if (key == "momentum") {
    momentum = parse_double(value, key);
  } else if (key == "weight_decay") {
    weight_decay = parse_double(value, key);
  } else if (key == "clip") {
    clip = parse_double(value, key);
  } else if (key == "seed") {
    seed = parse_u64(value, key);
  } else if (key == "dataset") {
    dataset = value;
  } else if (key == "warm_start") {
    warm_start = parse_bool(value, key);
  } else if (key == "max_steps") {
    max_steps = parse_u64(value, key);
  } else if (key == "track_error") {
    track_error = parse_bool(value, key);
  } else if (key == "init_checkpoint") {
    init_checkpoint = value;
  } else {
    throw std::invalid_argument("unknown config key '" + key + "'");
  }
}

TrainConfig TrainConfig::from_document(const KeyValueDocument& doc) {
  TrainConfig cfg;
  for (const auto& [k, v] : doc.values()) cfg.set(k, v);
  return cfg;
}

TrainConfig TrainConfig::load(const std::string& path) { return from_document(KeyValueDocument::load(path)); }

KeyValueDocument TrainConfig::to_document() const {
  KeyValueDocument d;
  d.set("model", model);
  d.set("regime", cost::to_string(regime));
  d.set("eps", format_double(eps));
  d.set("budget", std::to_string(budget));
  d.set("selection", selection);
  d.set("asi_ranks", asi_ranks);
  d.set("thresholds", thresholds);
  d.set("layers", std::to_string(layers));
  d.set("epochs", std::to_string(epochs));
  d.set("batch_size", std::to_string(batch_size));
  d.set("calib_batch", std::to_string(calib_batch));
  d.set("lr", format_double(lr));
  d.set("lr_schedule", to_string(lr_schedule));
  d.set("momentum", format_double(momentum));
  d.set("weight_decay", format_double(weight_decay));
  d.set("clip", format_double(clip));
  d.set("seed", std::to_string(seed));
  d.set("dataset", dataset);
  d.set("warm_start", warm_start ? "true" : "false");
  d.set("max_steps", std::to_string(max_steps));
  d.set("track_error", track_error ? "true" : "false");
  d.set("init_checkpoint", init_checkpoint);
  return d;
}

std::string TrainConfig::hash() const {
  KeyValueDocument d = to_document();
  d.set("max_steps", "");
  d.set("track_error", "");
  std::ostringstream os;
  d.write(os);
  const std::string text = os.str();
  const uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(text.data()), static_cast<uInt>(text.size()));
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (calib_batch == 0) throw std::invalid_argument("calib_batch must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (regime == cost::Regime::Hosvd && !(eps > 0.0 && eps <= 1.0)) {
    throw std::invalid_argument("hosvd regime requires eps in (0, 1]");
  }
  if (regime == cost::Regime::Asi && asi_ranks.empty() && selection.empty() && budget == 0) {
    throw std::invalid_argument("asi regime requires one of: selection, budget, asi_ranks = full");
  }
}

double learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
  if (cfg.lr_schedule == LrSchedule::Constant || total_steps == 0) return cfg.lr;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace asi::harness
