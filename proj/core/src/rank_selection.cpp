#include "asi/rank_selection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "asi/kv_text.hpp"

namespace asi {

ThresholdSet::ThresholdSet(std::vector<double> eps) : eps_(std::move(eps)) {
  if (eps_.empty()) throw std::invalid_argument("ThresholdSet: at least one threshold required");
  for (std::size_t j = 0; j < eps_.size(); ++j) {
    if (!(eps_[j] > 0.0 && eps_[j] <= 1.0)) {
      throw std::invalid_argument("ThresholdSet: eps " + format_double(eps_[j]) + " outside (0, 1]");
    }
    if (j > 0 && !(eps_[j] > eps_[j - 1])) {
      throw std::invalid_argument("ThresholdSet: thresholds must be strictly increasing");
    }
  }
}

ThresholdSet ThresholdSet::defaults() { return ThresholdSet({0.4, 0.5, 0.6, 0.7, 0.8, 0.9}); }

ThresholdSet ThresholdSet::parse(const std::string& comma_list) {
  std::vector<double> eps;
  for (const auto& item : split_list(comma_list, ',')) eps.push_back(parse_double(item, "thresholds"));
  return ThresholdSet(std::move(eps));
}

void PerplexityTable::validate() const {
  const std::size_t n = perplexity.size();
  if (layer_names.size() != n || layer_shapes.size() != n || ranks.size() != n || mem.size() != n) {
    throw std::invalid_argument("PerplexityTable: per-layer arrays disagree in length");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (perplexity[i].size() != eps.size() || ranks[i].size() != eps.size() || mem[i].size() != eps.size()) {
      throw std::invalid_argument("PerplexityTable: row " + std::to_string(i) + " has wrong width");
    }
    for (std::size_t j = 0; j < eps.size(); ++j) {
      if (!(perplexity[i][j] >= 0.0) || !std::isfinite(perplexity[i][j])) {
        throw std::invalid_argument("PerplexityTable: perplexity must be finite and nonnegative");
      }
      if (mem[i][j] != stored_elements(ranks[i][j], layer_shapes[i])) {
        throw std::invalid_argument("PerplexityTable: mem of layer " + std::to_string(i) + " threshold " +
                                    std::to_string(j) + " disagrees with its ranks");
      }
    }
  }
}

double PerplexityTable::max_monotonicity_violation() const {
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& row : perplexity) {
    for (std::size_t j = 0; j + 1 < row.size(); ++j) {
      const double denom = std::max(row[j], 1e-12);
      worst = std::max(worst, (row[j + 1] - row[j]) / denom);
    }
  }
  return worst;
}

InfeasibleBudget::InfeasibleBudget(std::uint64_t budget, std::uint64_t minimal)
    : std::runtime_error("budget of " + std::to_string(budget) +
                         " elements is infeasible; minimal feasible budget is " + std::to_string(minimal) +
                         " elements"),
      budget_(budget),
      minimal_(minimal) {}

std::uint64_t minimal_memory(const PerplexityTable& t) {
  std::uint64_t total = 0;
  for (const auto& row : t.mem) total += *std::min_element(row.begin(), row.end());
  return total;
}

namespace {

SelectionResult assemble(const PerplexityTable& t, const std::vector<std::size_t>& choice, std::uint64_t budget) {
  SelectionResult r;
  r.layer_names = t.layer_names;
  r.layer_shapes = t.layer_shapes;
  r.choice = choice;
  r.budget = budget;
  for (std::size_t i = 0; i < choice.size(); ++i) {
    const std::size_t j = choice[i];
    r.eps.push_back(t.eps[j]);
    r.ranks.push_back(t.ranks[i][j]);
    r.memory.push_back(stored_elements(t.ranks[i][j], t.layer_shapes[i]));
    r.total_perplexity += t.perplexity[i][j];
    r.total_memory += r.memory.back();
  }
  if (r.total_memory > budget) throw std::logic_error("selection exceeds its budget");
  return r;
}

void check_feasible(const PerplexityTable& t, const MemoryBudget& b) {
  t.validate();
  if (t.layers() == 0) throw std::invalid_argument("rank selection: table has no layers");
  const std::uint64_t minimal = minimal_memory(t);
  if (minimal > b.limit) throw InfeasibleBudget(b.limit, minimal);
}

class BranchAndBound {
 public:
  BranchAndBound(const PerplexityTable& t, std::uint64_t budget)
      : t_(t), budget_(budget), n_(t.layers()), e_(t.thresholds()), current_(n_), best_choice_(n_) {
    lb_p_.assign(n_ + 1, 0.0);
    lb_m_.assign(n_ + 1, 0);
    for (std::size_t i = n_; i-- > 0;) {
      lb_p_[i] = lb_p_[i + 1] + *std::min_element(t.perplexity[i].begin(), t.perplexity[i].end());
      lb_m_[i] = lb_m_[i + 1] + *std::min_element(t.mem[i].begin(), t.mem[i].end());
    }
  }

  std::vector<std::size_t> solve() {
    search(0, 0.0, 0);
    if (!found_) throw std::logic_error("branch-and-bound found no feasible leaf");
    return best_choice_;
  }

 private:
  void search(std::size_t i, double acc_p, std::uint64_t acc_m) {
    if (i == n_) {
      if (!found_ || acc_p < best_) {
        found_ = true;
        best_ = acc_p;
        best_choice_ = current_;
      }
      return;
    }
    for (std::size_t j = 0; j < e_; ++j) {
      const std::uint64_t m = acc_m + t_.mem[i][j];
      if (m + lb_m_[i + 1] > budget_) continue;
      const double p = acc_p + t_.perplexity[i][j];
      // The slack keeps rounding in the bound from cutting a strictly better leaf.
      if (found_ && p + lb_p_[i + 1] > best_ + 1e-12 * std::max(1.0, std::abs(best_))) continue;
      current_[i] = j;
      search(i + 1, p, m);
    }
  }

  const PerplexityTable& t_;
  std::uint64_t budget_;
  std::size_t n_, e_;
  std::vector<double> lb_p_;
  std::vector<std::uint64_t> lb_m_;
  std::vector<std::size_t> current_;
  std::vector<std::size_t> best_choice_;
  double best_ = 0.0;
  bool found_ = false;
};

}  // namespace

SelectionResult select_ranks(const PerplexityTable& t, const MemoryBudget& b) {
  check_feasible(t, b);
  return assemble(t, BranchAndBound(t, b.limit).solve(), b.limit);
}

SelectionResult brute_force_select(const PerplexityTable& t, const MemoryBudget& b) {
  check_feasible(t, b);
  const std::size_t n = t.layers(), e = t.thresholds();
  double count = std::pow(static_cast<double>(e), static_cast<double>(n));
  if (count > 1e7) throw std::length_error("brute_force_select: E^N exceeds 1e7");

  std::vector<std::size_t> idx(n, 0), best_idx;
  double best = 0.0;
  bool found = false;
  while (true) {
    double p = 0.0;
    std::uint64_t m = 0;
    for (std::size_t i = 0; i < n; ++i) {
      p += t.perplexity[i][idx[i]];
      m += t.mem[i][idx[i]];
    }
    if (m <= b.limit && (!found || p < best)) {
      found = true;
      best = p;
      best_idx = idx;
    }
    // Lexicographic increment, last layer fastest.
    std::size_t k = n;
    while (k > 0 && ++idx[k - 1] == e) idx[--k] = 0;
    if (k == 0) break;
  }
  return assemble(t, best_idx, b.limit);
}

PerplexityTable measure_perplexity(Network& net, const Tensor4<float>& batch, const std::vector<int>& labels,
                                   const ThresholdSet& thresholds, EventLog* log) {
  Tape tape;
  tape.record_conv_grad_out = true;
  net.zero_grad();
  const Matrix<float> logits = net.forward(batch, nullptr, tape);
  const LossResult loss = softmax_cross_entropy(logits, labels);
  if (!std::isfinite(loss.loss)) throw std::runtime_error("measure_perplexity: non-finite calibration loss");
  net.backward(tape, loss.grad);

  PerplexityTable table;
  table.eps = thresholds.values();
  table.batch_size = batch.shape().b;
  for (std::size_t li = 0; li < net.layers().size(); ++li) {
    const auto* conv = std::get_if<ConvLayer>(&net.layers()[li]);
    if (conv == nullptr || !conv->weight.trainable) continue;
    const auto& activation = std::get<Tensor4<float>>(tape.entries[li].conv_store);
    const Tensor4<float>& grad_out = tape.conv_grad_out[li];
    const std::vector<float>& exact = conv->weight.grad;
    for (float g : exact) {
      if (!std::isfinite(g)) {
        throw std::runtime_error("measure_perplexity: non-finite weight gradient in " + conv->weight.name);
      }
    }

    table.layer_names.push_back(conv->weight.name.substr(0, conv->weight.name.find('.')));
    table.layer_shapes.push_back(activation.shape());
    auto& p_row = table.perplexity.emplace_back();
    auto& r_row = table.ranks.emplace_back();
    auto& m_row = table.mem.emplace_back();
    for (double eps : table.eps) {
      const auto h = hosvd_variance(activation, eps, log);
      const Tensor4<float> approx = conv_backward_weight_lowrank(h.factors, grad_out, conv->spec);
      const double p = frobenius_distance<float>(approx.data(), std::span<const float>(exact));
      if (!std::isfinite(p)) throw std::runtime_error("measure_perplexity: non-finite low-rank gradient");
      p_row.push_back(p);
      r_row.push_back(h.ranks);
      m_row.push_back(stored_elements(h.ranks, activation.shape()));
    }
  }
  net.zero_grad();
  table.validate();
  return table;
}

namespace {

std::string shape_text(const Shape4& s) {
  return std::to_string(s.b) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," + std::to_string(s.w);
}

Shape4 parse_shape(const std::string& text, const std::string& what) {
  const auto parts = split_list(text, ',');
  if (parts.size() != 4) throw std::invalid_argument(what + ": expected 4 extents, got '" + text + "'");
  return {parse_u64(parts[0], what), parse_u64(parts[1], what), parse_u64(parts[2], what), parse_u64(parts[3], what)};
}

std::string ranks_text(const RankVector& r) {
  return std::to_string(r[1]) + "," + std::to_string(r[2]) + "," + std::to_string(r[3]) + "," + std::to_string(r[4]);
}

RankVector parse_ranks(const std::string& text, const std::string& what) {
  const Shape4 s = parse_shape(text, what);
  return {s.b, s.c, s.h, s.w};
}

}  // namespace

void write_table(const PerplexityTable& t, const std::string& csv_path) {
  t.validate();
  std::ofstream out(csv_path);
  if (!out) throw std::runtime_error("cannot write " + csv_path);
  out << "layer,eps,perplexity,r1,r2,r3,r4,mem_elements\n";
  for (std::size_t i = 0; i < t.layers(); ++i) {
    for (std::size_t j = 0; j < t.thresholds(); ++j) {
      const auto& r = t.ranks[i][j];
      out << i << ',' << format_double(t.eps[j]) << ',' << format_double(t.perplexity[i][j]) << ',' << r[1] << ','
          << r[2] << ',' << r[3] << ',' << r[4] << ',' << t.mem[i][j] << '\n';
    }
  }
  KeyValueDocument manifest;
  manifest.set("model_hash", t.model_hash.empty() ? "unknown" : t.model_hash);
  manifest.set("batch_size", std::to_string(t.batch_size));
  manifest.set("seed", std::to_string(t.seed));
  manifest.set("layers", std::to_string(t.layers()));
  for (std::size_t i = 0; i < t.layers(); ++i) {
    manifest.set("layer." + std::to_string(i) + ".name", t.layer_names[i]);
    manifest.set("layer." + std::to_string(i) + ".shape", shape_text(t.layer_shapes[i]));
  }
  manifest.save(csv_path + ".manifest");
}

PerplexityTable read_table(const std::string& csv_path) {
  const auto manifest = KeyValueDocument::load(csv_path + ".manifest");
  PerplexityTable t;
  t.model_hash = manifest.get("model_hash");
  t.batch_size = parse_u64(manifest.get("batch_size"), "batch_size");
  t.seed = parse_u64(manifest.get("seed"), "seed");
  const std::size_t n = parse_u64(manifest.get("layers"), "layers");
  for (std::size_t i = 0; i < n; ++i) {
    t.layer_names.push_back(manifest.get("layer." + std::to_string(i) + ".name"));
    t.layer_shapes.push_back(parse_shape(manifest.get("layer." + std::to_string(i) + ".shape"), "layer shape"));
  }
  t.perplexity.resize(n);
  t.ranks.resize(n);
  t.mem.resize(n);

  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot open " + csv_path);
  std::string line;
  std::getline(in, line);
  if (line.rfind("layer,eps,perplexity,r1,r2,r3,r4,mem_elements", 0) != 0) {
    throw std::invalid_argument(csv_path + ": unexpected header '" + line + "'");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_list(line, ',');
    const std::string where = csv_path + ":" + std::to_string(lineno);
    if (f.size() != 8) throw std::invalid_argument(where + ": expected 8 fields");
    const std::size_t i = parse_u64(f[0], where);
    if (i >= n) throw std::invalid_argument(where + ": layer index out of range");
    const double eps = parse_double(f[1], where);
    if (i == 0) t.eps.push_back(eps);
    t.perplexity[i].push_back(parse_double(f[2], where));
    t.ranks[i].push_back({parse_u64(f[3], where), parse_u64(f[4], where), parse_u64(f[5], where),
                          parse_u64(f[6], where)});
    t.mem[i].push_back(parse_u64(f[7], where));
  }
  ThresholdSet check(t.eps);
  t.validate();
  return t;
}

void write_selection(const SelectionResult& s, const std::string& path) {
  KeyValueDocument doc;
  doc.set("layers", std::to_string(s.choice.size()));
  doc.set("budget_elements", std::to_string(s.budget));
  doc.set("total_memory_elements", std::to_string(s.total_memory));
  doc.set("total_perplexity", format_double(s.total_perplexity));
  for (std::size_t i = 0; i < s.choice.size(); ++i) {
    const std::string p = "layer." + std::to_string(i) + ".";
    doc.set(p + "name", s.layer_names[i]);
    doc.set(p + "shape", shape_text(s.layer_shapes[i]));
    doc.set(p + "threshold_index", std::to_string(s.choice[i]));
    doc.set(p + "eps", format_double(s.eps[i]));
    doc.set(p + "ranks", ranks_text(s.ranks[i]));
    doc.set(p + "mem_elements", std::to_string(s.memory[i]));
  }
  doc.save(path);
}

SelectionResult read_selection(const std::string& path) {
  const auto doc = KeyValueDocument::load(path);
  SelectionResult s;
  const std::size_t n = parse_u64(doc.get("layers"), "layers");
  s.budget = parse_u64(doc.get("budget_elements"), "budget_elements");
  s.total_perplexity = parse_double(doc.get("total_perplexity"), "total_perplexity");
  for (std::size_t i = 0; i < n; ++i) {
    const std::string p = "layer." + std::to_string(i) + ".";
    s.layer_names.push_back(doc.get(p + "name"));
    s.layer_shapes.push_back(parse_shape(doc.get(p + "shape"), p + "shape"));
    s.choice.push_back(parse_u64(doc.get(p + "threshold_index"), p + "threshold_index"));
    s.eps.push_back(parse_double(doc.get(p + "eps"), p + "eps"));
    s.ranks.push_back(parse_ranks(doc.get(p + "ranks"), p + "ranks"));
    s.memory.push_back(stored_elements(s.ranks.back(), s.layer_shapes.back()));
    s.total_memory += s.memory.back();
  }
  if (s.total_memory != parse_u64(doc.get("total_memory_elements"), "total_memory_elements")) {
    throw std::invalid_argument(path + ": total_memory_elements disagrees with the per-layer ranks");
  }
  if (s.total_memory > s.budget) throw std::invalid_argument(path + ": selection exceeds its budget");
  return s;
}

}  // namespace asi
