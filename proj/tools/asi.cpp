// asi: command-line front end (calibrate, select-ranks, train, cost-report, verify).

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "asi/cost_model.hpp"
#include "asi/harness/checkpoint.hpp"
#include "asi/harness/config.hpp"
#include "asi/harness/dataset.hpp"
#include "asi/harness/training.hpp"
#include "asi/kv_text.hpp"
#include "asi/rank_selection.hpp"
#include "asi_test/suites.hpp"

namespace {

using asi::harness::TrainConfig;

/// Failure carrying a machine-parsable code.
struct CliError : std::runtime_error {
  CliError(std::string code_, const std::string& what, int exit_code_ = 1)
      : std::runtime_error(what), code(std::move(code_)), exit_code(exit_code_) {}
  std::string code;
  int exit_code;
};

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

/// Config file plus one flag per config key.
struct ConfigOptions {
  std::string path;
  std::map<std::string, std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", path, "Key-value config file");
    for (const std::string& key : TrainConfig::keys()) {
      cmd->add_option_function<std::string>(
          "--" + key, [this, key](const std::string& v) { overrides[key] = v; }, "Override config key '" + key + "'");
    }
  }

  TrainConfig build() const {
    TrainConfig cfg;
    try {
      if (!path.empty()) cfg = TrainConfig::load(path);
      for (const auto& [k, v] : overrides) cfg.set(k, v);
      cfg.validate();
    } catch (const std::exception& e) {
      throw CliError("E_CONFIG", e.what(), 2);
    }
    return cfg;
  }
};

std::ofstream open_out(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream os(path);
  if (!os) throw CliError("E_IO", "cannot write " + path, 3);
  return os;
}

asi::Shape4 parse_shape(const std::string& text) {
  const auto p = asi::split_list(text, ',');
  if (p.size() != 4) throw CliError("E_USAGE", "shape must be B,C,H,W: '" + text + "'", 2);
  return {asi::parse_u64(p[0], "B"), asi::parse_u64(p[1], "C"), asi::parse_u64(p[2], "H"), asi::parse_u64(p[3], "W")};
}

asi::RankVector parse_rank_vector(const std::string& text) {
  const auto p = asi::split_list(text, ',');
  if (p.size() != 4) throw CliError("E_USAGE", "ranks must be r1,r2,r3,r4: '" + text + "'", 2);
  return {asi::parse_u64(p[0], "r1"), asi::parse_u64(p[1], "r2"), asi::parse_u64(p[2], "r3"),
          asi::parse_u64(p[3], "r4")};
}

int cmd_calibrate(const ConfigOptions& co, const std::string& out) {
  const TrainConfig cfg = co.build();
  asi::EventLog log;
  const auto table = asi::harness::calibrate(cfg, &log);
  asi::write_table(table, out);
  std::cout << "wrote " << out << " (" << table.layers() << " layers x " << table.thresholds()
            << " thresholds, max monotonicity violation " << table.max_monotonicity_violation() << ")\n";
  if (!log.empty()) std::cout << log.events.size() << " numerical events logged\n";
  return 0;
}

int cmd_select(const std::string& table_path, std::uint64_t budget, const std::string& out) {
  asi::PerplexityTable t;
  try {
    t = asi::read_table(table_path);
  } catch (const std::exception& e) {
    throw CliError("E_IO", e.what(), 3);
  }
  asi::SelectionResult s;
  try {
    s = asi::select_ranks(t, asi::MemoryBudget{budget});
  } catch (const asi::InfeasibleBudget& e) {
    throw CliError("E_INFEASIBLE_BUDGET",
                   "budget " + std::to_string(e.budget()) + " elements is infeasible; minimal feasible budget is " +
                       std::to_string(e.minimal_memory()) + " elements",
                   4);
  }
  asi::write_selection(s, out);
  std::cout << "wrote " << out << ": total perplexity " << s.total_perplexity << ", memory " << s.total_memory
            << " / " << s.budget << " elements\n";
  return 0;
}

int cmd_train(const ConfigOptions& co, const std::string& metrics, const std::string& checkpoint,
              const std::string& resume) {
  const TrainConfig cfg = co.build();
  asi::harness::TrainingOptions opts;
  if (!resume.empty()) {
    try {
      opts.resume = asi::harness::CheckpointBundle::load(resume);
    } catch (const std::exception& e) {
      throw CliError("E_CHECKPOINT", e.what(), 3);
    }
  }
  std::ofstream jsonl;
  if (!metrics.empty()) jsonl = open_out(metrics);
  opts.on_epoch = [&](const asi::harness::MetricsRecord& m) {
    const std::string line = asi::harness::to_json_line(m);
    if (jsonl.is_open()) jsonl << line << '\n' << std::flush;
    std::cout << line << '\n';
  };
  asi::harness::TrainingOutcome out;
  try {
    out = asi::harness::run_training(cfg, opts);
  } catch (const asi::InfeasibleBudget& e) {
    throw CliError("E_INFEASIBLE_BUDGET",
                   "budget " + std::to_string(e.budget()) + " elements is infeasible; minimal feasible budget is " +
                       std::to_string(e.minimal_memory()) + " elements",
                   4);
  } catch (const asi::harness::TrainingDiverged& e) {
    throw CliError("E_DIVERGED", e.what(), 5);
  } catch (const asi::harness::BudgetViolation& e) {
    throw CliError("E_BUDGET_VIOLATION", e.what(), 6);
  }
  if (!checkpoint.empty()) out.checkpoint.save(checkpoint);
  std::cout << "final validation accuracy " << out.final_validation_accuracy << ", peak stored elements "
            << out.peak_stored_elements << " (dense " << out.dense_trainable_elements << ")";
  if (cfg.regime == asi::cost::Regime::Hosvd) std::cout << ", peak taken over the whole run";
  std::cout << '\n';
  return 0;
}

int cmd_cost_report(const ConfigOptions& co, const std::string& sweep,
                    const std::string& shape_text, std::size_t out_channels, std::size_t kernel,
                    std::size_t max_rank, const std::string& ranks_text, const std::string& sizes_text,
                    const std::string& out) {
  std::ofstream file;
  std::ostream* os = &std::cout;
  if (!out.empty()) {
    file = open_out(out);
    os = &file;
  }
  if (!sweep.empty()) {
    asi::ConvSpec conv;
    const asi::Shape4 shape = parse_shape(shape_text);
    conv.in_channels = shape.c;
    conv.out_channels = out_channels;
    conv.kernel = kernel;
    conv.padding = (kernel - 1) / 2;
    std::vector<asi::cost::SweepRow> rows;
    if (sweep == "rank") {
      rows = asi::cost::sweep_rank(shape, conv, max_rank);
    } else if (sweep == "spatial") {
      std::vector<std::size_t> sizes;
      for (const auto& s : asi::split_list(sizes_text, ',')) sizes.push_back(asi::parse_u64(s, "size"));
      rows = asi::cost::sweep_spatial(shape, conv, parse_rank_vector(ranks_text), sizes);
    } else {
      throw CliError("E_USAGE", "--sweep expects rank or spatial, got '" + sweep + "'", 2);
    }
    asi::cost::write_sweep_csv(*os, rows);
    return 0;
  }

  // Per-layer report of a model under all three regimes.
  const TrainConfig cfg = co.build();
  const auto data = asi::harness::load_dataset(cfg.dataset);
  asi::Network net = asi::harness::build_network(cfg, data.train);
  const asi::Shape4 in(cfg.batch_size, data.train.channels, data.train.height, data.train.width);
  const auto shapes = net.layer_input_shapes(in);
  std::optional<asi::SelectionResult> sel;
  if (!cfg.selection.empty()) sel = asi::read_selection(cfg.selection);
  std::vector<asi::cost::LayerCost> rows;
  for (std::size_t li = 0; li < net.layers().size(); ++li) {
    const auto* c = std::get_if<asi::ConvLayer>(&net.layers()[li]);
    if (c == nullptr || !net.is_trainable(li)) continue;
    const std::string name = c->weight.name.substr(0, c->weight.name.find('.'));
    asi::RankVector r = asi::RankVector::full(shapes[li]);
    if (sel) {
      bool found = false;
      for (std::size_t k = 0; k < sel->layer_names.size(); ++k) {
        if (sel->layer_names[k] == name) {
          if (sel->layer_shapes[k] != shapes[li]) {
            throw CliError("E_CONFIG", "selection shape " + sel->layer_shapes[k].to_string() + " for " + name +
                                           " differs from " + shapes[li].to_string(), 2);
          }
          r = sel->ranks[k];
          found = true;
        }
      }
      if (!found) throw CliError("E_CONFIG", "selection has no entry for " + name, 2);
    } else if (!ranks_text.empty()) {
      r = parse_rank_vector(ranks_text);
    }
    const auto inputs = asi::cost::LayerCostInputs::make(shapes[li], c->spec, r);
    for (auto regime : {asi::cost::Regime::Vanilla, asi::cost::Regime::Hosvd, asi::cost::Regime::Asi}) {
      rows.push_back(asi::cost::layer_cost(name, regime, inputs));
    }
  }
  asi::cost::write_csv(*os, asi::cost::make_report(std::move(rows)));
  return 0;
}

int cmd_verify(std::uint64_t seed) {
  const auto results = asi::testing::run_property_suites(seed);
  std::size_t failed = 0;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    failed += !r.passed;
  }
  std::cout << results.size() - failed << "/" << results.size() << " property suites passed\n";
  if (failed) throw CliError("E_VERIFY_FAILED", std::to_string(failed) + " property suite(s) failed", 7);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Activation compression by subspace iteration: calibration, rank selection, training, costs"};
  app.require_subcommand(1);

  ConfigOptions cal_cfg, train_cfg, cost_cfg;
  std::string cal_out = "perplexity.csv";
  auto* cal = app.add_subcommand("calibrate", "Measure the per-layer perplexity table");
  cal_cfg.attach(cal);
  cal->add_option("--out", cal_out, "Output CSV (a .manifest file is written alongside)");

  std::string sel_table, sel_out = "selection.txt";
  std::uint64_t sel_budget = 0;
  auto* sel = app.add_subcommand("select-ranks", "Choose one threshold per layer under a memory budget");
  sel->add_option("--table", sel_table, "Perplexity table CSV")->required();
  sel->add_option("--budget", sel_budget, "Activation memory budget in elements")->required();
  sel->add_option("--out", sel_out, "Selection output file");

  std::string metrics, checkpoint, resume;
  auto* train = app.add_subcommand("train", "Train under the vanilla, hosvd or asi regime");
  train_cfg.attach(train);
  train->add_option("--metrics", metrics, "JSON-lines metrics output");
  train->add_option("--checkpoint", checkpoint, "Directory for the final checkpoint");
  train->add_option("--resume", resume, "Checkpoint directory to continue from");

  std::string sweep, shape = "8,16,16,16", ranks, sizes = "8,16,32,64", cost_out;
  std::size_t out_channels = 16, kernel = 3, max_rank = 8;
  auto* cost = app.add_subcommand("cost-report", "FLOP and memory cost model per layer, or a formula sweep");
  cost_cfg.attach(cost);
  cost->add_option("--sweep", sweep, "rank | spatial");
  cost->add_option("--shape", shape, "Sweep activation shape B,C,H,W");
  cost->add_option("--out-channels", out_channels, "Sweep output channels C'");
  cost->add_option("--kernel", kernel, "Sweep kernel size D (same padding)");
  cost->add_option("--max-rank", max_rank, "Rank sweep upper limit");
  cost->add_option("--ranks", ranks, "r1,r2,r3,r4 (spatial sweep, or uniform ranks for the model report)");
  cost->add_option("--sizes", sizes, "Spatial sweep sizes H=W");
  cost->add_option("--out", cost_out, "Output CSV (stdout when omitted)");

  std::uint64_t verify_seed = 0;
  auto* verify = app.add_subcommand("verify", "Run the oracle property suites");
  verify->add_option("--seed", verify_seed, "Suite seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[E_USAGE]: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    if (*cal) return cmd_calibrate(cal_cfg, cal_out);
    if (*sel) return cmd_select(sel_table, sel_budget, sel_out);
    if (*train) return cmd_train(train_cfg, metrics, checkpoint, resume);
    if (*cost)
      return cmd_cost_report(cost_cfg, sweep, shape, out_channels, kernel, max_rank, ranks, sizes,
                             cost_out);
    if (*verify) return cmd_verify(verify_seed);
  } catch (const CliError& e) {
    std::cerr << "error[" << e.code << "]: " << one_line(e.what()) << '\n';
    return e.exit_code;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error[E_INVALID]: " << one_line(e.what()) << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error[E_RUNTIME]: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}
