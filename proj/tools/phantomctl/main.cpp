#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "phantom/circuits/circuit_io.hpp"
#include "phantom/nanoformer/checkpoint.hpp"
#include "phantom/pipeline/manifest.hpp"
#include "phantom/pipeline/pipeline.hpp"

namespace fs = std::filesystem;
using namespace phantom;

namespace {

constexpr const char* kOutputEnv = "PHANTOM_OUTPUT_DIR";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::optional<fs::path> env_output_dir() {
  if (const char* v = std::getenv(kOutputEnv); v && *v) return fs::path(v);
  return std::nullopt;
}

pipeline::RunConfig load_config(const std::string& file, const std::vector<std::string>& sets, const std::string& out) {
  pipeline::RunConfig cfg;
  try {
    if (!file.empty()) cfg = pipeline::read_run_config(file);
    for (const auto& s : sets) pipeline::apply_override(cfg, s);
    if (!out.empty()) {
      cfg.output_dir = out;
    } else if (auto env = env_output_dir()) {
      cfg.output_dir = *env;
    }
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  return cfg;
}

int resolve_epoch(const fs::path& run, int requested) {
  const auto epochs = pipeline::checkpoint_epochs(run);
  if (epochs.empty()) throw std::runtime_error("no checkpoints in " + run.string());
  if (requested < 0) return epochs.back();
  if (std::find(epochs.begin(), epochs.end(), requested) == epochs.end())
    throw UsageError("no checkpoint for epoch " + std::to_string(requested) + " in " + run.string());
  return requested;
}

template <typename T>
std::vector<T> split_list(const std::string& s) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if constexpr (std::is_same_v<T, std::string>) {
      out.push_back(item);
    } else {
      std::size_t used = 0;
      T v{};
      try {
        v = static_cast<T>(std::stoll(item, &used));
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != item.size()) throw UsageError("bad list element '" + item + "'");
      out.push_back(v);
    }
  }
  if (out.empty()) throw UsageError("empty list '" + s + "'");
  return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"phantomctl: datasets, training runs, sweeps and circuit analysis for knowledge overshadowing"};
  app.require_subcommand(1);
  app.set_version_flag("--version", pipeline::code_version());

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic knowledge dataset (JSONL)");
  data::DatasetSpec gspec;
  std::string gen_out, gen_name = "dataset.jsonl";
  gen->add_option("--p", gspec.popularity, "Dominant records per subordinate record")->required();
  gen->add_option("--d", gspec.target_tokens, "Token budget")->required();
  gen->add_option("--seed", gspec.seed, "Generator seed");
  gen->add_option("--vocab", gspec.vocab_size, "Vocabulary size (0 = automatic)");
  gen->add_option("--out", gen_out, "Output directory (default $" + std::string(kOutputEnv) + " or .)");
  gen->add_option("--name", gen_name, "File name inside the output directory");

  // train
  auto* train = app.add_subcommand("train", "Train a run with per-epoch evaluation and checkpoints");
  std::string train_cfg, train_out;
  std::vector<std::string> train_sets;
  bool no_resume = false;
  int stop_after = -1;
  train->add_option("--config", train_cfg, "Run config JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--set", train_sets, "Override a config key, e.g. train.epochs=20");
  train->add_option("--out", train_out, "Run directory (overrides config and $" + std::string(kOutputEnv) + ")");
  train->add_flag("--no-resume", no_resume, "Ignore existing checkpoints and start over");
  train->add_option("--stop-after", stop_after, "Stop after this epoch, leaving the run resumable");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the run's evaluation split");
  std::string eval_run;
  int eval_epoch = -1;
  eval->add_option("--run", eval_run, "Run directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--epoch", eval_epoch, "Checkpoint epoch (default: newest)");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Train every cell of a P x M x D grid");
  std::string sweep_cfg, sweep_out, sweep_p = "5,100", sweep_d = "2000,20000", sweep_m = "S";
  std::vector<std::string> sweep_sets;
  sweep->add_option("--config", sweep_cfg, "Base run config JSON")->check(CLI::ExistingFile);
  sweep->add_option("--set", sweep_sets, "Override a base config key");
  sweep->add_option("--p", sweep_p, "Comma-separated popularity values");
  sweep->add_option("--d", sweep_d, "Comma-separated token budgets");
  sweep->add_option("--m", sweep_m, "Comma-separated model presets");
  sweep->add_option("--out", sweep_out, "Sweep directory (overrides config and $" + std::string(kOutputEnv) + ")");

  // circuit
  auto* circuit = app.add_subcommand("circuit", "Circuit discovery, optimization, probing, ablation and recovery");
  std::string action, circ_run, source = "probe";
  int circ_epoch = -1;
  std::size_t circ_pairs = 0;
  std::optional<double> threshold;
  std::vector<double> proportions;
  const std::vector<std::string> actions{"build", "optimize", "probe", "ablate", "recover"};
  circuit->add_option("action", action, "build | optimize | probe | ablate | recover")->required();
  circuit->add_option("--run", circ_run, "Run directory")->required()->check(CLI::ExistingDirectory);
  circuit->add_option("--epoch", circ_epoch, "Checkpoint epoch (default: newest)");
  circuit->add_option("--pairs", circ_pairs, "Prompt pairs (default: probe set size)");
  circuit->add_option("--source", source, "Pair source: probe | overshadowed")
      ->check(CLI::IsMember({"probe", "overshadowed"}));
  circuit->add_option("--threshold", threshold, "High-attention threshold (probe)");
  circuit->add_option("--proportions", proportions, "Head proportions to ablate (ablate)")->delimiter(',');

  // report
  auto* report = app.add_subcommand("report", "Validate a run directory and write report.json");
  std::string report_run;
  report->add_option("--run", report_run, "Run directory")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      fs::path dir = !gen_out.empty() ? fs::path(gen_out) : env_output_dir().value_or(fs::path("."));
      if (fs::path(gen_name).has_parent_path()) throw UsageError("--name must be a plain file name");
      try {
        gspec.validate();
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      fs::create_directories(dir);
      const auto ds = data::generate(gspec);
      data::write_jsonl(dir / gen_name, ds);
      pipeline::refresh_manifest(dir, pipeline::fnv1a_hex(nlohmann::json(gspec).dump()));
      std::cout << (dir / gen_name).string() << ": " << ds.groups.size() << " groups, " << ds.records.size()
                << " records, vocab " << ds.vocab_size << "\n";
    } else if (*train) {
      const auto cfg = load_config(train_cfg, train_sets, train_out);
      pipeline::TrainOptions opt;
      opt.resume = !no_resume;
      opt.log = &std::cerr;
      if (stop_after >= 0) opt.stop_after = stop_after;
      if (no_resume && fs::exists(cfg.output_dir)) {
        const pipeline::RunPaths p{cfg.output_dir};
        for (const auto& f : {p.metrics(), p.attention(), p.phases(), p.optimizer()}) fs::remove(f);
        for (int e : pipeline::checkpoint_epochs(cfg.output_dir)) fs::remove(p.checkpoint(e));
        fs::remove(p.config());
      }
      const auto r = pipeline::train_run(cfg, opt);
      std::cout << dynamics::to_json(r.phases).dump(2) << "\n";
      if (!r.complete) std::cerr << "stopped after epoch " << r.metrics.back().epoch << " (resumable)\n";
    } else if (*eval) {
      const fs::path run = eval_run;
      const int epoch = resolve_epoch(run, eval_epoch);
      const auto loaded = pipeline::load_run(run);
      const auto m = pipeline::load_model(run, epoch);
      auto metrics = dynamics::evaluate_overshadowing(m, loaded.dataset, loaded.split);
      metrics.epoch = epoch;
      const auto j = dynamics::to_json(metrics);
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d.json", epoch);
      write_json(run / "evals" / name, j);
      pipeline::refresh_manifest(run, loaded.config.hash());
      std::cout << j.dump(2) << "\n";
    } else if (*sweep) {
      const auto base = load_config(sweep_cfg, sweep_sets, sweep_out);
      const auto cells = pipeline::sweep_grid(split_list<int>(sweep_p), split_list<std::int64_t>(sweep_d),
                                              split_list<std::string>(sweep_m));
      pipeline::TrainOptions opt;
      opt.log = &std::cerr;
      const auto rows = pipeline::run_sweep(base, cells, opt);
      pipeline::write_sweep_csv(std::cout, rows);
      for (const auto& r : rows)
        if (r.status != "ok") return 1;
    } else if (*circuit) {
      if (std::find(actions.begin(), actions.end(), action) == actions.end())
        throw UsageError("unknown circuit action '" + action + "' (expected build, optimize, probe, ablate or recover)");
      const fs::path run = circ_run;
      const int epoch = resolve_epoch(run, circ_epoch);
      const auto loaded = pipeline::load_run(run);
      const auto m = pipeline::load_model(run, epoch);
      const std::size_t n = circ_pairs > 0 ? circ_pairs : loaded.config.probe.probe_pairs;
      const fs::path dir = pipeline::RunPaths{run}.circuits(epoch);

      std::vector<circuits::PromptPair> pairs;
      if (source == "overshadowed" || action == "recover") {
        pairs = pipeline::overshadowed(
            m, pipeline::subordinate_pairs(loaded.dataset, loaded.split.subordinate, loaded.split.subordinate.size()));
        if (pairs.size() > n) pairs.resize(n);
      } else {
        pairs = pipeline::subordinate_pairs(loaded.dataset, loaded.split.subordinate, n);
      }
      pipeline::CircuitContext ctx{m, pairs, dir};
      if (action != "build" && action != "recover") ctx.pairs.clear();

      nlohmann::json summary;
      if (action == "build") {
        if (pairs.empty()) throw std::runtime_error("no prompt pairs from source '" + source + "'");
        const auto g = pipeline::circuit_build(ctx, loaded.config.probe.ig_steps);
        summary = {{"circuit", (dir / "circuit.json").string()}, {"edges", g.edge_count()}, {"pairs", pairs.size()}};
      } else if (action == "optimize") {
        const auto r = pipeline::circuit_optimize(ctx, loaded.config.recovery);
        summary = {{"n_opt", r.search.n_opt},
                   {"M", r.search.value},
                   {"total_edges", r.circuit.edge_count()},
                   {"bracket", {r.bracket_lo, r.bracket_hi}}};
      } else if (action == "probe") {
        const auto r = pipeline::circuit_probe(ctx, threshold.value_or(loaded.config.probe.threshold), epoch);
        nlohmann::json high = nlohmann::json::array();
        for (const auto& h : r.high.heads) high.push_back({h.layer, h.head});
        summary = {{"circuit_attention", r.circuit_attention}, {"high_attention", high},
                   {"junctures", r.junctures}, {"prompts", r.lens.size()}};
      } else if (action == "ablate") {
        const auto props = proportions.empty() ? loaded.config.probe.ablation_proportions : proportions;
        for (double p : props)
          if (!(p > 0 && p <= 1)) throw UsageError("ablation proportions must lie in (0, 1]");
        summary = nlohmann::json::array();
        for (const auto& r : pipeline::circuit_ablate(ctx, props)) summary.push_back(probes::to_json(r));
      } else {
        if (pairs.empty()) throw std::runtime_error("no overshadowed subordinate prompts at epoch " + std::to_string(epoch));
        const auto outs = pipeline::circuit_recover(ctx, loaded.config.recovery);
        std::size_t flipped = 0;
        for (const auto& o : outs) flipped += o.recovered ? 1 : 0;
        summary = {{"prompts", outs.size()}, {"recovered", flipped}, {"file", (dir / "recovery.json").string()}};
      }
      pipeline::refresh_manifest(run, loaded.config.hash());
      std::cout << summary.dump(2) << "\n";
    } else if (*report) {
      const fs::path run = report_run;
      const auto j = pipeline::run_report(run);
      write_json(run / "report.json", j);
      pipeline::refresh_manifest(run, j.at("config_hash").get<std::string>());
      std::cout << j.dump(2) << "\n";
    }
  } catch (const UsageError& e) {
    std::cerr << "phantomctl: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "phantomctl: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
