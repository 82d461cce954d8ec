#include "phantom/pipeline/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "phantom/circuits/circuit_io.hpp"
#include "phantom/nanoformer/checkpoint.hpp"
#include "phantom/pipeline/manifest.hpp"

namespace phantom::pipeline {

namespace fs = std::filesystem;

namespace {

void write_atomic(const fs::path& path, const std::string& text) {
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string epoch_tag(int epoch) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "epoch_%04d", epoch);
  return buf;
}

std::vector<model::TokenSeq> prompts_of(const std::vector<data::PromptRecord>& records, std::size_t limit) {
  std::vector<model::TokenSeq> out;
  for (std::size_t i = 0; i < records.size() && i < limit; ++i)
    out.emplace_back(records[i].tokens.begin(), records[i].tokens.end());
  return out;
}

std::string attention_rows(const model::Model<float>& m, const data::EvalSplit& split, std::size_t probe, int epoch) {
  const auto span = subject_span();
  const auto on_sub = probes::attention_on_span(m, prompts_of(split.subordinate, probe), span);
  const auto on_dom = probes::attention_on_span(m, prompts_of(split.dominant, probe), span);
  std::ostringstream os;
  probes::write_attention_rows(os, epoch, on_sub, on_dom);
  return os.str();
}

bool settled(const std::vector<dynamics::EpochMetrics>& rows, const RunConfig& cfg) {
  if (cfg.early_stop_patience == 0) return false;
  int run = 0;
  for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
    if (it->epoch == 0 || !it->ro || *it->ro > cfg.phases.recovered || it->r_dom < cfg.phases.high) break;
    ++run;
  }
  return run >= cfg.early_stop_patience;
}

void save_checkpoint(const RunPaths& paths, const model::Model<float>& m, const dynamics::Adam<float>& opt, int epoch,
                     const std::string& hash) {
  nlohmann::json meta{{"epoch", epoch}, {"adam_steps", opt.steps()}, {"config_hash", hash}};
  model::write_checkpoint(paths.checkpoint(epoch), model::make_checkpoint(m, {}, meta));
  const auto tmp = fs::path(paths.optimizer().string() + ".tmp");
  model::write_checkpoint(tmp, model::make_checkpoint(m, opt.state(m), meta));
  fs::rename(tmp, paths.optimizer());
}

void write_phases(const RunPaths& paths, const TrainResult& r) {
  auto j = dynamics::to_json(r.phases);
  j["epochs_run"] = r.metrics.empty() ? 0 : r.metrics.back().epoch;
  j["stopped_early"] = r.stopped_early;
  write_atomic(paths.phases(), j.dump(2) + "\n");
}

}  // namespace

fs::path RunPaths::checkpoint(int epoch) const { return checkpoints() / (epoch_tag(epoch) + ".ckpt"); }
fs::path RunPaths::circuits(int epoch) const { return root / "circuits" / epoch_tag(epoch); }

std::vector<std::size_t> subject_span() { return {data::kPromptLength - 1}; }

data::EvalSplit eval_split(const RunConfig& config, const data::Dataset& ds) {
  return data::sample_eval(ds, config.train.eval_dom, config.train.eval_sub, config.train.seed + 1);
}

std::vector<int> checkpoint_epochs(const fs::path& run_dir) {
  std::vector<int> out;
  const auto dir = RunPaths{run_dir}.checkpoints();
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    int epoch = 0;
    char tail = 0;
    if (std::sscanf(name.c_str(), "epoch_%d.ckp%c", &epoch, &tail) == 2 && tail == 't' && name.ends_with(".ckpt"))
      out.push_back(epoch);
  }
  std::sort(out.begin(), out.end());
  return out;
}

TrainResult train_run(const RunConfig& config, const TrainOptions& options) {
  config.validate();
  const RunPaths paths{config.output_dir};
  const std::string hash = config.hash();
  fs::create_directories(paths.checkpoints());

  if (options.resume && fs::exists(paths.config())) {
    const auto existing = read_run_config(paths.config());
    if (existing.hash() != hash)
      throw ConfigMismatch("run directory " + paths.root.string() + " holds a run with config hash " +
                           existing.hash() + ", requested config has hash " + hash);
  }

  const auto ds = data::generate(config.dataset);
  const std::string jsonl = data::to_jsonl(ds);
  if (options.resume && fs::exists(paths.dataset()) && read_text(paths.dataset()) != jsonl)
    throw ConfigMismatch("dataset in " + paths.root.string() + " differs from the one the config generates");
  write_atomic(paths.dataset(), jsonl);
  write_atomic(paths.config(), nlohmann::json(config).dump(2) + "\n");

  const auto split = eval_split(config, ds);
  const auto mc = config.model_config();

  TrainResult result;
  std::vector<std::string> attention;
  model::Model<float> m(mc);
  dynamics::Adam<float> opt(m, config.train);

  if (options.resume && fs::exists(paths.optimizer())) {
    const auto ckpt = model::read_checkpoint(paths.optimizer());
    if (ckpt.meta.value("config_hash", std::string()) != hash || !(ckpt.config == mc))
      throw ConfigMismatch("checkpoint " + paths.optimizer().string() + " was written by a different config");
    const int epoch = ckpt.meta.at("epoch").get<int>();
    m = ckpt.model();
    opt.restore(m, ckpt, ckpt.meta.at("adam_steps").get<std::int64_t>());
    for (const auto& row : dynamics::read_metrics_csv(read_text(paths.metrics())))
      if (row.epoch <= epoch) result.metrics.push_back(row);
    std::istringstream att(read_text(paths.attention()));
    std::string line;
    std::getline(att, line);
    std::map<int, std::string> by_epoch;
    while (std::getline(att, line)) {
      const int e = std::stoi(line.substr(0, line.find(',')));
      if (e <= epoch) by_epoch[e] += line + "\n";
    }
    for (auto& [e, rows] : by_epoch) attention.push_back(rows);
    if (result.metrics.empty() || result.metrics.back().epoch != epoch || attention.size() != result.metrics.size())
      throw ConfigMismatch("metrics in " + paths.root.string() + " do not cover checkpoint epoch " +
                           std::to_string(epoch));
    result.resumed_from = epoch;
  } else {
    auto row = dynamics::evaluate_overshadowing(m, ds, split);
    row.epoch = 0;
    result.metrics.push_back(row);
    attention.push_back(attention_rows(m, split, config.probe.probe_pairs, 0));
    save_checkpoint(paths, m, opt, 0, hash);
  }

  auto flush = [&] {
    std::ostringstream csv;
    dynamics::write_metrics_csv(csv, result.metrics);
    write_atomic(paths.metrics(), csv.str());
    std::string att = std::string(probes::kAttentionCsvHeader) + "\n";
    for (const auto& rows : attention) att += rows;
    write_atomic(paths.attention(), att);
  };
  flush();

  int last_saved = result.metrics.back().epoch;
  for (int e = result.metrics.back().epoch + 1; e <= config.train.epochs; ++e) {
    if (settled(result.metrics, config)) {
      result.stopped_early = true;
      break;
    }
    const auto ledger = dynamics::train_epoch(m, opt, ds, config.train, e);
    auto row = dynamics::evaluate_overshadowing(m, ds, split);
    row.epoch = e;
    row.lp = dynamics::compute_LP(ledger).lp;
    row.mean_loss = ledger.mean_loss;
    result.metrics.push_back(row);
    attention.push_back(attention_rows(m, split, config.probe.probe_pairs, e));
    flush();
    if (e % config.checkpoint_every == 0 || e == config.train.epochs) {
      save_checkpoint(paths, m, opt, e, hash);
      last_saved = e;
    }
    if (options.log) {
      *options.log << config.name << " epoch " << e << " AO " << dynamics::format_number(row.ao) << " R_dom "
                   << dynamics::format_number(row.r_dom) << " RO "
                   << (row.ro ? dynamics::format_number(*row.ro) : std::string("NA")) << " LP "
                   << dynamics::format_number(row.lp) << " loss " << dynamics::format_number(row.mean_loss) << "\n";
      options.log->flush();
    }
    if (options.stop_after && e >= *options.stop_after && e < config.train.epochs) {
      if (last_saved != e) save_checkpoint(paths, m, opt, e, hash);
      result.phases = dynamics::segment_phases(result.metrics, config.phases);
      refresh_manifest(paths.root, hash);
      return result;
    }
  }
  if (!result.stopped_early && settled(result.metrics, config) &&
      result.metrics.back().epoch < config.train.epochs)
    result.stopped_early = true;
  if (last_saved != result.metrics.back().epoch) save_checkpoint(paths, m, opt, result.metrics.back().epoch, hash);

  result.complete = true;
  result.phases = dynamics::segment_phases(result.metrics, config.phases);
  write_phases(paths, result);
  refresh_manifest(paths.root, hash);
  return result;
}

LoadedRun load_run(const fs::path& run_dir) {
  const RunPaths paths{run_dir};
  LoadedRun r;
  r.config = read_run_config(paths.config());
  r.dataset = data::read_jsonl(paths.dataset());
  r.split = eval_split(r.config, r.dataset);
  if (fs::exists(paths.metrics())) r.metrics = dynamics::read_metrics_csv(read_text(paths.metrics()));
  return r;
}

model::Model<float> load_model(const fs::path& run_dir, int epoch) {
  const auto path = RunPaths{run_dir}.checkpoint(epoch);
  if (!fs::exists(path)) throw std::runtime_error("no checkpoint for epoch " + std::to_string(epoch) + " in " +
                                                  run_dir.string());
  return model::read_checkpoint(path).model();
}

std::vector<circuits::PromptPair> subordinate_pairs(const data::Dataset& ds,
                                                    const std::vector<data::PromptRecord>& records,
                                                    std::size_t limit) {
  std::vector<circuits::PromptPair> out;
  for (const auto& r : records) {
    if (out.size() >= limit) break;
    if (r.kind != data::RecordKind::subordinate) continue;
    const auto c = data::make_corrupt(r);
    out.push_back({model::TokenSeq(r.tokens.begin(), r.tokens.end()), model::TokenSeq(c.tokens.begin(), c.tokens.end()),
                   r.answer, ds.group_of(r).y_dom});
  }
  return out;
}

std::vector<circuits::PromptPair> overshadowed(const model::Model<float>& m,
                                               const std::vector<circuits::PromptPair>& pairs) {
  std::vector<circuits::PromptPair> out;
  for (const auto& p : pairs) {
    const auto f = model::forward(m, p.clean).final_logits();
    const auto best = std::max_element(f.begin(), f.end()) - f.begin();
    if (best == p.y_dom) out.push_back(p);
  }
  return out;
}

std::vector<SweepCell> sweep_grid(const std::vector<int>& popularity, const std::vector<std::int64_t>& tokens,
                                  const std::vector<std::string>& models) {
  std::vector<SweepCell> out;
  for (int p : popularity)
    for (const auto& m : models)
      for (auto d : tokens)
        out.push_back({"P" + std::to_string(p) + "_D" + std::to_string(d) + "_" + m, p, d, m});
  return out;
}

std::vector<SweepRow> run_sweep(const RunConfig& base, const std::vector<SweepCell>& cells,
                                const TrainOptions& options) {
  std::vector<SweepRow> rows;
  fs::create_directories(base.output_dir);
  for (const auto& cell : cells) {
    SweepRow row;
    row.cell = cell;
    try {
      RunConfig cfg = base;
      cfg.name = cell.label;
      cfg.dataset.popularity = cell.popularity;
      cfg.dataset.target_tokens = cell.target_tokens;
      cfg.model.preset = cell.model;
      cfg.output_dir = base.output_dir / "cells" / cell.label;
      const auto r = train_run(cfg, options);
      row.status = "ok";
      row.phases = r.phases;
      row.epochs = r.metrics.back().epoch;
      row.final_ro = r.metrics.back().ro;
    } catch (const std::exception& e) {
      row.status = std::string("failed: ") + e.what();
    }
    rows.push_back(row);
    std::ostringstream csv;
    write_sweep_csv(csv, rows);
    write_atomic(base.output_dir / "sweep.csv", csv.str());
  }
  return rows;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  auto opt_i = [](const std::optional<int>& v) { return v ? std::to_string(*v) : std::string("NA"); };
  auto opt_d = [](const std::optional<double>& v) { return v ? dynamics::format_number(*v) : std::string("NA"); };
  auto quote = [](std::string s) {
    for (auto& c : s)
      if (c == '"' || c == '\n' || c == ',') c = ' ';
    return s;
  };
  os << kSweepCsvHeader << "\n";
  for (const auto& r : rows) {
    os << r.cell.label << ',' << r.cell.popularity << ',' << r.cell.target_tokens << ',' << r.cell.model << ','
       << quote(r.status) << ',' << opt_i(r.phases.onset) << ',' << opt_i(r.phases.duration) << ','
       << opt_i(r.phases.recovery) << ',' << opt_d(r.phases.onset_rate) << ',' << opt_d(r.phases.recovery_rate) << ','
       << r.epochs << ',' << opt_d(r.final_ro) << "\n";
  }
}

circuits::CircuitGraph circuit_build(const CircuitContext& ctx, int ig_steps) {
  fs::create_directories(ctx.dir);
  auto graph = circuits::eap_ig_scores(ctx.model, ctx.pairs, ig_steps);
  circuits::write_circuit_json(ctx.dir / "circuit.json", graph);
  write_atomic(ctx.dir / "circuit.dot", circuits::to_dot(graph));
  return graph;
}

OptimizeResult circuit_optimize(const CircuitContext& ctx, const recovery::RecoveryConfig& config) {
  const auto graph = circuits::read_circuit_json(ctx.dir / "circuit.json");
  std::vector<circuits::PreparedPair<float>> prepared;
  for (const auto& p : graph.provenance.pairs) prepared.push_back(circuits::prepare(ctx.model, p));
  const std::size_t total = graph.edge_count();
  recovery::Memo memo;
  OptimizeResult r;
  const auto grid = recovery::uniform_grid(total, config.grid_points, config.grid_lo_fraction);
  r.curve = recovery::scan_edges(ctx.model, graph, prepared, grid, &memo);
  const std::size_t best = r.curve.argmax();
  r.bracket_lo = r.curve.n[best > 0 ? best - 1 : 0];
  r.bracket_hi = r.curve.n[std::min(best + 1, r.curve.n.size() - 1)];
  if (best == 0 && r.curve.n[0] > 0) r.bracket_lo = 0;
  if (r.bracket_lo < r.bracket_hi) {
    r.search = recovery::golden_section(ctx.model, graph, prepared, r.bracket_lo, r.bracket_hi, config.tolerance, &memo);
  } else {
    r.search = {r.curve.n[best], r.curve.metric[best], 0};
  }
  r.circuit = circuits::prune_top_n(graph, r.search.n_opt);
  std::ostringstream csv;
  recovery::write_edge_curve_csv(csv, r.curve);
  write_atomic(ctx.dir / "edge_curve.csv", csv.str());
  circuits::write_circuit_json(ctx.dir / "circuit_opt.json", r.circuit);
  write_atomic(ctx.dir / "circuit_opt.dot", circuits::to_dot(r.circuit));
  return r;
}

circuits::CircuitGraph read_circuit(const fs::path& dir) {
  if (fs::exists(dir / "circuit_opt.json")) return circuits::read_circuit_json(dir / "circuit_opt.json");
  if (fs::exists(dir / "circuit.json")) return circuits::read_circuit_json(dir / "circuit.json");
  throw std::runtime_error("no circuit in " + dir.string() + " (run circuit build first)");
}

namespace {

std::vector<circuits::PreparedPair<float>> prepare_all(const model::Model<float>& m,
                                                       const std::vector<circuits::PromptPair>& pairs) {
  std::vector<circuits::PreparedPair<float>> out;
  for (const auto& p : pairs) out.push_back(circuits::prepare(m, p));
  return out;
}

const std::vector<circuits::PromptPair>& pairs_for(const CircuitContext& ctx, const circuits::CircuitGraph& g) {
  return ctx.pairs.empty() ? g.provenance.pairs : ctx.pairs;
}

}  // namespace

ProbeResult circuit_probe(const CircuitContext& ctx, double threshold, std::optional<int> epoch) {
  const auto graph = read_circuit(ctx.dir);
  const auto& pairs = pairs_for(ctx, graph);
  if (pairs.empty()) throw std::invalid_argument("circuit probe: no prompt pairs");
  std::vector<model::TokenSeq> prompts;
  for (const auto& p : pairs) prompts.push_back(p.clean);
  const auto span = subject_span();
  ProbeResult r;
  r.attention = probes::attention_on_span(ctx.model, prompts, span);
  r.high = probes::high_attention_heads(r.attention, threshold, epoch);
  r.circuit_heads = probes::circuit_heads(graph);
  if (!r.circuit_heads.empty())
    r.circuit_attention = probes::circuit_attention(ctx.model, graph, prepare_all(ctx.model, pairs), r.circuit_heads, span);
  for (const auto& p : pairs) {
    r.lens.push_back(probes::logit_lens(ctx.model, p.clean, p.y_sub, p.y_dom));
    if (r.lens.back().juncture) ++r.junctures;
  }
  r.logits_structure = probes::trace_structure(graph, graph.topology.logits_node());
  write_atomic(ctx.dir / "probe.json", to_json(r, graph.topology).dump(2) + "\n");
  return r;
}

std::vector<probes::AblationResult> circuit_ablate(const CircuitContext& ctx, const std::vector<double>& proportions) {
  const auto graph = read_circuit(ctx.dir);
  const auto& pairs = pairs_for(ctx, graph);
  if (pairs.empty()) throw std::invalid_argument("circuit ablate: no prompt pairs");
  std::vector<model::TokenSeq> prompts;
  for (const auto& p : pairs) prompts.push_back(p.clean);
  const auto span = subject_span();
  const auto ranking = probes::attention_on_span(ctx.model, prompts, span);
  const auto prepared = prepare_all(ctx.model, pairs);
  std::vector<probes::AblationResult> out;
  nlohmann::json j = nlohmann::json::array();
  for (double p : proportions) {
    out.push_back(probes::ablate_heads(ctx.model, graph, prepared, ranking, p, span));
    j.push_back(probes::to_json(out.back()));
  }
  write_atomic(ctx.dir / "ablation.json", j.dump(2) + "\n");
  return out;
}

std::vector<recovery::RecoveryOutcome> circuit_recover(const CircuitContext& ctx,
                                                       const recovery::RecoveryConfig& config) {
  fs::create_directories(ctx.dir);
  std::vector<recovery::RecoveryOutcome> out;
  nlohmann::json j = nlohmann::json::array();
  for (const auto& p : ctx.pairs) {
    out.push_back(recovery::recover(ctx.model, p.clean, config));
    auto rec = recovery::to_json(out.back());
    rec["truth"] = {{"y_sub", p.y_sub}, {"y_dom", p.y_dom}};
    j.push_back(rec);
  }
  write_atomic(ctx.dir / "recovery.json", j.dump(2) + "\n");
  return out;
}

nlohmann::json to_json(const ProbeResult& r, const model::Topology& topo) {
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& h : r.circuit_heads) heads.push_back({{"layer", h.layer}, {"head", h.head}});
  nlohmann::json lens = nlohmann::json::array();
  for (const auto& l : r.lens) lens.push_back(probes::to_json(l));
  return {{"attention", probes::to_json(r.attention)},
          {"high_attention", probes::to_json(r.high)},
          {"circuit_heads", heads},
          {"circuit_attention", r.circuit_attention},
          {"junctures", r.junctures},
          {"lens", lens},
          {"logits_structure", probes::to_json(r.logits_structure, topo)}};
}

nlohmann::json run_report(const fs::path& run_dir) {
  const auto problems = validate_manifest(run_dir);
  if (!problems.empty()) {
    std::string msg = "invalid manifest in " + run_dir.string() + ":";
    for (const auto& p : problems) msg += "\n  " + p;
    throw std::runtime_error(msg);
  }
  const auto run = load_run(run_dir);
  const auto manifest = read_manifest(run_dir);
  nlohmann::json j;
  j["config"] = run.config;
  j["config_hash"] = manifest.config_hash;
  j["code_version"] = manifest.code_version;
  j["phases"] = dynamics::to_json(dynamics::segment_phases(run.metrics, run.config.phases));
  if (!run.metrics.empty()) j["final"] = dynamics::to_json(run.metrics.back());
  std::optional<std::size_t> peak;
  for (std::size_t i = 0; i < run.metrics.size(); ++i)
    if (run.metrics[i].ro && (!peak || *run.metrics[i].ro > *run.metrics[*peak].ro)) peak = i;
  if (peak) j["peak"] = dynamics::to_json(run.metrics[*peak]);
  j["checkpoints"] = checkpoint_epochs(run_dir);
  nlohmann::json artifacts = nlohmann::json::array();
  for (const auto& f : manifest.files) artifacts.push_back({{"path", f.path}, {"bytes", f.bytes}});
  j["artifacts"] = artifacts;
  return j;
}

}  // namespace phantom::pipeline
