#include "phantom/pipeline/run_config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace phantom::pipeline {

namespace {

const std::vector<std::string> kTopLevelKeys{"name",  "dataset",  "model",      "train",           "phases",
                                             "probe", "recovery", "output_dir", "checkpoint_every", "early_stop_patience"};

}  // namespace

void RunConfig::validate() const {
  if (name.empty()) throw std::invalid_argument("run config: name must not be empty");
  dataset.validate();
  train.validate();
  recovery.validate();
  if (model.preset != "custom") (void)model::preset(model.preset, 512, 0);
  model_config().validate();
  if (model_config().precision != nd::Precision::f32)
    throw std::invalid_argument("run config: training runs in f32 precision");
  if (!(phases.recovered < phases.high)) throw std::invalid_argument("run config: phases.recovered must be < phases.high");
  if (!(probe.threshold >= 0 && probe.threshold <= 1))
    throw std::invalid_argument("run config: probe.threshold must lie in [0, 1]");
  if (probe.probe_pairs == 0) throw std::invalid_argument("run config: probe.probe_pairs must be >= 1");
  if (probe.ig_steps < 1) throw std::invalid_argument("run config: probe.ig_steps must be >= 1");
  for (double p : probe.ablation_proportions)
    if (!(p > 0 && p <= 1)) throw std::invalid_argument("run config: ablation proportions must lie in (0, 1]");
  if (output_dir.empty()) throw std::invalid_argument("run config: output_dir must not be empty");
  if (checkpoint_every < 1) throw std::invalid_argument("run config: checkpoint_every must be >= 1");
  if (early_stop_patience < 0) throw std::invalid_argument("run config: early_stop_patience must be >= 0");
}

model::ModelConfig RunConfig::model_config() const {
  const int vocab = dataset.resolved_vocab();
  if (model.preset != "custom") return model::preset(model.preset, vocab, model.seed);
  model::ModelConfig c;
  c.n_layers = model.n_layers;
  c.n_heads = model.n_heads;
  c.d_model = model.d_model;
  c.d_mlp = model.d_mlp > 0 ? model.d_mlp : 4 * model.d_model;
  c.vocab_size = vocab;
  c.seed = model.seed;
  return c;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string RunConfig::hash() const {
  nlohmann::json j = *this;
  j.erase("output_dir");
  j["train"].erase("epochs");
  j.erase("early_stop_patience");
  j.erase("checkpoint_every");
  return fnv1a_hex(j.dump());
}

void to_json(nlohmann::json& j, const ModelSpec& s) {
  j = nlohmann::json{{"preset", s.preset}, {"n_layers", s.n_layers}, {"n_heads", s.n_heads},
                     {"d_model", s.d_model}, {"d_mlp", s.d_mlp},     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, ModelSpec& s) {
  ModelSpec d;
  s.preset = j.value("preset", d.preset);
  s.n_layers = j.value("n_layers", d.n_layers);
  s.n_heads = j.value("n_heads", d.n_heads);
  s.d_model = j.value("d_model", d.d_model);
  s.d_mlp = j.value("d_mlp", d.d_mlp);
  s.seed = j.value("seed", d.seed);
}

void to_json(nlohmann::json& j, const ProbeConfig& c) {
  j = nlohmann::json{{"threshold", c.threshold},
                     {"probe_pairs", c.probe_pairs},
                     {"ig_steps", c.ig_steps},
                     {"ablation_proportions", c.ablation_proportions}};
}

void from_json(const nlohmann::json& j, ProbeConfig& c) {
  ProbeConfig d;
  c.threshold = j.value("threshold", d.threshold);
  c.probe_pairs = j.value("probe_pairs", d.probe_pairs);
  c.ig_steps = j.value("ig_steps", d.ig_steps);
  c.ablation_proportions = j.value("ablation_proportions", d.ablation_proportions);
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"name", c.name},
                     {"dataset", c.dataset},
                     {"model", c.model},
                     {"train", c.train},
                     {"phases", {{"high", c.phases.high}, {"recovered", c.phases.recovered}}},
                     {"probe", c.probe},
                     {"recovery", c.recovery},
                     {"output_dir", c.output_dir.generic_string()},
                     {"checkpoint_every", c.checkpoint_every},
                     {"early_stop_patience", c.early_stop_patience}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  if (!j.is_object()) throw std::invalid_argument("run config: expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(kTopLevelKeys.begin(), kTopLevelKeys.end(), key) == kTopLevelKeys.end())
      throw std::invalid_argument("run config: unknown key '" + key + "'");
  }
  RunConfig d;
  c.name = j.value("name", d.name);
  c.dataset = j.value("dataset", d.dataset);
  c.model = j.value("model", d.model);
  c.train = j.value("train", d.train);
  c.phases = d.phases;
  if (j.contains("phases")) {
    c.phases.high = j["phases"].value("high", d.phases.high);
    c.phases.recovered = j["phases"].value("recovered", d.phases.recovered);
  }
  c.probe = j.value("probe", d.probe);
  c.recovery = j.value("recovery", d.recovery);
  c.output_dir = j.value("output_dir", d.output_dir.generic_string());
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.early_stop_patience = j.value("early_stop_patience", d.early_stop_patience);
}

RunConfig read_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open run config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("run config " + path.string() + ": " + e.what());
  }
  return j.get<RunConfig>();
}

void write_run_config(const std::filesystem::path& path, const RunConfig& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write run config " + path.string());
  out << nlohmann::json(c).dump(2) << '\n';
}

void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("override '" + assignment + "': expected key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  nlohmann::json j = c;
  nlohmann::json* node = &j;
  std::stringstream path(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(path, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i]))
      throw std::invalid_argument("override '" + assignment + "': unknown key '" + key + "'");
    node = &(*node)[parts[i]];
  }
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }
  if (node->is_string() && !value.is_string()) value = raw;
  *node = value;
  try {
    c = j.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("override '" + assignment + "': " + e.what());
  }
}

}  // namespace phantom::pipeline
