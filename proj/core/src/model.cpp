#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "phantom/nanoformer/model.hpp"

namespace phantom::model {

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("ModelConfig: " + what); };
  if (n_layers < 0) fail("n_layers must be >= 0");
  if (n_heads < 1) fail("n_heads must be >= 1");
  if (d_model < 1) fail("d_model must be >= 1");
  if (d_model % n_heads != 0) {
    fail("d_model " + std::to_string(d_model) + " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (d_mlp < 1) fail("d_mlp must be >= 1");
  if (vocab_size < 4) fail("vocab_size must be >= 4 (PAD and PLACEHOLDER are reserved)");
  if (max_seq_len < 1) fail("max_seq_len must be >= 1");
}

std::size_t ModelConfig::parameter_count() const {
  const std::size_t V = static_cast<std::size_t>(vocab_size), S = static_cast<std::size_t>(max_seq_len);
  const std::size_t d = static_cast<std::size_t>(d_model), dm = static_cast<std::size_t>(d_mlp);
  const std::size_t H = static_cast<std::size_t>(n_heads), dh = static_cast<std::size_t>(d_head());
  const std::size_t per_head = 3 * (d * dh + dh) + dh * d;
  const std::size_t per_layer = 2 * d + H * per_head + 2 * d + d * dm + dm + dm * d + d;
  return V * d + S * d + static_cast<std::size_t>(n_layers) * per_layer + 2 * d + d * V + V;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"n_layers", c.n_layers},   {"n_heads", c.n_heads},         {"d_model", c.d_model},
                     {"d_mlp", c.d_mlp},         {"vocab_size", c.vocab_size},   {"max_seq_len", c.max_seq_len},
                     {"seed", c.seed},           {"precision", nd::to_string(c.precision)},
                     {"qkv_slots", c.qkv_slots}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.n_layers = j.value("n_layers", d.n_layers);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.d_model = j.value("d_model", d.d_model);
  c.d_mlp = j.value("d_mlp", 4 * c.d_model);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.max_seq_len = j.value("max_seq_len", d.max_seq_len);
  c.seed = j.value("seed", d.seed);
  c.precision = nd::precision_from_string(j.value("precision", std::string("f32")));
  c.qkv_slots = j.value("qkv_slots", d.qkv_slots);
}

ModelConfig preset(const std::string& name, int vocab_size, std::uint64_t seed) {
  ModelConfig c;
  if (name == "S") {
    c.n_layers = 2, c.n_heads = 4, c.d_model = 64;
  } else if (name == "M") {
    c.n_layers = 4, c.n_heads = 4, c.d_model = 128;
  } else if (name == "L") {
    c.n_layers = 6, c.n_heads = 8, c.d_model = 256;
  } else {
    throw std::invalid_argument("unknown model preset '" + name + "' (expected S, M or L)");
  }
  c.d_mlp = 4 * c.d_model;
  c.vocab_size = vocab_size;
  c.seed = seed;
  return c;
}

// ---------------------------------------------------------------- topology

std::string to_string(Slot s) {
  switch (s) {
    case Slot::q: return "q";
    case Slot::k: return "k";
    case Slot::v: return "v";
    case Slot::in: return "in";
  }
  return "?";
}

Slot slot_from_string(const std::string& s) {
  if (s == "q") return Slot::q;
  if (s == "k") return Slot::k;
  if (s == "v") return Slot::v;
  if (s == "in") return Slot::in;
  throw std::invalid_argument("unknown slot '" + s + "'");
}

std::string NodeInfo::name() const {
  switch (kind) {
    case NodeKind::embed: return "embed";
    case NodeKind::head: return "a" + std::to_string(layer) + ".h" + std::to_string(head);
    case NodeKind::mlp: return "m" + std::to_string(layer);
    case NodeKind::logits: return "logits";
  }
  return "?";
}

namespace {
constexpr Slot kQkv[] = {Slot::q, Slot::k, Slot::v};
constexpr Slot kIn[] = {Slot::in};
}  // namespace

Topology::Topology(const ModelConfig& config)
    : n_layers_(config.n_layers), n_heads_(config.n_heads), qkv_(config.qkv_slots) {
  nodes_.push_back({NodeKind::embed, -1, -1, 0});
  for (int l = 0; l < n_layers_; ++l) {
    for (int h = 0; h < n_heads_; ++h) nodes_.push_back({NodeKind::head, l, h, static_cast<int>(nodes_.size())});
    nodes_.push_back({NodeKind::mlp, l, -1, static_cast<int>(nodes_.size())});
  }
  nodes_.push_back({NodeKind::logits, n_layers_, -1, static_cast<int>(nodes_.size())});

  // A node at layer l writes before a child reads iff it is the embedding,
  // belongs to an earlier layer, or is a same-layer head feeding the MLP.
  auto writes_before = [](const NodeInfo& p, const NodeInfo& c) {
    if (p.kind == NodeKind::embed) return true;
    if (p.kind == NodeKind::logits) return false;
    if (c.kind == NodeKind::logits) return true;
    if (p.layer < c.layer) return true;
    return p.layer == c.layer && p.kind == NodeKind::head && c.kind == NodeKind::mlp;
  };

  first_slot_.assign(nodes_.size(), 0);
  for (const auto& c : nodes_) {
    first_slot_[static_cast<std::size_t>(c.order)] = slot_keys_.size();
    for (Slot s : slots(c.order)) {
      slot_keys_.emplace_back(c.order, s);
      incoming_.emplace_back();
      for (const auto& p : nodes_) {
        if (p.order >= c.order || !writes_before(p, c)) continue;
        incoming_.back().push_back(edges_.size());
        edges_.push_back({p.order, c.order, s});
      }
    }
  }
}

int Topology::head_node(int layer, int head) const {
  if (layer < 0 || layer >= n_layers_ || head < 0 || head >= n_heads_) {
    throw std::out_of_range("head_node: no head a" + std::to_string(layer) + ".h" + std::to_string(head));
  }
  return 1 + layer * (n_heads_ + 1) + head;
}

int Topology::mlp_node(int layer) const {
  if (layer < 0 || layer >= n_layers_) throw std::out_of_range("mlp_node: no MLP m" + std::to_string(layer));
  return 1 + layer * (n_heads_ + 1) + n_heads_;
}

std::span<const Slot> Topology::slots(int node) const {
  switch (nodes_.at(static_cast<std::size_t>(node)).kind) {
    case NodeKind::embed: return {};
    case NodeKind::head: return qkv_ ? std::span<const Slot>(kQkv) : std::span<const Slot>(kIn);
    default: return std::span<const Slot>(kIn);
  }
}

std::size_t Topology::slot_index(int child, Slot slot) const {
  const auto sl = slots(child);
  for (std::size_t i = 0; i < sl.size(); ++i)
    if (sl[i] == slot) return first_slot_[static_cast<std::size_t>(child)] + i;
  throw std::invalid_argument("node " + nodes_[static_cast<std::size_t>(child)].name() + " has no slot " +
                              to_string(slot));
}

const std::vector<std::size_t>& Topology::incoming(int child, Slot slot) const {
  return incoming_[slot_index(child, slot)];
}

std::optional<std::size_t> Topology::find_edge(int parent, int child, Slot slot) const {
  if (child <= 0 || child >= static_cast<int>(nodes_.size())) return std::nullopt;
  const auto sl = slots(child);
  if (std::find(sl.begin(), sl.end(), slot) == sl.end()) return std::nullopt;
  for (auto e : incoming(child, slot))
    if (edges_[e].parent == parent) return e;
  return std::nullopt;
}

std::optional<int> Topology::find_node(const std::string& name) const {
  for (const auto& n : nodes_)
    if (n.name() == name) return n.order;
  return std::nullopt;
}

int Topology::head_index(int node) const {
  const auto& n = nodes_.at(static_cast<std::size_t>(node));
  if (n.kind != NodeKind::head) throw std::invalid_argument("head_index: " + n.name() + " is not a head");
  return n.layer * n_heads_ + n.head;
}

std::size_t PatchPlan::corrupt_count() const {
  return static_cast<std::size_t>(std::count(sources.begin(), sources.end(), EdgeSource::corrupt));
}

// ------------------------------------------------------------------- model

template <typename T>
std::size_t Model<T>::add(std::string name, nd::Shape shape) {
  params_.emplace_back(std::move(shape));
  names_.push_back(std::move(name));
  return params_.size() - 1;
}

template <typename T>
Model<T>::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  topology_ = Topology(config_);
  const std::size_t V = static_cast<std::size_t>(config_.vocab_size);
  const std::size_t d = static_cast<std::size_t>(config_.d_model);
  const std::size_t dh = static_cast<std::size_t>(config_.d_head());
  const std::size_t dm = static_cast<std::size_t>(config_.d_mlp);

  std::mt19937_64 rng(config_.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double std_base = 0.02;
  const double std_resid = 0.02 / std::sqrt(2.0 * std::max(1, config_.n_layers));
  auto randn = [&](std::size_t idx, double sd) {
    for (auto& x : params_[idx].data()) x = static_cast<T>(sd * normal(rng));
  };
  auto ones = [&](std::size_t idx) { params_[idx].fill(T{1}); };

  layout_.tok_emb = add("tok_emb", {V, d});
  randn(layout_.tok_emb, std_base);
  layout_.pos_emb = add("pos_emb", {static_cast<std::size_t>(config_.max_seq_len), d});
  randn(layout_.pos_emb, std_base);
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    LayerParams lp;
    lp.ln1_g = add(p + "ln1.g", {d});
    ones(lp.ln1_g);
    lp.ln1_b = add(p + "ln1.b", {d});
    for (int h = 0; h < config_.n_heads; ++h) {
      const std::string hp = p + "h" + std::to_string(h) + ".";
      HeadParams hpi;
      hpi.wq = add(hp + "wq", {d, dh});
      randn(hpi.wq, std_base);
      hpi.bq = add(hp + "bq", {dh});
      hpi.wk = add(hp + "wk", {d, dh});
      randn(hpi.wk, std_base);
      hpi.bk = add(hp + "bk", {dh});
      hpi.wv = add(hp + "wv", {d, dh});
      randn(hpi.wv, std_base);
      hpi.bv = add(hp + "bv", {dh});
      hpi.wo = add(hp + "wo", {dh, d});
      randn(hpi.wo, std_resid);
      lp.heads.push_back(hpi);
    }
    lp.ln2_g = add(p + "ln2.g", {d});
    ones(lp.ln2_g);
    lp.ln2_b = add(p + "ln2.b", {d});
    lp.w1 = add(p + "mlp.w1", {d, dm});
    randn(lp.w1, std_base);
    lp.b1 = add(p + "mlp.b1", {dm});
    lp.w2 = add(p + "mlp.w2", {dm, d});
    randn(lp.w2, std_resid);
    lp.b2 = add(p + "mlp.b2", {d});
    layout_.layers.push_back(std::move(lp));
  }
  layout_.lnf_g = add("lnf.g", {d});
  ones(layout_.lnf_g);
  layout_.lnf_b = add("lnf.b", {d});
  layout_.w_u = add("unembed.w", {d, V});
  randn(layout_.w_u, std_base);
  layout_.b_u = add("unembed.b", {V});
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

template <typename T>
void Model<T>::zero_unembedding() {
  params_[layout_.w_u].fill(T{0});
  params_[layout_.b_u].fill(T{0});
}

template class Model<float>;
template class Model<double>;

}  // namespace phantom::model
