#include "phantom/probes/probes.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "phantom/dynamics/metrics.hpp"

namespace phantom::probes {

using circuits::CircuitGraph;
using circuits::PreparedPair;

double AttentionReport::score(HeadId h) const {
  for (std::size_t i = 0; i < heads.size(); ++i)
    if (heads[i] == h) return scores[i];
  throw std::out_of_range("attention report: no head l" + std::to_string(h.layer) + ".h" + std::to_string(h.head));
}

namespace {

std::vector<HeadId> all_heads(const model::Topology& topo) {
  std::vector<HeadId> out;
  for (int l = 0; l < topo.n_layers(); ++l)
    for (int h = 0; h < topo.n_heads(); ++h) out.push_back({l, h});
  return out;
}

template <typename T>
double span_mass(const nd::Tensor<T>& attn, const std::vector<std::size_t>& span) {
  const std::size_t n = attn.dim(0);
  const auto d = attn.data();
  double s = 0;
  for (auto p : span) s += static_cast<double>(d[(n - 1) * n + p]);
  return s;
}

void check_span(const std::vector<std::size_t>& span, std::size_t len) {
  for (auto p : span)
    if (p >= len)
      throw std::out_of_range("attention span position " + std::to_string(p) + " outside prompt of length " +
                              std::to_string(len));
}

}  // namespace

template <typename T>
AttentionReport attention_on_span(const model::Topology& topo, const std::vector<model::ActivationTrace<T>>& traces,
                                  const std::vector<std::size_t>& span) {
  if (traces.empty()) throw std::invalid_argument("attention_on_span: no prompts");
  AttentionReport r;
  r.heads = all_heads(topo);
  r.scores.assign(r.heads.size(), 0.0);
  r.span = span;
  r.prompts = traces.size();
  for (const auto& tr : traces) {
    check_span(span, tr.seq_len());
    for (std::size_t i = 0; i < r.heads.size(); ++i) r.scores[i] += span_mass(tr.attention[i], span);
  }
  for (auto& s : r.scores) s /= static_cast<double>(traces.size());
  return r;
}

template <typename T>
AttentionReport attention_on_span(const model::Model<T>& model, const std::vector<model::TokenSeq>& prompts,
                                  const std::vector<std::size_t>& span) {
  if (prompts.empty()) throw std::invalid_argument("attention_on_span: no prompts");
  for (const auto& p : prompts) check_span(span, p.size());
  std::vector<model::ActivationTrace<T>> traces;
  traces.reserve(prompts.size());
  for (const auto& p : prompts) traces.push_back(model::forward(model, p));
  return attention_on_span(model.topology(), traces, span);
}

HighAttentionSet high_attention_heads(const AttentionReport& report, double threshold, std::optional<int> epoch) {
  HighAttentionSet s;
  s.threshold = threshold;
  s.epoch = epoch;
  for (std::size_t i = 0; i < report.heads.size(); ++i)
    if (report.scores[i] >= threshold) s.heads.push_back(report.heads[i]);
  std::sort(s.heads.begin(), s.heads.end());
  return s;
}

template <typename T>
LogitLensReport logit_lens(const model::Model<T>& model, const model::TokenSeq& prompt, std::int32_t y_sub,
                           std::int32_t y_dom) {
  const auto vocab = model.config().vocab_size;
  for (auto y : {y_sub, y_dom})
    if (y < 0 || y >= vocab) throw std::out_of_range("logit_lens: target " + std::to_string(y) + " outside vocab");
  const auto tr = model::forward(model, prompt);
  const std::size_t n = tr.seq_len();
  const std::size_t d = static_cast<std::size_t>(model.config().d_model);
  LogitLensReport r;
  for (std::size_t l = 0; l < tr.residual.size(); ++l) {
    nd::Tensor<T> row({1, d});
    const auto src = tr.residual[l].data();
    std::copy(src.begin() + static_cast<std::ptrdiff_t>((n - 1) * d), src.begin() + static_cast<std::ptrdiff_t>(n * d),
              row.data().begin());
    const auto logits = model::project_residual(model, row);
    const auto v = logits.data();
    LensEntry e;
    e.layer = static_cast<int>(l);
    e.logit_sub = static_cast<double>(v[static_cast<std::size_t>(y_sub)]);
    e.logit_dom = static_cast<double>(v[static_cast<std::size_t>(y_dom)]);
    e.rank_sub = model::rank_of<T>(v, y_sub);
    e.rank_dom = model::rank_of<T>(v, y_dom);
    if (!r.juncture && e.rank_sub < e.rank_dom) r.juncture = e.layer;
    r.entries.push_back(e);
    if (l + 1 == tr.residual.size()) r.final_logits.assign(v.begin(), v.end());
  }
  r.crossing = r.juncture && *r.juncture > 0;
  return r;
}

Structure trace_structure(const CircuitGraph& graph, int node) {
  const auto& topo = graph.topology;
  if (node < 0 || node >= static_cast<int>(topo.node_count()))
    throw std::out_of_range("trace_structure: unknown node " + std::to_string(node));
  Structure s;
  for (std::size_t e = 0; e < topo.edge_count(); ++e) {
    if (!graph.active[e]) continue;
    const auto& edge = topo.edges()[e];
    if (edge.child == node) s.parents.push_back({edge.parent, edge.slot, graph.scores[e], e});
    if (edge.parent == node) s.children.push_back({edge.child, edge.slot, graph.scores[e], e});
  }
  auto by_score = [](const Neighbor& a, const Neighbor& b) {
    const double x = std::abs(a.score), y = std::abs(b.score);
    return x != y ? x > y : a.edge < b.edge;
  };
  std::sort(s.parents.begin(), s.parents.end(), by_score);
  std::sort(s.children.begin(), s.children.end(), by_score);
  return s;
}

namespace {

std::optional<HeadId> head_of(const model::Topology& topo, int node) {
  const auto& info = topo.nodes()[static_cast<std::size_t>(node)];
  if (info.kind != model::NodeKind::head) return std::nullopt;
  return HeadId{info.layer, info.head};
}

}  // namespace

std::vector<HeadId> circuit_heads(const CircuitGraph& graph) {
  const auto& topo = graph.topology;
  std::set<HeadId> heads;
  for (std::size_t e = 0; e < topo.edge_count(); ++e) {
    if (!graph.active[e]) continue;
    const auto& edge = topo.edges()[e];
    for (int n : {edge.parent, edge.child})
      if (auto h = head_of(topo, n)) heads.insert(*h);
  }
  return {heads.begin(), heads.end()};
}

CircuitGraph ablate_mask(const CircuitGraph& graph, const std::vector<HeadId>& heads) {
  CircuitGraph out = graph;
  const auto& topo = graph.topology;
  const std::set<HeadId> set(heads.begin(), heads.end());
  for (std::size_t e = 0; e < topo.edge_count(); ++e) {
    const auto& edge = topo.edges()[e];
    for (int n : {edge.parent, edge.child}) {
      const auto h = head_of(topo, n);
      if (h && set.count(*h)) out.active[e] = false;
    }
  }
  return out;
}

template <typename T>
double circuit_attention(const model::Model<T>& model, const CircuitGraph& graph,
                         const std::vector<PreparedPair<T>>& pairs, const std::vector<HeadId>& heads,
                         const std::vector<std::size_t>& span) {
  if (pairs.empty()) throw std::invalid_argument("circuit_attention: no pairs");
  if (heads.empty()) return 0.0;
  const int H = model.config().n_heads;
  const auto plan = graph.plan();
  double total = 0;
  for (const auto& p : pairs) {
    check_span(span, p.clean.seq_len());
    const auto tr = model::forward_patched(model, p.clean, p.corrupt, plan);
    for (const auto& h : heads)
      total += span_mass(tr.attention[static_cast<std::size_t>(h.layer * H + h.head)], span);
  }
  return total / static_cast<double>(pairs.size() * heads.size());
}

template <typename T>
AblationResult ablate_heads(const model::Model<T>& model, const CircuitGraph& graph,
                            const std::vector<PreparedPair<T>>& pairs, const AttentionReport& ranking,
                            double proportion, const std::vector<std::size_t>& span) {
  if (!(proportion > 0.0 && proportion <= 1.0))
    throw std::invalid_argument("ablate_heads: proportion must lie in (0, 1]");
  auto heads = circuit_heads(graph);
  if (heads.empty()) throw std::invalid_argument("ablate_heads: circuit has no heads");
  std::stable_sort(heads.begin(), heads.end(),
                   [&](HeadId a, HeadId b) { return ranking.score(a) > ranking.score(b); });
  const auto k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(proportion * static_cast<double>(heads.size()) - 1e-9)));
  AblationResult r;
  r.proportion = proportion;
  r.ablated.assign(heads.begin(), heads.begin() + static_cast<std::ptrdiff_t>(std::min(k, heads.size())));
  const auto ablated = ablate_mask(graph, r.ablated);
  r.metric_before = circuits::mean_circuit_metric(model, graph, pairs);
  r.metric_after = circuits::mean_circuit_metric(model, ablated, pairs);
  r.attention_before = circuit_attention(model, graph, pairs, heads, span);
  r.attention_after = circuit_attention(model, ablated, pairs, heads, span);
  r.delta_metric = r.metric_before - r.metric_after;
  r.delta_attention = r.attention_before - r.attention_after;
  std::sort(r.ablated.begin(), r.ablated.end());
  return r;
}

namespace {

nlohmann::json heads_json(const std::vector<HeadId>& heads) {
  auto a = nlohmann::json::array();
  for (const auto& h : heads) a.push_back({{"layer", h.layer}, {"head", h.head}});
  return a;
}

}  // namespace

nlohmann::json to_json(const AttentionReport& r) {
  auto heads = nlohmann::json::array();
  for (std::size_t i = 0; i < r.heads.size(); ++i)
    heads.push_back({{"layer", r.heads[i].layer}, {"head", r.heads[i].head}, {"score", r.scores[i]}});
  return {{"span", r.span}, {"prompts", r.prompts}, {"heads", heads}};
}

nlohmann::json to_json(const HighAttentionSet& s) {
  return {{"threshold", s.threshold},
          {"epoch", s.epoch ? nlohmann::json(*s.epoch) : nlohmann::json(nullptr)},
          {"heads", heads_json(s.heads)}};
}

nlohmann::json to_json(const LogitLensReport& r) {
  auto entries = nlohmann::json::array();
  for (const auto& e : r.entries)
    entries.push_back({{"layer", e.layer},
                       {"logit_sub", e.logit_sub},
                       {"logit_dom", e.logit_dom},
                       {"rank_sub", e.rank_sub},
                       {"rank_dom", e.rank_dom}});
  return {{"entries", entries},
          {"juncture", r.juncture ? nlohmann::json(*r.juncture) : nlohmann::json(nullptr)},
          {"crossing", r.crossing}};
}

nlohmann::json to_json(const Structure& s, const model::Topology& topo) {
  auto list = [&](const std::vector<Neighbor>& v) {
    auto a = nlohmann::json::array();
    for (const auto& n : v)
      a.push_back({{"node", topo.nodes()[static_cast<std::size_t>(n.node)].name()},
                   {"slot", model::to_string(n.slot)},
                   {"score", n.score},
                   {"edge", n.edge}});
    return a;
  };
  return {{"parents", list(s.parents)}, {"children", list(s.children)}};
}

nlohmann::json to_json(const AblationResult& r) {
  return {{"proportion", r.proportion},           {"ablated", heads_json(r.ablated)},
          {"metric_before", r.metric_before},     {"metric_after", r.metric_after},
          {"attention_before", r.attention_before}, {"attention_after", r.attention_after},
          {"delta_metric", r.delta_metric},       {"delta_attention", r.delta_attention}};
}

void write_attention_rows(std::ostream& os, int epoch, const AttentionReport& on_sub, const AttentionReport& on_dom) {
  if (on_sub.heads != on_dom.heads) throw std::invalid_argument("attention rows: head lists differ");
  for (std::size_t i = 0; i < on_sub.heads.size(); ++i)
    os << epoch << ',' << on_sub.heads[i].layer << ',' << on_sub.heads[i].head << ','
       << dynamics::format_number(on_sub.scores[i]) << ',' << dynamics::format_number(on_dom.scores[i]) << '\n';
}

#define PHANTOM_INSTANTIATE_PROBES(T)                                                                             \
  template AttentionReport attention_on_span(const model::Model<T>&, const std::vector<model::TokenSeq>&,       \
                                             const std::vector<std::size_t>&);                                  \
  template AttentionReport attention_on_span(const model::Topology&,                                            \
                                             const std::vector<model::ActivationTrace<T>>&,                     \
                                             const std::vector<std::size_t>&);                                  \
  template LogitLensReport logit_lens(const model::Model<T>&, const model::TokenSeq&, std::int32_t,             \
                                      std::int32_t);                                                            \
  template double circuit_attention(const model::Model<T>&, const CircuitGraph&,                                \
                                    const std::vector<PreparedPair<T>>&, const std::vector<HeadId>&,            \
                                    const std::vector<std::size_t>&);                                           \
  template AblationResult ablate_heads(const model::Model<T>&, const CircuitGraph&,                             \
                                       const std::vector<PreparedPair<T>>&, const AttentionReport&, double,     \
                                       const std::vector<std::size_t>&);

PHANTOM_INSTANTIATE_PROBES(float)
PHANTOM_INSTANTIATE_PROBES(double)

#undef PHANTOM_INSTANTIATE_PROBES

}  // namespace phantom::probes
