#include "phantom/circuits/circuit_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace phantom::circuits {

namespace {

constexpr const char* kFormat = "phantom-circuit";
constexpr int kVersion = 1;

std::string kind_name(model::NodeKind k) {
  switch (k) {
    case model::NodeKind::embed: return "embed";
    case model::NodeKind::head: return "head";
    case model::NodeKind::mlp: return "mlp";
    case model::NodeKind::logits: return "logits";
  }
  return "?";
}

}  // namespace

nlohmann::json to_json(const PromptPair& p) {
  return nlohmann::json{{"clean", p.clean}, {"corrupt", p.corrupt}, {"y_sub", p.y_sub}, {"y_dom", p.y_dom}};
}

PromptPair pair_from_json(const nlohmann::json& j) {
  PromptPair p;
  p.clean = j.at("clean").get<model::TokenSeq>();
  p.corrupt = j.at("corrupt").get<model::TokenSeq>();
  p.y_sub = j.at("y_sub").get<std::int32_t>();
  p.y_dom = j.at("y_dom").get<std::int32_t>();
  return p;
}

nlohmann::json to_json(const CircuitGraph& g) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : g.topology.nodes()) {
    nodes.push_back({{"id", n.order}, {"name", n.name()}, {"kind", kind_name(n.kind)}, {"layer", n.layer}, {"head", n.head}});
  }
  nlohmann::json edges = nlohmann::json::array();
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    const auto& ed = g.topology.edges()[e];
    edges.push_back({{"id", e},
                     {"parent", ed.parent},
                     {"child", ed.child},
                     {"slot", model::to_string(ed.slot)},
                     {"score", g.scores[e]},
                     {"active", static_cast<bool>(g.active[e])}});
  }
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : g.provenance.pairs) pairs.push_back(to_json(p));
  nlohmann::json prov{{"pairs", pairs},
                      {"ig_steps", g.provenance.ig_steps},
                      {"threshold", g.provenance.threshold ? nlohmann::json(*g.provenance.threshold) : nlohmann::json()},
                      {"top_n", g.provenance.top_n ? nlohmann::json(*g.provenance.top_n) : nlohmann::json()},
                      {"clamped", g.provenance.clamped},
                      {"active_edges", g.active_count()}};
  return nlohmann::json{{"format", kFormat}, {"version", kVersion}, {"config", g.config}, {"nodes", nodes},
                        {"edges", edges},    {"scored", g.scored},  {"provenance", prov}};
}

CircuitGraph graph_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != kFormat) throw std::runtime_error("circuit JSON: not a phantom-circuit document");
  if (j.value("version", 0) != kVersion) throw std::runtime_error("circuit JSON: unsupported version");
  auto g = build_graph(j.at("config").get<model::ModelConfig>());
  const auto& edges = j.at("edges");
  if (edges.size() != g.edge_count()) {
    throw std::runtime_error("circuit JSON: " + std::to_string(edges.size()) + " edges, config implies " +
                             std::to_string(g.edge_count()));
  }
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto& ej = edges[e];
    const auto& ed = g.topology.edges()[e];
    if (ej.at("parent").get<int>() != ed.parent || ej.at("child").get<int>() != ed.child ||
        model::slot_from_string(ej.at("slot").get<std::string>()) != ed.slot) {
      throw std::runtime_error("circuit JSON: edge " + std::to_string(e) + " does not match the model DAG");
    }
    g.scores[e] = ej.at("score").get<double>();
    g.active[e] = ej.at("active").get<bool>();
  }
  g.scored = j.at("scored").get<bool>();
  const auto& p = j.at("provenance");
  for (const auto& pj : p.at("pairs")) g.provenance.pairs.push_back(pair_from_json(pj));
  g.provenance.ig_steps = p.at("ig_steps").get<int>();
  if (!p.at("threshold").is_null()) g.provenance.threshold = p.at("threshold").get<double>();
  if (!p.at("top_n").is_null()) g.provenance.top_n = p.at("top_n").get<std::size_t>();
  g.provenance.clamped = p.at("clamped").get<bool>();
  return g;
}

void write_circuit_json(const std::filesystem::path& path, const CircuitGraph& graph) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write circuit " + path.string());
  os << to_json(graph).dump(1) << '\n';
}

CircuitGraph read_circuit_json(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read circuit " + path.string());
  return graph_from_json(nlohmann::json::parse(is));
}

std::string to_dot(const CircuitGraph& g) {
  const auto& topo = g.topology;
  double max_abs = 0;
  for (std::size_t e = 0; e < g.edge_count(); ++e)
    if (g.active[e]) max_abs = std::max(max_abs, std::abs(g.scores[e]));
  std::vector<bool> used(topo.node_count(), false);
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    if (!g.active[e]) continue;
    used[static_cast<std::size_t>(topo.edges()[e].parent)] = true;
    used[static_cast<std::size_t>(topo.edges()[e].child)] = true;
  }
  std::ostringstream os;
  os << "digraph circuit {\n  rankdir=BT;\n  node [shape=box, fontname=\"Helvetica\"];\n";
  for (const auto& n : topo.nodes()) {
    if (!used[static_cast<std::size_t>(n.order)]) continue;
    const char* shape = n.kind == model::NodeKind::mlp ? "box" : (n.kind == model::NodeKind::head ? "ellipse" : "doubleoctagon");
    os << "  n" << n.order << " [label=\"" << n.name() << "\", shape=" << shape << "];\n";
  }
  char buf[64];
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    if (!g.active[e]) continue;
    const auto& ed = topo.edges()[e];
    const double w = max_abs > 0 ? 0.5 + 4.5 * std::abs(g.scores[e]) / max_abs : 1.0;
    std::snprintf(buf, sizeof(buf), "%.3f", w);
    os << "  n" << ed.parent << " -> n" << ed.child << " [label=\"" << model::to_string(ed.slot) << "\", penwidth=" << buf
       << ", color=\"" << (g.scores[e] >= 0 ? "blue" : "red") << "\"];\n";
  }
  os << "}\n";
  return os.str();
}

}  // namespace phantom::circuits
