#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "phantom/circuits/circuit.hpp"

namespace phantom::circuits {

/// {format, version, config, nodes, edges: [{id, parent, child, slot, score,
/// active}], scored, provenance}. Scores round-trip exactly.
nlohmann::json to_json(const CircuitGraph& graph);
CircuitGraph graph_from_json(const nlohmann::json& j);

void write_circuit_json(const std::filesystem::path& path, const CircuitGraph& graph);
CircuitGraph read_circuit_json(const std::filesystem::path& path);

/// Graphviz digraph of the active subgraph; pen width grows with |S|,
/// positive scores drawn blue and negative red.
std::string to_dot(const CircuitGraph& graph);

nlohmann::json to_json(const PromptPair& p);
PromptPair pair_from_json(const nlohmann::json& j);

}  // namespace phantom::circuits
