#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <vector>

#include "phantom/circuits/circuit.hpp"

namespace phantom::recovery {

using Evaluator = std::function<double(std::size_t)>;
/// Evaluations by edge count, shared across search stages.
using Memo = std::map<std::size_t, double>;

struct SearchResult {
  std::size_t n_opt = 0;
  double value = 0;
  /// Distinct evaluator calls made by this search.
  std::size_t evaluations = 0;
};

/// Integer golden-section maximization over [a, b]. Probes are rounded to
/// integers and memoized; once the bracket is at most `tolerance` wide the
/// remaining integers are evaluated exhaustively. Returns the best memoized
/// point inside [a, b], ties to the smaller n. Throws std::invalid_argument
/// when a >= b or tolerance < 1.
SearchResult golden_section(const Evaluator& f, std::size_t a, std::size_t b, std::size_t tolerance = 3,
                            Memo* memo = nullptr);

/// Mean M over the prepared pairs of the top-n circuit of `graph`.
template <typename T>
Evaluator circuit_evaluator(const model::Model<T>& model, const circuits::CircuitGraph& graph,
                            const std::vector<circuits::PreparedPair<T>>& pairs);

template <typename T>
SearchResult golden_section(const model::Model<T>& model, const circuits::CircuitGraph& graph,
                            const std::vector<circuits::PreparedPair<T>>& pairs, std::size_t a, std::size_t b,
                            std::size_t tolerance = 3, Memo* memo = nullptr);

struct EdgeCurve {
  std::vector<std::size_t> n;
  std::vector<double> metric;

  std::size_t argmax() const;
};

/// `points` evenly spaced edge counts from `lo_fraction` to 100% of
/// `total`, rounded, deduplicated, strictly increasing.
std::vector<std::size_t> uniform_grid(std::size_t total, std::size_t points = 20, double lo_fraction = 0.05);

/// Mean circuit M at every grid point. Throws std::invalid_argument for an
/// empty grid or a count above the edge total.
EdgeCurve scan_edges(const Evaluator& f, const std::vector<std::size_t>& grid, std::size_t total, Memo* memo = nullptr);

template <typename T>
EdgeCurve scan_edges(const model::Model<T>& model, const circuits::CircuitGraph& graph,
                     const std::vector<circuits::PreparedPair<T>>& pairs, const std::vector<std::size_t>& grid,
                     Memo* memo = nullptr);

inline constexpr const char* kEdgeCurveCsvHeader = "n,M";
void write_edge_curve_csv(std::ostream& os, const EdgeCurve& curve);

}  // namespace phantom::recovery
