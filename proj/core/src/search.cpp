#include "phantom/recovery/search.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "phantom/dynamics/metrics.hpp"

namespace phantom::recovery {

SearchResult golden_section(const Evaluator& f, std::size_t a, std::size_t b, std::size_t tolerance, Memo* memo) {
  if (a >= b) throw std::invalid_argument("golden_section: bracket needs a < b");
  if (tolerance < 1) throw std::invalid_argument("golden_section: tolerance must be >= 1");
  Memo local;
  Memo& m = memo ? *memo : local;
  SearchResult r;
  auto eval = [&](std::size_t n) {
    if (auto it = m.find(n); it != m.end()) return it->second;
    ++r.evaluations;
    return m.emplace(n, f(n)).first->second;
  };
  constexpr double kInvPhi = 0.6180339887498949;
  std::size_t lo = a, hi = b;
  while (hi - lo > tolerance) {
    const double w = static_cast<double>(hi - lo);
    std::size_t c = lo + static_cast<std::size_t>(std::llround(w * (1.0 - kInvPhi)));
    std::size_t d = lo + static_cast<std::size_t>(std::llround(w * kInvPhi));
    if (c >= d) d = c + 1;
    const double fc = eval(c), fd = eval(d);
    if (fc > fd)
      hi = d - 1;
    else if (fc < fd)
      lo = c + 1;
    else
      hi = d;
  }
  for (std::size_t n = lo; n <= hi; ++n) eval(n);
  bool found = false;
  for (auto it = m.lower_bound(a); it != m.end() && it->first <= b; ++it) {
    if (!found || it->second > r.value) {
      r.n_opt = it->first;
      r.value = it->second;
      found = true;
    }
  }
  return r;
}

template <typename T>
Evaluator circuit_evaluator(const model::Model<T>& model, const circuits::CircuitGraph& graph,
                            const std::vector<circuits::PreparedPair<T>>& pairs) {
  return [&model, &graph, &pairs](std::size_t n) {
    return circuits::mean_circuit_metric(model, circuits::prune_top_n(graph, n), pairs);
  };
}

template <typename T>
SearchResult golden_section(const model::Model<T>& model, const circuits::CircuitGraph& graph,
                            const std::vector<circuits::PreparedPair<T>>& pairs, std::size_t a, std::size_t b,
                            std::size_t tolerance, Memo* memo) {
  if (b > graph.edge_count()) throw std::invalid_argument("golden_section: bracket exceeds the edge count");
  return golden_section(circuit_evaluator(model, graph, pairs), a, b, tolerance, memo);
}

std::size_t EdgeCurve::argmax() const {
  if (n.empty()) throw std::logic_error("edge curve is empty");
  std::size_t best = 0;
  for (std::size_t i = 1; i < metric.size(); ++i)
    if (metric[i] > metric[best]) best = i;
  return best;
}

std::vector<std::size_t> uniform_grid(std::size_t total, std::size_t points, double lo_fraction) {
  if (points < 1) throw std::invalid_argument("uniform_grid: needs at least one point");
  if (!(lo_fraction >= 0 && lo_fraction <= 1)) throw std::invalid_argument("uniform_grid: fraction outside [0, 1]");
  std::vector<std::size_t> g;
  for (std::size_t i = 0; i < points; ++i) {
    const double frac = points == 1 ? 1.0 : lo_fraction + (1.0 - lo_fraction) * static_cast<double>(i) / (points - 1);
    const auto n = static_cast<std::size_t>(std::llround(frac * static_cast<double>(total)));
    if (g.empty() || n > g.back()) g.push_back(n);
  }
  return g;
}

EdgeCurve scan_edges(const Evaluator& f, const std::vector<std::size_t>& grid, std::size_t total, Memo* memo) {
  if (grid.empty()) throw std::invalid_argument("scan_edges: empty grid");
  EdgeCurve c;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] > total)
      throw std::invalid_argument("scan_edges: edge count " + std::to_string(grid[i]) + " exceeds " +
                                  std::to_string(total));
    if (i > 0 && grid[i] <= grid[i - 1]) throw std::invalid_argument("scan_edges: grid must be strictly increasing");
    double v;
    if (memo && memo->count(grid[i])) {
      v = memo->at(grid[i]);
    } else {
      v = f(grid[i]);
      if (memo) memo->emplace(grid[i], v);
    }
    c.n.push_back(grid[i]);
    c.metric.push_back(v);
  }
  return c;
}

template <typename T>
EdgeCurve scan_edges(const model::Model<T>& model, const circuits::CircuitGraph& graph,
                     const std::vector<circuits::PreparedPair<T>>& pairs, const std::vector<std::size_t>& grid,
                     Memo* memo) {
  return scan_edges(circuit_evaluator(model, graph, pairs), grid, graph.edge_count(), memo);
}

void write_edge_curve_csv(std::ostream& os, const EdgeCurve& curve) {
  os << kEdgeCurveCsvHeader << '\n';
  for (std::size_t i = 0; i < curve.n.size(); ++i) os << curve.n[i] << ',' << dynamics::format_number(curve.metric[i]) << '\n';
}

#define PHANTOM_INSTANTIATE_SEARCH(T)                                                                          \
  template Evaluator circuit_evaluator(const model::Model<T>&, const circuits::CircuitGraph&,               \
                                       const std::vector<circuits::PreparedPair<T>>&);                      \
  template SearchResult golden_section(const model::Model<T>&, const circuits::CircuitGraph&,               \
                                       const std::vector<circuits::PreparedPair<T>>&, std::size_t,          \
                                       std::size_t, std::size_t, Memo*);                                    \
  template EdgeCurve scan_edges(const model::Model<T>&, const circuits::CircuitGraph&,                      \
                                const std::vector<circuits::PreparedPair<T>>&, const std::vector<std::size_t>&, \
                                Memo*);

PHANTOM_INSTANTIATE_SEARCH(float)
PHANTOM_INSTANTIATE_SEARCH(double)

#undef PHANTOM_INSTANTIATE_SEARCH

}  // namespace phantom::recovery
