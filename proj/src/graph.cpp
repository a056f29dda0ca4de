#include "tikhonov/graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <stdexcept>
#include <string>

namespace tikhonov {

Graph Graph::from_edges(int n, std::span<const Edge> edges) {
  if (n < 1) throw std::invalid_argument("graph needs at least one node");
  std::map<std::pair<int, int>, double> merged;
  for (const Edge& e : edges) {
    if (e.u < 0 || e.u >= n || e.v < 0 || e.v >= n) {
      throw std::invalid_argument("edge (" + std::to_string(e.u) + "," +
                                  std::to_string(e.v) + ") out of range for n=" +
                                  std::to_string(n));
    }
    if (!(e.w >= 0.0) || !std::isfinite(e.w)) {
      throw std::invalid_argument("edge weight must be finite and nonnegative");
    }
    if (e.u == e.v) continue;
    merged[{std::min(e.u, e.v), std::max(e.u, e.v)}] += e.w;
  }

  Graph g;
  g.n_ = n;
  std::vector<std::vector<std::pair<int, double>>> adj(n);
  for (const auto& [key, w] : merged) {
    if (w == 0.0) continue;
    adj[key.first].emplace_back(key.second, w);
    adj[key.second].emplace_back(key.first, w);
  }
  g.row_ptr_.assign(n + 1, 0);
  g.degrees_ = Vector::Zero(n);
  for (int i = 0; i < n; ++i) {
    std::sort(adj[i].begin(), adj[i].end());
    g.row_ptr_[i + 1] = g.row_ptr_[i] + static_cast<int>(adj[i].size());
    for (const auto& [j, w] : adj[i]) {
      g.col_.push_back(j);
      g.w_.push_back(w);
      g.degrees_[i] += w;
    }
  }

  g.component_.assign(n, -1);
  int c = 0;
  std::vector<int> stack;
  for (int s = 0; s < n; ++s) {
    if (g.component_[s] >= 0) continue;
    g.component_[s] = c;
    stack.push_back(s);
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      for (int j : g.neighbors(i)) {
        if (g.component_[j] < 0) {
          g.component_[j] = c;
          stack.push_back(j);
        }
      }
    }
    ++c;
  }
  g.num_components_ = c;
  return g;
}

bool Graph::has_edge(int i, int j) const {
  const auto nb = neighbors(i);
  return std::binary_search(nb.begin(), nb.end(), j);
}

double Graph::weight(int i, int j) const {
  const auto nb = neighbors(i);
  const auto it = std::lower_bound(nb.begin(), nb.end(), j);
  if (it == nb.end() || *it != j) return 0.0;
  return weights(i)[it - nb.begin()];
}

std::vector<Edge> Graph::edge_list() const {
  std::vector<Edge> out;
  out.reserve(num_edges());
  for (int i = 0; i < n_; ++i) {
    const auto nb = neighbors(i);
    const auto ws = weights(i);
    for (std::size_t k = 0; k < nb.size(); ++k) {
      if (nb[k] > i) out.push_back({i, nb[k], ws[k]});
    }
  }
  return out;
}

bool Graph::is_unweighted() const {
  return std::all_of(w_.begin(), w_.end(), [](double w) { return w == 1.0; });
}

SparseMatrix normalized_laplacian(const Graph& g) {
  const int n = g.num_nodes();
  const Vector& d = g.degrees();
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(g.col_idx().size() + n);
  for (int i = 0; i < n; ++i) {
    if (d[i] <= 0.0) continue;
    trips.emplace_back(i, i, 1.0);
    const auto nb = g.neighbors(i);
    const auto ws = g.weights(i);
    for (std::size_t k = 0; k < nb.size(); ++k) {
      const int j = nb[k];
      trips.emplace_back(i, j, -ws[k] / std::sqrt(d[i] * d[j]));
    }
  }
  SparseMatrix L(n, n);
  L.setFromTriplets(trips.begin(), trips.end());
  L.makeCompressed();
  return L;
}

std::vector<int> bfs_distances(const Graph& g, int source) {
  const int n = g.num_nodes();
  if (source < 0 || source >= n) throw std::invalid_argument("node out of range");
  std::vector<int> dist(n, -1);
  std::deque<int> queue{source};
  dist[source] = 0;
  while (!queue.empty()) {
    const int i = queue.front();
    queue.pop_front();
    for (int j : g.neighbors(i)) {
      if (dist[j] < 0) {
        dist[j] = dist[i] + 1;
        queue.push_back(j);
      }
    }
  }
  return dist;
}

std::optional<int> hop_distance(const Graph& g, int i, int j) {
  if (j < 0 || j >= g.num_nodes()) throw std::invalid_argument("node out of range");
  const int d = bfs_distances(g, i)[j];
  if (d < 0) return std::nullopt;
  return d;
}

Eigen::MatrixXi all_pairs_hops(const Graph& g) {
  const int n = g.num_nodes();
  Eigen::MatrixXi out(n, n);
  for (int s = 0; s < n; ++s) {
    const auto d = bfs_distances(g, s);
    for (int t = 0; t < n; ++t) out(s, t) = d[t];
  }
  return out;
}

int diameter(const Graph& g) {
  if (!g.is_connected()) throw std::invalid_argument("diameter of a disconnected graph");
  int best = 0;
  for (int s = 0; s < g.num_nodes(); ++s) {
    const auto d = bfs_distances(g, s);
    best = std::max(best, *std::max_element(d.begin(), d.end()));
  }
  return best;
}

GraphBatch batch_graphs(std::span<const GraphWithFeatures> items) {
  if (items.empty()) throw std::invalid_argument("cannot batch an empty list");
  const auto width = items.front().features->cols();
  int total = 0;
  for (const auto& it : items) {
    if (it.features->cols() != width) throw std::invalid_argument("feature width mismatch");
    if (it.features->rows() != it.graph->num_nodes()) {
      throw std::invalid_argument("feature rows must equal node count");
    }
    total += it.graph->num_nodes();
  }

  GraphBatch batch;
  batch.features.resize(total, width);
  batch.graph_of.reserve(total);
  std::vector<Edge> edges;
  int offset = 0;
  for (std::size_t gi = 0; gi < items.size(); ++gi) {
    const Graph& g = *items[gi].graph;
    batch.offsets.push_back(offset);
    for (const Edge& e : g.edge_list()) edges.push_back({e.u + offset, e.v + offset, e.w});
    batch.features.middleRows(offset, g.num_nodes()) = *items[gi].features;
    batch.graph_of.insert(batch.graph_of.end(), g.num_nodes(), static_cast<int>(gi));
    offset += g.num_nodes();
  }
  batch.offsets.push_back(offset);
  batch.graph = Graph::from_edges(total, edges);
  return batch;
}

nlohmann::json graph_to_json(const Graph& g) {
  nlohmann::json j;
  j["n"] = g.num_nodes();
  auto edges = nlohmann::json::array();
  auto weights = nlohmann::json::array();
  for (const Edge& e : g.edge_list()) {
    edges.push_back({e.u, e.v});
    weights.push_back(e.w);
  }
  j["edges"] = std::move(edges);
  if (!g.is_unweighted()) j["weights"] = std::move(weights);
  return j;
}

Graph graph_from_json(const nlohmann::json& j) {
  const int n = j.at("n").get<int>();
  const auto& edges = j.at("edges");
  const bool weighted = j.contains("weights");
  if (weighted && j.at("weights").size() != edges.size()) {
    throw std::invalid_argument("weights and edges differ in length");
  }
  std::vector<Edge> list;
  list.reserve(edges.size());
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const auto& e = edges[k];
    if (!e.is_array() || e.size() != 2) throw std::invalid_argument("edge must be a pair");
    list.push_back({e[0].get<int>(), e[1].get<int>(),
                    weighted ? j["weights"][k].get<double>() : 1.0});
  }
  return Graph::from_edges(n, list);
}

Matrix to_dense(const SparseMatrix& m) { return Matrix(m); }

}  // namespace tikhonov
