#pragma once

#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "tikhonov/types.hpp"

namespace tikhonov {

struct Edge {
  int u = 0;
  int v = 0;
  double w = 1.0;
};

// Immutable undirected graph in compressed sparse row form. Every edge is
// stored in both directions, neighbour lists are sorted, self-loops are never
// stored.
class Graph {
 public:
  Graph() = default;

  // Duplicate edges collapse by summing their weights; (i, i) entries are
  // dropped. Throws std::invalid_argument on out-of-range indices or negative
  // weights.
  static Graph from_edges(int n, std::span<const Edge> edges);

  int num_nodes() const { return n_; }
  // Number of undirected edges.
  std::size_t num_edges() const { return col_.size() / 2; }

  std::span<const int> neighbors(int i) const {
    return {col_.data() + row_ptr_[i], col_.data() + row_ptr_[i + 1]};
  }
  std::span<const double> weights(int i) const {
    return {w_.data() + row_ptr_[i], w_.data() + row_ptr_[i + 1]};
  }
  int degree_count(int i) const { return row_ptr_[i + 1] - row_ptr_[i]; }

  const std::vector<int>& row_ptr() const { return row_ptr_; }
  const std::vector<int>& col_idx() const { return col_; }
  const std::vector<double>& values() const { return w_; }

  // Weighted degrees.
  const Vector& degrees() const { return degrees_; }
  const std::vector<int>& component_of() const { return component_; }
  int num_components() const { return num_components_; }
  bool is_connected() const { return num_components_ == 1; }

  bool has_edge(int i, int j) const;
  double weight(int i, int j) const;

  // Undirected edge list with u < v, sorted.
  std::vector<Edge> edge_list() const;
  bool is_unweighted() const;

 private:
  int n_ = 0;
  std::vector<int> row_ptr_{0};
  std::vector<int> col_;
  std::vector<double> w_;
  Vector degrees_;
  std::vector<int> component_;
  int num_components_ = 0;
};

// L = I - D^{-1/2} A D^{-1/2}; rows and columns of isolated nodes are zero,
// diagonal included.
SparseMatrix normalized_laplacian(const Graph& g);

// Hop distances from `source`; -1 marks unreachable nodes.
std::vector<int> bfs_distances(const Graph& g, int source);

// nullopt means the nodes lie in different components.
std::optional<int> hop_distance(const Graph& g, int i, int j);

// All-pairs hop distances, -1 for unreachable pairs. O(n m).
Eigen::MatrixXi all_pairs_hops(const Graph& g);

// Throws std::invalid_argument on disconnected graphs.
int diameter(const Graph& g);

struct GraphBatch {
  Graph graph;
  Matrix features;
  std::vector<int> graph_of;  // node -> index of its source graph
  std::vector<int> offsets;   // first node of each graph, plus total
};

struct GraphWithFeatures {
  const Graph* graph;
  const Matrix* features;
};

// Block-diagonal union. Throws on empty input or feature width mismatch.
GraphBatch batch_graphs(std::span<const GraphWithFeatures> items);

// {"n": int, "edges": [[i, j], ...], "weights": [...]} with weights omitted
// when every edge has unit weight.
nlohmann::json graph_to_json(const Graph& g);
Graph graph_from_json(const nlohmann::json& j);

// Dense copy, handy for oracles on small graphs.
Matrix to_dense(const SparseMatrix& m);

}  // namespace tikhonov
