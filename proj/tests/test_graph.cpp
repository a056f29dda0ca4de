#include <vector>

#include <Eigen/Eigenvalues>

#include "doctest.h"
#include "tikhonov/graph.hpp"
#include "tikhonov/rng.hpp"

using namespace tikhonov;

namespace {

Graph path_graph(int n) {
  std::vector<Edge> e;
  for (int i = 0; i + 1 < n; ++i) e.push_back({i, i + 1});
  return Graph::from_edges(n, e);
}

Graph random_graph(int n, double p, Rng& rng) {
  std::vector<Edge> e;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (uniform(rng, 0, 1) < p) e.push_back({i, j});
  return Graph::from_edges(n, e);
}

}  // namespace

TEST_CASE("build_graph basic shapes") {
  const std::vector<Edge> one{{0, 1}};
  Graph g = Graph::from_edges(2, one);
  CHECK(g.num_edges() == 1);
  CHECK(g.degrees()[0] == 1.0);
  CHECK(g.degrees()[1] == 1.0);
  CHECK(g.num_components() == 1);

  Graph empty = Graph::from_edges(3, {});
  CHECK(empty.num_components() == 3);
  CHECK(empty.num_edges() == 0);

  const std::vector<Edge> tri{{0, 1}, {1, 2}, {0, 2}};
  Graph k3 = Graph::from_edges(3, tri);
  for (int i = 0; i < 3; ++i) CHECK(k3.degrees()[i] == 2.0);
}

TEST_CASE("duplicates merge, self-loops vanish, bad input throws") {
  const std::vector<Edge> e{{0, 1, 1.0}, {1, 0, 2.0}, {2, 2, 5.0}};
  Graph g = Graph::from_edges(3, e);
  CHECK(g.weight(0, 1) == 3.0);
  CHECK(g.weight(1, 0) == 3.0);
  CHECK_FALSE(g.has_edge(2, 2));
  CHECK(g.num_edges() == 1);

  const std::vector<Edge> out_of_range{{0, 3}};
  CHECK_THROWS_AS(Graph::from_edges(3, out_of_range), std::invalid_argument);
  const std::vector<Edge> negative{{0, 1, -1.0}};
  CHECK_THROWS_AS(Graph::from_edges(3, negative), std::invalid_argument);
}

TEST_CASE("components agree with BFS reachability") {
  Rng rng(7);
  for (int t = 0; t < 20; ++t) {
    Graph g = random_graph(25, 0.06, rng);
    for (int i = 0; i < g.num_nodes(); ++i) {
      const auto d = bfs_distances(g, i);
      for (int j = 0; j < g.num_nodes(); ++j) {
        CHECK((d[j] >= 0) == (g.component_of()[i] == g.component_of()[j]));
      }
    }
  }
}

TEST_CASE("normalized Laplacian small cases") {
  const std::vector<Edge> one{{0, 1}};
  Matrix L = to_dense(normalized_laplacian(Graph::from_edges(2, one)));
  Matrix expect(2, 2);
  expect << 1, -1, -1, 1;
  CHECK((L - expect).cwiseAbs().maxCoeff() == 0.0);

  Matrix L1 = to_dense(normalized_laplacian(Graph::from_edges(1, {})));
  CHECK(L1(0, 0) == 0.0);

  const std::vector<Edge> tri{{0, 1}, {1, 2}, {0, 2}};
  Matrix L3 = to_dense(normalized_laplacian(Graph::from_edges(3, tri)));
  CHECK(L3(0, 0) == doctest::Approx(1.0));
  CHECK(L3(0, 1) == doctest::Approx(-0.5));
  Eigen::SelfAdjointEigenSolver<Matrix> es(L3);
  CHECK(es.eigenvalues()[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(es.eigenvalues()[1] == doctest::Approx(1.5));
  CHECK(es.eigenvalues()[2] == doctest::Approx(1.5));
}

TEST_CASE("Laplacian spectrum in [0,2], null vector, isolated rows") {
  Rng rng(11);
  for (int t = 0; t < 30; ++t) {
    Graph g = random_graph(40, 0.08, rng);
    Matrix L = to_dense(normalized_laplacian(g));
    CHECK((L - L.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<Matrix> es(L);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
    CHECK(es.eigenvalues().maxCoeff() <= 2.0 + 1e-10);
    for (int i = 0; i < g.num_nodes(); ++i) {
      if (g.degrees()[i] == 0.0) {
        CHECK(L.row(i).cwiseAbs().maxCoeff() == 0.0);
        CHECK(L.col(i).cwiseAbs().maxCoeff() == 0.0);
      } else {
        CHECK(L(i, i) == 1.0);
      }
    }
    // D^{1/2} 1 restricted to any component lies in the null space.
    Vector s = g.degrees().cwiseSqrt();
    CHECK((L * s).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("hop distance and diameter") {
  Graph p3 = path_graph(3);
  CHECK(hop_distance(p3, 0, 2) == 2);
  CHECK(hop_distance(p3, 1, 1) == 0);
  const std::vector<Edge> two{{0, 1}, {2, 3}};
  Graph g2 = Graph::from_edges(4, two);
  CHECK_FALSE(hop_distance(g2, 0, 3).has_value());
  CHECK_THROWS_AS(hop_distance(g2, 0, 4), std::invalid_argument);

  const std::vector<Edge> tri{{0, 1}, {1, 2}, {0, 2}};
  CHECK(diameter(Graph::from_edges(3, tri)) == 1);
  CHECK(diameter(path_graph(5)) == 4);
  std::vector<Edge> star;
  for (int i = 1; i < 6; ++i) star.push_back({0, i});
  CHECK(diameter(Graph::from_edges(6, star)) == 2);
  CHECK_THROWS_AS(diameter(g2), std::invalid_argument);
}

TEST_CASE("batching") {
  const std::vector<Edge> tri{{0, 1}, {1, 2}, {0, 2}};
  Graph k3 = Graph::from_edges(3, tri);
  Matrix f1 = Matrix::Constant(3, 2, 1.0);
  Matrix f2 = Matrix::Constant(3, 2, 2.0);
  std::vector<GraphWithFeatures> items{{&k3, &f1}, {&k3, &f2}};
  GraphBatch b = batch_graphs(items);
  CHECK(b.graph.num_nodes() == 6);
  CHECK(b.graph.num_components() == 2);
  CHECK(b.graph_of == std::vector<int>{0, 0, 0, 1, 1, 1});
  CHECK(b.features(4, 1) == 2.0);
  CHECK(b.offsets == std::vector<int>{0, 3, 6});

  std::vector<GraphWithFeatures> single{{&k3, &f1}};
  GraphBatch s = batch_graphs(single);
  CHECK(s.graph.edge_list().size() == 3);
  CHECK(s.features == f1);

  Matrix bad = Matrix::Zero(3, 3);
  std::vector<GraphWithFeatures> mismatch{{&k3, &f1}, {&k3, &bad}};
  CHECK_THROWS_AS(batch_graphs(mismatch), std::invalid_argument);
  CHECK_THROWS_AS(batch_graphs(std::span<const GraphWithFeatures>{}), std::invalid_argument);

  // The batched Laplacian is block diagonal with the per-graph blocks.
  Matrix Lb = to_dense(normalized_laplacian(b.graph));
  Matrix Lk = to_dense(normalized_laplacian(k3));
  CHECK((Lb.block(3, 3, 3, 3) - Lk).cwiseAbs().maxCoeff() == 0.0);
  CHECK(Lb.block(0, 3, 3, 3).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("graph JSON round trip") {
  const std::vector<Edge> e{{0, 1}, {1, 2, 2.5}};
  Graph g = Graph::from_edges(4, e);
  auto j = graph_to_json(g);
  CHECK(j.contains("weights"));
  Graph h = graph_from_json(j);
  CHECK(h.num_nodes() == 4);
  CHECK(h.weight(1, 2) == 2.5);
  CHECK(graph_to_json(h) == j);
  CHECK_FALSE(graph_to_json(path_graph(4)).contains("weights"));
}
