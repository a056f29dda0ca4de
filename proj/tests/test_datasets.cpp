#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "doctest.h"
#include "tikhonov/datasets.hpp"

using namespace tikhonov;

namespace {

// Triple loop over node triples on the dense adjacency.
long brute_triangles(const Graph& g) {
  const int n = g.num_nodes();
  long c = 0;
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      if (g.has_edge(a, b))
        for (int d = b + 1; d < n; ++d)
          if (g.has_edge(a, d) && g.has_edge(b, d)) ++c;
  return c;
}

// Floyd-Warshall diameter.
int fw_diameter(const Graph& g) {
  const int n = g.num_nodes();
  const int inf = 1 << 20;
  std::vector<std::vector<int>> d(n, std::vector<int>(n, inf));
  for (int i = 0; i < n; ++i) {
    d[i][i] = 0;
    for (int j : g.neighbors(i)) d[i][j] = 1;
  }
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
  int m = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m = std::max(m, d[i][j]);
  return m;
}

std::vector<int> sorted_degrees(const Graph& g) {
  std::vector<int> d;
  for (int i = 0; i < g.num_nodes(); ++i) d.push_back(g.degree_count(i));
  std::sort(d.begin(), d.end());
  return d;
}

}  // namespace

TEST_CASE("triangle counting oracle agreement") {
  CHECK(count_triangles(Graph::from_edges(3, std::vector<Edge>{{0, 1}, {1, 2}, {0, 2}})) == 1);
  std::vector<Edge> k5;
  for (int i = 0; i < 5; ++i)
    for (int j = i + 1; j < 5; ++j) k5.push_back({i, j});
  CHECK(count_triangles(Graph::from_edges(5, k5)) == 10);
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    std::vector<Edge> e;
    for (int i = 0; i < 15; ++i)
      for (int j = i + 1; j < 15; ++j)
        if (uniform(rng, 0, 1) < 0.3) e.push_back({i, j});
    Graph g = Graph::from_edges(15, e);
    CHECK(count_triangles(g) == brute_triangles(g));
  }
}

TEST_CASE("clique distance generator") {
  CliqueDistanceParams p;
  p.count = 80;
  Dataset d = gen_clique_distance(p, 11);
  CHECK(d.samples.size() == 80);
  int ones = 0;
  for (const auto& s : d.samples) {
    const int len = s.meta["path_length"].get<int>();
    CHECK(s.label == (len >= 4 ? 1 : 0));
    ones += s.label == 1;
    const auto anchors = s.meta["anchors"].get<std::vector<int>>();
    CHECK(hop_distance(s.graph, anchors[0], anchors[1]).value() == len);
    CHECK(fw_diameter(s.graph) >= len);
    CHECK(s.graph.is_connected());
    CHECK(s.features.cols() == 1);
    CHECK((s.features.array() == 1.0).all());
    const auto path = s.meta["path_nodes"].get<std::vector<int>>();
    CHECK(static_cast<int>(path.size()) == len + 1);
    for (int v : path) CHECK((v >= 0 && v < s.graph.num_nodes()));
  }
  CHECK(ones == 40);

  CliqueDistanceParams bad = p;
  bad.path_max = 3;
  CHECK_THROWS_AS(gen_clique_distance(bad, 1), std::invalid_argument);
  bad = p;
  bad.clique_max = 1;
  CHECK_THROWS_AS(gen_clique_distance(bad, 1), std::invalid_argument);
}

TEST_CASE("clique distance boundary lengths") {
  CliqueDistanceParams p;
  p.count = 2;
  p.path_min = 1;
  p.path_max = 4;
  p.threshold = 2;
  // class 0 only has length 1; class 1 spans 2..4
  Dataset d = gen_clique_distance(p, 5);
  for (const auto& s : d.samples) {
    if (s.label == 0) CHECK(s.meta["path_length"].get<int>() == 1);
  }
  p.threshold = 4;
  p.path_min = 4;
  CHECK_THROWS(gen_clique_distance(p, 5));
}

TEST_CASE("triangles generator labels are exact") {
  TrianglesParams p;
  p.count = 60;
  Dataset d = gen_triangles(p, 7);
  int ones = 0;
  std::vector<int> edges[2];
  for (const auto& s : d.samples) {
    const long t = brute_triangles(s.graph);
    CHECK(t == static_cast<long>(s.label));
    CHECK(valid_triangle_sample(s));
    ones += s.label == 1;
    CHECK(s.graph.is_connected());
    edges[static_cast<int>(s.label)].push_back(static_cast<int>(s.graph.num_edges()) -
                                               s.graph.num_nodes());
    const auto tri = s.meta["triangle_nodes"].get<std::vector<int>>();
    if (s.label == 1) {
      REQUIRE(tri.size() == 3);
      CHECK(s.graph.has_edge(tri[0], tri[1]));
      CHECK(s.graph.has_edge(tri[1], tri[2]));
      CHECK(s.graph.has_edge(tri[0], tri[2]));
    } else {
      CHECK(tri.empty());
    }
  }
  CHECK(ones == 30);
  // Near-regular background: degrees 2..4, one extra edge over the chords.
  for (int c = 0; c < 2; ++c) CHECK(!edges[c].empty());
  for (const auto& s : d.samples) {
    for (int i = 0; i < s.graph.num_nodes(); ++i) {
      CHECK((s.graph.degree_count(i) >= 2 && s.graph.degree_count(i) <= 4));
    }
  }

  GraphSample k3;
  k3.graph = Graph::from_edges(3, std::vector<Edge>{{0, 1}, {1, 2}, {0, 2}});
  k3.features = Matrix::Ones(3, 1);
  k3.label = 1;
  k3.meta = {{"triangle_nodes", {0, 1, 2}}};
  CHECK(valid_triangle_sample(k3));
  k3.label = 0;
  CHECK_FALSE(valid_triangle_sample(k3));

  TrianglesParams tiny;
  tiny.count = 2;
  tiny.n_min = tiny.n_max = 3;
  tiny.max_attempts = 5;
  // The 3-node background is already a triangle.
  CHECK_THROWS_AS(gen_triangles(tiny, 1), std::runtime_error);
  TrianglesParams bad;
  bad.n_min = 2;
  CHECK_THROWS_AS(gen_triangles(bad, 1), std::invalid_argument);
}

TEST_CASE("colors generator") {
  ColorsParams p;
  p.count = 50;
  Dataset d = gen_colors(p, 9);
  CHECK(d.num_outputs() == p.n_max + 1);
  for (const auto& s : d.samples) {
    int green = 0;
    for (int i = 0; i < s.features.rows(); ++i) {
      CHECK(s.features.row(i).sum() == 1.0);
      green += s.features(i, 1) == 1.0;
    }
    CHECK(s.label == green);
    CHECK(s.meta["green_nodes"].size() == static_cast<std::size_t>(green));
  }
  ColorsParams one = p;
  one.num_colors = 1;
  CHECK_THROWS_AS(gen_colors(one, 1), std::invalid_argument);
}

TEST_CASE("CSBM edge probabilities") {
  CsbmParams p;
  p.n = 100;
  p.avg_degree = 10;
  p.lambda = 1;
  CHECK(p.p_in() == doctest::Approx(0.131623).epsilon(1e-5));
  CHECK(p.p_out() == doctest::Approx(0.068377).epsilon(1e-5));
  p.lambda = 0;
  CHECK(p.p_in() == p.p_out());
  CHECK(p.feature_dim() == 4);
  p.lambda = 4.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p.lambda = 1.0;
  p.n = 99;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("CSBM samples: blocks, connectivity, mean degree") {
  CsbmParams p;
  p.lambda = 1.5;
  p.mu = 2.0;
  double deg = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    GraphSample s = gen_csbm(p, derive_seed(3, static_cast<std::uint64_t>(t)));
    CHECK(s.graph.is_connected());
    const auto v = s.meta["v"].get<std::vector<int>>();
    CHECK(std::count(v.begin(), v.end(), 1) == 50);
    CHECK(std::count(v.begin(), v.end(), -1) == 50);
    CHECK(s.features.rows() == 100);
    CHECK(s.features.cols() == 4);
    deg += 2.0 * s.graph.num_edges() / 100.0;
  }
  deg /= trials;
  // Conditioning on connectivity shifts the mean slightly upward.
  CHECK(std::abs(deg - 10.0) <= 1.0);
}

TEST_CASE("rewiring keeps degrees and connectivity") {
  CsbmParams p;
  p.lambda = 2.5;
  GraphSample s = gen_csbm(p, 21);
  const int m = static_cast<int>(s.graph.num_edges());
  RewireResult r = rewire_null(s.graph, 10 * m, 4);
  CHECK(r.graph.is_connected());
  CHECK(r.graph.num_edges() == s.graph.num_edges());
  CHECK(sorted_degrees(r.graph) == sorted_degrees(s.graph));
  CHECK(r.accepted == 10 * m);
  CHECK_FALSE(r.exhausted);
  CHECK(count_triangles(r.graph) >= 0);
  // Community structure is destroyed: within-block edge fraction moves to ~1/2.
  const auto v = s.meta["v"].get<std::vector<int>>();
  auto within = [&](const Graph& g) {
    int w = 0;
    for (const Edge& e : g.edge_list()) w += v[e.u] == v[e.v];
    return static_cast<double>(w) / g.num_edges();
  };
  CHECK(within(s.graph) > 0.8);
  CHECK(std::abs(within(r.graph) - 0.5) < 0.1);

  // A star admits no valid swap.
  std::vector<Edge> star;
  for (int i = 1; i < 6; ++i) star.push_back({0, i});
  RewireResult rs = rewire_null(Graph::from_edges(6, star), 3, 1, 50);
  CHECK(rs.exhausted);
  CHECK(rs.accepted == 0);
  CHECK(rs.attempted == 50);
  CHECK_THROWS_AS(rewire_null(Graph::from_edges(3, std::vector<Edge>{{0, 1}}), 1, 1),
                  std::invalid_argument);
}

TEST_CASE("CSBM task balance and null features") {
  CsbmParams p;
  p.lambda = 1.0;
  p.mu = 4.0;
  Dataset d = gen_csbm_task(p, 40, 8);
  int ones = 0;
  double corr = 0;
  int zeros = 0;
  for (const auto& s : d.samples) {
    ones += s.label == 1;
    if (s.label == 0) {
      CHECK(s.meta["swaps_accepted"] == s.meta["swaps_requested"]);
      CHECK(s.graph.is_connected());
      // Correlation of features with the first axis.
      const double c = s.features.col(0).mean() * std::sqrt(100.0);
      corr += std::abs(c);
      ++zeros;
    }
  }
  CHECK(ones == 20);
  CHECK(corr / zeros < 4.0 / std::sqrt(4.0));
  CHECK_THROWS_AS(gen_csbm_task(p, 3, 1), std::invalid_argument);
}

TEST_CASE("CSBM feature direction scope") {
  CsbmParams p;
  p.lambda = 0.5;
  p.mu = 1e6;
  const Dataset d = gen_csbm_task(p, 10, 4);
  const auto dir = d.params.at("direction").get<std::vector<double>>();
  const Vector u = Eigen::Map<const Vector>(dir.data(), static_cast<Eigen::Index>(dir.size()));
  CHECK(u.norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((u - csbm_direction(p, 4)).cwiseAbs().maxCoeff() == 0.0);
  for (const auto& s : d.samples) {
    if (s.label != 1) continue;
    // At huge mu every row is +-u up to the noise.
    for (Eigen::Index i = 0; i < s.features.rows(); ++i) {
      const Vector f = s.features.row(i).transpose();
      CHECK(std::abs(f.dot(u)) / f.norm() > 0.999);
    }
  }

  p.direction_scope = "graph";
  const Dataset g = gen_csbm_task(p, 4, 4);
  CHECK_FALSE(g.params.contains("direction"));
  std::vector<Vector> dirs;
  for (const auto& s : g.samples)
    if (s.label == 1) dirs.push_back(s.features.row(0).transpose().normalized());
  REQUIRE(dirs.size() == 2);
  CHECK(std::abs(dirs[0].dot(dirs[1])) < 0.999);

  p.direction_scope = "node";
  CHECK_THROWS_AS(gen_csbm_task(p, 4, 4), std::invalid_argument);
}

TEST_CASE("diameter generator") {
  DiameterParams p;
  p.count = 90;
  Dataset d = gen_diameter(p, 13);
  CHECK(!d.is_classification());
  std::map<std::string, int> fam;
  double lo = 1e9, hi = 0;
  for (const auto& s : d.samples) {
    CHECK(s.label == fw_diameter(s.graph));
    CHECK(s.graph.is_connected());
    CHECK(s.graph.num_nodes() <= p.n_max);
    lo = std::min(lo, s.label);
    hi = std::max(hi, s.label);
    fam[s.meta["family"].get<std::string>()]++;
  }
  CHECK(fam.size() == 3);
  CHECK(lo >= 4);
  CHECK(hi <= 30);
  CHECK(hi - lo >= 15);

  // Oracles on hand-built graphs.
  std::vector<Edge> path;
  for (int i = 0; i + 1 < 12; ++i) path.push_back({i, i + 1});
  CHECK(diameter(Graph::from_edges(12, path)) == 11);
  std::vector<Edge> star;
  for (int i = 1; i < 7; ++i) star.push_back({0, i});
  CHECK(diameter(Graph::from_edges(7, star)) == 2);
}

TEST_CASE("generators are pure functions of the seed") {
  CliqueDistanceParams c;
  c.count = 30;
  CHECK(to_jsonl(gen_clique_distance(c, 4)) == to_jsonl(gen_clique_distance(c, 4)));
  CHECK(to_jsonl(gen_clique_distance(c, 4)) != to_jsonl(gen_clique_distance(c, 5)));
  TrianglesParams t;
  t.count = 20;
  CHECK(to_jsonl(gen_triangles(t, 4)) == to_jsonl(gen_triangles(t, 4)));
  CsbmParams p;
  CHECK(to_jsonl(gen_csbm_task(p, 6, 2)) == to_jsonl(gen_csbm_task(p, 6, 2)));
  DiameterParams dp;
  dp.count = 20;
  CHECK(to_jsonl(gen_diameter(dp, 4)) == to_jsonl(gen_diameter(dp, 4)));
}

TEST_CASE("stratified split arithmetic") {
  CliqueDistanceParams c;
  c.count = 700;
  Dataset d = gen_clique_distance(c, 1);
  DatasetSplits s = split_dataset(d);
  CHECK(s.train.samples.size() == 560);
  CHECK(s.val.samples.size() == 70);
  CHECK(s.test.samples.size() == 70);
  CHECK(s.train.split == "train");
  for (const Dataset* part : {&s.train, &s.val, &s.test}) {
    int ones = 0;
    for (const auto& x : part->samples) ones += x.label == 1;
    const double frac = static_cast<double>(ones) / part->samples.size();
    CHECK(std::abs(frac - 0.5) <= 0.02);
  }
  DatasetSplits f = fold_split(d, 5, 2);
  CHECK(f.test.samples.size() == 140);
  CHECK(f.val.samples.size() == 140);
  CHECK(f.train.samples.size() == 420);
  CHECK_THROWS_AS(fold_split(d, 5, 5), std::invalid_argument);
}

TEST_CASE("JSONL round trip") {
  ColorsParams p;
  p.count = 100;
  Dataset d = gen_colors(p, 2);
  const std::string path = "test_datasets_roundtrip.jsonl";
  save_jsonl(path, d);
  Dataset e = load_jsonl(path);
  std::remove(path.c_str());
  CHECK(e.generator == "colors");
  CHECK(e.seed == 2);
  CHECK(e.params == d.params);
  REQUIRE(e.samples.size() == 100);
  for (std::size_t i = 0; i < 100; ++i) {
    CHECK(e.samples[i].label == d.samples[i].label);
    CHECK(e.samples[i].features == d.samples[i].features);
    CHECK(e.samples[i].meta == d.samples[i].meta);
    CHECK(e.samples[i].graph.edge_list().size() == d.samples[i].graph.edge_list().size());
  }
  CHECK(to_jsonl(e) == to_jsonl(d));

  // Real-valued features survive exactly.
  CsbmParams cp;
  Dataset c = gen_csbm_task(cp, 4, 3);
  CHECK(to_jsonl(parse_jsonl(to_jsonl(c))) == to_jsonl(c));
  Dataset r = parse_jsonl(to_jsonl(c));
  CHECK(r.samples[1].features == c.samples[1].features);
}

TEST_CASE("JSONL errors carry line numbers") {
  ColorsParams p;
  p.count = 3;
  std::string text = to_jsonl(gen_colors(p, 2));
  std::string broken = text + "{not json}\n";
  try {
    parse_jsonl(broken);
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).rfind("line 5:", 0) == 0);
  }
  std::string versioned = text;
  versioned.replace(versioned.find("\"schema_version\":1"), 18, "\"schema_version\":9");
  CHECK_THROWS_WITH_AS(parse_jsonl(versioned), doctest::Contains("schema version"),
                       std::runtime_error);
  CHECK_THROWS_AS(parse_jsonl(""), std::runtime_error);
  CHECK_THROWS_AS(load_jsonl("/nonexistent/dir/file.jsonl"), std::runtime_error);
}
