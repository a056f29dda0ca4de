#include "tikhonov/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace tikhonov {

namespace {

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) std::swap(v[i], v[uniform_int(rng, 0, i)]);
}

std::vector<int> permutation(int n, Rng& rng) {
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  shuffle(p, rng);
  return p;
}

Graph relabel(int n, const std::vector<Edge>& edges, const std::vector<int>& perm) {
  std::vector<Edge> out;
  out.reserve(edges.size());
  for (const Edge& e : edges) out.push_back({perm[e.u], perm[e.v], e.w});
  return Graph::from_edges(n, out);
}

nlohmann::json relabel_ids(const std::vector<int>& ids, const std::vector<int>& perm) {
  std::vector<int> out;
  for (int i : ids) out.push_back(perm[i]);
  std::sort(out.begin(), out.end());
  return out;
}

Matrix ones(int n) { return Matrix::Ones(n, 1); }

// Adjacency lists that grow edge by edge, used while building graphs.
struct Builder {
  int n;
  std::vector<std::vector<int>> adj;
  std::vector<Edge> edges;

  explicit Builder(int n_) : n(n_), adj(n_) {}
  int add_node() {
    adj.emplace_back();
    return n++;
  }
  bool has(int u, int v) const {
    return std::find(adj[u].begin(), adj[u].end(), v) != adj[u].end();
  }
  void add(int u, int v) {
    if (u == v || has(u, v)) return;
    adj[u].push_back(v);
    adj[v].push_back(u);
    edges.push_back({std::min(u, v), std::max(u, v)});
  }
  std::vector<int> bfs(int s) const {
    std::vector<int> d(n, -1);
    std::vector<int> queue{s};
    d[s] = 0;
    for (std::size_t h = 0; h < queue.size(); ++h) {
      for (int w : adj[queue[h]]) {
        if (d[w] < 0) {
          d[w] = d[queue[h]] + 1;
          queue.push_back(w);
        }
      }
    }
    return d;
  }
  int common(int u, int v) const {
    int c = 0;
    for (int w : adj[u]) c += has(v, w);
    return c;
  }
  Graph graph() const { return Graph::from_edges(n, edges); }
};

Dataset make_header(const std::string& generator, const std::string& task,
                    nlohmann::json params, std::uint64_t seed) {
  Dataset d;
  d.generator = generator;
  d.task = task;
  d.params = std::move(params);
  d.seed = seed;
  return d;
}

}  // namespace

int Dataset::num_outputs() const {
  if (!is_classification()) return 1;
  if (params.contains("num_classes")) return params["num_classes"].get<int>();
  double m = 0;
  for (const auto& s : samples) m = std::max(m, s.label);
  return static_cast<int>(m) + 1;
}

int Dataset::feature_dim() const {
  return samples.empty() ? 0 : static_cast<int>(samples.front().features.cols());
}

long count_triangles(const Graph& g) {
  long count = 0;
  for (int u = 0; u < g.num_nodes(); ++u) {
    auto nu = g.neighbors(u);
    for (int v : nu) {
      if (v <= u) continue;
      auto nv = g.neighbors(v);
      // Sorted lists: count common neighbours w > v.
      auto a = std::upper_bound(nu.begin(), nu.end(), v);
      auto b = std::upper_bound(nv.begin(), nv.end(), v);
      while (a != nu.end() && b != nv.end()) {
        if (*a < *b) {
          ++a;
        } else if (*b < *a) {
          ++b;
        } else {
          ++count;
          ++a;
          ++b;
        }
      }
    }
  }
  return count;
}

bool valid_triangle_sample(const GraphSample& s) {
  const long t = count_triangles(s.graph);
  if (t > 1 || static_cast<double>(t) != s.label) return false;
  if (!s.meta.contains("triangle_nodes")) return false;
  const auto ids = s.meta["triangle_nodes"].get<std::vector<int>>();
  if (t == 0) return ids.empty();
  if (ids.size() != 3) return false;
  for (int a : ids)
    if (a < 0 || a >= s.graph.num_nodes()) return false;
  return s.graph.has_edge(ids[0], ids[1]) && s.graph.has_edge(ids[1], ids[2]) &&
         s.graph.has_edge(ids[0], ids[2]);
}

// ---------------------------------------------------------------- clique distance

Dataset gen_clique_distance(const CliqueDistanceParams& p, std::uint64_t seed) {
  if (p.count < 2 || p.clique_min < 2 || p.clique_max < p.clique_min || p.path_min < 1 ||
      p.path_max < p.path_min || !(p.path_min < p.threshold && p.path_max >= p.threshold)) {
    throw std::invalid_argument("degenerate clique-distance ranges");
  }
  Dataset d = make_header("clique_distance", "classification",
                          {{"count", p.count},
                           {"clique_min", p.clique_min},
                           {"clique_max", p.clique_max},
                           {"path_min", p.path_min},
                           {"path_max", p.path_max},
                           {"threshold", p.threshold},
                           {"num_classes", 2}},
                          seed);
  for (int i = 0; i < p.count; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const int label = i % 2;
    const int len = label ? uniform_int(rng, p.threshold, p.path_max)
                          : uniform_int(rng, p.path_min, p.threshold - 1);
    const int a = uniform_int(rng, p.clique_min, p.clique_max);
    const int b = uniform_int(rng, p.clique_min, p.clique_max);
    // Nodes: clique A [0, a), clique B [a, a + b), interior path nodes after.
    const int n = a + b + len - 1;
    Builder g(n);
    for (int u = 0; u < a; ++u)
      for (int v = u + 1; v < a; ++v) g.add(u, v);
    for (int u = a; u < a + b; ++u)
      for (int v = u + 1; v < a + b; ++v) g.add(u, v);
    std::vector<int> path{0};
    for (int k = 0; k < len - 1; ++k) path.push_back(a + b + k);
    path.push_back(a);
    for (std::size_t k = 0; k + 1 < path.size(); ++k) g.add(path[k], path[k + 1]);

    const std::vector<int> perm = permutation(n, rng);
    GraphSample s;
    s.graph = relabel(n, g.edges, perm);
    s.features = ones(n);
    s.label = label;
    std::vector<int> ca(a), cb(b);
    std::iota(ca.begin(), ca.end(), 0);
    std::iota(cb.begin(), cb.end(), a);
    s.meta = {{"path_length", len},
              {"path_nodes", relabel_ids(path, perm)},
              {"anchors", {perm[0], perm[a]}},
              {"clique_a", relabel_ids(ca, perm)},
              {"clique_b", relabel_ids(cb, perm)}};
    d.samples.push_back(std::move(s));
  }
  Rng rng(derive_seed(seed, "shuffle"));
  shuffle(d.samples, rng);
  return d;
}

// ---------------------------------------------------------------- triangles

namespace {

// Hamiltonian cycle plus chords between degree-2 nodes at distance >= 3:
// triangle-free, degrees 2 or 3.
void triangle_free_background(Builder& g, double chord_fill, Rng& rng) {
  const std::vector<int> ring = permutation(g.n, rng);
  for (int k = 0; k < g.n; ++k) g.add(ring[k], ring[(k + 1) % g.n]);
  const int chords = static_cast<int>(chord_fill * g.n / 2);
  for (int c = 0; c < chords; ++c) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      const int u = uniform_int(rng, 0, g.n - 1);
      const int v = uniform_int(rng, 0, g.n - 1);
      if (u == v || g.adj[u].size() != 2 || g.adj[v].size() != 2 || g.has(u, v) ||
          g.common(u, v) > 0) {
        continue;
      }
      g.add(u, v);
      break;
    }
  }
}

}  // namespace

Dataset gen_triangles(const TrianglesParams& p, std::uint64_t seed) {
  if (p.count < 2 || p.n_min < 3 || p.n_max < p.n_min || !(p.chord_fill >= 0.0 && p.chord_fill <= 1.0) ||
      p.max_attempts < 1) {
    throw std::invalid_argument("infeasible triangle size range");
  }
  Dataset d = make_header("triangles", "classification",
                          {{"count", p.count},
                           {"n_min", p.n_min},
                           {"n_max", p.n_max},
                           {"chord_fill", p.chord_fill},
                           {"max_attempts", p.max_attempts},
                           {"num_classes", 2}},
                          seed);
  for (int i = 0; i < p.count; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const int label = i % 2;
    bool done = false;
    for (int attempt = 0; attempt < p.max_attempts && !done; ++attempt) {
      const int n = uniform_int(rng, p.n_min, p.n_max);
      Builder g(n);
      triangle_free_background(g, p.chord_fill, rng);
      // Marked edge: closes exactly one triangle (class 1) or joins nodes at
      // distance >= 3 (class 0). Either way the edge count matches.
      std::vector<std::pair<int, int>> candidates;
      for (int u = 0; u < n; ++u) {
        const std::vector<int> dist = g.bfs(u);
        for (int v = u + 1; v < n; ++v) {
          if (label ? (dist[v] == 2 && g.common(u, v) == 1) : dist[v] >= 3) {
            candidates.push_back({u, v});
          }
        }
      }
      if (candidates.empty()) continue;
      const auto [u, v] = candidates[uniform_int(rng, 0, static_cast<int>(candidates.size()) - 1)];
      std::vector<int> tri;
      if (label) {
        for (int w : g.adj[u])
          if (g.has(v, w)) tri = std::vector<int>{u, v, w};
      }
      g.add(u, v);

      const std::vector<int> perm = permutation(n, rng);
      GraphSample s;
      s.graph = relabel(n, g.edges, perm);
      s.features = ones(n);
      s.label = label;
      s.meta = {{"triangle_nodes", relabel_ids(tri, perm)},
                {"marked_edge", std::vector<int>{perm[u], perm[v]}},
                {"attempts", attempt + 1}};
      if (!valid_triangle_sample(s)) continue;
      d.samples.push_back(std::move(s));
      done = true;
    }
    if (!done) throw std::runtime_error("triangle generator exceeded its rejection budget");
  }
  Rng rng(derive_seed(seed, "shuffle"));
  shuffle(d.samples, rng);
  return d;
}

// ---------------------------------------------------------------- colors

Dataset gen_colors(const ColorsParams& p, std::uint64_t seed) {
  if (p.num_colors < 2) throw std::invalid_argument("num_colors must be >= 2");
  if (p.count < 1 || p.n_min < 1 || p.n_max < p.n_min || !(p.edge_prob >= 0.0 && p.edge_prob <= 1.0)) {
    throw std::invalid_argument("invalid colors parameters");
  }
  Dataset d = make_header("colors", "classification",
                          {{"count", p.count},
                           {"n_min", p.n_min},
                           {"n_max", p.n_max},
                           {"num_colors", p.num_colors},
                           {"edge_prob", p.edge_prob},
                           {"green_index", 1},
                           {"num_classes", p.n_max + 1}},
                          seed);
  for (int i = 0; i < p.count; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const int n = uniform_int(rng, p.n_min, p.n_max);
    std::vector<Edge> edges;
    for (int u = 0; u < n; ++u)
      for (int v = u + 1; v < n; ++v)
        if (uniform(rng, 0.0, 1.0) < p.edge_prob) edges.push_back({u, v});
    GraphSample s;
    s.graph = Graph::from_edges(n, edges);
    s.features = Matrix::Zero(n, p.num_colors);
    std::vector<int> green;
    for (int u = 0; u < n; ++u) {
      const int c = uniform_int(rng, 0, p.num_colors - 1);
      s.features(u, c) = 1.0;
      if (c == 1) green.push_back(u);
    }
    s.label = static_cast<double>(green.size());
    s.meta = {{"green_nodes", green}};
    d.samples.push_back(std::move(s));
  }
  return d;
}

// ---------------------------------------------------------------- CSBM

int CsbmParams::feature_dim() const {
  return std::max(1, static_cast<int>(std::lround(n / gamma)));
}

double CsbmParams::p_in() const { return (avg_degree + lambda * std::sqrt(avg_degree)) / n; }
double CsbmParams::p_out() const { return (avg_degree - lambda * std::sqrt(avg_degree)) / n; }

void CsbmParams::validate() const {
  if (n < 2 || n % 2 != 0) throw std::invalid_argument("CSBM n must be even and >= 2");
  if (!(avg_degree > 0.0)) throw std::invalid_argument("CSBM average degree must be positive");
  if (!(lambda >= 0.0 && lambda <= std::sqrt(avg_degree))) {
    throw std::invalid_argument("CSBM lambda must lie in [0, sqrt(avg_degree)]");
  }
  if (!(mu >= 0.0)) throw std::invalid_argument("CSBM mu must be >= 0");
  if (!(gamma > 0.0)) throw std::invalid_argument("CSBM gamma must be positive");
  if (p_in() > 1.0) throw std::invalid_argument("CSBM p_in exceeds 1");
  if (max_resample < 1) throw std::invalid_argument("CSBM resample budget must be positive");
  if (direction_scope != "dataset" && direction_scope != "graph") {
    throw std::invalid_argument("CSBM direction scope must be 'dataset' or 'graph'");
  }
}

namespace {

struct CsbmTopology {
  Graph graph;
  std::vector<int> v;
  int resamples = 0;
};

CsbmTopology csbm_topology(const CsbmParams& p, Rng& rng) {
  CsbmTopology t;
  std::vector<int> order = permutation(p.n, rng);
  t.v.assign(p.n, -1);
  for (int k = 0; k < p.n / 2; ++k) t.v[order[k]] = 1;
  const double pin = p.p_in(), pout = p.p_out();
  for (int r = 0; r < p.max_resample; ++r) {
    std::vector<Edge> edges;
    for (int u = 0; u < p.n; ++u)
      for (int w = u + 1; w < p.n; ++w)
        if (uniform(rng, 0.0, 1.0) < (t.v[u] == t.v[w] ? pin : pout)) edges.push_back({u, w});
    t.graph = Graph::from_edges(p.n, edges);
    if (t.graph.is_connected()) {
      t.resamples = r;
      return t;
    }
  }
  throw std::runtime_error("CSBM connectivity resampling budget exceeded");
}

// sqrt(mu / n) v_i u + z_i with z_i ~ N(0, I_p / p) and u a unit vector in
// a uniformly random direction.
Matrix csbm_features(const CsbmParams& p, const std::vector<int>& v, double mu, Rng& rng,
                     const Vector* fixed_u) {
  const int dim = p.feature_dim();
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  Vector u(dim);
  for (int k = 0; k < dim; ++k) u[k] = s * normal(rng);
  u.normalize();
  if (fixed_u) {
    if (fixed_u->size() != dim) throw std::invalid_argument("CSBM direction has the wrong size");
    u = *fixed_u;
  }
  Matrix f(p.n, dim);
  const double a = std::sqrt(mu / p.n);
  for (int i = 0; i < p.n; ++i)
    for (int k = 0; k < dim; ++k) f(i, k) = a * v[i] * u[k] + s * normal(rng);
  return f;
}

nlohmann::json csbm_meta(const CsbmParams& p) {
  return {{"n", p.n},
          {"direction_scope", p.direction_scope},
          {"avg_degree", p.avg_degree},
          {"lambda", p.lambda},
          {"mu", p.mu},
          {"gamma", p.gamma},
          {"p", p.feature_dim()},
          {"p_in", p.p_in()},
          {"p_out", p.p_out()}};
}

}  // namespace

Vector csbm_direction(const CsbmParams& p, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "direction"));
  Vector u(p.feature_dim());
  for (Eigen::Index k = 0; k < u.size(); ++k) u[k] = normal(rng);
  return u.normalized();
}

GraphSample gen_csbm(const CsbmParams& p, std::uint64_t seed, const Vector* u) {
  p.validate();
  Rng rng(seed);
  CsbmTopology t = csbm_topology(p, rng);
  GraphSample s;
  s.features = csbm_features(p, t.v, p.mu, rng, u);
  s.graph = std::move(t.graph);
  s.label = 1;
  s.meta = csbm_meta(p);
  s.meta["v"] = t.v;
  s.meta["resamples"] = t.resamples;
  return s;
}

RewireResult rewire_null(const Graph& g, int swaps, std::uint64_t seed, int max_attempts) {
  if (!g.is_connected()) throw std::invalid_argument("rewiring needs a connected graph");
  if (swaps < 0) throw std::invalid_argument("swap count must be non-negative");
  if (max_attempts < 0) max_attempts = 100 * std::max(swaps, 1);
  const int n = g.num_nodes();
  std::vector<Edge> edges = g.edge_list();
  RewireResult r;
  if (edges.size() < 2 || swaps == 0) {
    r.graph = g;
    r.exhausted = swaps > 0;
    return r;
  }
  auto key = [n](int a, int b) {
    return static_cast<std::uint64_t>(std::min(a, b)) * n + std::max(a, b);
  };
  std::unordered_set<std::uint64_t> present;
  std::vector<std::vector<int>> adj(n);
  for (const Edge& e : edges) {
    present.insert(key(e.u, e.v));
    adj[e.u].push_back(e.v);
    adj[e.v].push_back(e.u);
  }
  auto unlink = [&](int a, int b) {
    adj[a].erase(std::find(adj[a].begin(), adj[a].end(), b));
    adj[b].erase(std::find(adj[b].begin(), adj[b].end(), a));
  };
  auto link = [&](int a, int b) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  };
  auto connected = [&]() {
    std::vector<char> seen(n, 0);
    std::vector<int> queue{0};
    seen[0] = 1;
    for (std::size_t h = 0; h < queue.size(); ++h)
      for (int w : adj[queue[h]])
        if (!seen[w]) {
          seen[w] = 1;
          queue.push_back(w);
        }
    return static_cast<int>(queue.size()) == n;
  };

  Rng rng(seed);
  const int m = static_cast<int>(edges.size());
  while (r.accepted < swaps && r.attempted < max_attempts) {
    ++r.attempted;
    const int i = uniform_int(rng, 0, m - 1);
    const int j = uniform_int(rng, 0, m - 1);
    if (i == j) continue;
    int a = edges[i].u, b = edges[i].v;
    int c = edges[j].u, d = edges[j].v;
    if (uniform_int(rng, 0, 1)) std::swap(c, d);
    // (a, b), (c, d) -> (a, d), (c, b)
    if (a == d || c == b || present.count(key(a, d)) || present.count(key(c, b))) continue;
    unlink(a, b);
    unlink(c, d);
    link(a, d);
    link(c, b);
    if (!connected()) {
      unlink(a, d);
      unlink(c, b);
      link(a, b);
      link(c, d);
      continue;
    }
    present.erase(key(a, b));
    present.erase(key(c, d));
    present.insert(key(a, d));
    present.insert(key(c, b));
    edges[i] = {std::min(a, d), std::max(a, d)};
    edges[j] = {std::min(c, b), std::max(c, b)};
    ++r.accepted;
  }
  r.exhausted = r.accepted < swaps;
  r.graph = Graph::from_edges(n, edges);
  return r;
}

Dataset gen_csbm_task(const CsbmParams& p, int count, std::uint64_t seed) {
  p.validate();
  if (count < 2 || count % 2 != 0) throw std::invalid_argument("CSBM task count must be even");
  nlohmann::json params = csbm_meta(p);
  params["count"] = count;
  params["max_resample"] = p.max_resample;
  params["num_classes"] = 2;
  params["swaps_per_edge"] = 10;
  const Vector u = csbm_direction(p, seed);
  const bool shared = p.direction_scope == "dataset";
  if (shared) params["direction"] = std::vector<double>(u.data(), u.data() + u.size());
  Dataset d = make_header("csbm", "classification", std::move(params), seed);
  for (int i = 0; i < count; ++i) {
    const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(i));
    if (i % 2 == 1) {
      d.samples.push_back(gen_csbm(p, s, shared ? &u : nullptr));
      continue;
    }
    Rng rng(s);
    CsbmTopology t = csbm_topology(p, rng);
    const int swaps = 10 * static_cast<int>(t.graph.num_edges());
    RewireResult rw = rewire_null(t.graph, swaps, derive_seed(s, "rewire"));
    GraphSample g;
    g.features = csbm_features(p, t.v, 0.0, rng, nullptr);
    g.graph = std::move(rw.graph);
    g.label = 0;
    g.meta = csbm_meta(p);
    g.meta["mu"] = 0.0;
    g.meta["resamples"] = t.resamples;
    g.meta["swaps_requested"] = swaps;
    g.meta["swaps_accepted"] = rw.accepted;
    g.meta["swaps_attempted"] = rw.attempted;
    d.samples.push_back(std::move(g));
  }
  Rng rng(derive_seed(seed, "shuffle"));
  shuffle(d.samples, rng);
  return d;
}

// ---------------------------------------------------------------- diameter

Dataset gen_diameter(const DiameterParams& p, std::uint64_t seed) {
  if (p.count < 1 || p.diam_min < 2 || p.diam_max < p.diam_min || p.n_max < p.diam_max + 1) {
    throw std::invalid_argument("invalid diameter family parameters");
  }
  Dataset d = make_header("diameter", "regression",
                          {{"count", p.count},
                           {"diam_min", p.diam_min},
                           {"diam_max", p.diam_max},
                           {"n_max", p.n_max},
                           {"families", {"tree", "path_with_blobs", "sparse_random"}}},
                          seed);
  static const char* kFamilies[] = {"tree", "path_with_blobs", "sparse_random"};
  for (int i = 0; i < p.count; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const int family = i % 3;
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 1000) throw std::runtime_error("diameter generator exceeded its budget");
      const int D = uniform_int(rng, p.diam_min, p.diam_max);
      Builder g(D + 1);
      for (int k = 0; k < D; ++k) g.add(k, k + 1);
      const int room = p.n_max - (D + 1);
      if (family == 0) {
        const int extra = uniform_int(rng, 0, std::min(room, D + 1));
        for (int k = 0; k < extra; ++k) {
          const int parent = uniform_int(rng, 0, g.n - 1);
          g.add(parent, g.add_node());
        }
      } else if (family == 1) {
        const int blobs = uniform_int(rng, 1, 4);
        for (int b = 0; b < blobs; ++b) {
          const int size = uniform_int(rng, 3, 6);
          if (g.n + size > p.n_max) break;
          const int at = uniform_int(rng, 0, D);
          std::vector<int> nodes;
          for (int k = 0; k < size; ++k) nodes.push_back(g.add_node());
          for (int x = 0; x < size; ++x)
            for (int y = x + 1; y < size; ++y)
              if (y == x + 1 || uniform(rng, 0.0, 1.0) < 0.6) g.add(nodes[x], nodes[y]);
          g.add(at, nodes[uniform_int(rng, 0, size - 1)]);
        }
      } else {
        const int extra = uniform_int(rng, 0, std::min(room, D + 1));
        for (int k = 0; k < extra; ++k) {
          const int parent = uniform_int(rng, 0, g.n - 1);
          g.add(parent, g.add_node());
        }
        const int chords = uniform_int(rng, 1, std::max(1, D / 5));
        for (int k = 0; k < chords; ++k) g.add(uniform_int(rng, 0, g.n - 1), uniform_int(rng, 0, g.n - 1));
      }
      const int n = g.n;
      const std::vector<int> perm = permutation(n, rng);
      GraphSample s;
      s.graph = relabel(n, g.edges, perm);
      const int diam = diameter(s.graph);
      if (diam < p.diam_min || diam > p.diam_max) continue;
      s.features = ones(n);
      s.label = diam;
      s.meta = {{"family", kFamilies[family]}, {"backbone_length", D}};
      d.samples.push_back(std::move(s));
      break;
    }
  }
  Rng rng(derive_seed(seed, "shuffle"));
  shuffle(d.samples, rng);
  return d;
}

// ---------------------------------------------------------------- splits

namespace {

Dataset empty_like(const Dataset& d, const std::string& split) {
  Dataset out;
  out.generator = d.generator;
  out.task = d.task;
  out.params = d.params;
  out.seed = d.seed;
  out.split = split;
  return out;
}

// Position of each sample in label-sorted order.
std::vector<int> stratified_rank(const Dataset& d) {
  std::vector<int> order(d.samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return d.samples[a].label < d.samples[b].label; });
  std::vector<int> rank(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) rank[order[k]] = static_cast<int>(k);
  return rank;
}

}  // namespace

DatasetSplits split_dataset(const Dataset& d) {
  DatasetSplits s{empty_like(d, "train"), empty_like(d, "val"), empty_like(d, "test")};
  const std::vector<int> rank = stratified_rank(d);
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const int r = rank[i] % 10;
    (r < 8 ? s.train : r == 8 ? s.val : s.test).samples.push_back(d.samples[i]);
  }
  return s;
}

DatasetSplits fold_split(const Dataset& d, int folds, int fold) {
  if (folds < 2 || fold < 0 || fold >= folds) throw std::invalid_argument("invalid fold");
  DatasetSplits s{empty_like(d, "train"), empty_like(d, "val"), empty_like(d, "test")};
  const std::vector<int> rank = stratified_rank(d);
  // The fold after the test fold provides the validation part.
  const int val_fold = (fold + 1) % folds;
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const int f = rank[i] % folds;
    (f == fold ? s.test : f == val_fold ? s.val : s.train).samples.push_back(d.samples[i]);
  }
  return s;
}

// ---------------------------------------------------------------- JSONL

nlohmann::json sample_to_json(const GraphSample& s, bool integer_label) {
  nlohmann::json j = graph_to_json(s.graph);
  auto rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < s.features.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Eigen::Index k = 0; k < s.features.cols(); ++k) row.push_back(s.features(i, k));
    rows.push_back(std::move(row));
  }
  j["features"] = std::move(rows);
  if (integer_label) {
    j["label"] = static_cast<long>(std::lround(s.label));
  } else {
    j["label"] = s.label;
  }
  j["meta"] = s.meta;
  return j;
}

GraphSample sample_from_json(const nlohmann::json& j) {
  GraphSample s;
  s.graph = graph_from_json(j);
  const auto& rows = j.at("features");
  const int n = s.graph.num_nodes();
  if (!rows.is_array() || static_cast<int>(rows.size()) != n) {
    throw std::invalid_argument("features must have one row per node");
  }
  const int dim = n > 0 ? static_cast<int>(rows[0].size()) : 0;
  s.features.resize(n, dim);
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(rows[i].size()) != dim) throw std::invalid_argument("ragged feature rows");
    for (int k = 0; k < dim; ++k) s.features(i, k) = rows[i][k].get<double>();
  }
  s.label = j.at("label").get<double>();
  if (j.contains("meta")) s.meta = j["meta"];
  return s;
}

std::string to_jsonl(const Dataset& d) {
  nlohmann::json header = {{"schema_version", kDatasetSchemaVersion},
                           {"generator", d.generator},
                           {"task", d.task},
                           {"params", d.params},
                           {"seed", d.seed}};
  if (!d.split.empty()) header["split"] = d.split;
  std::string out = header.dump() + "\n";
  for (const auto& s : d.samples) out += sample_to_json(s, d.is_classification()).dump() + "\n";
  return out;
}

Dataset parse_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  Dataset d;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      if (!have_header) {
        const int version = j.at("schema_version").get<int>();
        if (version != kDatasetSchemaVersion) {
          throw std::runtime_error("schema version mismatch: file has " + std::to_string(version) +
                                   ", expected " + std::to_string(kDatasetSchemaVersion));
        }
        d.generator = j.at("generator").get<std::string>();
        d.task = j.value("task", std::string("classification"));
        d.params = j.value("params", nlohmann::json::object());
        d.seed = j.at("seed").get<std::uint64_t>();
        d.split = j.value("split", std::string());
        have_header = true;
      } else {
        d.samples.push_back(sample_from_json(j));
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_header) throw std::runtime_error("dataset file has no header line");
  return d;
}

void save_jsonl(const std::string& path, const Dataset& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << to_jsonl(d);
  if (!out) throw std::runtime_error("write failed: " + path);
}

Dataset load_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_jsonl(buf.str());
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

}  // namespace tikhonov
