#include "tikhonov/experiments.hpp"

#include <chrono>
#include <cmath>
#include <set>
#include <stdexcept>

#include "tikhonov/rng.hpp"

namespace tikhonov {

Preset task_preset(const std::string& generator, const Dataset& d) {
  Preset p;
  ModelConfig& m = p.model;
  TrainConfig& t = p.train;
  m.filter_degree = 5;
  m.channels = 1;
  m.solver.tol = 1e-6;
  m.solver.max_iter = 30;
  t.loss = LossKind::CrossEntropy;
  if (generator == "colors") {
    m.hidden = 16;
    m.filter_init = "linear";
    m.qnet = {3, 3, 8, 1.0};
    m.pool = PoolMode::MeanSumMaxLayerNorm;
    t.batch_size = 64;
    t.patience = 50;
    t.lr = 5e-3;
    t.max_epochs = 300;
  } else if (generator == "clique_distance") {
    m.hidden = 8;
    m.filter_init = "flat";
    m.qnet = {5, 3, 8, 0.1};
    m.pool = PoolMode::MeanSumMaxLayerNorm;
    t.batch_size = 128;
    t.patience = 150;
    t.lr = 5e-3;
    t.max_epochs = 1000;
  } else if (generator == "triangles") {
    m.hidden = 8;
    m.filter_init = "linear";
    m.qnet = {5, 3, 8, 0.01};
    m.pool = PoolMode::MeanSumMaxLayerNorm;
    t.batch_size = 128;
    t.patience = 250;
    t.lr = 1e-3;
    t.max_epochs = 1500;
  } else if (generator == "csbm") {
    m.hidden = 16;
    m.filter_init = "linear";
    m.qnet = {3, 3, 8, 1.0};
    m.pool = PoolMode::SumSumsqBatchNorm;
    t.batch_size = 128;
    t.patience = 150;
    t.lr = 1e-3;
    t.max_epochs = 500;
  } else if (generator == "diameter") {
    m.hidden = 32;
    m.filter_init = "linear";
    m.qnet = {4, 3, 8, 0.001};
    m.pool = PoolMode::MeanSumMaxLayerNorm;
    m.solver.tol = 1e-14;
    m.solver.max_iter = 50;
    t.batch_size = 512;
    t.patience = 150;
    t.lr = 1e-2;
    t.max_epochs = 300;
    t.loss = LossKind::MAE;
  } else {
    throw std::invalid_argument("no preset for generator '" + generator + "'");
  }
  m.in_dim = d.feature_dim();
  m.out_dim = d.num_outputs();
  return p;
}

double mean_baseline_mae(const Dataset& train, const Dataset& test) {
  if (train.samples.empty() || test.samples.empty()) throw std::invalid_argument("empty split");
  double mean = 0.0;
  for (const auto& s : train.samples) mean += s.label;
  mean /= static_cast<double>(train.samples.size());
  double mae = 0.0;
  for (const auto& s : test.samples) mae += std::abs(s.label - mean);
  return mae / static_cast<double>(test.samples.size());
}

nlohmann::json CsbmCellResult::to_json() const {
  auto f = nlohmann::json::array();
  for (const auto& x : folds) {
    f.push_back({{"fold", x.fold},
                 {"accuracy", x.accuracy},
                 {"median_q", x.median_q},
                 {"epochs_run", x.epochs_run}});
  }
  return {{"lambda", lambda},
          {"mu_over_sqrtgamma", mu_over_sqrtgamma},
          {"accuracy", accuracy},
          {"median_q", median_q},
          {"blank", blank()},
          {"folds", std::move(f)}};
}

CsbmCellResult run_csbm_cell(double lambda, double mu_over_sqrtgamma, const CsbmCellOptions& o,
                             const Preset& preset) {
  if (o.run_folds < 1 || o.run_folds > o.folds) throw std::invalid_argument("bad fold count");
  CsbmParams p = o.params;
  p.lambda = lambda;
  p.mu = mu_over_sqrtgamma * std::sqrt(p.gamma);
  const Dataset d = gen_csbm_task(p, o.count, o.seed);
  const int power = std::max(2, preset.model.filter_degree);

  CsbmCellResult r;
  r.lambda = lambda;
  r.mu_over_sqrtgamma = mu_over_sqrtgamma;
  std::vector<double> all_q;
  for (int k = 0; k < o.run_folds; ++k) {
    const DatasetSplits s = fold_split(d, o.folds, k);
    TrainConfig tc = preset.train;
    tc.seed = derive_seed(o.seed, static_cast<std::uint64_t>(k));
    const TrainResult tr =
        train(preset.model, tc, prepare(s.train, power), prepare(s.val, power), prepare(s.test, power));
    std::vector<double> qs;
    for (const auto& g : s.test.samples) {
      const auto e = export_explanation(tr.params, preset.model, g);
      for (double q : e.at("q").at(0).get<std::vector<double>>()) qs.push_back(q);
    }
    all_q.insert(all_q.end(), qs.begin(), qs.end());
    r.folds.push_back({k, tr.report.test_metric, median(qs), tr.report.epochs_run});
    r.accuracy += tr.report.test_metric / o.run_folds;
  }
  r.median_q = median(all_q);
  return r;
}

namespace {

Graph bench_graph(int n, double avg_degree, Rng& rng) {
  // Random recursive tree plus uniform extra edges.
  std::vector<Edge> e;
  std::set<std::pair<int, int>> seen;
  for (int i = 1; i < n; ++i) {
    const int a = uniform_int(rng, 0, i - 1);
    e.push_back({a, i});
    seen.insert({a, i});
  }
  const long target = std::lround(avg_degree * n / 2.0);
  while (static_cast<long>(e.size()) < target) {
    int a = uniform_int(rng, 0, n - 1), b = uniform_int(rng, 0, n - 1);
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    if (!seen.insert({a, b}).second) continue;
    e.push_back({a, b});
  }
  return Graph::from_edges(n, e);
}

// Smooth high-pass with theta_k = 8 (k/K - 1/2).
BernsteinFilter bench_filter(int K) {
  Vector theta(K + 1);
  for (int k = 0; k <= K; ++k) theta[k] = 8.0 * (static_cast<double>(k) / K - 0.5);
  return BernsteinFilter(theta);
}

}  // namespace

std::vector<BenchRow> run_bench(const BenchOptions& o) {
  std::vector<BenchRow> rows;
  for (int n : o.sizes) {
    Rng grng(derive_seed(o.seed, static_cast<std::uint64_t>(n)));
    std::vector<Graph> graphs;
    for (int r = 0; r < o.reps; ++r) graphs.push_back(bench_graph(n, o.avg_degree, grng));
    for (int K : o.degrees) {
      std::vector<std::shared_ptr<const LaplacianData>> laps;
      for (const auto& g : graphs) laps.push_back(make_laplacian_data(g, std::max(2, K)));
      for (double tol : o.tols) {
        for (PrecondMode mode : {PrecondMode::Exact, PrecondMode::Approx}) {
          BenchRow row;
          row.n = n;
          row.K = K;
          row.tol = tol;
          row.precond = mode == PrecondMode::Exact ? "exact" : "approx";
          row.reps = o.reps;
          for (int r = 0; r < o.reps; ++r) {
            row.m += graphs[r].num_edges();
            Rng xr(derive_seed(o.seed, "x"));
            Matrix X(n, o.columns);
            for (Eigen::Index k = 0; k < X.size(); ++k) X.data()[k] = normal(xr);
            const TikhonovOperator op(laps[r], bench_filter(K), Vector::Constant(n, o.q), mode);
            SolverOptions so;
            so.tol = tol;
            so.max_iter = 10 * n;
            so.precond = mode;
            const auto t0 = std::chrono::steady_clock::now();
            const SolveResult res = forward(op, X, so);
            const auto t1 = std::chrono::steady_clock::now();
            row.mean_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();
            double it = 0.0;
            for (int c : res.iterations) it += c;
            row.mean_iters += it / static_cast<double>(res.iterations.size());
          }
          row.m /= o.reps;
          row.mean_iters /= o.reps;
          row.mean_ms /= o.reps;
          rows.push_back(row);
        }
      }
    }
  }
  return rows;
}

}  // namespace tikhonov
