#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "tikhonov/training.hpp"

namespace tikhonov {

// Model and training defaults for a generator, sized to the dataset.
struct Preset {
  ModelConfig model;
  TrainConfig train;
};

// generator: colors | clique_distance | triangles | csbm | diameter
Preset task_preset(const std::string& generator, const Dataset& d);

// Test predictions of the mean training label; the MAE a regressor must beat.
double mean_baseline_mae(const Dataset& train, const Dataset& test);

struct CsbmFold {
  int fold = 0;
  double accuracy = 0.0;
  double median_q = 0.0;
  int epochs_run = 0;
};

struct CsbmCellResult {
  double lambda = 0.0;
  double mu_over_sqrtgamma = 0.0;
  double accuracy = 0.0;  // mean over folds
  double median_q = 0.0;  // over all test nodes of all folds, channel 0
  std::vector<CsbmFold> folds;

  bool blank() const { return accuracy < 0.56; }
  nlohmann::json to_json() const;
};

struct CsbmCellOptions {
  CsbmParams params;  // lambda and mu are set per cell
  int count = 600;
  int folds = 5;
  int run_folds = 3;  // the first run_folds folds are trained
  std::uint64_t seed = 0;
};

// Generates the cell's task, trains once per fold with `preset` and collects
// accuracy and the median learned q over test nodes.
CsbmCellResult run_csbm_cell(double lambda, double mu_over_sqrtgamma, const CsbmCellOptions& o,
                             const Preset& preset);

// PCG cost on connected random graphs of fixed average degree, for a fixed
// high-pass filter of each degree.
struct BenchRow {
  int n = 0;
  long m = 0;
  int K = 0;
  double tol = 0.0;
  std::string precond;
  int reps = 0;
  double mean_iters = 0.0;
  double mean_ms = 0.0;  // wall clock, the only nondeterministic column
};

struct BenchOptions {
  std::vector<int> sizes = {100, 200, 400, 800};
  double avg_degree = 6.0;
  std::vector<int> degrees = {5};
  std::vector<double> tols = {1e-6, 1e-10};
  double q = 0.1;
  int reps = 3;
  int columns = 8;
  std::uint64_t seed = 0;
};

std::vector<BenchRow> run_bench(const BenchOptions& o);

}  // namespace tikhonov
