#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "tikhonov/graph.hpp"
#include "tikhonov/rng.hpp"
#include "tikhonov/types.hpp"

namespace tikhonov {

inline constexpr int kDatasetSchemaVersion = 1;

struct GraphSample {
  Graph graph;
  Matrix features;  // n x d
  double label = 0.0;
  nlohmann::json meta = nlohmann::json::object();
};

struct Dataset {
  std::string generator;
  std::string task = "classification";  // classification | regression
  nlohmann::json params = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::string split;  // empty for a whole dataset
  std::vector<GraphSample> samples;

  bool is_classification() const { return task == "classification"; }
  // params["num_classes"] when present, else 1 + largest label; 1 for
  // regression.
  int num_outputs() const;
  int feature_dim() const;
};

struct CliqueDistanceParams {
  int count = 700;
  int clique_min = 3;
  int clique_max = 6;
  int path_min = 1;
  int path_max = 7;
  int threshold = 4;  // label 1 iff path length >= threshold
};

struct TrianglesParams {
  int count = 1000;
  int n_min = 12;
  int n_max = 24;
  double chord_fill = 0.8;  // fraction of nodes given a chord on the background cycle
  int max_attempts = 1000;
};

struct ColorsParams {
  int count = 1000;
  int n_min = 4;
  int n_max = 10;
  int num_colors = 3;
  double edge_prob = 0.3;
};

struct CsbmParams {
  int n = 100;
  double avg_degree = 10.0;
  double lambda = 1.0;
  double mu = 1.0;
  double gamma = 25.0;
  int max_resample = 1000;
  // "dataset": one feature direction u for every graph of a task;
  // "graph": a fresh u per graph.
  std::string direction_scope = "dataset";

  int feature_dim() const;
  double p_in() const;
  double p_out() const;
  void validate() const;
};

struct DiameterParams {
  int count = 1000;
  int diam_min = 4;
  int diam_max = 30;
  int n_max = 60;
};

// Exactly one of the generator families per call; every generator is a pure
// function of (params, seed).
Dataset gen_clique_distance(const CliqueDistanceParams& p, std::uint64_t seed);
Dataset gen_triangles(const TrianglesParams& p, std::uint64_t seed);
Dataset gen_colors(const ColorsParams& p, std::uint64_t seed);
Dataset gen_diameter(const DiameterParams& p, std::uint64_t seed);

// One connected class-1 CSBM sample. `u` fixes the feature direction;
// without it a fresh one is drawn.
GraphSample gen_csbm(const CsbmParams& p, std::uint64_t seed, const Vector* u = nullptr);

// The task-wide unit direction used when direction_scope is "dataset".
Vector csbm_direction(const CsbmParams& p, std::uint64_t seed);

struct RewireResult {
  Graph graph;
  int accepted = 0;
  int attempted = 0;
  bool exhausted = false;
};

// Degree- and connectivity-preserving double-edge swaps.
RewireResult rewire_null(const Graph& g, int swaps, std::uint64_t seed, int max_attempts = -1);

// count/2 CSBM samples (label 1) and count/2 rewired, signal-free samples (label 0).
Dataset gen_csbm_task(const CsbmParams& p, int count, std::uint64_t seed);

// Triangle count by neighbour-list intersection.
long count_triangles(const Graph& g);

// Label in {0, 1} equals the triangle count and meta "triangle_nodes" lists
// the triangle (empty for class 0).
bool valid_triangle_sample(const GraphSample& s);

// Stratified 80/10/10: stable sort by label, position mod 10 picks the split
// (0-7 train, 8 val, 9 test); each split keeps generation order.
struct DatasetSplits {
  Dataset train, val, test;
};
DatasetSplits split_dataset(const Dataset& d);

// Samples whose index mod folds == fold form the test part. Stratified the
// same way as split_dataset.
DatasetSplits fold_split(const Dataset& d, int folds, int fold);

nlohmann::json sample_to_json(const GraphSample& s, bool integer_label);
GraphSample sample_from_json(const nlohmann::json& j);

// Header line {"schema_version", "generator", "task", "params", "seed"} then
// one sample per line.
void save_jsonl(const std::string& path, const Dataset& d);
Dataset load_jsonl(const std::string& path);
std::string to_jsonl(const Dataset& d);
Dataset parse_jsonl(const std::string& text);

}  // namespace tikhonov
