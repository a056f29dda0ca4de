#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tikhonov/datasets.hpp"
#include "tikhonov/model.hpp"

namespace tikhonov {

inline constexpr int kCheckpointSchemaVersion = 1;

struct TrainConfig {
  double lr = 5e-3;
  int batch_size = 64;
  int patience = 50;
  int max_epochs = 200;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::CrossEntropy;
  double max_seconds = 0.0;  // wall-clock budget, 0 for none
  bool verbose = false;

  void validate() const;
};

// Standard Adam with bias correction.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // Throws std::runtime_error naming the tensor when a gradient is not finite.
  void step(const std::vector<std::pair<std::string, Matrix*>>& params,
            const std::vector<const Matrix*>& grads);
  void step(ModelParams& params, const ModelParams& grads);

  long steps() const { return t_; }
  double lr() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

// A dataset with cached Laplacians, ready for the model.
struct PreparedGraph {
  std::shared_ptr<const LaplacianData> lap;
  Matrix X;
  double label = 0.0;
};
using PreparedSet = std::vector<PreparedGraph>;

// max_power bounds the cached diag(L^j); the exact preconditioner wants
// the filter degree.
PreparedSet prepare(const Dataset& d, int max_power);

struct EvalResult {
  double loss = 0.0;
  double metric = 0.0;  // accuracy or MAE
  std::vector<double> predictions;  // class index or value
  int unconverged = 0;
};

EvalResult evaluate(const PreparedSet& data, const ModelParams& params, const ModelConfig& cfg,
                    LossKind loss, int batch_size = 128);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_metric = 0.0;
  int unconverged = 0;
};

struct TrainReport {
  std::string metric = "accuracy";  // accuracy | mae
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  double test_loss = 0.0;
  double test_metric = 0.0;
  int epochs_run = 0;
  std::string stop_reason;  // patience | max_epochs | time_budget | diverged
  bool diverged = false;

  nlohmann::json to_json() const;
};

struct TrainResult {
  ModelParams params;  // best-validation parameters
  TrainReport report;
};

// Early stopping on validation loss; the best parameters are restored
// before the test evaluation. Never throws on divergence: the report says so.
TrainResult train(const ModelConfig& cfg, const TrainConfig& tc, const PreparedSet& train_set,
                  const PreparedSet& val_set, const PreparedSet& test_set);

// Same, starting from given parameters.
TrainResult train_from(const ModelConfig& cfg, ModelParams init, const TrainConfig& tc,
                       const PreparedSet& train_set, const PreparedSet& val_set,
                       const PreparedSet& test_set);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// {"schema_version", "config", "params": {name: {"shape": [r, c], "data": [...]}}}
// with row-major data.
nlohmann::json checkpoint_to_json(const ModelConfig& cfg, const ModelParams& params);
std::pair<ModelConfig, ModelParams> checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ModelParams& params);
std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& path);

// Per-node q (after clamping) for every channel, filter curves, the graph,
// prediction and label.
nlohmann::json export_explanation(const ModelParams& params, const ModelConfig& cfg,
                                  const GraphSample& sample, int graph_id = 0);

// Median of q over the nodes in `marked` and over the rest, for channel 0.
struct MarkedQStats {
  double marked_median = 0.0;
  double other_median = 0.0;
  double ratio() const;  // max(a/b, b/a)
};
MarkedQStats marked_q_stats(const std::vector<nlohmann::json>& explanations,
                            const std::string& meta_key);

double median(std::vector<double> v);

}  // namespace tikhonov
