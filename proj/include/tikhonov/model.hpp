#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tikhonov/bernstein.hpp"
#include "tikhonov/qnet.hpp"
#include "tikhonov/solver.hpp"

namespace tikhonov {

enum class PoolMode { Mean, Sum, Max, MeanSumMaxLayerNorm, SumSumsqBatchNorm };
enum class LossKind { CrossEntropy, MAE, MSE };

PoolMode parse_pool_mode(const std::string& s);
std::string to_string(PoolMode m);
LossKind parse_loss_kind(const std::string& s);
std::string to_string(LossKind k);

struct ModelConfig {
  int in_dim = 1;
  int hidden = 32;  // columns of W
  int channels = 1;
  int filter_degree = 5;
  std::string filter_init = "linear";  // linear | flat
  bool fixed_filter = false;           // keep p at its initial value
  QNetConfig qnet;
  PoolMode pool = PoolMode::MeanSumMaxLayerNorm;
  int out_dim = 2;  // classes, or 1 for regression
  double q_min = kDefaultQMin;
  double q_max = kDefaultQMax;
  SolverOptions solver;
  double norm_eps = 1e-5;
  double bn_momentum = 0.9;

  int pooled_width() const;
};

struct ModelParams {
  Matrix W, bW;  // in_dim x hidden, 1 x hidden
  std::vector<QNetParams> qnets;
  std::vector<Matrix> thetas;  // (K + 1) x 1 per channel
  Matrix norm_gamma, norm_beta;
  Matrix head_W1, head_b1, head_W2, head_b2;
  // Batch-norm running statistics; updated outside gradient steps.
  Matrix bn_mean, bn_var;
  bool filter_trainable = true;

  static ModelParams init(const ModelConfig& cfg, Rng& rng);
  ModelParams zeros_like() const;
  BernsteinFilter filter(int channel) const;

  // Trainable tensors in a fixed order. Names are stable checkpoint keys.
  void visit(const std::function<void(const std::string&, Matrix&)>& fn);
  void visit(const std::function<void(const std::string&, const Matrix&)>& fn) const;
  // Trainable tensors plus buffers (running statistics).
  void visit_all(const std::function<void(const std::string&, Matrix&)>& fn);
  void visit_all(const std::function<void(const std::string&, const Matrix&)>& fn) const;
};

// One graph ready for the model: cached Laplacian plus node features.
struct ModelInput {
  std::shared_ptr<const LaplacianData> lap;
  const Matrix* X = nullptr;
};

struct SolverTraceRecord {
  int graph_id = 0;
  int channel = 0;
  int col = 0;
  int iters = 0;
  double residual = 0.0;
  bool converged = false;
};

struct ForwardOptions {
  bool training = false;  // batch statistics for batch norm
  // Per-channel alpha: channel j uses (alpha p(L), alpha Q) as a raw operator.
  std::vector<double> channel_scale;
  std::vector<SolverTraceRecord>* trace = nullptr;
  int graph_id_offset = 0;
};

struct GraphTape {
  Matrix H;                          // X W + b
  std::vector<QNetTape> qtapes;      // per channel
  std::vector<NodeImportance> q;     // per channel
  std::vector<TikhonovOperator> ops; // per channel
  std::vector<Matrix> Z;             // per channel
  Matrix A;                          // ReLU of the concatenated Z
  std::vector<int> argmax;           // for max pooling, per pooled max column
};

struct ModelTape {
  std::vector<GraphTape> graphs;
  Matrix pooled;      // B x P before normalization
  Matrix normalized;  // B x P after normalization
  Matrix norm_xhat;   // standardized values
  Matrix norm_inv_std;  // B x 1 (layer norm) or 1 x P (batch norm)
  Matrix head_hidden;  // B x P after ReLU
  Matrix batch_mean, batch_var;  // batch-norm statistics of this batch
  bool training = false;
  int unconverged = 0;
};

// B x out_dim predictions (logits or regression values).
Matrix model_forward(const std::vector<ModelInput>& batch, const ModelParams& params,
                     const ModelConfig& cfg, const ForwardOptions& opts = {},
                     ModelTape* tape = nullptr);

// Accumulates dLoss/dparams into grads given dLoss/dprediction.
void model_backward(const std::vector<ModelInput>& batch, const ModelParams& params,
                    const ModelConfig& cfg, const ModelTape& tape, const Matrix& dpred,
                    ModelParams& grads);

// running = momentum running + (1 - momentum) batch.
void update_running_stats(ModelParams& params, const ModelConfig& cfg, const ModelTape& tape);

// Segment reduction of Z (n x h) into rows of a (#graphs x width) matrix.
Matrix pool(const Matrix& Z, const std::vector<int>& graph_of, int num_graphs, PoolMode mode);

struct LossResult {
  double loss = 0.0;
  Matrix dpred;
};

// Mean over the batch. Classification labels are class indices.
LossResult loss_and_grad(const Matrix& pred, const std::vector<double>& labels, LossKind kind);

}  // namespace tikhonov
