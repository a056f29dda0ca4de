#include "tikhonov/model.hpp"

#include <cmath>
#include <stdexcept>

namespace tikhonov {

namespace {

Matrix glorot(int rows, int cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / (rows + cols));
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = uniform(rng, -limit, limit);
  return m;
}

bool uses_layer_norm(PoolMode m) { return m == PoolMode::MeanSumMaxLayerNorm; }
bool uses_batch_norm(PoolMode m) { return m == PoolMode::SumSumsqBatchNorm; }

int pool_factor(PoolMode m) {
  switch (m) {
    case PoolMode::Mean:
    case PoolMode::Sum:
    case PoolMode::Max:
      return 1;
    case PoolMode::MeanSumMaxLayerNorm:
      return 3;
    case PoolMode::SumSumsqBatchNorm:
      return 2;
  }
  return 1;
}

// Pools one graph's rows; argmax receives the row of each max entry.
Matrix pool_rows(const Matrix& A, PoolMode mode, std::vector<int>* argmax) {
  const Eigen::Index h = A.cols();
  const double n = static_cast<double>(A.rows());
  auto max_part = [&](Eigen::Ref<Matrix> out) {
    if (argmax) argmax->assign(h, 0);
    for (Eigen::Index c = 0; c < h; ++c) {
      Eigen::Index r = 0;
      out(0, c) = A.col(c).maxCoeff(&r);
      if (argmax) (*argmax)[c] = static_cast<int>(r);
    }
  };
  Matrix out(1, h * pool_factor(mode));
  switch (mode) {
    case PoolMode::Mean:
      out = A.colwise().sum() / n;
      break;
    case PoolMode::Sum:
      out = A.colwise().sum();
      break;
    case PoolMode::Max:
      max_part(out);
      break;
    case PoolMode::MeanSumMaxLayerNorm:
      out.leftCols(h) = A.colwise().sum() / n;
      out.middleCols(h, h) = A.colwise().sum();
      max_part(out.rightCols(h));
      break;
    case PoolMode::SumSumsqBatchNorm:
      out.leftCols(h) = A.colwise().sum();
      out.rightCols(h) = A.array().square().matrix().colwise().sum();
      break;
  }
  return out;
}

// Adds the pooling gradient for one graph into dA.
void pool_rows_backward(const Matrix& A, PoolMode mode, const std::vector<int>& argmax,
                        const Matrix& dv, Matrix& dA) {
  const Eigen::Index h = A.cols();
  const double n = static_cast<double>(A.rows());
  auto max_back = [&](const Matrix& d) {
    for (Eigen::Index c = 0; c < h; ++c) dA(argmax[c], c) += d(0, c);
  };
  switch (mode) {
    case PoolMode::Mean:
      dA.rowwise() += dv.row(0) / n;
      break;
    case PoolMode::Sum:
      dA.rowwise() += dv.row(0);
      break;
    case PoolMode::Max:
      max_back(dv);
      break;
    case PoolMode::MeanSumMaxLayerNorm:
      dA.rowwise() += dv.leftCols(h).row(0) / n + dv.middleCols(h, h).row(0);
      max_back(dv.rightCols(h));
      break;
    case PoolMode::SumSumsqBatchNorm:
      dA.rowwise() += dv.leftCols(h).row(0);
      dA.array() += 2.0 * A.array() * dv.rightCols(h).replicate(A.rows(), 1).array();
      break;
  }
}

}  // namespace

PoolMode parse_pool_mode(const std::string& s) {
  if (s == "mean") return PoolMode::Mean;
  if (s == "sum") return PoolMode::Sum;
  if (s == "max") return PoolMode::Max;
  if (s == "mean_sum_max_layernorm") return PoolMode::MeanSumMaxLayerNorm;
  if (s == "sum_sumsq_batchnorm") return PoolMode::SumSumsqBatchNorm;
  throw std::invalid_argument("unknown pooling mode '" + s + "'");
}

std::string to_string(PoolMode m) {
  switch (m) {
    case PoolMode::Mean: return "mean";
    case PoolMode::Sum: return "sum";
    case PoolMode::Max: return "max";
    case PoolMode::MeanSumMaxLayerNorm: return "mean_sum_max_layernorm";
    case PoolMode::SumSumsqBatchNorm: return "sum_sumsq_batchnorm";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "cross_entropy") return LossKind::CrossEntropy;
  if (s == "mae") return LossKind::MAE;
  if (s == "mse") return LossKind::MSE;
  throw std::invalid_argument("unknown loss '" + s + "'");
}

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::CrossEntropy: return "cross_entropy";
    case LossKind::MAE: return "mae";
    case LossKind::MSE: return "mse";
  }
  return "?";
}

int ModelConfig::pooled_width() const { return hidden * channels * pool_factor(pool); }

ModelParams ModelParams::init(const ModelConfig& cfg, Rng& rng) {
  if (cfg.in_dim < 1 || cfg.hidden < 1 || cfg.channels < 1 || cfg.out_dim < 1 ||
      cfg.filter_degree < 1) {
    throw std::invalid_argument("invalid model configuration");
  }
  ModelParams p;
  p.W = glorot(cfg.in_dim, cfg.hidden, rng);
  p.bW = Matrix::Zero(1, cfg.hidden);
  for (int j = 0; j < cfg.channels; ++j) {
    p.qnets.push_back(QNetParams::init(cfg.in_dim, cfg.qnet, rng));
    BernsteinFilter f = cfg.filter_init == "flat"     ? BernsteinFilter::flat(cfg.filter_degree)
                        : cfg.filter_init == "linear" ? BernsteinFilter::linear(cfg.filter_degree)
                                                      : throw std::invalid_argument(
                                                            "unknown filter init '" +
                                                            cfg.filter_init + "'");
    p.thetas.push_back(f.theta());
  }
  const int P = cfg.pooled_width();
  if (uses_layer_norm(cfg.pool) || uses_batch_norm(cfg.pool)) {
    p.norm_gamma = Matrix::Ones(1, P);
    p.norm_beta = Matrix::Zero(1, P);
  }
  if (uses_batch_norm(cfg.pool)) {
    p.bn_mean = Matrix::Zero(1, P);
    p.bn_var = Matrix::Ones(1, P);
  }
  p.head_W1 = glorot(P, P, rng);
  p.head_b1 = Matrix::Zero(1, P);
  p.head_W2 = glorot(P, cfg.out_dim, rng);
  p.head_b2 = Matrix::Zero(1, cfg.out_dim);
  p.filter_trainable = !cfg.fixed_filter;
  return p;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  z.visit_all([](const std::string&, Matrix& m) { m.setZero(); });
  return z;
}

BernsteinFilter ModelParams::filter(int channel) const {
  return BernsteinFilter(thetas.at(channel).col(0));
}

void ModelParams::visit(const std::function<void(const std::string&, Matrix&)>& fn) {
  fn("W", W);
  fn("bW", bW);
  for (std::size_t j = 0; j < qnets.size(); ++j) {
    qnets[j].visit("qnet" + std::to_string(j) + ".", fn);
  }
  if (filter_trainable) {
    for (std::size_t j = 0; j < thetas.size(); ++j) fn("theta" + std::to_string(j), thetas[j]);
  }
  if (norm_gamma.size() > 0) {
    fn("norm.gamma", norm_gamma);
    fn("norm.beta", norm_beta);
  }
  fn("head.W1", head_W1);
  fn("head.b1", head_b1);
  fn("head.W2", head_W2);
  fn("head.b2", head_b2);
}

void ModelParams::visit(const std::function<void(const std::string&, const Matrix&)>& fn) const {
  const_cast<ModelParams*>(this)->visit([&](const std::string& n, Matrix& m) { fn(n, m); });
}

void ModelParams::visit_all(const std::function<void(const std::string&, Matrix&)>& fn) {
  visit(fn);
  if (!filter_trainable) {
    for (std::size_t j = 0; j < thetas.size(); ++j) fn("theta" + std::to_string(j), thetas[j]);
  }
  if (bn_mean.size() > 0) {
    fn("bn.running_mean", bn_mean);
    fn("bn.running_var", bn_var);
  }
}

void ModelParams::visit_all(
    const std::function<void(const std::string&, const Matrix&)>& fn) const {
  const_cast<ModelParams*>(this)->visit_all([&](const std::string& n, Matrix& m) { fn(n, m); });
}

Matrix pool(const Matrix& Z, const std::vector<int>& graph_of, int num_graphs, PoolMode mode) {
  if (static_cast<Eigen::Index>(graph_of.size()) != Z.rows()) {
    throw std::invalid_argument("graph_of must have one entry per row");
  }
  std::vector<std::vector<int>> rows(num_graphs);
  for (std::size_t i = 0; i < graph_of.size(); ++i) {
    if (graph_of[i] < 0 || graph_of[i] >= num_graphs) throw std::invalid_argument("bad graph id");
    rows[graph_of[i]].push_back(static_cast<int>(i));
  }
  Matrix out(num_graphs, Z.cols() * pool_factor(mode));
  for (int g = 0; g < num_graphs; ++g) {
    if (rows[g].empty()) throw std::invalid_argument("graph without nodes");
    Matrix sub(rows[g].size(), Z.cols());
    for (std::size_t r = 0; r < rows[g].size(); ++r) sub.row(r) = Z.row(rows[g][r]);
    out.row(g) = pool_rows(sub, mode, nullptr);
  }
  return out;
}

Matrix model_forward(const std::vector<ModelInput>& batch, const ModelParams& params,
                     const ModelConfig& cfg, const ForwardOptions& opts, ModelTape* tape) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const int J = cfg.channels;
  if (!opts.channel_scale.empty() && static_cast<int>(opts.channel_scale.size()) != J) {
    throw std::invalid_argument("channel_scale needs one entry per channel");
  }
  const int B = static_cast<int>(batch.size());
  const int P = cfg.pooled_width();
  const int h = cfg.hidden;
  std::vector<BernsteinFilter> filters;
  for (int j = 0; j < J; ++j) filters.push_back(params.filter(j));

  ModelTape local;
  ModelTape& t = tape ? *tape : local;
  t = ModelTape{};
  t.training = opts.training;
  t.graphs.resize(B);
  t.pooled.resize(B, P);

  for (int b = 0; b < B; ++b) {
    const ModelInput& in = batch[b];
    const Matrix& X = *in.X;
    const SparseMatrix& L = in.lap->L;
    if (X.rows() != in.lap->size() || X.cols() != cfg.in_dim) {
      throw std::invalid_argument("input features do not match the model");
    }
    GraphTape& gt = t.graphs[b];
    gt.H = X * params.W;
    gt.H.rowwise() += params.bW.row(0);
    Matrix Zc(X.rows(), static_cast<Eigen::Index>(h) * J);
    for (int j = 0; j < J; ++j) {
      gt.qtapes.emplace_back();
      const Vector qt = qnet_forward(L, X, params.qnets[j], &gt.qtapes.back());
      gt.q.push_back(clamp_q(qt, cfg.q_min, cfg.q_max));
      if (opts.channel_scale.empty()) {
        gt.ops.emplace_back(in.lap, filters[j], gt.q.back().q, cfg.solver.precond);
      } else {
        const double a = opts.channel_scale[j];
        gt.ops.push_back(TikhonovOperator::from_monomial(
            in.lap, a * filters[j].monomial_coeffs(), a * gt.q.back().q, cfg.solver.precond));
      }
      SolveResult res = forward(gt.ops.back(), gt.H, cfg.solver);
      for (int c = 0; c < res.z.cols(); ++c) {
        if (!res.converged[c]) ++t.unconverged;
        if (opts.trace) {
          opts.trace->push_back({opts.graph_id_offset + b, j, c, res.iterations[c],
                                 res.residual[c], static_cast<bool>(res.converged[c])});
        }
      }
      Zc.middleCols(static_cast<Eigen::Index>(j) * h, h) = res.z;
      gt.Z.push_back(std::move(res.z));
    }
    gt.A = Zc.cwiseMax(0.0);
    t.pooled.row(b) = pool_rows(gt.A, cfg.pool, &gt.argmax);
  }

  const double eps = cfg.norm_eps;
  if (uses_layer_norm(cfg.pool)) {
    t.norm_xhat.resize(B, P);
    t.norm_inv_std.resize(B, 1);
    for (int b = 0; b < B; ++b) {
      const double mu = t.pooled.row(b).mean();
      const double var = (t.pooled.row(b).array() - mu).square().mean();
      t.norm_inv_std(b, 0) = 1.0 / std::sqrt(var + eps);
      t.norm_xhat.row(b) = (t.pooled.row(b).array() - mu) * t.norm_inv_std(b, 0);
    }
    t.normalized = (t.norm_xhat.array().rowwise() * params.norm_gamma.row(0).array()).rowwise() +
                   params.norm_beta.row(0).array();
  } else if (uses_batch_norm(cfg.pool)) {
    Matrix mean, var;
    if (opts.training) {
      mean = t.pooled.colwise().mean();
      var = (t.pooled.rowwise() - mean.row(0)).array().square().matrix().colwise().mean();
      t.batch_mean = mean;
      t.batch_var = var;
    } else {
      mean = params.bn_mean;
      var = params.bn_var;
    }
    t.norm_inv_std = (var.array() + eps).rsqrt();
    t.norm_xhat = (t.pooled.rowwise() - mean.row(0)).array().rowwise() *
                  t.norm_inv_std.row(0).array();
    t.normalized = (t.norm_xhat.array().rowwise() * params.norm_gamma.row(0).array()).rowwise() +
                   params.norm_beta.row(0).array();
  } else {
    t.normalized = t.pooled;
  }

  Matrix hid = t.normalized * params.head_W1;
  hid.rowwise() += params.head_b1.row(0);
  t.head_hidden = hid.cwiseMax(0.0);
  Matrix pred = t.head_hidden * params.head_W2;
  pred.rowwise() += params.head_b2.row(0);
  return pred;
}

void model_backward(const std::vector<ModelInput>& batch, const ModelParams& params,
                    const ModelConfig& cfg, const ModelTape& tape, const Matrix& dpred,
                    ModelParams& grads) {
  const int B = static_cast<int>(batch.size());
  if (static_cast<int>(tape.graphs.size()) != B || dpred.rows() != B) {
    throw std::invalid_argument("tape does not match this batch");
  }
  const int h = cfg.hidden;

  grads.head_W2.noalias() += tape.head_hidden.transpose() * dpred;
  grads.head_b2 += dpred.colwise().sum();
  Matrix dhid = dpred * params.head_W2.transpose();
  dhid.array() *= (tape.head_hidden.array() > 0.0).cast<double>();
  grads.head_W1.noalias() += tape.normalized.transpose() * dhid;
  grads.head_b1 += dhid.colwise().sum();
  const Matrix dnorm = dhid * params.head_W1.transpose();

  Matrix dpooled;
  if (uses_layer_norm(cfg.pool) || uses_batch_norm(cfg.pool)) {
    grads.norm_gamma += dnorm.cwiseProduct(tape.norm_xhat).colwise().sum();
    grads.norm_beta += dnorm.colwise().sum();
    const Matrix dxhat = dnorm.array().rowwise() * params.norm_gamma.row(0).array();
    if (uses_layer_norm(cfg.pool)) {
      dpooled.resize(dxhat.rows(), dxhat.cols());
      for (int b = 0; b < B; ++b) {
        const double m1 = dxhat.row(b).mean();
        const double m2 = dxhat.row(b).cwiseProduct(tape.norm_xhat.row(b)).mean();
        dpooled.row(b) = tape.norm_inv_std(b, 0) *
                         (dxhat.row(b).array() - m1 - tape.norm_xhat.row(b).array() * m2).matrix();
      }
    } else if (tape.training) {
      const Matrix m1 = dxhat.colwise().mean();
      const Matrix m2 = dxhat.cwiseProduct(tape.norm_xhat).colwise().mean();
      dpooled = ((dxhat.rowwise() - m1.row(0)).array() -
                 tape.norm_xhat.array().rowwise() * m2.row(0).array())
                    .rowwise() *
                tape.norm_inv_std.row(0).array();
    } else {
      dpooled = dxhat.array().rowwise() * tape.norm_inv_std.row(0).array();
    }
  } else {
    dpooled = dnorm;
  }

  for (int b = 0; b < B; ++b) {
    const GraphTape& gt = tape.graphs[b];
    if (gt.ops.empty() || !gt.ops.front().filter()) {
      throw std::invalid_argument("backward is unavailable for raw-polynomial channels");
    }
    Matrix dA = Matrix::Zero(gt.A.rows(), gt.A.cols());
    pool_rows_backward(gt.A, cfg.pool, gt.argmax, dpooled.row(b), dA);
    dA.array() *= (gt.A.array() > 0.0).cast<double>();
    Matrix dH = Matrix::Zero(gt.H.rows(), gt.H.cols());
    for (int j = 0; j < cfg.channels; ++j) {
      const Matrix dZ = dA.middleCols(static_cast<Eigen::Index>(j) * h, h);
      if (dZ.isZero(0.0)) continue;
      TikhonovGrad g = backward(gt.ops[j], gt.H, gt.Z[j], dZ, cfg.solver);
      dH += g.dX;
      if (params.filter_trainable) grads.thetas[j] += g.dtheta;
      const Vector dqt = g.dq.cwiseProduct(gt.q[j].dq_dqtilde);
      qnet_backward(gt.qtapes[j], params.qnets[j], dqt, grads.qnets[j]);
    }
    grads.W.noalias() += batch[b].X->transpose() * dH;
    grads.bW += dH.colwise().sum();
  }
}

void update_running_stats(ModelParams& params, const ModelConfig& cfg, const ModelTape& tape) {
  if (!uses_batch_norm(cfg.pool) || !tape.training) return;
  const double m = cfg.bn_momentum;
  params.bn_mean = m * params.bn_mean + (1.0 - m) * tape.batch_mean;
  params.bn_var = m * params.bn_var + (1.0 - m) * tape.batch_var;
}

LossResult loss_and_grad(const Matrix& pred, const std::vector<double>& labels, LossKind kind) {
  const Eigen::Index B = pred.rows();
  if (static_cast<Eigen::Index>(labels.size()) != B || B == 0) {
    throw std::invalid_argument("one label per prediction row required");
  }
  LossResult r;
  r.dpred = Matrix::Zero(pred.rows(), pred.cols());
  if (kind == LossKind::CrossEntropy) {
    const Eigen::Index C = pred.cols();
    for (Eigen::Index b = 0; b < B; ++b) {
      const double y = labels[b];
      if (y != std::floor(y) || y < 0 || y >= static_cast<double>(C)) {
        throw std::invalid_argument("class label out of range");
      }
      const double mx = pred.row(b).maxCoeff();
      const Matrix e = (pred.row(b).array() - mx).exp();
      const double s = e.sum();
      r.loss += -(pred(b, static_cast<Eigen::Index>(y)) - mx - std::log(s));
      r.dpred.row(b) = e / s;
      r.dpred(b, static_cast<Eigen::Index>(y)) -= 1.0;
    }
  } else {
    if (pred.cols() != 1) throw std::invalid_argument("regression expects one output");
    for (Eigen::Index b = 0; b < B; ++b) {
      const double e = pred(b, 0) - labels[b];
      if (kind == LossKind::MAE) {
        r.loss += std::abs(e);
        r.dpred(b, 0) = e > 0 ? 1.0 : (e < 0 ? -1.0 : 0.0);
      } else {
        r.loss += e * e;
        r.dpred(b, 0) = 2.0 * e;
      }
    }
  }
  r.loss /= static_cast<double>(B);
  r.dpred /= static_cast<double>(B);
  return r;
}

}  // namespace tikhonov
