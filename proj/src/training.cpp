#include "tikhonov/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace tikhonov {

void TrainConfig::validate() const {
  if (!(lr > 0.0) || batch_size < 1 || patience < 1 || max_epochs < 1 || patience > max_epochs ||
      max_seconds < 0.0) {
    throw std::invalid_argument("invalid training configuration");
  }
}

// ---------------------------------------------------------------- Adam

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
}

void Adam::step(const std::vector<std::pair<std::string, Matrix*>>& params,
                const std::vector<const Matrix*>& grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Matrix::Zero(p.second->rows(), p.second->cols()));
      v_.push_back(Matrix::Zero(p.second->rows(), p.second->cols()));
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("parameter set changed between steps");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k]->rows() != params[k].second->rows() || grads[k]->cols() != params[k].second->cols()) {
      throw std::invalid_argument("gradient shape mismatch for " + params[k].first);
    }
    if (!grads[k]->allFinite()) {
      throw std::runtime_error("non-finite gradient in " + params[k].first);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Matrix& g = *grads[k];
    m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * g;
    v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * g.cwiseAbs2();
    params[k].second->array() -=
        lr_ * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + eps_);
  }
}

void Adam::step(ModelParams& params, const ModelParams& grads) {
  std::vector<std::pair<std::string, Matrix*>> ps;
  std::vector<const Matrix*> gs;
  params.visit([&](const std::string& name, Matrix& m) { ps.push_back({name, &m}); });
  grads.visit([&](const std::string&, const Matrix& m) { gs.push_back(&m); });
  step(ps, gs);
}

// ---------------------------------------------------------------- data

PreparedSet prepare(const Dataset& d, int max_power) {
  PreparedSet out;
  out.reserve(d.samples.size());
  for (const auto& s : d.samples) {
    out.push_back({make_laplacian_data(s.graph, std::max(2, max_power)), s.features, s.label});
  }
  return out;
}

namespace {

std::vector<ModelInput> inputs(const PreparedSet& data, const std::vector<int>& idx) {
  std::vector<ModelInput> b;
  b.reserve(idx.size());
  for (int i : idx) b.push_back({data[i].lap, &data[i].X});
  return b;
}

std::vector<double> labels(const PreparedSet& data, const std::vector<int>& idx) {
  std::vector<double> y;
  for (int i : idx) y.push_back(data[i].label);
  return y;
}

bool is_classification(LossKind k) { return k == LossKind::CrossEntropy; }

}  // namespace

EvalResult evaluate(const PreparedSet& data, const ModelParams& params, const ModelConfig& cfg,
                    LossKind loss, int batch_size) {
  if (data.empty()) throw std::invalid_argument("cannot evaluate an empty set");
  EvalResult r;
  double total = 0.0, metric = 0.0;
  const int n = static_cast<int>(data.size());
  for (int start = 0; start < n; start += batch_size) {
    std::vector<int> idx;
    for (int i = start; i < std::min(n, start + batch_size); ++i) idx.push_back(i);
    ModelTape tape;
    const Matrix pred = model_forward(inputs(data, idx), params, cfg, {}, &tape);
    r.unconverged += tape.unconverged;
    const std::vector<double> y = labels(data, idx);
    total += loss_and_grad(pred, y, loss).loss * static_cast<double>(idx.size());
    for (int b = 0; b < pred.rows(); ++b) {
      if (is_classification(loss)) {
        Eigen::Index arg;
        pred.row(b).maxCoeff(&arg);
        r.predictions.push_back(static_cast<double>(arg));
        metric += static_cast<double>(arg) == y[b] ? 1.0 : 0.0;
      } else {
        r.predictions.push_back(pred(b, 0));
        metric += std::abs(pred(b, 0) - y[b]);
      }
    }
  }
  r.loss = total / n;
  r.metric = metric / n;
  return r;
}

// ---------------------------------------------------------------- training

nlohmann::json TrainReport::to_json() const {
  nlohmann::json j;
  j["metric"] = metric;
  auto ep = nlohmann::json::array();
  for (const auto& e : epochs) {
    ep.push_back({{"epoch", e.epoch},
                  {"train_loss", e.train_loss},
                  {"val_loss", e.val_loss},
                  {"val_metric", e.val_metric},
                  {"unconverged", e.unconverged}});
  }
  j["epochs"] = std::move(ep);
  j["final"] = {{"test_metric", test_metric},
                {"test_loss", test_loss},
                {"epochs_run", epochs_run},
                {"best_epoch", best_epoch},
                {"best_val_loss", best_val_loss},
                {"stop_reason", stop_reason},
                {"diverged", diverged}};
  return j;
}

TrainResult train(const ModelConfig& cfg, const TrainConfig& tc, const PreparedSet& train_set,
                  const PreparedSet& val_set, const PreparedSet& test_set) {
  Rng rng(derive_seed(tc.seed, "init"));
  return train_from(cfg, ModelParams::init(cfg, rng), tc, train_set, val_set, test_set);
}

TrainResult train_from(const ModelConfig& cfg, ModelParams params, const TrainConfig& tc,
                       const PreparedSet& train_set, const PreparedSet& val_set,
                       const PreparedSet& test_set) {
  tc.validate();
  if (train_set.empty() || val_set.empty() || test_set.empty()) {
    throw std::invalid_argument("training needs nonempty train, validation and test sets");
  }
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult out;
  TrainReport& rep = out.report;
  rep.metric = is_classification(tc.loss) ? "accuracy" : "mae";
  ModelParams best = params;
  double best_val = std::numeric_limits<double>::infinity();
  int wait = 0;
  Adam adam(tc.lr);
  const int n = static_cast<int>(train_set.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    Rng rng(derive_seed(derive_seed(tc.seed, "epoch"), static_cast<std::uint64_t>(epoch)));
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[uniform_int(rng, 0, i)]);
    double total = 0.0;
    int unconverged = 0;
    bool bad = false;
    for (int start = 0; start < n && !bad; start += tc.batch_size) {
      std::vector<int> idx(order.begin() + start, order.begin() + std::min(n, start + tc.batch_size));
      const std::vector<ModelInput> batch = inputs(train_set, idx);
      ModelTape tape;
      ForwardOptions fo;
      fo.training = true;
      const Matrix pred = model_forward(batch, params, cfg, fo, &tape);
      unconverged += tape.unconverged;
      const LossResult lr = loss_and_grad(pred, labels(train_set, idx), tc.loss);
      if (!std::isfinite(lr.loss)) {
        bad = true;
        break;
      }
      total += lr.loss * static_cast<double>(idx.size());
      ModelParams grads = params.zeros_like();
      model_backward(batch, params, cfg, tape, lr.dpred, grads);
      try {
        adam.step(params, grads);
      } catch (const std::runtime_error& e) {
        if (tc.verbose) std::cerr << "epoch " << epoch << ": " << e.what() << "\n";
        bad = true;
        break;
      }
      update_running_stats(params, cfg, tape);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = bad ? std::numeric_limits<double>::quiet_NaN() : total / n;
    rec.unconverged = unconverged;
    if (!bad) {
      const EvalResult v = evaluate(val_set, params, cfg, tc.loss);
      rec.val_loss = v.loss;
      rec.val_metric = v.metric;
      bad = !std::isfinite(v.loss);
    }
    rep.epochs.push_back(rec);
    rep.epochs_run = epoch;
    if (bad) {
      rep.diverged = true;
      rep.stop_reason = "diverged";
      break;
    }
    if (tc.verbose) {
      std::cerr << "epoch " << epoch << " train " << rec.train_loss << " val " << rec.val_loss
                << " " << rep.metric << " " << rec.val_metric << "\n";
    }
    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      best = params;
      rep.best_epoch = epoch;
      wait = 0;
    } else if (++wait >= tc.patience) {
      rep.stop_reason = "patience";
      break;
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (tc.max_seconds > 0.0 && elapsed >= tc.max_seconds) {
      rep.stop_reason = "time_budget";
      break;
    }
  }
  if (rep.stop_reason.empty()) rep.stop_reason = "max_epochs";
  rep.best_val_loss = rep.best_epoch > 0 ? best_val : std::numeric_limits<double>::quiet_NaN();
  out.params = std::move(best);
  if (rep.best_epoch > 0) {
    const EvalResult t = evaluate(test_set, out.params, cfg, tc.loss);
    rep.test_loss = t.loss;
    rep.test_metric = t.metric;
  } else {
    rep.test_loss = rep.test_metric = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

// ---------------------------------------------------------------- checkpoints

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"in_dim", c.in_dim},
          {"hidden", c.hidden},
          {"channels", c.channels},
          {"filter_degree", c.filter_degree},
          {"filter_init", c.filter_init},
          {"fixed_filter", c.fixed_filter},
          {"qnet",
           {{"layers", c.qnet.layers},
            {"order", c.qnet.order},
            {"hidden", c.qnet.hidden},
            {"q_init", c.qnet.q_init}}},
          {"pool", to_string(c.pool)},
          {"out_dim", c.out_dim},
          {"q_min", c.q_min},
          {"q_max", c.q_max},
          {"solver",
           {{"tol", c.solver.tol},
            {"max_iter", c.solver.max_iter},
            {"precond", c.solver.precond == PrecondMode::Exact ? "exact" : "approx"}}},
          {"norm_eps", c.norm_eps},
          {"bn_momentum", c.bn_momentum}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.in_dim = j.at("in_dim").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.channels = j.at("channels").get<int>();
  c.filter_degree = j.at("filter_degree").get<int>();
  c.filter_init = j.at("filter_init").get<std::string>();
  c.fixed_filter = j.at("fixed_filter").get<bool>();
  const auto& q = j.at("qnet");
  c.qnet.layers = q.at("layers").get<int>();
  c.qnet.order = q.at("order").get<int>();
  c.qnet.hidden = q.at("hidden").get<int>();
  c.qnet.q_init = q.at("q_init").get<double>();
  c.pool = parse_pool_mode(j.at("pool").get<std::string>());
  c.out_dim = j.at("out_dim").get<int>();
  c.q_min = j.at("q_min").get<double>();
  c.q_max = j.at("q_max").get<double>();
  const auto& s = j.at("solver");
  c.solver.tol = s.at("tol").get<double>();
  c.solver.max_iter = s.at("max_iter").get<int>();
  const std::string pre = s.at("precond").get<std::string>();
  if (pre != "exact" && pre != "approx") throw std::invalid_argument("unknown preconditioner " + pre);
  c.solver.precond = pre == "exact" ? PrecondMode::Exact : PrecondMode::Approx;
  c.norm_eps = j.at("norm_eps").get<double>();
  c.bn_momentum = j.at("bn_momentum").get<double>();
  return c;
}

namespace {

// Fixed filters may hold infinite theta (coefficients 0 or 1), which JSON
// cannot carry as numbers.
nlohmann::json number(double x) {
  if (std::isfinite(x)) return x;
  if (std::isnan(x)) return "nan";
  return x > 0 ? "inf" : "-inf";
}

double from_number(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  const std::string s = j.get<std::string>();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  throw std::invalid_argument("bad number '" + s + "'");
}

}  // namespace

nlohmann::json checkpoint_to_json(const ModelConfig& cfg, const ModelParams& params) {
  nlohmann::json tensors = nlohmann::json::object();
  params.visit_all([&](const std::string& name, const Matrix& m) {
    auto data = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(number(m(r, c)));
    tensors[name] = {{"shape", {m.rows(), m.cols()}}, {"data", std::move(data)}};
  });
  return {{"schema_version", kCheckpointSchemaVersion},
          {"config", model_config_to_json(cfg)},
          {"filter_trainable", params.filter_trainable},
          {"params", std::move(tensors)}};
}

std::pair<ModelConfig, ModelParams> checkpoint_from_json(const nlohmann::json& j) {
  const int version = j.at("schema_version").get<int>();
  if (version != kCheckpointSchemaVersion) {
    throw std::runtime_error("checkpoint schema version mismatch: " + std::to_string(version));
  }
  ModelConfig cfg = model_config_from_json(j.at("config"));
  Rng rng(0);
  ModelParams p = ModelParams::init(cfg, rng);
  p.filter_trainable = j.value("filter_trainable", !cfg.fixed_filter);
  const auto& tensors = j.at("params");
  std::size_t seen = 0;
  p.visit_all([&](const std::string& name, Matrix& m) {
    if (!tensors.contains(name)) throw std::runtime_error("checkpoint lacks tensor " + name);
    const auto& t = tensors[name];
    const auto shape = t.at("shape").get<std::vector<long>>();
    if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols()) {
      throw std::runtime_error("shape mismatch for tensor " + name);
    }
    const auto& data = t.at("data");
    if (static_cast<Eigen::Index>(data.size()) != m.size()) {
      throw std::runtime_error("data length mismatch for tensor " + name);
    }
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = from_number(data[r * m.cols() + c]);
    ++seen;
  });
  if (seen != tensors.size()) throw std::runtime_error("checkpoint has unexpected tensors");
  return {cfg, std::move(p)};
}

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << checkpoint_to_json(cfg, params).dump() << "\n";
}

std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  try {
    return checkpoint_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------- explanations

nlohmann::json export_explanation(const ModelParams& params, const ModelConfig& cfg,
                                  const GraphSample& sample, int graph_id) {
  auto lap = make_laplacian_data(sample.graph, std::max(2, cfg.filter_degree));
  ModelTape tape;
  const Matrix pred = model_forward({{lap, &sample.features}}, params, cfg, {}, &tape);
  const GraphTape& gt = tape.graphs.front();
  nlohmann::json j;
  j["graph_id"] = graph_id;
  j["n"] = sample.graph.num_nodes();
  j["graph"] = graph_to_json(sample.graph);
  auto q = nlohmann::json::array();
  for (const auto& c : gt.q) q.push_back(std::vector<double>(c.q.data(), c.q.data() + c.q.size()));
  j["q"] = std::move(q);
  auto filters = nlohmann::json::array();
  for (int c = 0; c < cfg.channels; ++c) filters.push_back(params.filter(c).to_json());
  j["filters"] = std::move(filters);
  j["prediction"] = std::vector<double>(pred.data(), pred.data() + pred.size());
  if (cfg.out_dim > 1) {
    Eigen::Index arg;
    pred.row(0).maxCoeff(&arg);
    j["predicted"] = static_cast<int>(arg);
  } else {
    j["predicted"] = pred(0, 0);
  }
  j["label"] = sample.label;
  j["meta"] = sample.meta;
  j["unconverged"] = tape.unconverged;
  return j;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + mid));
}

double MarkedQStats::ratio() const {
  if (!(marked_median > 0.0) || !(other_median > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return std::max(marked_median / other_median, other_median / marked_median);
}

MarkedQStats marked_q_stats(const std::vector<nlohmann::json>& explanations,
                            const std::string& meta_key) {
  std::vector<double> marked, other;
  for (const auto& e : explanations) {
    if (!e.contains("meta") || !e["meta"].contains(meta_key)) continue;
    const auto ids = e["meta"][meta_key].get<std::vector<int>>();
    if (ids.empty()) continue;
    const auto q = e.at("q").at(0).get<std::vector<double>>();
    std::vector<char> is_marked(q.size(), 0);
    for (int i : ids) is_marked.at(i) = 1;
    for (std::size_t i = 0; i < q.size(); ++i) (is_marked[i] ? marked : other).push_back(q[i]);
  }
  return {median(marked), median(other)};
}

}  // namespace tikhonov
