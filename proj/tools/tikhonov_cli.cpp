#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tikhonov/datasets.hpp"
#include "tikhonov/experiments.hpp"
#include "tikhonov/training.hpp"
#include "tikhonov/verification.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tikhonov;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- settings

using Settings = std::map<std::string, std::string>;

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

Settings read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path);
  Settings s;
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path + ":" + std::to_string(no) + ": expected key=value");
    }
    s[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return s;
}

void write_config_file(const std::string& path, const std::string& command, const Settings& s) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "# tikhonov " << command << "\n";
  for (const auto& [k, v] : s)
    if (!v.empty()) out << k << "=" << v << "\n";
}

json settings_json(const Settings& s) {
  json j = json::object();
  for (const auto& [k, v] : s)
    if (!v.empty()) j[k] = v;
  return j;
}

std::string num(double x) { return json(x).dump(); }

const std::string& need(const Settings& s, const std::string& key) {
  auto it = s.find(key);
  if (it == s.end() || it->second.empty()) throw UsageError("missing required setting '" + key + "'");
  return it->second;
}

bool has(const Settings& s, const std::string& key) {
  auto it = s.find(key);
  return it != s.end() && !it->second.empty();
}

double get_double(const Settings& s, const std::string& key) {
  const std::string& v = need(s, key);
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw UsageError("setting '" + key + "' expects a number, got '" + v + "'");
  }
}

long long get_int(const Settings& s, const std::string& key) {
  const std::string& v = need(s, key);
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw UsageError("setting '" + key + "' expects an integer, got '" + v + "'");
  }
}

std::uint64_t get_u64(const Settings& s, const std::string& key) {
  const std::string& v = need(s, key);
  try {
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size() || v.front() == '-') throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw UsageError("setting '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
}

bool get_bool(const Settings& s, const std::string& key) {
  const std::string& v = need(s, key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError("setting '" + key + "' expects true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> get_doubles(const Settings& s, const std::string& key) {
  std::vector<double> out;
  for (const auto& item : split_list(need(s, key))) out.push_back(get_double({{key, item}}, key));
  return out;
}

std::vector<int> get_ints(const Settings& s, const std::string& key) {
  std::vector<int> out;
  for (const auto& item : split_list(need(s, key))) {
    out.push_back(static_cast<int>(get_int({{key, item}}, key)));
  }
  return out;
}

// A subcommand's keys, each exposed as --key-with-dashes and in config files.
struct KeySpec {
  std::string key;
  std::string def;
  std::string help;
};

struct Command {
  std::string name;
  CLI::App* app = nullptr;
  std::vector<KeySpec> keys;
  Settings flags;
  std::string config_path;

  Settings resolve() const {
    Settings s;
    for (const auto& k : keys) s[k.key] = k.def;
    if (!config_path.empty()) {
      for (const auto& [k, v] : read_config_file(config_path)) {
        if (!s.count(k)) throw UsageError("unknown key '" + k + "' in " + config_path);
        s[k] = v;
      }
    }
    for (const auto& [k, v] : flags) s[k] = v;
    return s;
  }
};

std::string dashed(std::string k) {
  std::replace(k.begin(), k.end(), '_', '-');
  return k;
}

void register_keys(Command& c) {
  c.app->add_option("--config", c.config_path, "key=value file; flags override it");
  for (const auto& k : c.keys) {
    const std::string key = k.key;
    Settings* flags = &c.flags;
    c.app->add_option_function<std::string>(
        "--" + dashed(key), [flags, key](const std::string& v) { (*flags)[key] = v; },
        k.help + (k.def.empty() ? "" : " (default " + k.def + ")"));
  }
}

fs::path out_dir(const Settings& s) {
  const fs::path p = need(s, "out");
  if (!fs::is_directory(p)) throw UsageError("output directory does not exist: " + p.string());
  return p;
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------- gen

std::vector<KeySpec> gen_keys() {
  return {{"task", "", "colors | clique_distance | triangles | csbm | diameter"},
          {"out", "", "existing output directory"},
          {"seed", "0", "generator seed"},
          {"count", "", "number of graphs"},
          {"folds", "", "0 for a stratified 80/10/10 split, else k-fold"},
          {"fold", "0", "test fold when folds > 0"},
          {"clique_min", "", "clique size range"},
          {"clique_max", "", ""},
          {"path_min", "", "path length range"},
          {"path_max", "", ""},
          {"threshold", "", "label 1 iff path length >= threshold"},
          {"n_min", "", "node count range"},
          {"n_max", "", ""},
          {"chord_fill", "", "triangles background chord fraction"},
          {"num_colors", "", "colors palette size"},
          {"edge_prob", "", "colors edge probability"},
          {"n", "", "CSBM node count"},
          {"avg_degree", "", "CSBM average degree"},
          {"lambda", "", "CSBM graph signal"},
          {"mu_over_sqrtgamma", "", "CSBM feature signal"},
          {"gamma", "", "CSBM n/p"},
          {"direction_scope", "", "CSBM feature direction: dataset | graph"},
          {"diam_min", "", "diameter range"},
          {"diam_max", "", ""}};
}

// Fills `key` with the default when unset and returns the resolved value.
template <typename T>
T take(Settings& s, const std::string& key, T def) {
  if (!has(s, key)) {
    if constexpr (std::is_same_v<T, std::string>) {
      s[key] = def;
    } else if constexpr (std::is_integral_v<T>) {
      s[key] = std::to_string(def);
    } else {
      s[key] = num(static_cast<double>(def));
    }
    return def;
  }
  if constexpr (std::is_same_v<T, int>) return static_cast<int>(get_int(s, key));
  else if constexpr (std::is_same_v<T, double>) return get_double(s, key);
  else return s.at(key);
}

Dataset generate(Settings& s) {
  const std::string task = need(s, "task");
  const std::uint64_t seed = get_u64(s, "seed");
  const std::vector<std::string> unused_by_all = {
      "clique_min", "clique_max", "path_min", "path_max", "threshold", "n_min", "n_max",
      "chord_fill", "num_colors", "edge_prob", "n", "avg_degree", "lambda",
      "mu_over_sqrtgamma", "gamma", "direction_scope", "diam_min", "diam_max"};
  std::vector<std::string> used;
  auto use = [&](std::initializer_list<const char*> keys) {
    for (const char* k : keys) used.push_back(k);
  };
  Dataset d;
  if (task == "clique_distance") {
    CliqueDistanceParams p;
    p.count = take(s, "count", p.count);
    p.clique_min = take(s, "clique_min", p.clique_min);
    p.clique_max = take(s, "clique_max", p.clique_max);
    p.path_min = take(s, "path_min", p.path_min);
    p.path_max = take(s, "path_max", p.path_max);
    p.threshold = take(s, "threshold", p.threshold);
    use({"clique_min", "clique_max", "path_min", "path_max", "threshold"});
    take(s, "folds", 0);
    d = gen_clique_distance(p, seed);
  } else if (task == "triangles") {
    TrianglesParams p;
    p.count = take(s, "count", p.count);
    p.n_min = take(s, "n_min", p.n_min);
    p.n_max = take(s, "n_max", p.n_max);
    p.chord_fill = take(s, "chord_fill", p.chord_fill);
    use({"n_min", "n_max", "chord_fill"});
    take(s, "folds", 0);
    d = gen_triangles(p, seed);
  } else if (task == "colors") {
    ColorsParams p;
    p.count = take(s, "count", p.count);
    p.n_min = take(s, "n_min", p.n_min);
    p.n_max = take(s, "n_max", p.n_max);
    p.num_colors = take(s, "num_colors", p.num_colors);
    p.edge_prob = take(s, "edge_prob", p.edge_prob);
    use({"n_min", "n_max", "num_colors", "edge_prob"});
    take(s, "folds", 0);
    d = gen_colors(p, seed);
  } else if (task == "csbm") {
    CsbmParams p;
    const int count = take(s, "count", 600);
    p.n = take(s, "n", p.n);
    p.avg_degree = take(s, "avg_degree", p.avg_degree);
    p.lambda = take(s, "lambda", p.lambda);
    p.gamma = take(s, "gamma", p.gamma);
    p.mu = take(s, "mu_over_sqrtgamma", 1.0) * std::sqrt(p.gamma);
    p.direction_scope = take(s, "direction_scope", p.direction_scope);
    use({"n", "avg_degree", "lambda", "gamma", "mu_over_sqrtgamma", "direction_scope"});
    take(s, "folds", 5);
    d = gen_csbm_task(p, count, seed);
  } else if (task == "diameter") {
    DiameterParams p;
    p.count = take(s, "count", p.count);
    p.diam_min = take(s, "diam_min", p.diam_min);
    p.diam_max = take(s, "diam_max", p.diam_max);
    p.n_max = take(s, "n_max", p.n_max);
    use({"diam_min", "diam_max", "n_max"});
    take(s, "folds", 0);
    d = gen_diameter(p, seed);
  } else {
    throw UsageError("unknown task '" + task + "'");
  }
  for (const auto& k : unused_by_all) {
    if (std::find(used.begin(), used.end(), k) == used.end() && has(s, k)) {
      throw UsageError("setting '" + k + "' does not apply to task " + task);
    }
  }
  return d;
}

int cmd_gen(Settings s) {
  const fs::path out = out_dir(s);
  Dataset d;
  try {
    d = generate(s);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const int folds = static_cast<int>(get_int(s, "folds"));
  const int fold = static_cast<int>(get_int(s, "fold"));
  DatasetSplits sp;
  try {
    sp = folds > 0 ? fold_split(d, folds, fold) : split_dataset(d);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  save_jsonl((out / "train.jsonl").string(), sp.train);
  save_jsonl((out / "val.jsonl").string(), sp.val);
  save_jsonl((out / "test.jsonl").string(), sp.test);
  write_config_file((out / "gen_config.txt").string(), "gen", s);
  std::cout << d.generator << ": " << sp.train.samples.size() << " train, "
            << sp.val.samples.size() << " val, " << sp.test.samples.size() << " test -> "
            << out.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- model settings

std::vector<KeySpec> model_keys() {
  return {{"lr", "", "learning rate"},
          {"batch_size", "", ""},
          {"patience", "", "early-stopping patience in epochs"},
          {"max_epochs", "", ""},
          {"max_seconds", "", "wall-clock budget, 0 for none"},
          {"loss", "", "cross_entropy | mae | mse"},
          {"hidden", "", "feature width"},
          {"j_channels", "", "Tikhonov channels"},
          {"filter_degree", "", "Bernstein degree K"},
          {"filter_init", "", "linear | flat"},
          {"fixed_filter", "", "freeze p at its initialization"},
          {"qnet_layers", "", ""},
          {"qnet_order", "", "Chebyshev order per layer"},
          {"qnet_hidden", "", ""},
          {"q_init", "", "initial q"},
          {"pool", "", "mean | sum | max | mean_sum_max_layernorm | sum_sumsq_batchnorm"},
          {"q_min", "", ""},
          {"q_max", "", ""},
          {"pcg_tol", "", ""},
          {"pcg_max_iter", "", ""},
          {"precond", "", "exact | approx"}};
}

// Overrides the preset from settings and writes every resolved value back.
void resolve_preset(Settings& s, Preset& p) {
  ModelConfig& m = p.model;
  TrainConfig& t = p.train;
  try {
    t.lr = take(s, "lr", t.lr);
    t.batch_size = take(s, "batch_size", t.batch_size);
    t.patience = take(s, "patience", t.patience);
    t.max_epochs = take(s, "max_epochs", t.max_epochs);
    t.max_seconds = take(s, "max_seconds", t.max_seconds);
    t.loss = parse_loss_kind(take(s, "loss", to_string(t.loss)));
    m.hidden = take(s, "hidden", m.hidden);
    m.channels = take(s, "j_channels", m.channels);
    m.filter_degree = take(s, "filter_degree", m.filter_degree);
    m.filter_init = take(s, "filter_init", m.filter_init);
    m.fixed_filter = take(s, "fixed_filter", std::string(m.fixed_filter ? "true" : "false")) == "true";
    m.qnet.layers = take(s, "qnet_layers", m.qnet.layers);
    m.qnet.order = take(s, "qnet_order", m.qnet.order);
    m.qnet.hidden = take(s, "qnet_hidden", m.qnet.hidden);
    m.qnet.q_init = take(s, "q_init", m.qnet.q_init);
    m.pool = parse_pool_mode(take(s, "pool", to_string(m.pool)));
    m.q_min = take(s, "q_min", m.q_min);
    m.q_max = take(s, "q_max", m.q_max);
    m.solver.tol = take(s, "pcg_tol", m.solver.tol);
    m.solver.max_iter = take(s, "pcg_max_iter", m.solver.max_iter);
    const std::string pre =
        take(s, "precond", std::string(m.solver.precond == PrecondMode::Exact ? "exact" : "approx"));
    if (pre != "exact" && pre != "approx") throw UsageError("precond must be exact or approx");
    m.solver.precond = pre == "exact" ? PrecondMode::Exact : PrecondMode::Approx;
    if (s.at("fixed_filter") != "true" && s.at("fixed_filter") != "false") {
      throw UsageError("fixed_filter expects true or false");
    }
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

fs::path data_file(const std::string& data, const std::string& split) {
  const fs::path p = data;
  if (fs::is_directory(p)) return p / (split + ".jsonl");
  return p;
}

Dataset load_data(const fs::path& p) {
  if (!fs::exists(p)) throw UsageError("data file not found: " + p.string());
  try {
    return load_jsonl(p.string());
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

void write_trace(const fs::path& path, const PreparedSet& data, const ModelParams& params,
                 const ModelConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const int B = 128;
  for (std::size_t start = 0; start < data.size(); start += B) {
    std::vector<ModelInput> batch;
    for (std::size_t i = start; i < std::min(data.size(), start + B); ++i) {
      batch.push_back({data[i].lap, &data[i].X});
    }
    std::vector<SolverTraceRecord> trace;
    ForwardOptions fo;
    fo.trace = &trace;
    fo.graph_id_offset = static_cast<int>(start);
    model_forward(batch, params, cfg, fo);
    for (const auto& r : trace) {
      out << json{{"graph_id", r.graph_id},
                  {"channel", r.channel},
                  {"col", r.col},
                  {"iters", r.iters},
                  {"residual", r.residual},
                  {"converged", r.converged}}
                 .dump()
          << "\n";
    }
  }
}

// ---------------------------------------------------------------- train

int cmd_train(Settings s) {
  const fs::path out = out_dir(s);
  const std::string data = need(s, "data");
  const Dataset tr = load_data(data_file(data, "train"));
  const Dataset va = load_data(data_file(data, "val"));
  const Dataset te = load_data(data_file(data, "test"));
  Preset p;
  try {
    p = task_preset(tr.generator, tr);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  p.model.out_dim = std::max({tr.num_outputs(), va.num_outputs(), te.num_outputs()});
  if (!tr.is_classification()) p.model.out_dim = 1;
  resolve_preset(s, p);
  p.train.seed = get_u64(s, "seed");
  p.train.verbose = get_bool(s, "verbose");
  const int power = std::max(2, p.model.filter_degree);
  const PreparedSet ptr = prepare(tr, power), pva = prepare(va, power), pte = prepare(te, power);
  const TrainResult r = train(p.model, p.train, ptr, pva, pte);

  json report = r.report.to_json();
  report["config"] = settings_json(s);
  report["generator"] = tr.generator;
  write_json(out / "report.json", report);
  save_checkpoint((out / "checkpoint.json").string(), p.model, r.params);
  if (has(s, "trace_solver")) write_trace(s.at("trace_solver"), pte, r.params, p.model);
  write_config_file((out / "train_config.txt").string(), "train", s);
  std::cout << tr.generator << ": test " << r.report.metric << " " << r.report.test_metric
            << " after " << r.report.epochs_run << " epochs (best " << r.report.best_epoch
            << ", stop: " << r.report.stop_reason << ")\n";
  if (r.report.diverged) {
    std::cerr << "training diverged; report written to " << (out / "report.json").string() << "\n";
    return kExitDiverged;
  }
  return kExitOk;
}

std::pair<ModelConfig, ModelParams> checkpoint_of(const Settings& s) {
  const std::string path = need(s, "checkpoint");
  if (!fs::exists(path)) throw UsageError("checkpoint not found: " + path);
  try {
    return load_checkpoint(path);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

void check_compatible(const ModelConfig& cfg, const Dataset& d) {
  if (d.feature_dim() != cfg.in_dim) {
    throw UsageError("checkpoint expects " + std::to_string(cfg.in_dim) +
                     " input features, data has " + std::to_string(d.feature_dim()));
  }
}

// ---------------------------------------------------------------- eval

int cmd_eval(Settings s) {
  const fs::path out = out_dir(s);
  const auto [cfg, params] = checkpoint_of(s);
  const Dataset d = load_data(data_file(need(s, "data"), "test"));
  check_compatible(cfg, d);
  const LossKind loss = d.is_classification() ? LossKind::CrossEntropy : parse_loss_kind(need(s, "loss"));
  const PreparedSet ps = prepare(d, std::max(2, cfg.filter_degree));
  const EvalResult r = evaluate(ps, params, cfg, loss, static_cast<int>(get_int(s, "batch_size")));
  json j;
  j["config"] = settings_json(s);
  j["metric"] = d.is_classification() ? "accuracy" : "mae";
  j["value"] = r.metric;
  j["loss"] = r.loss;
  j["count"] = ps.size();
  j["unconverged"] = r.unconverged;
  j["predictions"] = r.predictions;
  write_json(out / "eval.json", j);
  if (has(s, "trace_solver")) write_trace(s.at("trace_solver"), ps, params, cfg);
  write_config_file((out / "eval_config.txt").string(), "eval", s);
  std::cout << j["metric"].get<std::string>() << " " << r.metric << " on " << ps.size()
            << " graphs\n";
  return kExitOk;
}

// ---------------------------------------------------------------- explain

std::string marked_key(const std::string& generator) {
  if (generator == "triangles") return "triangle_nodes";
  if (generator == "clique_distance") return "path_nodes";
  if (generator == "colors") return "green_nodes";
  return "";
}

int cmd_explain(Settings s) {
  const fs::path out = out_dir(s);
  const auto [cfg, params] = checkpoint_of(s);
  const Dataset d = load_data(data_file(need(s, "data"), "test"));
  check_compatible(cfg, d);
  const long limit = get_int(s, "limit");
  const fs::path dir = out / "explain";
  fs::create_directories(dir);
  std::vector<json> all;
  const long n = limit > 0 ? std::min<long>(limit, d.samples.size()) : d.samples.size();
  for (long i = 0; i < n; ++i) {
    json e = export_explanation(params, cfg, d.samples[i], static_cast<int>(i));
    std::ostringstream name;
    name << "graph_" << std::setw(5) << std::setfill('0') << i << ".json";
    write_json(dir / name.str(), e);
    all.push_back(std::move(e));
  }
  if (!has(s, "marked_key")) s["marked_key"] = marked_key(d.generator);
  json summary;
  summary["config"] = settings_json(s);
  summary["generator"] = d.generator;
  summary["count"] = n;
  const std::string key = s.at("marked_key");
  if (!key.empty()) {
    const MarkedQStats st = marked_q_stats(all, key);
    summary["marked_key"] = key;
    summary["marked_median_q"] = std::isfinite(st.marked_median) ? json(st.marked_median) : json();
    summary["other_median_q"] = std::isfinite(st.other_median) ? json(st.other_median) : json();
    summary["ratio"] = std::isfinite(st.ratio()) ? json(st.ratio()) : json();
    std::cout << "median q on " << key << ": " << st.marked_median << ", elsewhere "
              << st.other_median << "\n";
  }
  write_json(out / "explain_summary.json", summary);
  write_config_file((out / "explain_config.txt").string(), "explain", s);
  std::cout << n << " explanations in " << dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- verify

int cmd_verify(Settings s) {
  VerifySummary summary;
  if (has(s, "replay")) {
    std::ifstream in(s.at("replay"));
    if (!in) throw UsageError("cannot read " + s.at("replay"));
    json rec;
    try {
      in >> rec;
    } catch (const std::exception& e) {
      throw UsageError(s.at("replay") + ": " + e.what());
    }
    if (rec.is_object() && rec.contains("properties")) rec = rec.at("properties");
    try {
      summary.reports = replay(rec);
    } catch (const std::exception& e) {
      throw UsageError(s.at("replay") + ": " + e.what());
    }
  } else {
    VerifyOptions o;
    o.max_n = static_cast<int>(get_int(s, "max_n"));
    o.fault = s.at("fault");
    std::vector<std::string> only = split_list(s.at("only"));
    for (const auto& id : only) {
      const auto& ids = property_ids();
      if (std::find(ids.begin(), ids.end(), id) == ids.end()) {
        throw UsageError("unknown property id '" + id + "'");
      }
    }
    try {
      summary = run_all(get_u64(s, "seed"), o, static_cast<int>(get_int(s, "trials")), only);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  std::cout << summary.table();
  if (has(s, "out")) {
    const fs::path out = out_dir(s);
    json report = summary.to_json();
    json failures = json::array();
    for (const auto& r : summary.reports) {
      const json rj = r.to_json();
      for (const auto& f : rj.at("failures")) failures.push_back(f);
    }
    write_json(out / "verify_report.json", {{"config", settings_json(s)}, {"properties", report}});
    write_json(out / "verify_failures.json", failures);
    write_config_file((out / "verify_config.txt").string(), "verify", s);
  }
  std::cout << (summary.pass() ? "all properties hold" : "property failures found") << "\n";
  return summary.pass() ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------- bench

int cmd_bench(Settings s) {
  BenchOptions o;
  try {
    o.sizes = get_ints(s, "sizes");
    o.avg_degree = get_double(s, "avg_degree");
    o.degrees = get_ints(s, "k");
    o.tols = get_doubles(s, "tols");
    o.q = get_double(s, "q");
    o.reps = static_cast<int>(get_int(s, "reps"));
    o.columns = static_cast<int>(get_int(s, "columns"));
    o.seed = get_u64(s, "seed");
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (o.reps < 1 || o.columns < 1 || o.sizes.empty()) throw UsageError("bench needs sizes, reps and columns >= 1");
  for (int n : o.sizes)
    if (n < 2) throw UsageError("bench sizes must be >= 2");
  for (int K : o.degrees)
    if (K < 1 || K > BernsteinFilter::kMaxDegree) throw UsageError("bench K out of range");
  const auto rows = run_bench(o);
  std::ostringstream csv, timing;
  csv << "n,m,K,tol,precond,reps,mean_iters\n";
  timing << "n,K,tol,precond,mean_ms\n";
  for (const auto& r : rows) {
    csv << r.n << "," << r.m << "," << r.K << "," << num(r.tol) << "," << r.precond << ","
        << r.reps << "," << num(r.mean_iters) << "\n";
    timing << r.n << "," << r.K << "," << num(r.tol) << "," << r.precond << "," << r.mean_ms << "\n";
    std::cout << std::left << "n=" << std::setw(6) << r.n << " K=" << r.K << " tol=" << std::setw(7)
              << num(r.tol) << " " << std::setw(7) << r.precond << " iters " << std::setw(8)
              << r.mean_iters << " " << r.mean_ms << " ms\n";
  }
  if (has(s, "out")) {
    const fs::path out = out_dir(s);
    std::ofstream(out / "bench.csv") << csv.str();
    std::ofstream(out / "bench_timing.csv") << timing.str();
    write_config_file((out / "bench_config.txt").string(), "bench", s);
  }
  return kExitOk;
}

// ---------------------------------------------------------------- sweep-csbm

int cmd_sweep(Settings s) {
  const fs::path out = out_dir(s);
  CsbmCellOptions o;
  o.params.n = take(s, "n", o.params.n);
  o.params.avg_degree = take(s, "avg_degree", o.params.avg_degree);
  o.params.gamma = take(s, "gamma", o.params.gamma);
  o.params.direction_scope = take(s, "direction_scope", o.params.direction_scope);
  o.count = static_cast<int>(get_int(s, "count"));
  o.folds = static_cast<int>(get_int(s, "folds"));
  o.run_folds = static_cast<int>(get_int(s, "run_folds"));
  o.seed = get_u64(s, "seed");

  std::vector<std::pair<double, double>> cells;
  if (has(s, "cells")) {
    for (const auto& c : split_list(s.at("cells"), ';')) {
      const auto parts = split_list(c, ':');
      if (parts.size() != 2) throw UsageError("cells expects lambda:mu pairs separated by ';'");
      cells.push_back({get_double({{"cells", parts[0]}}, "cells"), get_double({{"cells", parts[1]}}, "cells")});
    }
  } else {
    for (double l : get_doubles(s, "lambdas"))
      for (double m : get_doubles(s, "mus")) cells.push_back({l, m});
  }
  if (cells.empty()) throw UsageError("empty CSBM grid");
  for (const auto& [l, m] : cells) {
    if (l < 0 || l > std::sqrt(o.params.avg_degree) || m < 0) {
      throw UsageError("grid point (" + num(l) + ", " + num(m) + ") outside lambda in [0, sqrt(avg_degree)]");
    }
  }

  // Preset sized from a one-graph probe of the task.
  CsbmParams probe = o.params;
  probe.mu = 0.0;
  probe.lambda = 0.0;
  Dataset shape;
  try {
    shape = gen_csbm_task(probe, 2, 0);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  Preset p = task_preset("csbm", shape);
  resolve_preset(s, p);

  std::ostringstream csv;
  csv << "lambda,mu_over_sqrtgamma,accuracy,median_q,blank\n";
  json cells_json = json::array();
  for (const auto& [l, m] : cells) {
    CsbmCellResult r;
    try {
      r = run_csbm_cell(l, m, o, p);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    csv << num(l) << "," << num(m) << "," << num(r.accuracy) << "," << num(r.median_q) << ","
        << (r.blank() ? 1 : 0) << "\n";
    cells_json.push_back(r.to_json());
    std::cout << "lambda " << l << " mu/sqrt(gamma) " << m << ": accuracy " << r.accuracy
              << ", median q " << r.median_q << (r.blank() ? " (blank)" : "") << "\n";
  }
  std::ofstream(out / "sweep.csv") << csv.str();
  write_json(out / "sweep.json", {{"config", settings_json(s)}, {"cells", cells_json}});
  write_config_file((out / "sweep_config.txt").string(), "sweep-csbm", s);
  return kExitOk;
}

// ---------------------------------------------------------------- main

std::vector<KeySpec> with(std::vector<KeySpec> a, const std::vector<KeySpec>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tikhonov graph layer: data generation, training, explanations, verification"};
  app.require_subcommand(1);

  std::vector<Command> cmds;
  cmds.push_back({"gen", app.add_subcommand("gen", "generate a dataset and its splits"), gen_keys(), {}, {}});
  cmds.push_back({"train", app.add_subcommand("train", "train on a generated dataset"),
                  with({{"data", "", "directory with train/val/test.jsonl"},
                        {"out", "", "existing output directory"},
                        {"seed", "0", ""},
                        {"verbose", "false", "print every epoch"},
                        {"trace_solver", "", "JSON-lines PCG trace of the test evaluation"}},
                       model_keys()),
                  {}, {}});
  cmds.push_back({"eval", app.add_subcommand("eval", "evaluate a checkpoint"),
                  {{"checkpoint", "", ""},
                   {"data", "", "JSONL file or directory (uses test.jsonl)"},
                   {"out", "", "existing output directory"},
                   {"loss", "mae", "regression loss"},
                   {"batch_size", "128", ""},
                   {"trace_solver", "", "JSON-lines PCG trace"}},
                  {}, {}});
  cmds.push_back({"explain", app.add_subcommand("explain", "export per-graph explanations"),
                  {{"checkpoint", "", ""},
                   {"data", "", "JSONL file or directory (uses test.jsonl)"},
                   {"out", "", "existing output directory"},
                   {"limit", "0", "at most this many graphs, 0 for all"},
                   {"marked_key", "", "meta key of ground-truth nodes"}},
                  {}, {}});
  cmds.push_back({"verify", app.add_subcommand("verify", "randomized property checks"),
                  {{"seed", "0", ""},
                   {"trials", "0", "per property, 0 for the defaults"},
                   {"only", "", "comma-separated property ids"},
                   {"fault", "", "inject a fault: asymmetric_laplacian"},
                   {"max_n", "60", "largest random graph"},
                   {"out", "", "directory for reports"},
                   {"replay", "", "failure record or report to rerun"}},
                  {}, {}});
  cmds.push_back({"bench", app.add_subcommand("bench", "PCG iteration and timing table"),
                  {{"sizes", "100,200,400,800", ""},
                   {"avg_degree", "6", ""},
                   {"k", "5", "filter degrees"},
                   {"tols", "1e-6,1e-10", ""},
                   {"q", "0.1", "constant q"},
                   {"reps", "3", "graphs per size"},
                   {"columns", "8", "right-hand sides per solve"},
                   {"seed", "0", ""},
                   {"out", "", "directory for bench.csv"}},
                  {}, {}});
  cmds.push_back({"sweep-csbm", app.add_subcommand("sweep-csbm", "CSBM phase diagram"),
                  with({{"lambdas", "0,0.5,1,1.5,2,2.5,3", ""},
                        {"mus", "0,0.5,1,1.5,2", "values of mu/sqrt(gamma)"},
                        {"cells", "", "explicit lambda:mu pairs separated by ';'"},
                        {"count", "600", "graphs per cell"},
                        {"folds", "5", ""},
                        {"run_folds", "3", "folds trained per cell"},
                        {"seed", "0", ""},
                        {"n", "", ""},
                        {"avg_degree", "", ""},
                        {"gamma", "", ""},
                        {"direction_scope", "", "dataset | graph"},
                        {"out", "", "existing output directory"}},
                       model_keys()),
                  {}, {}});

  for (auto& c : cmds) register_keys(c);
  cmds[0].app->add_option_function<std::string>(
      "TASK", [&cmds](const std::string& v) { cmds[0].flags["task"] = v; },
      "colors | clique_distance | triangles | csbm | diameter");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    for (auto& c : cmds) {
      if (!c.app->parsed()) continue;
      Settings s = c.resolve();
      if (c.name == "gen") return cmd_gen(std::move(s));
      if (c.name == "train") return cmd_train(std::move(s));
      if (c.name == "eval") return cmd_eval(std::move(s));
      if (c.name == "explain") return cmd_explain(std::move(s));
      if (c.name == "verify") return cmd_verify(std::move(s));
      if (c.name == "bench") return cmd_bench(std::move(s));
      if (c.name == "sweep-csbm") return cmd_sweep(std::move(s));
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
