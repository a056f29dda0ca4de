#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(TIKHONOV_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int lines(const fs::path& p) {
  const std::string s = slurp(p);
  return static_cast<int>(std::count(s.begin(), s.end(), '\n'));
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tikhonov_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("gen writes an 80/10/10 split and records its config") {
  const fs::path d = fresh_dir("gen");
  REQUIRE(run("gen clique_distance --out " + d.string() + " --seed 5 --count 700") == 0);
  // one header line per file
  CHECK(lines(d / "train.jsonl") == 561);
  CHECK(lines(d / "val.jsonl") == 71);
  CHECK(lines(d / "test.jsonl") == 71);
  const std::string cfg = slurp(d / "gen_config.txt");
  CHECK(cfg.find("seed=5\n") != std::string::npos);
  CHECK(cfg.find("clique_min=") != std::string::npos);
}

TEST_CASE("usage errors exit with 2") {
  const fs::path d = fresh_dir("usage");
  CHECK(run("gen clique_distance --out " + (d / "missing").string()) == 2);
  CHECK(run("gen no_such_task --out " + d.string()) == 2);
  CHECK(run("gen clique_distance --out " + d.string() + " --lambda 1") == 2);
  CHECK(run("gen clique_distance --out " + d.string() + " --count ten") == 2);
  CHECK(run("gen clique_distance --out " + d.string() + " --no-such-flag 1") == 2);
  CHECK(run("") == 2);
  std::ofstream(d / "bad.txt") << "# comment\nseed=1\nbogus_key=3\n";
  CHECK(run("gen clique_distance --out " + d.string() + " --config " + (d / "bad.txt").string()) == 2);
  CHECK(run("train --data " + (d / "nothing").string() + " --out " + d.string()) == 2);
  CHECK(run("eval --checkpoint " + (d / "none.json").string() + " --data " + d.string() +
            " --out " + d.string()) == 2);
}

TEST_CASE("a run repeated from its emitted config is byte identical") {
  const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  REQUIRE(run("gen triangles --out " + a.string() + " --seed 9 --count 60") == 0);
  REQUIRE(run("gen --config " + (a / "gen_config.txt").string() + " --out " + b.string()) == 0);
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl"}) {
    CHECK(slurp(a / f) == slurp(b / f));
  }

  const std::string small = " --max-epochs 2 --patience 1 --hidden 4 --qnet-layers 1 --qnet-hidden 4";
  REQUIRE(run("train --data " + a.string() + " --out " + a.string() + " --seed 4" + small) == 0);
  REQUIRE(run("train --config " + (a / "train_config.txt").string() + " --data " + b.string() +
              " --out " + b.string()) == 0);
  CHECK(slurp(a / "checkpoint.json") == slurp(b / "checkpoint.json"));
  auto ra = nlohmann::json::parse(slurp(a / "report.json"));
  auto rb = nlohmann::json::parse(slurp(b / "report.json"));
  CHECK(ra.at("config").at("hidden") == "4");
  ra.erase("config");
  rb.erase("config");
  CHECK(ra == rb);
}

TEST_CASE("eval and explain consume a checkpoint") {
  const fs::path d = fresh_dir("eval");
  REQUIRE(run("gen triangles --out " + d.string() + " --seed 2 --count 40") == 0);
  REQUIRE(run("train --data " + d.string() + " --out " + d.string() +
              " --max-epochs 1 --patience 1 --hidden 4 --qnet-layers 1") == 0);
  const std::string ck = (d / "checkpoint.json").string();
  REQUIRE(run("eval --checkpoint " + ck + " --data " + d.string() + " --out " + d.string() +
              " --trace-solver " + (d / "trace.jsonl").string()) == 0);
  const auto e = nlohmann::json::parse(slurp(d / "eval.json"));
  CHECK(e.at("metric") == "accuracy");
  CHECK(e.at("count") == 4);
  std::ifstream trace(d / "trace.jsonl");
  std::string line;
  REQUIRE(std::getline(trace, line));
  const auto t = nlohmann::json::parse(line);
  for (const char* k : {"graph_id", "channel", "col", "iters", "residual", "converged"}) {
    CHECK(t.contains(k));
  }

  REQUIRE(run("explain --checkpoint " + ck + " --data " + d.string() + " --out " + d.string() +
              " --limit 3") == 0);
  CHECK(fs::exists(d / "explain" / "graph_00000.json"));
  CHECK(fs::exists(d / "explain" / "graph_00002.json"));
  CHECK_FALSE(fs::exists(d / "explain" / "graph_00003.json"));
  const auto s = nlohmann::json::parse(slurp(d / "explain_summary.json"));
  CHECK(s.at("marked_key") == "triangle_nodes");
  CHECK(s.at("count") == 3);
  const auto g = nlohmann::json::parse(slurp(d / "explain" / "graph_00000.json"));
  CHECK(g.at("filters").at(0).at("samples").size() == 101);
}

TEST_CASE("verify exit codes and replay") {
  const fs::path d = fresh_dir("verify");
  CHECK(run("verify --trials 3 --seed 1") == 0);
  CHECK(run("verify --trials 3 --only P1,P6 --fault asymmetric_laplacian --out " + d.string()) == 1);
  const auto failures = nlohmann::json::parse(slurp(d / "verify_failures.json"));
  REQUIRE(failures.size() > 0);
  CHECK(failures.at(0).at("property") == "P1");
  CHECK(run("verify --replay " + (d / "verify_failures.json").string()) == 1);
  CHECK(run("verify --replay " + (d / "verify_report.json").string()) == 1);
  CHECK(run("verify --only P99") == 2);
  CHECK(run("verify --fault no_such_fault --trials 1") == 2);
}

TEST_CASE("bench iteration table is deterministic and tighter tolerances cost more") {
  const fs::path a = fresh_dir("bench_a"), b = fresh_dir("bench_b");
  const std::string args = " --sizes 60,120 --k 3 --reps 2 --columns 2";
  REQUIRE(run("bench --out " + a.string() + args) == 0);
  REQUIRE(run("bench --out " + b.string() + args) == 0);
  CHECK(slurp(a / "bench.csv") == slurp(b / "bench.csv"));
  CHECK(fs::exists(a / "bench_timing.csv"));

  std::ifstream in(a / "bench.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "n,m,K,tol,precond,reps,mean_iters");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string x;
    while (std::getline(ss, x, ',')) f.push_back(x);
    REQUIRE(f.size() == 7);
    rows.push_back(f);
  }
  // per n: (1e-6, exact), (1e-6, approx), (1e-10, exact), (1e-10, approx)
  REQUIRE(rows.size() == 8);
  for (int base : {0, 4}) {
    for (int p = 0; p < 2; ++p) {
      CHECK(std::stod(rows[base + p][6]) <= std::stod(rows[base + 2 + p][6]));
    }
  }
}

TEST_CASE("sweep-csbm writes the phase-diagram table") {
  const fs::path d = fresh_dir("sweep");
  REQUIRE(run("sweep-csbm --out " + d.string() +
              " --cells '0.5:1;1:0' --n 40 --avg-degree 5 --count 20 --run-folds 1"
              " --max-epochs 2 --patience 1") == 0);
  std::ifstream in(d / "sweep.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "lambda,mu_over_sqrtgamma,accuracy,median_q,blank");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 4);
  }
  CHECK(rows == 2);
  const auto j = nlohmann::json::parse(slurp(d / "sweep.json"));
  REQUIRE(j.at("cells").size() == 2);
  for (const char* k : {"lambda", "mu_over_sqrtgamma", "accuracy", "median_q", "blank", "folds"}) {
    CHECK(j.at("cells").at(0).contains(k));
  }
  CHECK(j.at("cells").at(1).at("lambda") == 1.0);
  CHECK(j.at("cells").at(0).at("blank") == (j.at("cells").at(0).at("accuracy").get<double>() < 0.56));

  CHECK(run("sweep-csbm --out " + d.string() + " --cells 9:1 --n 40 --avg-degree 5") == 2);
}
