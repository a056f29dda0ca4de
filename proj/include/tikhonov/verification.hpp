#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "tikhonov/graph.hpp"
#include "tikhonov/types.hpp"

namespace tikhonov {

// One randomized draw. Everything a check needs is here or derived from
// `seed`, so a stored instance reruns bit-for-bit.
struct VerifyInstance {
  Graph graph;
  Vector theta;
  Vector q;
  std::uint64_t seed = 0;
  nlohmann::json params = nlohmann::json::object();

  nlohmann::json to_json() const;
  static VerifyInstance from_json(const nlohmann::json& j);
};

struct CheckResult {
  bool ok = true;
  double margin = 0.0;  // >= 0 when the check holds; smaller is tighter
  std::string message;
};

struct PropertyFailure {
  std::string message;
  VerifyInstance instance;
};

struct PropertyReport {
  std::string id;
  int trials = 0;
  std::vector<PropertyFailure> failures;
  double worst_margin = 0.0;
  std::string fault;

  bool pass() const { return failures.empty(); }
  nlohmann::json to_json() const;
};

struct VerifyOptions {
  int max_n = 60;
  // Fault injection for the harness itself: "" or "asymmetric_laplacian".
  std::string fault;
};

// P1 P2 P3 P4 P5 P6 P7 P8 L1 V R1 G OS
const std::vector<std::string>& property_ids();
int default_trials(const std::string& id);

// Laplacian used by every check; the fault hook corrupts it on purpose.
SparseMatrix verification_laplacian(const Graph& g, const std::string& fault);

PropertyReport run_property(const std::string& id, int trials, std::uint64_t seed,
                            const VerifyOptions& opts = {});

// Runs one stored check again.
CheckResult check_instance(const std::string& id, const VerifyInstance& inst,
                           const VerifyOptions& opts = {});

struct VerifySummary {
  std::vector<PropertyReport> reports;

  bool pass() const;
  // {id: {"trials", "failures", "worst_margin", "pass"}}
  nlohmann::json to_json() const;
  std::string table() const;
};

// trials <= 0 selects the default count per property.
VerifySummary run_all(std::uint64_t seed, const VerifyOptions& opts = {}, int trials = 0,
                      const std::vector<std::string>& only = {});

// Accepts one failure record {"property", "fault", "instance"} or a whole
// summary/report; returns one report per replayed instance.
std::vector<PropertyReport> replay(const nlohmann::json& record);

}  // namespace tikhonov
