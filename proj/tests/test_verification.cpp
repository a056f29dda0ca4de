#include <set>

#include "doctest.h"
#include "tikhonov/verification.hpp"

using namespace tikhonov;

TEST_CASE("thirteen property ids") {
  const auto& ids = property_ids();
  CHECK(ids.size() == 13);
  CHECK(std::set<std::string>(ids.begin(), ids.end()).size() == 13);
  for (const auto& id : ids) CHECK(default_trials(id) >= 100);
  CHECK_THROWS(default_trials("P9"));
}

TEST_CASE("every property passes at a fixed seed") {
  const VerifySummary s = run_all(20240601);
  REQUIRE(s.reports.size() == 13);
  for (const auto& r : s.reports) {
    INFO(r.id << ": " << (r.failures.empty() ? "" : r.failures[0].message));
    CHECK(r.pass());
    CHECK(r.trials >= 100);
    CHECK(r.worst_margin >= 0.0);
  }
  CHECK(s.pass());
  const auto j = s.to_json();
  CHECK(j.size() == 13);
  CHECK(j.at("P5").at("pass").get<bool>());
  CHECK(j.at("G").at("trials").get<int>() == 100);
  CHECK(s.table().find("OS") != std::string::npos);
}

TEST_CASE("runs are deterministic in the seed") {
  const auto a = run_property("P2", 20, 7);
  const auto b = run_property("P2", 20, 7);
  CHECK(a.worst_margin == b.worst_margin);
}

TEST_CASE("asymmetric laplacian fault is caught and replays") {
  VerifyOptions opts;
  opts.fault = "asymmetric_laplacian";
  const PropertyReport r = run_property("P1", 40, 3, opts);
  REQUIRE_FALSE(r.pass());
  const auto j = r.to_json();
  CHECK_FALSE(j.at("pass").get<bool>());
  const auto record = j.at("failures").at(0);
  CHECK(record.at("fault") == "asymmetric_laplacian");

  // Round trip through text, as the CLI stores it.
  const auto parsed = nlohmann::json::parse(record.dump());
  const auto again = replay(parsed);
  REQUIRE(again.size() == 1);
  CHECK_FALSE(again[0].pass());
  CHECK(again[0].failures[0].message == r.failures[0].message);

  // The same instance without the fault is fine.
  const CheckResult clean = check_instance("P1", r.failures[0].instance);
  CHECK(clean.ok);

  // Whole report replays every failure.
  CHECK(replay(j).size() == r.failures.size());
}

TEST_CASE("instance json round trip") {
  const auto r = run_property("P8", 2, 11);
  CHECK(r.pass());
  VerifyOptions opts;
  opts.fault = "asymmetric_laplacian";
  const auto bad = run_property("V", 30, 1, opts);
  REQUIRE_FALSE(bad.failures.empty());
  const VerifyInstance& inst = bad.failures[0].instance;
  const VerifyInstance back = VerifyInstance::from_json(nlohmann::json::parse(inst.to_json().dump()));
  CHECK(back.seed == inst.seed);
  CHECK(back.theta == inst.theta);
  CHECK(back.q == inst.q);
  CHECK(back.graph.num_edges() == inst.graph.num_edges());
  CHECK(back.params == inst.params);
}

TEST_CASE("unknown ids and faults are rejected") {
  CHECK_THROWS(run_property("nope", 1, 0));
  VerifyOptions opts;
  opts.fault = "bogus";
  CHECK_THROWS(verification_laplacian(Graph::from_edges(2, std::vector<Edge>{{0, 1}}), "bogus"));
  CHECK_THROWS_AS(run_property("P1", 1, 0, opts), std::invalid_argument);
}
