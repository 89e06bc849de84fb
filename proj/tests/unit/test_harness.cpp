#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pcsi/config.hpp"
#include "pcsi/exponent_bounds.hpp"
#include "pcsi/harness.hpp"

using namespace pcsi;
using config::ConfigError;
using config::parse_config;
namespace fs = std::filesystem;

namespace {

const char* kMinimal = R"({
  "arrival_rates": [0.5],
  "channel": {"type": "product", "marginals": [{"values": [0, 2], "probs": [0.5, 0.5]}]},
  "policy": "max_queue",
  "simulation": {"horizon": 1000, "levels": [1, 2, 4], "replicas": 3, "record_trace": true},
  "seed": 3
})";

const char* kReference = R"({
  "arrival_rates": [0.4, 0.4],
  "channel": {"type": "product", "marginals": [{"values": [0, 2], "probs": [0.5, 0.5]}]},
  "subsets": "singletons",
  "policy": {"name": "max_exp"},
  "bounds": {"multistarts": 16},
  "estimation": {"method": "both", "levels": [1, 2, 3, 4], "replicas": 8, "horizon": 5000,
                 "is_replicas": 2000, "cycle_cap": 10000},
  "seed": 11
})";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("pcsi_harness_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string with(const std::string& base, const std::string& key, const std::string& value) {
  auto j = nlohmann::json::parse(base);
  j[key] = nlohmann::json::parse(value);
  return j.dump();
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("parse_config accepts the documented schema") {
    const auto cfg = parse_config(kReference);
    CHECK(cfg.num_users == 2);
    CHECK(cfg.policy == "max_exp");
    CHECK(cfg.subsets.all_singletons());
    CHECK(cfg.channel.num_states() == 4);
    CHECK(cfg.estimation.method == "both");
    CHECK(cfg.bounds.multistarts == 16);
    CHECK(cfg.seed == 11);
    CHECK(cfg.hash.size() == 16);
    CHECK(cfg.hash == parse_config(kReference).hash);
    CHECK(cfg.hash != parse_config(with(kReference, "seed", "12")).hash);

    const auto joint = parse_config(R"({"arrival_rates": [0.3, 0.3],
      "channel": {"type": "joint", "support": [[0, 2], [2, 0]], "probs": [0.5, 0.5]},
      "subsets": [[0, 1]], "policy": "exp_rule"})");
    CHECK(joint.subsets.size() == 1);
    CHECK(joint.channel.num_states() == 2);
  }

  TEST_CASE("config validation errors") {
    CHECK_THROWS_AS(parse_config("{"), ConfigError);
    CHECK_THROWS_AS(parse_config("[]"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config(with(kReference, "subsets", "[[0], [2]]")), "subset index out of range",
                         ConfigError);
    CHECK_THROWS_AS(parse_config(with(with(kReference, "num_users", "2"), "arrival_rates", "[0.4]")), ConfigError);
    CHECK_THROWS_AS(parse_config(with(kReference, "arrival_rates", "[-0.4, 0.4]")), ConfigError);
    CHECK_THROWS_AS(parse_config(with(kReference, "policy", "\"log_rule\"")), ConfigError);
    CHECK_THROWS_AS(parse_config(with(with(kReference, "policy", "\"max_queue\""), "subsets", "[[0, 1]]")), ConfigError);
    CHECK_THROWS_AS(parse_config(with(kReference, "channel",
                                      R"({"type": "joint", "support": [[0, 0]], "probs": [0.9]})")),
                    ConfigError);
    CHECK_THROWS_AS(parse_config(with(kReference, "channel", R"({"type": "markov"})")), ConfigError);
    CHECK_THROWS_AS(parse_config(with(kReference, "estimation", R"({"method": "magic"})")), ConfigError);
    CHECK_THROWS_AS(parse_config(with(kReference, "simulation", R"({"horizon": 0})")), ConfigError);
    CHECK_THROWS_AS(parse_config(with(kReference, "subsets", "[[0]]")), ConfigError);
  }

  TEST_CASE("output directory precedence") {
    auto cfg = parse_config(kMinimal);
    cfg.output_dir = "from_config";
    harness::CommandOptions opt;
    ::unsetenv("PCSI_OUTPUT_DIR");
    CHECK(harness::resolve_output_dir(cfg, opt) == "from_config");
    ::setenv("PCSI_OUTPUT_DIR", "from_env", 1);
    CHECK(harness::resolve_output_dir(cfg, opt) == "from_env");
    opt.output_dir = "from_flag";
    CHECK(harness::resolve_output_dir(cfg, opt) == "from_flag");
    ::unsetenv("PCSI_OUTPUT_DIR");
  }

  TEST_CASE("simulate writes a reproducible summary") {
    const auto cfg = parse_config(kMinimal);
    harness::CommandOptions opt;
    opt.threads = 1;
    opt.output_dir = scratch("sim_a").string();
    const auto a = harness::cmd_simulate(cfg, opt);
    opt.output_dir = scratch("sim_b").string();
    opt.threads = 2;
    const auto b = harness::cmd_simulate(cfg, opt);
    CHECK(slurp(a) == slurp(b));

    const auto j = nlohmann::json::parse(slurp(a));
    CHECK(j["config_hash"] == cfg.hash);
    CHECK(j["seed"] == 3);
    CHECK(j["runs"].size() == 3);
    CHECK(j["peak"].get<long>() >= 1);
    CHECK(fs::exists(a.parent_path() / "trace.csv"));
    const auto meta = nlohmann::json::parse(slurp(a.parent_path() / "run_meta.json"));
    CHECK(meta.contains("wall_clock_seconds"));
    const std::string trace = slurp(a.parent_path() / "trace.csv");
    CHECK(trace.rfind("k,subset,substate,user,q0\n", 0) == 0);
  }

  TEST_CASE("bounds report") {
    const auto cfg = parse_config(kReference);
    harness::CommandOptions opt;
    opt.output_dir = scratch("bounds").string();
    const auto path = harness::cmd_bounds(cfg, opt);
    const auto j = nlohmann::json::parse(slurp(path));
    for (const char* key : {"jstar", "ub_min", "phi_hat", "gap", "method", "resolution", "diagnostics", "config_hash"})
      CHECK(j.contains(key));
    CHECK(j["method"] == "singleton");
    CHECK(j["gap"].get<double>() < 1e-3);
    CHECK(j["jstar"].get<double>() > 0.0);
    CHECK(j["diagnostics"]["stability"]["status"] == "stable_interior");

    // A singleton system and the same system listed as explicit subsets agree.
    const auto explicit_subsets = parse_config(with(kReference, "subsets", "[[0], [1]]"));
    const auto k = nlohmann::json::parse(harness::bounds_report_json(explicit_subsets));
    CHECK(k["jstar"] == j["jstar"]);

    const auto unstable = parse_config(with(kReference, "arrival_rates", "[0.6, 0.6]"));
    CHECK_THROWS_AS(harness::cmd_bounds(unstable, opt), bounds::UnstableArrivals);
  }

  TEST_CASE("exponent writes estimates and fits") {
    const auto cfg = parse_config(kReference);
    harness::CommandOptions opt;
    opt.threads = 1;
    opt.output_dir = scratch("exponent").string();
    const auto path = harness::cmd_exponent(cfg, opt);
    const std::string csv = slurp(path.parent_path() / "estimates.csv");
    CHECK(csv.rfind("n,p_hat,ci_lo,ci_hi,replicas,ess,events,slots,method,view,flag\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 4 + 4);
    const auto j = nlohmann::json::parse(slurp(path));
    CHECK(j["fits"].contains("direct"));
    CHECK(j["fits"].contains("importance"));
    CHECK(j["comparison"].contains("jstar"));
    CHECK(j["tilt"].size() == 2);
  }
}
