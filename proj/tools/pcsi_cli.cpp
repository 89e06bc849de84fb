// pcsi: simulate | bounds | exponent | selftest
//
// Exit codes: 0 success, 1 runtime error, 2 configuration error.

#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "oracles.hpp"
#include "pcsi/channel_model.hpp"
#include "pcsi/config.hpp"
#include "pcsi/estimation.hpp"
#include "pcsi/exponent_bounds.hpp"
#include "pcsi/harness.hpp"
#include "pcsi/rate_functions.hpp"
#include "pcsi/throughput_region.hpp"

namespace {

using namespace pcsi;

int report_error(const char* kind, const std::string& message, int code) {
  nlohmann::json err = {{"error", message}, {"kind", kind}, {"exit_code", code}};
  std::cerr << err.dump() << "\n";
  return code;
}

// Quick oracle cross-checks; the full suites live in the test tree.
int selftest() {
  int failures = 0;
  auto check = [&](const char* name, const std::function<bool()>& body) {
    bool ok = false;
    try {
      ok = body();
    } catch (const std::exception& e) {
      std::cerr << name << ": " << e.what() << "\n";
    }
    std::cout << (ok ? "PASS " : "FAIL ") << name << "\n";
    if (!ok) ++failures;
  };

  const std::vector<double> values = {0.0, 2.0}, probs = {0.5, 0.5};
  const ScalarDistribution marginal(Eigen::Vector2i(0, 2), Eigen::Vector2d(0.5, 0.5));
  const ld::ScalarRateFunction<double> rf(marginal);

  check("cramer_rate matches grid Legendre transform", [&] {
    const oracle::GridLegendre grid(values, probs, -30.0, 30.0, 1e-4);
    for (double x : {0.0, 0.1, 0.5, 1.0, 1.7, 2.0})
      if (std::abs(rf.rate(x).value() - grid(x)) > 1e-6) return false;
    return true;
  });
  check("tilt duality", [&] {
    for (double phi : {0.2, 0.61, 1.0, 1.5}) {
      const auto t = ld::tilt_to_mean(rf, phi);
      if (std::abs(rf.rate(phi).value() - (t.eta * phi - rf.log_mgf(t.eta))) > 1e-8) return false;
    }
    return true;
  });
  check("drift system matches linear solve", [&] {
    const Eigen::Vector2d lambda(0.4, 0.4), phi(0.5, 0.5);
    const auto sol = bounds::drift_solve({0, 1}, phi, lambda);
    const auto ref = oracle::drift_linear_system(lambda, phi);
    return sol && std::abs(sol->drift - ref.drift) < 1e-12 && (sol->share - ref.share).cwiseAbs().maxCoeff() < 1e-12;
  });
  check("region vertices match support function", [&] {
    const auto dist = JointChannelDistribution::product_form({marginal, marginal});
    const auto shape = substate_marginal(dist, {0, 1});
    const Eigen::Vector4d phi(0.1, 0.2, 0.3, 0.4);
    const auto region = ld::region_vertices(shape, phi);
    for (const auto& w : {Eigen::Vector2d(1, 0), Eigen::Vector2d(0.3, 0.7), Eigen::Vector2d(1, 1)}) {
      const double h = (region.vertices * w).maxCoeff();
      if (std::abs(h - oracle::region_support(shape.substates, phi, w)) > 1e-12) return false;
    }
    return true;
  });
  check("importance sampling agrees with exact enumeration", [&] {
    const auto dist = JointChannelDistribution::product_form({marginal});
    Eigen::VectorXd lam(1);
    lam << 0.5;
    const sim::SystemModel model(dist, SubsetSystem::singletons(1), sim::ArrivalSpec::from_doubles(lam));
    const double exact = oracle::first_hit_probability({0, 2}, probs, 1, 2, 2, 8);
    est::ImportanceOptions o;
    o.levels = {2};
    o.replicas = 20000;
    o.cycle_cap = 8;
    o.seed = 11;
    Eigen::VectorXd phi(1);
    phi << 0.7;
    const auto e = est::estimate_overflow_importance(model, est::named_policy("max_queue", model.subsets()), phi, o);
    return std::abs(e[0].p_hat - exact) < 3 * e[0].std_error + 1e-12;
  });
  check("reference instance J* equals minimized upper bound", [&] {
    const auto dist = JointChannelDistribution::product_form({marginal, marginal});
    const auto rep = bounds::verify_matching(Eigen::Vector2d(0.4, 0.4), dist, SubsetSystem::singletons(2));
    return rep.gap && *rep.gap < 1e-3 && rep.jstar_positive;
  });
  std::cout << (failures == 0 ? "selftest passed" : "selftest failed") << "\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Partial-CSI scheduling: simulation, exponent bounds and overflow estimation"};
  app.require_subcommand(1);

  std::string config_path;
  harness::CommandOptions options;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "Experiment configuration (JSON)")->required();
    sub->add_option("-j,--threads", options.threads, "Worker threads (0: all cores)");
    sub->add_option("-o,--output-dir", options.output_dir, "Output directory (overrides config and PCSI_OUTPUT_DIR)");
  };
  auto* simulate = app.add_subcommand("simulate", "Run the configured policy and write a run summary");
  auto* bounds_cmd = app.add_subcommand("bounds", "Compute J* and the minimized upper bounds");
  auto* exponent = app.add_subcommand("exponent", "Estimate overflow probabilities and fit the exponent");
  auto* self = app.add_subcommand("selftest", "Run the built-in oracle cross-checks");
  add_common(simulate);
  add_common(bounds_cmd);
  add_common(exponent);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (self->parsed()) return selftest();
    const auto cfg = config::load_config(config_path);
    std::filesystem::path written;
    if (simulate->parsed()) written = harness::cmd_simulate(cfg, options);
    if (bounds_cmd->parsed()) written = harness::cmd_bounds(cfg, options);
    if (exponent->parsed()) written = harness::cmd_exponent(cfg, options);
    std::cerr << "wrote " << written.string() << "\n";
    return 0;
  } catch (const config::ConfigError& e) {
    return report_error("config", e.what(), 2);
  } catch (const std::exception& e) {
    return report_error("runtime", e.what(), 1);
  }
}
