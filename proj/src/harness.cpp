#include "pcsi/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include <json.hpp>

#include "pcsi/estimation.hpp"
#include "pcsi/exponent_bounds.hpp"
#include "pcsi/throughput_region.hpp"

namespace pcsi::harness {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

json vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }
json vec(const sim::QueueVector& v) { return std::vector<sim::Count>(v.data(), v.data() + v.size()); }

json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json provenance(const config::ExperimentConfig& cfg) {
  json modules;
  for (const char* m : {"channel_model", "queueing_sim", "policies", "rate_functions", "exponent_bounds",
                        "estimation", "harness_cli"})
    modules[m] = kVersion;
  return {{"config_hash", cfg.hash}, {"version", kVersion}, {"modules", modules}, {"seed", cfg.seed}};
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

// Wall-clock data lives in its own file so that the primary outputs are
// byte-identical across reruns.
void write_meta(const fs::path& dir, const config::ExperimentConfig& cfg, const char* command, double seconds,
                unsigned threads) {
  json meta = provenance(cfg);
  meta["command"] = command;
  meta["wall_clock_seconds"] = seconds;
  meta["threads"] = threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : threads;
  write_file(dir / "run_meta.json", meta.dump(2) + "\n");
}

fs::path prepare(const config::ExperimentConfig& cfg, const CommandOptions& options) {
  const fs::path dir = resolve_output_dir(cfg, options);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

bounds::SearchOptions search_options(const config::ExperimentConfig& cfg) {
  bounds::SearchOptions o;
  o.multistarts = cfg.bounds.multistarts;
  o.grid_resolution = cfg.bounds.grid_resolution;
  o.grid_cap = cfg.bounds.grid_cap;
  o.max_users = cfg.bounds.max_users;
  o.seed = cfg.seed;
  return o;
}

void warn_if_unstable(const config::ExperimentConfig& cfg) {
  if (!cfg.subsets.disjoint()) return;
  const auto st = ld::stability_check(cfg.arrival_rates, cfg.channel, cfg.subsets);
  if (st.status != ld::Stability::stable_interior)
    std::cerr << "warning: arrival vector is " << ld::to_string(st.status)
              << "; overflow estimates describe transient growth\n";
}

struct BoundsOutcome {
  json report;
  std::optional<double> jstar;
  std::optional<double> ub_min;
  Eigen::VectorXd phi_hat;
};

BoundsOutcome compute_bounds(const config::ExperimentConfig& cfg) {
  if (!cfg.subsets.disjoint()) throw std::invalid_argument("exponent bounds require disjoint subsets");
  const auto stab = ld::stability_check(cfg.arrival_rates, cfg.channel, cfg.subsets);
  if (stab.status != ld::Stability::stable_interior) throw bounds::UnstableArrivals();
  const auto opts = search_options(cfg);

  BoundsOutcome out;
  json diag;
  diag["stability"] = {{"status", ld::to_string(stab.status)}, {"margin", stab.margin}, {"scale", number_or_null(stab.scale)}};
  diag["fluid_drift"] = ld::fluid_drift(cfg.arrival_rates, cfg.channel, cfg.subsets);
  json report = provenance(cfg);
  report["jstar"] = nullptr;
  report["ub_min"] = nullptr;
  report["phi_hat"] = nullptr;
  report["gap"] = nullptr;
  double resolution = 0.0;

  const bool singletons = cfg.subsets.all_singletons() && cfg.subsets.size() == cfg.num_users;
  if (singletons) {
    report["method"] = "singleton";
    const auto rates = bounds::marginal_rate_functions(cfg.channel);
    if (cfg.bounds.jstar) {
      const auto js = bounds::jstar_singleton(cfg.arrival_rates, rates, opts);
      if (!(js.value > 0)) throw std::runtime_error("J* is not positive on a stable instance");
      out.jstar = js.value;
      report["jstar"] = number_or_null(js.value);
      resolution = std::max(resolution, js.resolution);
      json per = json::array();
      for (const auto& s : js.per_subset)
        per.push_back({{"users", s.users},
                       {"value", number_or_null(s.value.to_scalar())},
                       {"phi", vec(s.phi)},
                       {"grid_value", number_or_null(s.grid_value.to_scalar())},
                       {"grid_step", s.grid_step}});
      diag["per_subset"] = per;
      diag["jstar_argmin"] = js.argmin;
      diag["jstar_phi"] = vec(js.phi_full);
      diag["ub_at_jstar_phi"] = number_or_null(bounds::upper_bound_eval(cfg.arrival_rates, js.phi_full, rates).value.to_scalar());
      out.phi_hat = js.phi_full;
    }
    if (cfg.bounds.upper_bound) {
      const auto ub = bounds::upper_bound_min(cfg.arrival_rates, rates, opts);
      out.ub_min = ub.value;
      out.phi_hat = ub.phi_hat;
      report["ub_min"] = number_or_null(ub.value);
      resolution = std::max(resolution, ub.resolution);
      diag["ub_grid_value"] = number_or_null(ub.grid_value);
      diag["ub_evaluations"] = ub.evaluations;
    }
    if (cfg.bounds.subset_upper_bound) {
      const auto sub = bounds::subset_upper_bound_min(cfg.arrival_rates, cfg.channel, cfg.subsets, opts);
      diag["subset_upper_bound"] = sub.value;
      diag["literal_denominator_flag"] = sub.literal_denominator_flag;
    }
  } else {
    report["method"] = "subset_upper_bound";
    if (cfg.bounds.subset_upper_bound) {
      const auto sub = bounds::subset_upper_bound_min(cfg.arrival_rates, cfg.channel, cfg.subsets, opts);
      if (!(sub.value > 0)) throw std::runtime_error("exponent bound is not positive on a stable instance");
      out.ub_min = sub.value;
      report["ub_min"] = sub.value;
      json laws = json::array();
      for (const auto& p : sub.phi_hat) laws.push_back(vec(p));
      diag["subset_laws"] = laws;
      diag["literal_denominator_flag"] = sub.literal_denominator_flag;
    }
  }
  if (out.phi_hat.size() > 0) report["phi_hat"] = vec(out.phi_hat);
  if (out.jstar && out.ub_min) {
    // Two infinite bounds match: overflow is impossible.
    const bool both_infinite = std::isinf(*out.jstar) && std::isinf(*out.ub_min);
    report["gap"] = both_infinite ? 0.0 : std::abs(*out.jstar - *out.ub_min) / std::max(*out.jstar, 1e-12);
  }
  report["resolution"] = resolution;
  report["diagnostics"] = diag;
  out.report = std::move(report);
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += (c == '"') ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

json fit_json(const std::vector<est::OverflowEstimate>& rows) {
  try {
    const auto fit = est::fit_exponent(rows);
    return {{"slope", fit.slope}, {"std_error", fit.std_error}, {"intercept", fit.intercept},
            {"levels", fit.levels}, {"log_p", fit.log_p}, {"excluded", fit.excluded}};
  } catch (const std::invalid_argument& e) {
    json excluded = json::array();
    for (const auto& r : rows)
      if (!r.usable()) excluded.push_back(r.level);
    return {{"error", e.what()}, {"excluded", excluded}};
  }
}

}  // namespace

fs::path resolve_output_dir(const config::ExperimentConfig& cfg, const CommandOptions& options) {
  if (!options.output_dir.empty()) return options.output_dir;
  if (const char* env = std::getenv("PCSI_OUTPUT_DIR"); env && *env) return env;
  return cfg.output_dir;
}

fs::path cmd_simulate(const config::ExperimentConfig& cfg, const CommandOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = prepare(cfg, options);
  warn_if_unstable(cfg);
  const auto model = cfg.model();
  const auto factory = est::named_policy(cfg.policy, cfg.subsets);
  const auto& s = cfg.simulation;

  sim::RunOptions run_opts;
  run_opts.horizon = s.horizon;
  run_opts.levels = s.levels;
  run_opts.burn_in_fraction = s.burn_in_fraction;
  run_opts.sample_stride = s.sample_stride;
  if (!s.initial_queue.empty())
    run_opts.initial_queue = Eigen::Map<const sim::QueueVector>(s.initial_queue.data(),
                                                                static_cast<Eigen::Index>(s.initial_queue.size()));

  std::vector<json> runs(s.replicas);
  std::vector<sim::SlotRecord> trace;
  est::parallel_for(s.replicas, options.threads, [&](std::size_t r) {
    const std::uint64_t seed = replica_seed(cfg.seed, r);
    auto policy = factory(est::policy_seed(seed));
    sim::RunOptions o = run_opts;
    o.record_trace = s.record_trace && r == 0;
    auto res = sim::run(model, *policy, o, seed);
    const auto violation = res.final_state.check_invariants(model);
    if (violation) throw std::logic_error("bookkeeping invariant violated: " + *violation);
    runs[r] = {{"replica", r},
               {"seed", seed},
               {"peak", res.summary.peak},
               {"first_hit", res.summary.first_hit},
               {"sample_hits", res.summary.sample_hits},
               {"samples", res.summary.samples},
               {"final_queue", vec(res.summary.final_queue)}};
    if (o.record_trace) trace = std::move(res.slots);
  });

  json summary = provenance(cfg);
  summary["command"] = "simulate";
  summary["policy"] = cfg.policy;
  summary["num_users"] = cfg.num_users;
  summary["arrival_rates"] = vec(cfg.arrival_rates);
  summary["horizon"] = s.horizon;
  summary["replicas"] = s.replicas;
  summary["levels"] = s.levels;
  sim::Count peak = 0;
  for (const auto& r : runs) peak = std::max(peak, r["peak"].get<sim::Count>());
  summary["peak"] = peak;
  summary["runs"] = runs;
  summary["trace_file"] = s.record_trace ? json("trace.csv") : json(nullptr);
  write_file(dir / "summary.json", summary.dump(2) + "\n");
  if (s.record_trace) {
    std::ofstream out(dir / "trace.csv", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write trace.csv");
    sim::write_trace_csv(out, trace, cfg.num_users);
  }
  write_meta(dir, cfg, "simulate", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(),
             options.threads);
  return dir / "summary.json";
}

std::string bounds_report_json(const config::ExperimentConfig& cfg) {
  auto outcome = compute_bounds(cfg);
  outcome.report["command"] = "bounds";
  return outcome.report.dump(2) + "\n";
}

fs::path cmd_bounds(const config::ExperimentConfig& cfg, const CommandOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string text = bounds_report_json(cfg);
  const fs::path dir = prepare(cfg, options);
  write_file(dir / "bounds.json", text);
  write_meta(dir, cfg, "bounds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(),
             options.threads);
  return dir / "bounds.json";
}

fs::path cmd_exponent(const config::ExperimentConfig& cfg, const CommandOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = prepare(cfg, options);
  warn_if_unstable(cfg);
  const auto& e = cfg.estimation;
  if (e.levels.empty()) throw config::ConfigError("estimation.levels must not be empty");
  const auto model = cfg.model();
  const auto factory = est::named_policy(cfg.policy, cfg.subsets);

  std::optional<BoundsOutcome> theory;
  try {
    theory = compute_bounds(cfg);
  } catch (const bounds::UnstableArrivals&) {
    std::cerr << "warning: no exponent bounds for an unstable arrival vector\n";
  } catch (const std::invalid_argument& err) {
    std::cerr << "warning: no exponent bounds: " << err.what() << "\n";
  }

  std::vector<est::OverflowEstimate> direct, importance;
  if (e.method == "direct" || e.method == "both") {
    est::DirectOptions o;
    o.levels = e.levels;
    o.replicas = e.replicas;
    o.horizon = e.view == "stationary" ? e.horizon : e.cycle_cap;
    o.seed = cfg.seed;
    o.view = e.view == "stationary" ? est::View::stationary : est::View::first_hitting;
    o.burn_in_fraction = cfg.simulation.burn_in_fraction;
    o.sample_stride = cfg.simulation.sample_stride;
    o.threads = options.threads;
    direct = est::estimate_overflow_direct(model, factory, o);
  }
  Eigen::VectorXd tilt;
  if (e.method == "importance" || e.method == "both") {
    if (e.tilt) {
      tilt = Eigen::Map<const Eigen::VectorXd>(e.tilt->data(), static_cast<Eigen::Index>(e.tilt->size()));
    } else {
      if (!theory || theory->phi_hat.size() == 0 || !cfg.subsets.all_singletons())
        throw std::runtime_error("importance sampling needs estimation.tilt or singleton bounds to choose the tilt");
      tilt = theory->phi_hat;
    }
    est::ImportanceOptions o;
    o.levels = e.levels;
    o.replicas = e.is_replicas;
    o.cycle_cap = e.cycle_cap;
    o.seed = splitmix64(cfg.seed ^ 0x15ULL);
    o.threads = options.threads;
    importance = est::estimate_overflow_importance(model, factory, tilt, o);
  }

  std::string csv = "n,p_hat,ci_lo,ci_hi,replicas,ess,events,slots,method,view,flag\n";
  auto rows = [&](const std::vector<est::OverflowEstimate>& list) {
    for (const auto& r : list) {
      json line = {r.p_hat, r.ci_lo, r.ci_hi, r.ess};
      csv += std::to_string(r.level) + "," + line[0].dump() + "," + line[1].dump() + "," + line[2].dump() + "," +
             std::to_string(r.replicas) + "," + line[3].dump() + "," + std::to_string(r.events) + "," +
             std::to_string(r.slots) + "," + est::to_string(r.method) + "," + est::to_string(r.view) + "," +
             csv_field(r.flag) + "\n";
    }
  };
  rows(direct);
  rows(importance);
  write_file(dir / "estimates.csv", csv);

  json fit = provenance(cfg);
  fit["command"] = "exponent";
  fit["policy"] = cfg.policy;
  fit["levels"] = e.levels;
  fit["tolerance"] = e.tolerance;
  fit["fits"] = json::object();
  if (!direct.empty()) fit["fits"]["direct"] = fit_json(direct);
  if (!importance.empty()) {
    fit["fits"]["importance"] = fit_json(importance);
    fit["tilt"] = vec(tilt);
  }
  json comparison;
  comparison["note"] = "targets are in-repo bound computations";
  if (theory) {
    comparison["jstar"] = theory->jstar ? number_or_null(*theory->jstar) : json(nullptr);
    comparison["ub_min"] = theory->ub_min ? number_or_null(*theory->ub_min) : json(nullptr);
    comparison["resolution"] = theory->report["resolution"];
    const std::optional<double> target = theory->jstar ? theory->jstar : theory->ub_min;
    for (auto& [name, f] : fit["fits"].items()) {
      if (!target || !std::isfinite(*target) || !f.contains("slope")) continue;
      const double rel = std::abs(f["slope"].get<double>() - *target) / *target;
      comparison[name] = {{"relative_error", rel}, {"within_tolerance", rel <= e.tolerance}};
    }
  }
  fit["comparison"] = comparison;
  write_file(dir / "fit.json", fit.dump(2) + "\n");
  write_meta(dir, cfg, "exponent", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(),
             options.threads);
  return dir / "fit.json";
}

}  // namespace pcsi::harness
