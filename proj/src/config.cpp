#include "pcsi/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pcsi/policies.hpp"

namespace pcsi::config {
namespace {

using nlohmann::json;

const json& require(const json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("missing field \"") + key + "\"");
  return j.at(key);
}

template <typename T>
T get_as(const json& j, const char* what) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("field \"") + what + "\" has the wrong type");
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? get_as<T>(j.at(key), key) : fallback;
}

std::vector<sim::Count> levels_of(const json& j, const char* key) {
  auto levels = get_or<std::vector<sim::Count>>(j, key, {});
  for (auto n : levels)
    if (n < 0) throw ConfigError("levels must be nonnegative");
  return levels;
}

ScalarDistribution marginal_of(const json& j) {
  const auto values = get_as<std::vector<int>>(require(j, "values"), "values");
  const auto probs = get_as<std::vector<double>>(require(j, "probs"), "probs");
  if (values.size() != probs.size()) throw ConfigError("marginal values and probs differ in length");
  return ScalarDistribution(Eigen::Map<const Eigen::VectorXi>(values.data(), static_cast<Eigen::Index>(values.size())),
                            Eigen::Map<const Eigen::VectorXd>(probs.data(), static_cast<Eigen::Index>(probs.size())));
}

JointChannelDistribution channel_of(const json& j, std::size_t n) {
  const auto type = get_or<std::string>(j, "type", "product");
  if (type == "product") {
    const auto& list = require(j, "marginals");
    if (!list.is_array()) throw ConfigError("field \"marginals\" has the wrong type");
    std::vector<ScalarDistribution> marginals;
    if (list.size() == 1 && n > 1) {
      marginals.assign(n, marginal_of(list[0]));
    } else {
      for (const auto& m : list) marginals.push_back(marginal_of(m));
    }
    if (marginals.size() != n) throw ConfigError("channel has " + std::to_string(marginals.size()) +
                                                 " marginals for " + std::to_string(n) + " users");
    return JointChannelDistribution::product_form(marginals);
  }
  if (type == "joint") {
    const auto support = get_as<std::vector<std::vector<int>>>(require(j, "support"), "support");
    const auto probs = get_as<std::vector<double>>(require(j, "probs"), "probs");
    if (support.size() != probs.size()) throw ConfigError("joint support and probs differ in length");
    Eigen::MatrixXi s(static_cast<Eigen::Index>(support.size()), static_cast<Eigen::Index>(n));
    for (std::size_t r = 0; r < support.size(); ++r) {
      if (support[r].size() != n) throw ConfigError("joint support tuple has the wrong length");
      for (std::size_t i = 0; i < n; ++i) s(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = support[r][i];
    }
    return JointChannelDistribution(s, Eigen::Map<const Eigen::VectorXd>(probs.data(), static_cast<Eigen::Index>(probs.size())));
  }
  throw ConfigError("unknown channel type \"" + type + "\"");
}

}  // namespace

std::string fnv1a_hex(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

sim::SystemModel ExperimentConfig::model() const {
  return sim::SystemModel(channel, subsets, sim::ArrivalSpec::from_doubles(arrival_rates));
}

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");

  const auto rates = get_as<std::vector<double>>(require(j, "arrival_rates"), "arrival_rates");
  const auto n = get_or<std::size_t>(j, "num_users", rates.size());
  if (n == 0) throw ConfigError("num_users must be positive");
  if (rates.size() != n) throw ConfigError("arrival_rates must have num_users entries");
  for (double r : rates)
    if (!(r >= 0) || !std::isfinite(r)) throw ConfigError("arrival rates must be finite and nonnegative");
  const Eigen::VectorXd lambda = Eigen::Map<const Eigen::VectorXd>(rates.data(), static_cast<Eigen::Index>(rates.size()));

  auto build = [&]() {
    try {
      auto channel = channel_of(require(j, "channel"), n);
      auto subsets = (!j.contains("subsets") || j.at("subsets") == "singletons")
                         ? SubsetSystem::singletons(n)
                         : SubsetSystem(get_as<std::vector<UserSet>>(j.at("subsets"), "subsets"), n);
      subsets.require_coverage(lambda);
      return ExperimentConfig(std::move(channel), std::move(subsets));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  };
  ExperimentConfig cfg = build();
  cfg.num_users = n;
  cfg.arrival_rates = lambda;
  cfg.canonical = j.dump();
  cfg.hash = fnv1a_hex(cfg.canonical);

  if (j.contains("policy")) {
    const auto& p = j.at("policy");
    cfg.policy = p.is_string() ? p.get<std::string>() : get_as<std::string>(require(p, "name"), "policy.name");
  }
  if (!policy::is_known_policy(cfg.policy)) throw ConfigError("unknown policy \"" + cfg.policy + "\"");
  if (cfg.policy == "max_queue" && !cfg.subsets.all_singletons())
    throw ConfigError("max_queue requires singleton subsets");
  if (cfg.policy == "exp_rule") {
    UserSet all(cfg.num_users);
    for (std::size_t i = 0; i < cfg.num_users; ++i) all[i] = i;
    if (cfg.subsets.find(all) >= cfg.subsets.size()) throw ConfigError("exp_rule requires a subset holding every user");
  }

  cfg.seed = get_or<std::uint64_t>(j, "seed", 1);
  cfg.output_dir = get_or<std::string>(j, "output_dir", "out");

  if (j.contains("simulation")) {
    const auto& s = j.at("simulation");
    auto& o = cfg.simulation;
    o.horizon = get_or<sim::Count>(s, "horizon", o.horizon);
    o.replicas = get_or<std::size_t>(s, "replicas", o.replicas);
    o.levels = levels_of(s, "levels");
    o.burn_in_fraction = get_or<double>(s, "burn_in_fraction", o.burn_in_fraction);
    o.sample_stride = get_or<sim::Count>(s, "sample_stride", o.sample_stride);
    o.record_trace = get_or<bool>(s, "record_trace", o.record_trace);
    o.initial_queue = get_or<std::vector<sim::Count>>(s, "initial_queue", {});
  }
  {
    const auto& o = cfg.simulation;
    if (o.horizon < 1) throw ConfigError("simulation.horizon must be positive");
    if (o.replicas < 1) throw ConfigError("simulation.replicas must be positive");
    if (!(o.burn_in_fraction >= 0 && o.burn_in_fraction < 1)) throw ConfigError("burn_in_fraction must lie in [0, 1)");
    if (o.sample_stride < 0) throw ConfigError("sample_stride must be nonnegative");
    if (!o.initial_queue.empty() && o.initial_queue.size() != cfg.num_users)
      throw ConfigError("initial_queue must have num_users entries");
    for (auto q : o.initial_queue)
      if (q < 0) throw ConfigError("initial queue lengths must be nonnegative");
  }

  if (j.contains("estimation")) {
    const auto& s = j.at("estimation");
    auto& o = cfg.estimation;
    o.method = get_or<std::string>(s, "method", o.method);
    o.view = get_or<std::string>(s, "view", o.view);
    o.levels = levels_of(s, "levels");
    o.replicas = get_or<std::size_t>(s, "replicas", o.replicas);
    o.horizon = get_or<sim::Count>(s, "horizon", o.horizon);
    o.cycle_cap = get_or<sim::Count>(s, "cycle_cap", o.cycle_cap);
    o.is_replicas = get_or<std::size_t>(s, "is_replicas", o.is_replicas);
    o.tolerance = get_or<double>(s, "tolerance", o.tolerance);
    if (s.contains("tilt") && !s.at("tilt").is_null() && s.at("tilt") != "ub_min")
      o.tilt = get_as<std::vector<double>>(s.at("tilt"), "tilt");
  }
  {
    const auto& o = cfg.estimation;
    if (o.method != "direct" && o.method != "importance" && o.method != "both")
      throw ConfigError("estimation.method must be direct, importance or both");
    if (o.view != "stationary" && o.view != "first_hitting")
      throw ConfigError("estimation.view must be stationary or first_hitting");
    if (o.replicas < 1 || o.is_replicas < 1) throw ConfigError("estimation replicas must be positive");
    if (o.horizon < 1 || o.cycle_cap < 1) throw ConfigError("estimation horizons must be positive");
    if (o.tilt && o.tilt->size() != cfg.num_users) throw ConfigError("estimation.tilt must have num_users entries");
    if (!(o.tolerance > 0)) throw ConfigError("estimation.tolerance must be positive");
  }

  if (j.contains("bounds")) {
    const auto& s = j.at("bounds");
    auto& o = cfg.bounds;
    o.jstar = get_or<bool>(s, "jstar", o.jstar);
    o.upper_bound = get_or<bool>(s, "upper_bound", o.upper_bound);
    o.subset_upper_bound = get_or<bool>(s, "subset_upper_bound", o.subset_upper_bound);
    o.multistarts = get_or<std::size_t>(s, "multistarts", o.multistarts);
    o.grid_resolution = get_or<double>(s, "grid_resolution", o.grid_resolution);
    o.grid_cap = get_or<std::size_t>(s, "grid_cap", o.grid_cap);
    o.max_users = get_or<std::size_t>(s, "max_users", o.max_users);
    if (!(o.grid_resolution > 0 && o.grid_resolution <= 0.5)) throw ConfigError("bounds.grid_resolution must lie in (0, 0.5]");
    if (o.grid_cap < 8) throw ConfigError("bounds.grid_cap is too small");
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

}  // namespace pcsi::config
