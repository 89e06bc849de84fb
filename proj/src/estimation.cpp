#include "pcsi/estimation.hpp"

#include <cmath>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "pcsi/policies.hpp"

namespace pcsi::est {
namespace {

constexpr double kZ = 1.96;
constexpr std::uint64_t kPolicyStream = 0x9011c7ULL;

void check_levels(std::span<const Count> levels) {
  if (levels.empty()) throw std::invalid_argument("at least one level is required");
  for (Count n : levels)
    if (n < 0) throw std::invalid_argument("levels must be nonnegative");
}

// One busy cycle from the empty system at k = 0. Stops at the first hit of
// the deepest level, at the first return to empty after being nonempty, or
// after `cap` slots. `tilted` supplies the running likelihood ratio.
CycleRecord run_cycle(const sim::SystemModel& model, sim::Policy& policy, sim::ChannelSource& channel,
                      const TiltedChannel* tilted, Rng& rng, std::span<const Count> levels, Count cap) {
  CycleRecord rec;
  rec.weight.assign(levels.size(), 0.0);
  std::size_t pending = levels.size();
  auto mark = [&](Count m) {
    for (std::size_t l = 0; l < levels.size(); ++l) {
      if (rec.weight[l] == 0.0 && m >= levels[l]) {
        rec.weight[l] = tilted ? std::exp(tilted->log_weight()) : 1.0;
        --pending;
      }
    }
  };
  auto state = sim::SystemState::initial_state(model, sim::QueueVector());
  mark(0);
  bool busy = false;
  while (pending > 0 && rec.length < cap) {
    sim::step(state, policy, model, channel, rng);
    ++rec.length;
    const Count m = sim::max_queue(state.q);
    mark(m);
    if (m > 0)
      busy = true;
    else if (busy)
      break;
  }
  return rec;
}

double mean_of(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

double sample_sd(const std::vector<double>& x, double mean) {
  if (x.size() < 2) return 0.0;
  double s = 0.0;
  for (double v : x) s += (v - mean) * (v - mean);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

}  // namespace

std::uint64_t policy_seed(std::uint64_t replica) { return splitmix64(replica ^ kPolicyStream); }

const char* to_string(Method m) { return m == Method::direct ? "direct" : "importance"; }
const char* to_string(View v) { return v == View::stationary ? "stationary" : "first_hitting"; }

PolicyFactory named_policy(const std::string& name, const SubsetSystem& subsets) {
  if (!policy::is_known_policy(name)) throw std::invalid_argument("unknown policy: " + name);
  return [name, subsets](std::uint64_t seed) { return policy::make_policy(name, subsets, seed); };
}

void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& body) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(count, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  const std::size_t chunk = (count + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk, end = std::min(count, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

std::pair<double, double> wilson_interval(std::size_t successes, std::size_t trials, double z) {
  if (trials == 0) return {0.0, 1.0};
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double center = (p + z2 / (2 * n)) / (1 + z2 / n);
  const double half = z * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / (1 + z2 / n);
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

std::vector<OverflowEstimate> reduce_stationary(std::span<const Count> levels,
                                                const ReplicaBatch<StationaryRecord>& batch) {
  const auto records = batch.ordered();
  std::vector<OverflowEstimate> out;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    OverflowEstimate e;
    e.level = levels[l];
    e.method = Method::direct;
    e.view = View::stationary;
    e.replicas = records.size();
    Count samples = 0, hits = 0;
    std::vector<double> per_replica;
    for (const auto& r : records) {
      e.slots += r.slots;
      samples += r.samples;
      hits += r.hits[l];
      if (r.samples > 0) per_replica.push_back(static_cast<double>(r.hits[l]) / static_cast<double>(r.samples));
    }
    e.events = static_cast<std::size_t>(hits);
    e.ess = static_cast<double>(samples);
    e.p_hat = samples > 0 ? static_cast<double>(hits) / static_cast<double>(samples) : 0.0;
    if (per_replica.size() >= 2)
      e.std_error = sample_sd(per_replica, mean_of(per_replica)) / std::sqrt(static_cast<double>(per_replica.size()));
    else if (samples > 0)
      e.std_error = std::sqrt(e.p_hat * (1 - e.p_hat) / static_cast<double>(samples));
    if (hits == 0) {
      e.ci_lo = 0.0;
      e.ci_hi = samples > 0 ? std::min(1.0, 3.0 / static_cast<double>(samples)) : 1.0;
      e.flag = "level too deep for direct MC";
    } else {
      e.ci_lo = std::max(0.0, e.p_hat - kZ * e.std_error);
      e.ci_hi = std::min(1.0, e.p_hat + kZ * e.std_error);
      if (e.events < kMinEvents) e.flag = "fewer than 50 events";
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<OverflowEstimate> reduce_cycles(std::span<const Count> levels, const ReplicaBatch<CycleRecord>& batch,
                                            Method method) {
  const auto records = batch.ordered();
  std::vector<OverflowEstimate> out;
  const std::size_t R = records.size();
  for (std::size_t l = 0; l < levels.size(); ++l) {
    OverflowEstimate e;
    e.level = levels[l];
    e.method = method;
    e.view = View::first_hitting;
    e.replicas = R;
    std::vector<double> w(R);
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t r = 0; r < R; ++r) {
      w[r] = records[r].weight[l];
      sum += w[r];
      sum_sq += w[r] * w[r];
      if (w[r] > 0) ++e.events;
      e.slots += records[r].length;
    }
    e.ess = sum_sq > 0 ? sum * sum / sum_sq : 0.0;
    if (method == Method::direct) {
      e.p_hat = R > 0 ? static_cast<double>(e.events) / static_cast<double>(R) : 0.0;
      e.std_error = R > 0 ? std::sqrt(e.p_hat * (1 - e.p_hat) / static_cast<double>(R)) : 0.0;
      std::tie(e.ci_lo, e.ci_hi) = wilson_interval(e.events, R);
      if (e.events == 0)
        e.flag = "level too deep for direct MC";
      else if (e.events < kMinEvents)
        e.flag = "fewer than 50 events";
    } else {
      e.p_hat = R > 0 ? sum / static_cast<double>(R) : 0.0;
      e.std_error = R > 1 ? sample_sd(w, e.p_hat) / std::sqrt(static_cast<double>(R)) : 0.0;
      if (e.p_hat > 1.0) {
        e.p_hat = 1.0;
        e.flag = "weighted mean clamped to 1";
      }
      e.ci_lo = std::max(0.0, e.p_hat - kZ * e.std_error);
      e.ci_hi = std::min(1.0, e.p_hat + kZ * e.std_error);
      if (e.events == 0)
        e.flag = "no importance-sampling hits";
      else if (e.ess < kMinEss && e.flag.empty())
        e.flag = "effective sample size below 50";
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<OverflowEstimate> estimate_overflow_direct(const sim::SystemModel& model, const PolicyFactory& policy,
                                                       const DirectOptions& options) {
  check_levels(options.levels);
  if (options.replicas == 0) throw std::invalid_argument("replicas must be positive");
  if (options.horizon < 1) throw std::invalid_argument("horizon must be positive");

  if (options.view == View::stationary) {
    std::vector<StationaryRecord> slots(options.replicas);
    sim::RunOptions run_opts;
    run_opts.horizon = options.horizon;
    run_opts.levels = options.levels;
    run_opts.burn_in_fraction = options.burn_in_fraction;
    run_opts.sample_stride = options.sample_stride;
    parallel_for(options.replicas, options.threads, [&](std::size_t r) {
      const std::uint64_t seed = replica_seed(options.seed, r);
      auto pol = policy(policy_seed(seed));
      const auto res = sim::run(model, *pol, run_opts, seed);
      slots[r].slots = res.summary.horizon;
      slots[r].samples = res.summary.samples;
      slots[r].hits = res.summary.sample_hits;
    });
    ReplicaBatch<StationaryRecord> batch;
    for (std::size_t r = 0; r < slots.size(); ++r) batch.add(r, std::move(slots[r]));
    return reduce_stationary(options.levels, batch);
  }

  std::vector<CycleRecord> slots(options.replicas);
  parallel_for(options.replicas, options.threads, [&](std::size_t r) {
    const std::uint64_t seed = replica_seed(options.seed, r);
    auto pol = policy(policy_seed(seed));
    Rng rng(seed);
    sim::NaturalChannel channel;
    slots[r] = run_cycle(model, *pol, channel, nullptr, rng, options.levels, options.horizon);
  });
  ReplicaBatch<CycleRecord> batch;
  for (std::size_t r = 0; r < slots.size(); ++r) batch.add(r, std::move(slots[r]));
  return reduce_cycles(options.levels, batch, Method::direct);
}

TiltedChannel::TiltedChannel(const sim::SystemModel& model, const Eigen::VectorXd& phi) {
  const auto& subsets = model.subsets();
  if (!subsets.all_singletons()) throw std::invalid_argument("importance sampling requires singleton subsets");
  if (static_cast<std::size_t>(phi.size()) != model.num_users())
    throw std::invalid_argument("one tilted mean per user is required");
  for (std::size_t a = 0; a < subsets.size(); ++a) {
    const std::size_t user = subsets[a][0];
    const auto& shape = model.substates(a);
    const Eigen::VectorXd values = shape.substates.col(0).cast<double>();
    const ld::ScalarRateFunction<double> rf(user_marginal(model.dist(), user));
    const double target = phi(static_cast<Eigen::Index>(user));
    double eta = 0.0;
    if (target != rf.mean()) {
      if (!(target > rf.min() && target < rf.max()))
        throw std::invalid_argument("tilted mean of user " + std::to_string(user) +
                                    " must lie strictly inside its rate range");
      eta = rf.solve_tilt(target);
    }
    const Eigen::Index m = values.size();
    std::vector<double> tilted(static_cast<std::size_t>(m));
    double norm = 0.0;
    for (Eigen::Index r = 0; r < m; ++r) {
      tilted[static_cast<std::size_t>(r)] = shape.probs(r) * std::exp(eta * values(r));
      norm += tilted[static_cast<std::size_t>(r)];
    }
    std::vector<double> cum(static_cast<std::size_t>(m)), ratio(static_cast<std::size_t>(m), 0.0);
    double acc = 0.0;
    for (Eigen::Index r = 0; r < m; ++r) {
      const auto s = static_cast<std::size_t>(r);
      const double p_t = eta == 0.0 ? shape.probs(r) : tilted[s] / norm;
      acc += p_t;
      cum[s] = acc;
      if (p_t > 0 && eta != 0.0) ratio[s] = std::log(shape.probs(r)) - std::log(p_t);
    }
    cumulative_.push_back(std::move(cum));
    log_ratio_.push_back(std::move(ratio));
    etas_.push_back(eta);
  }
}

std::size_t TiltedChannel::reveal(const sim::SystemModel&, std::size_t subset, Rng& rng) {
  const std::size_t r = rng.discrete(cumulative_[subset]);
  log_weight_ += log_ratio_[subset][r];
  return r;
}

std::vector<OverflowEstimate> estimate_overflow_importance(const sim::SystemModel& model,
                                                           const PolicyFactory& policy, const Eigen::VectorXd& phi,
                                                           const ImportanceOptions& options) {
  check_levels(options.levels);
  if (options.replicas == 0) throw std::invalid_argument("replicas must be positive");
  if (options.cycle_cap < 1) throw std::invalid_argument("cycle cap must be positive");
  const TiltedChannel prototype(model, phi);

  std::vector<CycleRecord> slots(options.replicas);
  parallel_for(options.replicas, options.threads, [&](std::size_t r) {
    const std::uint64_t seed = replica_seed(options.seed, r);
    auto pol = policy(policy_seed(seed));
    Rng rng(seed);
    TiltedChannel channel = prototype;
    slots[r] = run_cycle(model, *pol, channel, &channel, rng, options.levels, options.cycle_cap);
  });
  ReplicaBatch<CycleRecord> batch;
  for (std::size_t r = 0; r < slots.size(); ++r) batch.add(r, std::move(slots[r]));
  return reduce_cycles(options.levels, batch, Method::importance);
}

ExponentFit fit_exponent(std::span<const OverflowEstimate> estimates) {
  ExponentFit fit;
  std::vector<const OverflowEstimate*> used;
  for (const auto& e : estimates) {
    if (e.usable() && e.p_hat > 0)
      used.push_back(&e);
    else
      fit.excluded.push_back(e.level);
  }
  if (used.size() < 3) throw std::invalid_argument("fit_exponent: fewer than 3 usable levels");
  std::sort(used.begin(), used.end(), [](auto* a, auto* b) { return a->level < b->level; });

  const std::size_t m = used.size();
  std::vector<double> x(m), y(m), var(m);
  double min_var = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    x[i] = static_cast<double>(used[i]->level);
    y[i] = std::log(used[i]->p_hat);
    const double rel = used[i]->std_error / used[i]->p_hat;
    var[i] = rel * rel;
    if (var[i] > 0 && (min_var == 0.0 || var[i] < min_var)) min_var = var[i];
    fit.levels.push_back(used[i]->level);
    fit.log_p.push_back(y[i]);
  }
  const bool weighted = min_var > 0.0;
  std::vector<double> w(m, 1.0);
  if (weighted)
    for (std::size_t i = 0; i < m; ++i) w[i] = 1.0 / std::max(var[i], min_var);

  double sw = 0, sx = 0, sy = 0;
  for (std::size_t i = 0; i < m; ++i) {
    sw += w[i];
    sx += w[i] * x[i];
    sy += w[i] * y[i];
  }
  const double xbar = sx / sw, ybar = sy / sw;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < m; ++i) {
    sxx += w[i] * (x[i] - xbar) * (x[i] - xbar);
    sxy += w[i] * (x[i] - xbar) * (y[i] - ybar);
  }
  if (!(sxx > 0)) throw std::invalid_argument("fit_exponent: levels must differ");
  const double b = sxy / sxx;
  fit.slope = -b;
  fit.intercept = ybar - b * xbar;
  if (weighted) {
    fit.std_error = std::sqrt(1.0 / sxx);
  } else {
    double rss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double r = y[i] - (fit.intercept + b * x[i]);
      rss += r * r;
    }
    fit.std_error = std::sqrt(rss / static_cast<double>(m - 2) / sxx);
  }
  return fit;
}

Trend linear_trend(std::span<const double> y) {
  const std::size_t m = y.size();
  if (m < 3) throw std::invalid_argument("linear_trend: at least 3 points required");
  const double xbar = static_cast<double>(m - 1) / 2.0;
  double ybar = 0.0;
  for (double v : y) ybar += v;
  ybar /= static_cast<double>(m);
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double dx = static_cast<double>(i) - xbar;
    sxx += dx * dx;
    sxy += dx * (y[i] - ybar);
  }
  Trend t;
  t.slope = sxy / sxx;
  t.intercept = ybar - t.slope * xbar;
  double rss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double r = y[i] - (t.intercept + t.slope * static_cast<double>(i));
    rss += r * r;
  }
  t.std_error = std::sqrt(rss / static_cast<double>(m - 2) / sxx);
  return t;
}

}  // namespace pcsi::est
