#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pcsi/queueing_sim.hpp"
#include "pcsi/rate_functions.hpp"

namespace pcsi::est {

using sim::Count;

enum class Method { direct, importance };
enum class View { stationary, first_hitting };

const char* to_string(Method m);
const char* to_string(View v);

/// Estimate of P[||Q||_inf >= level] from one batch of replicas.
struct OverflowEstimate {
  Count level{0};
  double p_hat{0.0};
  double ci_lo{0.0};
  double ci_hi{0.0};
  double std_error{0.0};
  std::size_t replicas{0};
  double ess{0.0};        // effective sample size (plain sample count for direct runs)
  std::size_t events{0};  // replicas or samples that reached the level
  Count slots{0};         // simulated slots behind the estimate
  Method method{Method::direct};
  View view{View::stationary};
  std::string flag;       // empty when the level is usable for a fit
  bool usable() const { return flag.empty(); }
};

/// Builds the policy of one replica from that replica's seed.
using PolicyFactory = std::function<std::unique_ptr<sim::Policy>(std::uint64_t)>;

/// Seed handed to the policy of the replica whose channel stream uses
/// `replica`; keeps randomized policies off the channel stream.
std::uint64_t policy_seed(std::uint64_t replica);

/// Factory around policy::make_policy.
PolicyFactory named_policy(const std::string& name, const SubsetSystem& subsets);

inline constexpr std::size_t kMinEvents = 50;
inline constexpr double kMinEss = 50.0;

struct DirectOptions {
  std::vector<Count> levels;
  std::size_t replicas{16};
  Count horizon{100'000};        // slots per replica (stationary) or cap per cycle (first hitting)
  std::uint64_t seed{1};
  View view{View::stationary};
  double burn_in_fraction{0.2};
  Count sample_stride{0};        // 0: ceil(horizon / 1000)
  unsigned threads{0};           // 0: hardware concurrency
};

/// Stationary view: fraction of post-burn-in sampled epochs with
/// ||Q||_inf >= n, averaged over replicas, with a normal CI from the spread
/// of the replica means. First-hitting view: fraction of busy cycles started
/// from the empty system that reach n before emptying, with a Wilson CI.
/// One estimate per level; deterministic given the seed for any thread count.
std::vector<OverflowEstimate> estimate_overflow_direct(const sim::SystemModel& model, const PolicyFactory& policy,
                                                       const DirectOptions& options);

/// Singleton-subset channel whose sampled rate follows the exponential tilt
/// of the user's marginal with mean phi_i, keeping the log likelihood ratio
/// of the natural law against the tilted one.
class TiltedChannel final : public sim::ChannelSource {
 public:
  TiltedChannel(const sim::SystemModel& model, const Eigen::VectorXd& phi);

  std::size_t reveal(const sim::SystemModel& model, std::size_t subset, Rng& rng) override;

  double log_weight() const { return log_weight_; }
  void reset() { log_weight_ = 0.0; }
  /// Tilt parameter of each subset (each subset is one user).
  const std::vector<double>& etas() const { return etas_; }

 private:
  std::vector<std::vector<double>> cumulative_;
  std::vector<std::vector<double>> log_ratio_;  // log p(r) - log p_tilted(r) per sub-state
  std::vector<double> etas_;
  double log_weight_{0.0};
};

struct ImportanceOptions {
  std::vector<Count> levels;
  std::size_t replicas{10'000};
  Count cycle_cap{1'000'000};  // slots per busy cycle
  std::uint64_t seed{1};
  unsigned threads{0};
};

/// Busy-cycle estimate of P[reach n before returning to empty] from the
/// empty state under the tilted channel, weighting each hit by the
/// likelihood ratio accumulated up to the hitting slot. With phi equal to
/// the natural means every weight is 1 and this is the direct first-hitting
/// estimator. Requires singleton subsets and phi_i strictly inside the
/// support hull of user i's rate (or equal to its mean).
std::vector<OverflowEstimate> estimate_overflow_importance(const sim::SystemModel& model,
                                                           const PolicyFactory& policy, const Eigen::VectorXd& phi,
                                                           const ImportanceOptions& options);

struct ExponentFit {
  std::vector<Count> levels;     // levels used
  std::vector<double> log_p;
  double slope{0.0};             // fitted exponent, -d log p / dn
  double std_error{0.0};
  double intercept{0.0};
  std::vector<Count> excluded;   // flagged levels left out
};

/// Weighted least squares of log p_hat(n) on n with weights from the
/// delta-method variances (SE/p)^2. The slope error propagates those
/// variances; when every SE is zero the fit is unweighted and the error
/// comes from the residuals. Requires at least 3 usable levels.
ExponentFit fit_exponent(std::span<const OverflowEstimate> estimates);

struct Trend {
  double slope{0.0};
  double std_error{0.0};
  double intercept{0.0};
};

/// Ordinary least-squares line through (index, y).
Trend linear_trend(std::span<const double> y);

/// Wilson score interval for `successes` out of `trials` at z = 1.96.
std::pair<double, double> wilson_interval(std::size_t successes, std::size_t trials, double z = 1.96);

/// Runs body(i) for i in [0, count) on `threads` workers with a fixed
/// contiguous partition. Results must be written to per-index slots.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& body);

/// Per-replica results merged by concatenation; reduction always runs in
/// replica-index order, so any grouping of batches gives identical sums.
template <typename Record>
class ReplicaBatch {
 public:
  void add(std::size_t index, Record r) { items_.emplace_back(index, std::move(r)); }
  void merge(const ReplicaBatch& other) { items_.insert(items_.end(), other.items_.begin(), other.items_.end()); }
  std::size_t size() const { return items_.size(); }

  /// Records sorted by replica index.
  std::vector<Record> ordered() const {
    auto copy = items_;
    std::sort(copy.begin(), copy.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<Record> out;
    out.reserve(copy.size());
    for (auto& [i, r] : copy) out.push_back(std::move(r));
    return out;
  }

 private:
  std::vector<std::pair<std::size_t, Record>> items_;
};

/// Stationary replica record: sampled epochs and hits per level.
struct StationaryRecord {
  Count slots{0};
  Count samples{0};
  std::vector<Count> hits;
};

/// Busy-cycle record: likelihood ratio at the first hit of each level, 0 if
/// the level was not reached.
struct CycleRecord {
  std::vector<double> weight;
  Count length{0};
};

std::vector<OverflowEstimate> reduce_stationary(std::span<const Count> levels,
                                                const ReplicaBatch<StationaryRecord>& batch);
std::vector<OverflowEstimate> reduce_cycles(std::span<const Count> levels, const ReplicaBatch<CycleRecord>& batch,
                                            Method method);

}  // namespace pcsi::est
