#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pcsi/channel_model.hpp"
#include "pcsi/random.hpp"

namespace pcsi::sim {

using Count = std::int64_t;
using QueueVector = Eigen::Matrix<Count, Eigen::Dynamic, 1>;
using CountMatrix = Eigen::Matrix<Count, Eigen::Dynamic, Eigen::Dynamic>;

/// Nonnegative rational arrival rate num/den.
struct Rational {
  std::int64_t num{0};
  std::int64_t den{1};

  /// Best rational approximation with denominator <= max_den (continued fractions).
  static Rational from_double(double x, std::int64_t max_den = 1'000'000);
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

/// Deterministic arrivals: A_i(k) = floor((k+1) lambda_i) - floor(k lambda_i),
/// so that A_i(0) + ... + A_i(k-1) = floor(k lambda_i) exactly.
class ArrivalSpec {
 public:
  ArrivalSpec() = default;
  explicit ArrivalSpec(std::vector<Rational> rates);
  static ArrivalSpec from_doubles(const Eigen::VectorXd& lambda);

  std::size_t size() const { return rates_.size(); }
  Count arrivals(std::size_t user, Count k) const;
  Eigen::VectorXd lambda() const;
  const std::vector<Rational>& rates() const { return rates_; }

 private:
  std::vector<Rational> rates_;
};

/// Immutable description of one queueing system: channel law, observable
/// subsets, arrivals, plus precomputed sub-state tables.
class SystemModel {
 public:
  SystemModel(JointChannelDistribution dist, SubsetSystem subsets, ArrivalSpec arrivals);

  const JointChannelDistribution& dist() const { return dist_; }
  const SubsetSystem& subsets() const { return subsets_; }
  const ArrivalSpec& arrivals() const { return arrivals_; }
  std::size_t num_users() const { return dist_.num_users(); }

  const SubStateDistribution& substates(std::size_t subset) const { return substates_[subset]; }
  /// Sub-state index of subset `subset` seen when the joint state is `joint`.
  std::size_t substate_of(std::size_t subset, std::size_t joint) const {
    return joint_to_substate_[subset][joint];
  }
  /// Rates of sub-state `substate` of subset `subset` as a contiguous column.
  Eigen::Ref<const Eigen::VectorXi> substate_column(std::size_t subset, std::size_t substate) const {
    return substate_columns_[subset].col(static_cast<Eigen::Index>(substate));
  }

 private:
  JointChannelDistribution dist_;
  SubsetSystem subsets_;
  ArrivalSpec arrivals_;
  std::vector<SubStateDistribution> substates_;
  std::vector<std::vector<std::size_t>> joint_to_substate_;
  std::vector<Eigen::MatrixXi> substate_columns_;
};

/// Queue vector plus all cumulative counting processes.
struct SystemState {
  Count k{0};
  QueueVector initial;   // Q(0)
  QueueVector q;         // Q(k)
  QueueVector arrived;   // F: cumulative arrivals
  QueueVector served;    // F-hat: cumulative departures
  QueueVector sampled;   // M: cumulative rates observed on chosen subsets
  QueueVector subset_count;                  // C_alpha
  std::vector<QueueVector> substate_count;   // G^alpha_r
  std::vector<CountMatrix> user_count;       // G-hat^alpha_{r,i}; rows r, cols positions in alpha

  static SystemState initial_state(const SystemModel& model, const QueueVector& q0);

  /// First violated bookkeeping identity, if any.
  std::optional<std::string> check_invariants(const SystemModel& model) const;
};

/// Two-step scheduling rule. choose_subset is called before the slot's
/// channel state is drawn, so it cannot depend on it.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::size_t choose_subset(const QueueVector& q, Count k) = 0;
  /// `substate` lists the rates of the users of subset `subset`, in order.
  virtual std::size_t choose_user(std::size_t subset, const Eigen::Ref<const Eigen::VectorXi>& substate,
                                  const QueueVector& q) = 0;
};

class PolicyViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Source of the sub-state revealed for the chosen subset.
class ChannelSource {
 public:
  virtual ~ChannelSource() = default;
  virtual std::size_t reveal(const SystemModel& model, std::size_t subset, Rng& rng) = 0;
};

/// Draws the full joint state R(k) and restricts it to the chosen subset.
class NaturalChannel final : public ChannelSource {
 public:
  std::size_t reveal(const SystemModel& model, std::size_t subset, Rng& rng) override {
    return model.substate_of(subset, model.dist().sample_index(rng));
  }
};

/// Per-subset sequences of observed sub-states: entry j of `observed[a]` is
/// the sub-state seen the j-th time subset a was picked.
struct SampledTrace {
  std::vector<std::vector<std::size_t>> observed;

  std::size_t total() const;
};

/// Replays a sampled trace instead of drawing fresh channel states.
class TraceChannel final : public ChannelSource {
 public:
  explicit TraceChannel(const SampledTrace& trace);
  std::size_t reveal(const SystemModel& model, std::size_t subset, Rng& rng) override;

 private:
  const SampledTrace& trace_;
  std::vector<std::size_t> cursor_;
};

struct SlotRecord {
  Count k{0};
  std::size_t subset{0};
  std::size_t substate{0};
  std::size_t user{0};
  QueueVector q;  // Q(k), the state the policy acted on
};

/// Advances one slot: arrivals, subset choice, channel reveal, user choice,
/// service of min(Q_i + A_i, R_i) packets, bookkeeping.
SlotRecord step(SystemState& state, Policy& policy, const SystemModel& model, ChannelSource& channel,
                Rng& rng);

struct RunOptions {
  Count horizon{1000};
  std::vector<Count> levels;
  double burn_in_fraction{0.2};
  Count sample_stride{0};  // 0: ceil(horizon / 1000)
  bool record_trace{false};
  bool record_history{false};
  QueueVector initial_queue;  // empty: all zero
};

struct RunSummary {
  Count horizon{0};
  Count peak{0};                    // max_k ||Q(k)||_inf over k = 0..horizon
  std::vector<Count> first_hit;     // first k with ||Q(k)||_inf >= level, -1 if never
  std::vector<Count> sample_hits;   // post-burn-in sampled epochs with ||Q||_inf >= level
  Count samples{0};
  QueueVector final_queue;
};

struct RunResult {
  RunSummary summary;
  SystemState final_state;
  std::optional<SampledTrace> trace;
  std::vector<SlotRecord> slots;       // when record_trace
  std::vector<QueueVector> history;    // Q(0..horizon) when record_history
};

RunResult run(const SystemModel& model, Policy& policy, ChannelSource& channel, const RunOptions& options,
              std::uint64_t seed);
RunResult run(const SystemModel& model, Policy& policy, const RunOptions& options, std::uint64_t seed);

/// q^(n)(t) = Q(nt)/n on the lattice t = k/n, linear in between.
class ScaledPath {
 public:
  ScaledPath(Eigen::MatrixXd knots, double n) : knots_(std::move(knots)), n_(n) {}

  double horizon() const { return static_cast<double>(knots_.rows() - 1) / n_; }
  Eigen::VectorXd operator()(double t) const;
  const Eigen::MatrixXd& knots() const { return knots_; }

 private:
  Eigen::MatrixXd knots_;  // rows: lattice points
  double n_;
};

ScaledPath scaled_path(std::span<const QueueVector> history, Count n, double T);

/// One row per slot: k,subset,substate,user,q0..q{N-1} with Q(k) before the slot.
void write_trace_csv(std::ostream& os, std::span<const SlotRecord> slots, std::size_t num_users);

inline Count max_queue(const QueueVector& q) { return q.size() == 0 ? 0 : q.maxCoeff(); }

}  // namespace pcsi::sim
