#include "pcsi/queueing_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

namespace pcsi::sim {

namespace {

constexpr Count kCountMax = std::numeric_limits<Count>::max();

Count floor_mul(Count k, const Rational& r) {
  const __int128 p = static_cast<__int128>(k) * r.num;
  return static_cast<Count>(p / r.den);
}

void add_checked(Count& target, Count amount) {
  if (amount > 0 && target > kCountMax - amount) throw std::overflow_error("64-bit counter overflow");
  target += amount;
}

}  // namespace

Rational Rational::from_double(double x, std::int64_t max_den) {
  if (!std::isfinite(x) || x < 0.0) throw std::invalid_argument("arrival rate must be finite and nonnegative");
  // Convergents h/k of the continued fraction of x.
  std::int64_t h0 = 0, h1 = 1, k0 = 1, k1 = 0;
  double rest = x;
  for (int it = 0; it < 64; ++it) {
    const double a_d = std::floor(rest);
    if (a_d > 1e15) break;
    const auto a = static_cast<std::int64_t>(a_d);
    const std::int64_t h2 = a * h1 + h0;
    const std::int64_t k2 = a * k1 + k0;
    if (k2 > max_den) break;
    h0 = h1;
    h1 = h2;
    k0 = k1;
    k1 = k2;
    const double frac = rest - a_d;
    if (std::abs(static_cast<double>(h1) / static_cast<double>(k1) - x) <= 1e-12 * std::max(1.0, x) ||
        frac < 1e-15)
      break;
    rest = 1.0 / frac;
  }
  if (k1 == 0) throw std::invalid_argument("arrival rate too large");
  return Rational{h1, k1};
}

ArrivalSpec::ArrivalSpec(std::vector<Rational> rates) : rates_(std::move(rates)) {
  for (const auto& r : rates_) {
    if (r.num < 0 || r.den <= 0) throw std::invalid_argument("arrival rates must be nonnegative rationals");
  }
}

ArrivalSpec ArrivalSpec::from_doubles(const Eigen::VectorXd& lambda) {
  std::vector<Rational> rates;
  for (Eigen::Index i = 0; i < lambda.size(); ++i) rates.push_back(Rational::from_double(lambda(i)));
  return ArrivalSpec(std::move(rates));
}

Count ArrivalSpec::arrivals(std::size_t user, Count k) const {
  const auto& r = rates_[user];
  return floor_mul(k + 1, r) - floor_mul(k, r);
}

Eigen::VectorXd ArrivalSpec::lambda() const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rates_.size()));
  for (std::size_t i = 0; i < rates_.size(); ++i) out(static_cast<Eigen::Index>(i)) = rates_[i].value();
  return out;
}

SystemModel::SystemModel(JointChannelDistribution dist, SubsetSystem subsets, ArrivalSpec arrivals)
    : dist_(std::move(dist)), subsets_(std::move(subsets)), arrivals_(std::move(arrivals)) {
  if (subsets_.num_users() != dist_.num_users())
    throw std::invalid_argument("subset system and channel distribution disagree on the number of users");
  if (arrivals_.size() != dist_.num_users())
    throw std::invalid_argument("arrival vector has wrong dimension");
  subsets_.require_coverage(arrivals_.lambda());
  for (std::size_t a = 0; a < subsets_.size(); ++a) {
    substates_.push_back(substate_marginal(dist_, subsets_[a]));
    const auto& sub = substates_.back();
    std::vector<std::size_t> table(dist_.num_states(), 0);
    Eigen::VectorXi key(static_cast<Eigen::Index>(sub.subset.size()));
    for (std::size_t s = 0; s < dist_.num_states(); ++s) {
      for (std::size_t c = 0; c < sub.subset.size(); ++c)
        key(static_cast<Eigen::Index>(c)) =
            dist_.support()(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(sub.subset[c]));
      table[s] = sub.index_of(key);
    }
    joint_to_substate_.push_back(std::move(table));
    substate_columns_.push_back(sub.substates.transpose());
  }
}

SystemState SystemState::initial_state(const SystemModel& model, const QueueVector& q0) {
  const auto n = static_cast<Eigen::Index>(model.num_users());
  SystemState s;
  s.initial = q0.size() == 0 ? QueueVector::Zero(n) : q0;
  if (s.initial.size() != n) throw std::invalid_argument("initial queue vector has wrong dimension");
  if ((s.initial.array() < 0).any()) throw std::invalid_argument("initial queues must be nonnegative");
  s.q = s.initial;
  s.arrived = QueueVector::Zero(n);
  s.served = QueueVector::Zero(n);
  s.sampled = QueueVector::Zero(n);
  s.subset_count = QueueVector::Zero(static_cast<Eigen::Index>(model.subsets().size()));
  for (std::size_t a = 0; a < model.subsets().size(); ++a) {
    const auto& sub = model.substates(a);
    s.substate_count.push_back(QueueVector::Zero(static_cast<Eigen::Index>(sub.size())));
    s.user_count.push_back(
        CountMatrix::Zero(static_cast<Eigen::Index>(sub.size()), static_cast<Eigen::Index>(sub.subset.size())));
  }
  return s;
}

std::optional<std::string> SystemState::check_invariants(const SystemModel& model) const {
  if (subset_count.sum() != k) return "sum of subset counts differs from k";
  for (std::size_t a = 0; a < model.subsets().size(); ++a) {
    if (substate_count[a].sum() != subset_count(static_cast<Eigen::Index>(a)))
      return "sub-state counts of subset " + std::to_string(a) + " do not sum to its subset count";
    const QueueVector by_state = user_count[a].rowwise().sum();
    if (by_state != substate_count[a])
      return "user counts of subset " + std::to_string(a) + " do not sum to its sub-state counts";
  }
  if (q != initial + arrived - served) return "Q != Q(0) + F - F-hat";
  if ((q.array() < 0).any()) return "negative queue";
  if ((served.array() > (arrived + initial).array()).any()) return "served more than arrived";
  if ((served.array() > sampled.array()).any()) return "served more than the sampled rates";
  return std::nullopt;
}

std::size_t SampledTrace::total() const {
  std::size_t t = 0;
  for (const auto& v : observed) t += v.size();
  return t;
}

TraceChannel::TraceChannel(const SampledTrace& trace) : trace_(trace), cursor_(trace.observed.size(), 0) {}

std::size_t TraceChannel::reveal(const SystemModel&, std::size_t subset, Rng&) {
  if (subset >= trace_.observed.size() || cursor_[subset] >= trace_.observed[subset].size())
    throw std::out_of_range("sampled trace exhausted for subset " + std::to_string(subset));
  return trace_.observed[subset][cursor_[subset]++];
}

SlotRecord step(SystemState& state, Policy& policy, const SystemModel& model, ChannelSource& channel,
                Rng& rng) {
  if (state.k == kCountMax) throw std::overflow_error("slot counter overflow");
  const auto& subsets = model.subsets();

  SlotRecord rec;
  rec.k = state.k;
  rec.subset = policy.choose_subset(state.q, state.k);
  if (rec.subset >= subsets.size())
    throw PolicyViolation("policy chose subset " + std::to_string(rec.subset) + " outside the collection");

  rec.substate = channel.reveal(model, rec.subset, rng);
  const auto& users = subsets[rec.subset];
  const auto rates = model.substate_column(rec.subset, rec.substate);

  rec.user = policy.choose_user(rec.subset, rates, state.q);
  const auto pos_it = std::find(users.begin(), users.end(), rec.user);
  if (pos_it == users.end())
    throw PolicyViolation("policy scheduled user " + std::to_string(rec.user) + " outside the chosen subset");
  const auto pos = static_cast<Eigen::Index>(pos_it - users.begin());

  for (Eigen::Index i = 0; i < state.q.size(); ++i) {
    const Count a = model.arrivals().arrivals(static_cast<std::size_t>(i), state.k);
    add_checked(state.q(i), a);
    add_checked(state.arrived(i), a);
  }
  const auto u = static_cast<Eigen::Index>(rec.user);
  const Count served = std::min<Count>(state.q(u), rates(pos));
  state.q(u) -= served;
  state.served(u) += served;

  for (std::size_t c = 0; c < users.size(); ++c)
    add_checked(state.sampled(static_cast<Eigen::Index>(users[c])), rates(static_cast<Eigen::Index>(c)));
  ++state.subset_count(static_cast<Eigen::Index>(rec.subset));
  ++state.substate_count[rec.subset](static_cast<Eigen::Index>(rec.substate));
  ++state.user_count[rec.subset](static_cast<Eigen::Index>(rec.substate), pos);
  ++state.k;
  return rec;
}

RunResult run(const SystemModel& model, Policy& policy, ChannelSource& channel, const RunOptions& options,
              std::uint64_t seed) {
  if (options.horizon < 1) throw std::invalid_argument("horizon must be at least 1");
  Rng rng(seed);
  RunResult out;
  SystemState state = SystemState::initial_state(model, options.initial_queue);

  const Count stride =
      options.sample_stride > 0 ? options.sample_stride : (options.horizon + 999) / 1000;
  const auto burn = static_cast<Count>(std::floor(options.burn_in_fraction * static_cast<double>(options.horizon)));
  const std::size_t nl = options.levels.size();

  RunSummary& sum = out.summary;
  sum.horizon = options.horizon;
  sum.first_hit.assign(nl, -1);
  sum.sample_hits.assign(nl, 0);

  auto observe = [&](Count k) {
    const Count m = max_queue(state.q);
    sum.peak = std::max(sum.peak, m);
    for (std::size_t l = 0; l < nl; ++l) {
      if (sum.first_hit[l] < 0 && m >= options.levels[l]) sum.first_hit[l] = k;
    }
    if (k >= burn && k > 0 && (k - burn) % stride == 0) {
      ++sum.samples;
      for (std::size_t l = 0; l < nl; ++l)
        if (m >= options.levels[l]) ++sum.sample_hits[l];
    }
  };

  if (options.record_trace) {
    out.trace = SampledTrace{};
    out.trace->observed.resize(model.subsets().size());
    out.slots.reserve(static_cast<std::size_t>(options.horizon));
  }
  if (options.record_history) {
    out.history.reserve(static_cast<std::size_t>(options.horizon) + 1);
    out.history.push_back(state.q);
  }
  observe(0);
  for (Count k = 0; k < options.horizon; ++k) {
    if (options.record_trace) {
      QueueVector before = state.q;
      SlotRecord rec = step(state, policy, model, channel, rng);
      rec.q = std::move(before);
      out.trace->observed[rec.subset].push_back(rec.substate);
      out.slots.push_back(std::move(rec));
    } else {
      step(state, policy, model, channel, rng);
    }
    if (options.record_history) out.history.push_back(state.q);
    observe(state.k);
  }
  sum.final_queue = state.q;
  out.final_state = std::move(state);
  return out;
}

RunResult run(const SystemModel& model, Policy& policy, const RunOptions& options, std::uint64_t seed) {
  NaturalChannel channel;
  return run(model, policy, channel, options, seed);
}

Eigen::VectorXd ScaledPath::operator()(double t) const {
  if (t < 0.0 || t > horizon() + 1e-12) throw std::out_of_range("scaled path evaluated outside [0, T]");
  const double x = t * n_;
  auto lo = static_cast<Eigen::Index>(std::floor(x));
  lo = std::min<Eigen::Index>(lo, knots_.rows() - 1);
  if (lo == knots_.rows() - 1) return knots_.row(lo).transpose();
  const double frac = x - static_cast<double>(lo);
  return ((1.0 - frac) * knots_.row(lo) + frac * knots_.row(lo + 1)).transpose();
}

ScaledPath scaled_path(std::span<const QueueVector> history, Count n, double T) {
  if (n <= 0) throw std::invalid_argument("scaled_path: n must be positive");
  if (T < 0.0) throw std::invalid_argument("scaled_path: T must be nonnegative");
  const auto points = static_cast<std::size_t>(std::floor(static_cast<double>(n) * T + 1e-9)) + 1;
  if (history.size() < points) throw std::invalid_argument("scaled_path: history shorter than nT");
  const Eigen::Index users = history.empty() ? 0 : history[0].size();
  Eigen::MatrixXd knots(static_cast<Eigen::Index>(points), users);
  for (std::size_t k = 0; k < points; ++k)
    knots.row(static_cast<Eigen::Index>(k)) = history[k].cast<double>().transpose() / static_cast<double>(n);
  return ScaledPath(std::move(knots), static_cast<double>(n));
}

void write_trace_csv(std::ostream& os, std::span<const SlotRecord> slots, std::size_t num_users) {
  os << "k,subset,substate,user";
  for (std::size_t i = 0; i < num_users; ++i) os << ",q" << i;
  os << '\n';
  for (const auto& r : slots) {
    os << r.k << ',' << r.subset << ',' << r.substate << ',' << r.user;
    for (Eigen::Index i = 0; i < r.q.size(); ++i) os << ',' << r.q(i);
    os << '\n';
  }
}

}  // namespace pcsi::sim
