#include "pcsi/channel_model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>

namespace pcsi {

namespace {

constexpr double kNormalizationTol = 1e-12;

void check_probabilities(const Eigen::VectorXd& probs) {
  if (probs.size() == 0) throw std::invalid_argument("distribution support is empty");
  for (Eigen::Index s = 0; s < probs.size(); ++s) {
    if (!std::isfinite(probs(s)) || probs(s) < 0.0)
      throw std::invalid_argument("probabilities must be finite and nonnegative");
  }
  if (std::abs(probs.sum() - 1.0) > kNormalizationTol)
    throw std::invalid_argument("probabilities must sum to 1 (within 1e-12), got " +
                                std::to_string(probs.sum()));
}

std::vector<int> row_of(const Eigen::MatrixXi& m, Eigen::Index r) {
  std::vector<int> out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) out[static_cast<std::size_t>(c)] = m(r, c);
  return out;
}

}  // namespace

ScalarDistribution::ScalarDistribution(const Eigen::VectorXi& vals, const Eigen::VectorXd& ps) {
  if (vals.size() != ps.size()) throw std::invalid_argument("values/probs size mismatch");
  check_probabilities(ps);
  std::map<int, double> merged;
  for (Eigen::Index s = 0; s < vals.size(); ++s) {
    if (vals(s) < 0) throw std::invalid_argument("service rates must be nonnegative");
    if (ps(s) > 0.0) merged[vals(s)] += ps(s);
  }
  values.resize(static_cast<Eigen::Index>(merged.size()));
  probs.resize(static_cast<Eigen::Index>(merged.size()));
  Eigen::Index i = 0;
  for (const auto& [v, p] : merged) {
    values(i) = v;
    probs(i) = p;
    ++i;
  }
}

double ScalarDistribution::mean() const { return values.cast<double>().dot(probs); }

JointChannelDistribution::JointChannelDistribution(Eigen::MatrixXi support, Eigen::VectorXd probs)
    : support_(std::move(support)), probs_(std::move(probs)) {
  if (support_.rows() != probs_.size())
    throw std::invalid_argument("support/probs size mismatch");
  if (support_.cols() == 0) throw std::invalid_argument("channel distribution needs at least one user");
  check_probabilities(probs_);
  if ((support_.array() < 0).any()) throw std::invalid_argument("service rates must be nonnegative");
  std::set<std::vector<int>> seen;
  for (Eigen::Index r = 0; r < support_.rows(); ++r) {
    if (!seen.insert(row_of(support_, r)).second)
      throw std::invalid_argument("support tuples must be distinct");
  }
  cumulative_.resize(static_cast<std::size_t>(probs_.size()));
  std::partial_sum(probs_.begin(), probs_.end(), cumulative_.begin());
}

JointChannelDistribution JointChannelDistribution::product_form(
    const std::vector<ScalarDistribution>& marginals) {
  if (marginals.empty()) throw std::invalid_argument("product form needs at least one marginal");
  Eigen::Index states = 1;
  for (const auto& m : marginals) states *= m.values.size();
  const auto n = static_cast<Eigen::Index>(marginals.size());
  Eigen::MatrixXi support(states, n);
  Eigen::VectorXd probs(states);
  // Mixed-radix enumeration, last user fastest, so rows come out lexicographic.
  for (Eigen::Index s = 0; s < states; ++s) {
    Eigen::Index rest = s;
    double p = 1.0;
    for (Eigen::Index u = n - 1; u >= 0; --u) {
      const auto& m = marginals[static_cast<std::size_t>(u)];
      const Eigen::Index digit = rest % m.values.size();
      rest /= m.values.size();
      support(s, u) = m.values(digit);
      p *= m.probs(digit);
    }
    probs(s) = p;
  }
  // Products of normalized marginals can drift by a few ulps.
  probs /= probs.sum();
  return JointChannelDistribution(std::move(support), std::move(probs));
}

std::size_t SubStateDistribution::index_of(const Eigen::Ref<const Eigen::VectorXi>& substate) const {
  for (Eigen::Index r = 0; r < substates.rows(); ++r) {
    if (substates.row(r).transpose() == substate) return static_cast<std::size_t>(r);
  }
  return size();
}

SubsetSystem::SubsetSystem(std::vector<UserSet> subsets, std::size_t num_users)
    : subsets_(std::move(subsets)), num_users_(num_users), disjoint_(true) {
  if (subsets_.empty()) throw std::invalid_argument("at least one observable subset is required");
  std::vector<int> owner(num_users_, 0);
  for (auto& s : subsets_) {
    if (s.empty()) throw std::invalid_argument("observable subsets must be nonempty");
    for (std::size_t u : s) {
      if (u >= num_users_) throw std::invalid_argument("subset index out of range");
    }
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    for (std::size_t u : s) ++owner[u];
  }
  disjoint_ = std::all_of(owner.begin(), owner.end(), [](int c) { return c <= 1; });
}

SubsetSystem SubsetSystem::singletons(std::size_t num_users) {
  std::vector<UserSet> s;
  for (std::size_t i = 0; i < num_users; ++i) s.push_back({i});
  return SubsetSystem(std::move(s), num_users);
}

bool SubsetSystem::all_singletons() const {
  return std::all_of(subsets_.begin(), subsets_.end(), [](const UserSet& s) { return s.size() == 1; });
}

std::size_t SubsetSystem::find(const UserSet& users) const {
  UserSet sorted = users;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t a = 0; a < subsets_.size(); ++a) {
    if (subsets_[a] == sorted) return a;
  }
  return subsets_.size();
}

void SubsetSystem::require_coverage(const Eigen::VectorXd& lambda) const {
  if (static_cast<std::size_t>(lambda.size()) != num_users_)
    throw std::invalid_argument("arrival vector has wrong dimension");
  std::vector<bool> covered(num_users_, false);
  for (const auto& s : subsets_)
    for (std::size_t u : s) covered[u] = true;
  for (std::size_t u = 0; u < num_users_; ++u) {
    if (lambda(static_cast<Eigen::Index>(u)) > 0.0 && !covered[u])
      throw std::invalid_argument("user " + std::to_string(u) +
                                  " has positive arrivals but is in no observable subset");
  }
}

ScalarDistribution user_marginal(const JointChannelDistribution& dist, std::size_t user) {
  if (user >= dist.num_users()) throw std::out_of_range("user index out of range");
  return ScalarDistribution(dist.support().col(static_cast<Eigen::Index>(user)), dist.probs());
}

SubStateDistribution substate_marginal(const JointChannelDistribution& dist, const UserSet& subset) {
  if (subset.empty()) throw std::invalid_argument("empty subset");
  UserSet users = subset;
  std::sort(users.begin(), users.end());
  users.erase(std::unique(users.begin(), users.end()), users.end());
  for (std::size_t u : users) {
    if (u >= dist.num_users()) throw std::out_of_range("user index out of range");
  }
  std::map<std::vector<int>, double> merged;
  for (Eigen::Index s = 0; s < dist.support().rows(); ++s) {
    if (dist.probs()(s) <= 0.0) continue;
    std::vector<int> key;
    key.reserve(users.size());
    for (std::size_t u : users) key.push_back(dist.support()(s, static_cast<Eigen::Index>(u)));
    merged[key] += dist.probs()(s);
  }
  SubStateDistribution out;
  out.subset = users;
  out.substates.resize(static_cast<Eigen::Index>(merged.size()), static_cast<Eigen::Index>(users.size()));
  out.probs.resize(static_cast<Eigen::Index>(merged.size()));
  Eigen::Index r = 0;
  for (const auto& [key, p] : merged) {
    for (std::size_t c = 0; c < key.size(); ++c) out.substates(r, static_cast<Eigen::Index>(c)) = key[c];
    out.probs(r) = p;
    ++r;
  }
  return out;
}

Eigen::VectorXd mean_rates(const JointChannelDistribution& dist) {
  return dist.support().cast<double>().transpose() * dist.probs();
}

Eigen::VectorXi sample_state(const JointChannelDistribution& dist, Rng& rng) {
  return dist.support().row(static_cast<Eigen::Index>(dist.sample_index(rng))).transpose();
}

}  // namespace pcsi
