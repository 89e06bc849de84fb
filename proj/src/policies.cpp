#include "pcsi/policies.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace pcsi::policy {

Eigen::VectorXd exp_weights(const QueueVector& q) {
  const Eigen::VectorXd qd = q.cast<double>();
  const double mean = qd.size() > 0 ? qd.mean() : 0.0;
  return qd / (1.0 + std::sqrt(mean));
}

std::size_t maxexp_choose_subset(const SubsetSystem& subsets, const QueueVector& q) {
  const Eigen::VectorXd w = exp_weights(q);
  std::size_t best = 0;
  double best_metric = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < subsets.size(); ++a) {
    const auto& users = subsets[a];
    // log sum_i exp(w_i), shifted by the largest term.
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t u : users) top = std::max(top, w(static_cast<Eigen::Index>(u)));
    double acc = 0.0;
    for (std::size_t u : users) acc += std::exp(w(static_cast<Eigen::Index>(u)) - top);
    const double metric = top + std::log(acc);
    if (metric > best_metric) {
      best_metric = metric;
      best = a;
    }
  }
  return best;
}

std::size_t maxexp_choose_user(const UserSet& users, const Eigen::Ref<const Eigen::VectorXi>& rates,
                               const QueueVector& q) {
  const Eigen::VectorXd w = exp_weights(q);
  std::size_t best = users.front();
  double best_metric = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < users.size(); ++c) {
    const int r = rates(static_cast<Eigen::Index>(c));
    if (r <= 0) continue;
    const double metric = std::log(static_cast<double>(r)) + w(static_cast<Eigen::Index>(users[c]));
    if (metric > best_metric) {
      best_metric = metric;
      best = users[c];
    }
  }
  return best;
}

std::size_t maxqueue_choose(const QueueVector& q) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < q.size(); ++i)
    if (q(i) > q(best)) best = i;
  return static_cast<std::size_t>(best);
}

std::size_t max_rate_user(const UserSet& users, const Eigen::Ref<const Eigen::VectorXi>& rates) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < users.size(); ++c)
    if (rates(static_cast<Eigen::Index>(c)) > rates(static_cast<Eigen::Index>(best))) best = c;
  return users[best];
}

MaxQueue::MaxQueue(const SubsetSystem& subsets)
    : subset_of_user_(subsets.num_users(), subsets.size()), user_of_subset_(subsets.size()) {
  if (!subsets.all_singletons())
    throw std::invalid_argument("Max-Queue requires every observable subset to be a singleton");
  for (std::size_t a = 0; a < subsets.size(); ++a) {
    const std::size_t u = subsets[a][0];
    user_of_subset_[a] = u;
    if (subset_of_user_[u] == subsets.size()) subset_of_user_[u] = a;
  }
  for (std::size_t u = 0; u < subsets.num_users(); ++u) {
    if (subset_of_user_[u] == subsets.size())
      throw std::invalid_argument("Max-Queue requires every user to have a singleton subset");
  }
}

ExpRule::ExpRule(const SubsetSystem& subsets) : subsets_(subsets) {
  UserSet all(subsets.num_users());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  full_ = subsets.find(all);
  if (full_ == subsets.size())
    throw std::invalid_argument("the exponential rule needs an observable subset containing every user");
}

std::unique_ptr<sim::Policy> make_policy(const std::string& name, const SubsetSystem& subsets,
                                         std::uint64_t seed) {
  if (name == "max_exp") return std::make_unique<MaxExp>(subsets);
  if (name == "max_queue") return std::make_unique<MaxQueue>(subsets);
  if (name == "exp_rule") return std::make_unique<ExpRule>(subsets);
  if (name == "uniform_random") return std::make_unique<UniformRandomSubset>(subsets, seed);
  if (name == "round_robin") return std::make_unique<RoundRobinSubset>(subsets);
  throw std::invalid_argument("unknown policy '" + name + "'");
}

bool is_known_policy(const std::string& name) {
  return name == "max_exp" || name == "max_queue" || name == "exp_rule" || name == "uniform_random" ||
         name == "round_robin";
}

}  // namespace pcsi::policy
