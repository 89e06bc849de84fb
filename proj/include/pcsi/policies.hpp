#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include <Eigen/Dense>

#include "pcsi/channel_model.hpp"
#include "pcsi/queueing_sim.hpp"

namespace pcsi::policy {

using sim::Count;
using sim::QueueVector;

/// Queue weight exponent Q_i / (1 + sqrt(mean queue)), mean over all N users.
Eigen::VectorXd exp_weights(const QueueVector& q);

/// argmax over subsets of sum_{i in alpha} exp(Q_i / (1 + sqrt(Qbar))),
/// compared in log space; ties go to the lowest subset id.
std::size_t maxexp_choose_subset(const SubsetSystem& subsets, const QueueVector& q);

/// argmax over i in `users` of R_i exp(Q_i / (1 + sqrt(Qbar))); ties go to the
/// lowest user id, and an all-zero sub-state returns the lowest id.
std::size_t maxexp_choose_user(const UserSet& users, const Eigen::Ref<const Eigen::VectorXi>& rates,
                               const QueueVector& q);

/// Lowest-indexed longest queue.
std::size_t maxqueue_choose(const QueueVector& q);

/// Highest-rate user in the subset, lowest id on ties.
std::size_t max_rate_user(const UserSet& users, const Eigen::Ref<const Eigen::VectorXi>& rates);

class MaxExp final : public sim::Policy {
 public:
  explicit MaxExp(const SubsetSystem& subsets) : subsets_(subsets) {}
  std::size_t choose_subset(const QueueVector& q, Count) override { return maxexp_choose_subset(subsets_, q); }
  std::size_t choose_user(std::size_t subset, const Eigen::Ref<const Eigen::VectorXi>& rates,
                          const QueueVector& q) override {
    return maxexp_choose_user(subsets_[subset], rates, q);
  }

 private:
  SubsetSystem subsets_;
};

/// Requires all observable subsets to be singletons.
class MaxQueue final : public sim::Policy {
 public:
  explicit MaxQueue(const SubsetSystem& subsets);
  std::size_t choose_subset(const QueueVector& q, Count) override { return subset_of_user_[maxqueue_choose(q)]; }
  std::size_t choose_user(std::size_t subset, const Eigen::Ref<const Eigen::VectorXi>&,
                          const QueueVector&) override {
    return user_of_subset_[subset];
  }

 private:
  std::vector<std::size_t> subset_of_user_;
  std::vector<std::size_t> user_of_subset_;
};

/// Full-CSI reference: always observes the subset holding every user and
/// applies the exponential rule inside it.
class ExpRule final : public sim::Policy {
 public:
  explicit ExpRule(const SubsetSystem& subsets);
  std::size_t choose_subset(const QueueVector&, Count) override { return full_; }
  std::size_t choose_user(std::size_t subset, const Eigen::Ref<const Eigen::VectorXi>& rates,
                          const QueueVector& q) override {
    return maxexp_choose_user(subsets_[subset], rates, q);
  }

 private:
  SubsetSystem subsets_;
  std::size_t full_;
};

/// Uniformly random subset from a private seeded stream, max-rate user inside.
class UniformRandomSubset final : public sim::Policy {
 public:
  UniformRandomSubset(const SubsetSystem& subsets, std::uint64_t seed) : subsets_(subsets), rng_(seed) {}
  std::size_t choose_subset(const QueueVector&, Count) override { return rng_.below(subsets_.size()); }
  std::size_t choose_user(std::size_t subset, const Eigen::Ref<const Eigen::VectorXi>& rates,
                          const QueueVector&) override {
    return max_rate_user(subsets_[subset], rates);
  }

 private:
  SubsetSystem subsets_;
  Rng rng_;
};

/// Cycles through the subsets in id order, max-rate user inside.
class RoundRobinSubset final : public sim::Policy {
 public:
  explicit RoundRobinSubset(const SubsetSystem& subsets) : subsets_(subsets) {}
  std::size_t choose_subset(const QueueVector&, Count) override {
    const std::size_t a = next_;
    next_ = (next_ + 1) % subsets_.size();
    return a;
  }
  std::size_t choose_user(std::size_t subset, const Eigen::Ref<const Eigen::VectorXi>& rates,
                          const QueueVector&) override {
    return max_rate_user(subsets_[subset], rates);
  }

 private:
  SubsetSystem subsets_;
  std::size_t next_{0};
};

/// Builds a policy by name: max_exp, max_queue, exp_rule, uniform_random, round_robin.
std::unique_ptr<sim::Policy> make_policy(const std::string& name, const SubsetSystem& subsets,
                                         std::uint64_t seed);

bool is_known_policy(const std::string& name);

}  // namespace pcsi::policy
