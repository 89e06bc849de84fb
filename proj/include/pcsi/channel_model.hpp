#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "pcsi/random.hpp"

namespace pcsi {

/// Sorted, duplicate-free list of user indices.
using UserSet = std::vector<std::size_t>;

/// Finite distribution of a scalar integer service rate.
/// Values are strictly increasing; probabilities are positive and sum to one.
struct ScalarDistribution {
  Eigen::VectorXi values;
  Eigen::VectorXd probs;

  ScalarDistribution() = default;
  /// Merges repeated values, drops zero-probability atoms and validates.
  ScalarDistribution(const Eigen::VectorXi& values, const Eigen::VectorXd& probs);

  double mean() const;
  int min() const { return values(0); }
  int max() const { return values(values.size() - 1); }
  bool degenerate() const { return values.size() == 1; }
};

/// Joint law of the N-vector of instantaneous rates R(k).
///
/// Support rows are distinct N-tuples of nonnegative integers; probabilities
/// must sum to one within 1e-12 and are never renormalized.
class JointChannelDistribution {
 public:
  JointChannelDistribution(Eigen::MatrixXi support, Eigen::VectorXd probs);

  /// Independent channels with the given per-user marginals.
  static JointChannelDistribution product_form(const std::vector<ScalarDistribution>& marginals);

  std::size_t num_users() const { return static_cast<std::size_t>(support_.cols()); }
  std::size_t num_states() const { return static_cast<std::size_t>(support_.rows()); }
  const Eigen::MatrixXi& support() const { return support_; }
  const Eigen::VectorXd& probs() const { return probs_; }
  int max_rate() const { return support_.maxCoeff(); }

  std::size_t sample_index(Rng& rng) const { return rng.discrete(cumulative_); }

 private:
  Eigen::MatrixXi support_;
  Eigen::VectorXd probs_;
  std::vector<double> cumulative_;
};

/// Law of the restriction R_alpha(k) of the channel state to a user subset.
/// Sub-states are sorted lexicographically, which fixes the index of every
/// sub-state (and of the unit vectors over sub-states) once and for all.
struct SubStateDistribution {
  UserSet subset;
  Eigen::MatrixXi substates;  // rows: sub-states, cols: positions in `subset`
  Eigen::VectorXd probs;

  std::size_t size() const { return static_cast<std::size_t>(substates.rows()); }
  /// Index of a sub-state row, or size() if absent.
  std::size_t index_of(const Eigen::Ref<const Eigen::VectorXi>& substate) const;
};

/// The collection of observable subsets.
class SubsetSystem {
 public:
  SubsetSystem(std::vector<UserSet> subsets, std::size_t num_users);

  static SubsetSystem singletons(std::size_t num_users);

  std::size_t size() const { return subsets_.size(); }
  std::size_t num_users() const { return num_users_; }
  const UserSet& operator[](std::size_t id) const { return subsets_[id]; }
  const std::vector<UserSet>& subsets() const { return subsets_; }

  bool disjoint() const { return disjoint_; }
  bool all_singletons() const;
  /// Id of the subset equal to `users`, or size() if none.
  std::size_t find(const UserSet& users) const;

  /// Throws unless every user with positive arrival rate is in some subset.
  void require_coverage(const Eigen::VectorXd& lambda) const;

 private:
  std::vector<UserSet> subsets_;
  std::size_t num_users_;
  bool disjoint_;
};

ScalarDistribution user_marginal(const JointChannelDistribution& dist, std::size_t user);
SubStateDistribution substate_marginal(const JointChannelDistribution& dist, const UserSet& subset);
Eigen::VectorXd mean_rates(const JointChannelDistribution& dist);
Eigen::VectorXi sample_state(const JointChannelDistribution& dist, Rng& rng);

}  // namespace pcsi
