#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "pcsi/channel_model.hpp"

namespace pcsi::ld {

/// Service-rate region of one observable subset when its sub-states follow
/// `substate_probs`. Vertices are the rate vectors of the per-sub-state
/// winner maps r -> i (each sub-state's full rate goes to one user).
struct SubsetRateRegion {
  UserSet subset;
  Eigen::VectorXd substate_probs;
  Eigen::MatrixXd vertices;  // rows: distinct vertices; cols: positions in `subset`

  /// Per-user minimum coordinate over the vertices.
  Eigen::VectorXd min_service() const { return vertices.colwise().minCoeff().transpose(); }
  /// Vertices embedded in R^N (zero outside the subset).
  Eigen::MatrixXd embedded(std::size_t num_users) const;
};

/// Enumerates all |alpha|^|R_alpha| winner maps (refusing above `cap`) and
/// deduplicates the resulting vertices.
SubsetRateRegion region_vertices(const SubStateDistribution& shape, const Eigen::VectorXd& substate_probs,
                                 std::size_t cap = 1'000'000);

enum class Stability { stable_interior, boundary, unstable };

const char* to_string(Stability s);

struct StabilityResult {
  Stability status{Stability::unstable};
  /// 1 - 1/scale; equals delta in sum_i lambda_i/mu_i = 1 - delta for singletons.
  double margin{0.0};
  /// Largest t with t*lambda in the throughput region (+inf for lambda = 0).
  double scale{0.0};
};

/// Largest t with t*lambda <= some convex combination of the rows of
/// `vertices` (the region is taken down-closed, which is what
/// stabilizability needs). +inf when lambda = 0.
double capacity_scale(const Eigen::VectorXd& lambda, const Eigen::MatrixXd& vertices);

/// Vertices in R^N of the throughput region of a disjoint subset system
/// under the natural sub-state laws.
Eigen::MatrixXd throughput_vertices(const JointChannelDistribution& dist, const SubsetSystem& subsets);

/// Classifies lambda against the throughput region. Singletons use the
/// closed form sum_i lambda_i / mu_i; general disjoint systems solve an LP
/// over the enumerated vertices. Non-disjoint systems are rejected.
StabilityResult stability_check(const Eigen::VectorXd& lambda, const JointChannelDistribution& dist,
                                const SubsetSystem& subsets, double boundary_tol = 1e-9);

/// min over v in the region of max_i (lambda_i - v_i): the growth rate of the
/// longest fluid queue under the best time-sharing (negative when stable).
double fluid_drift(const Eigen::VectorXd& lambda, const JointChannelDistribution& dist,
                   const SubsetSystem& subsets);

}  // namespace pcsi::ld
