#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pcsi/channel_model.hpp"
#include "pcsi/extended.hpp"
#include "pcsi/rate_functions.hpp"
#include "pcsi/throughput_region.hpp"

namespace pcsi::bounds {

using RateFunctions = std::vector<ld::ScalarRateFunction<double>>;

/// Cramer rate functions of every user's marginal rate.
RateFunctions marginal_rate_functions(const JointChannelDistribution& dist);

class UnstableArrivals : public std::domain_error {
 public:
  UnstableArrivals() : std::domain_error("unstable arrival vector") {}
};

/// Sampling frequencies c' on S equalizing the growth rates
/// lambda_i - c'_i phi_i = w' of every queue in S.
struct DriftSolution {
  UserSet users;
  Eigen::VectorXd phi;    // twisted means, positions as in `users`
  Eigen::VectorXd share;  // c'
  double drift{0.0};      // w'
};

/// Closed form w' = (sum_j lambda_j/phi_j - 1) / sum_j 1/phi_j,
/// c'_j = (lambda_j - w') / phi_j. Empty when some phi_j <= 0, w' <= 0 or
/// some c'_j < 0. `phi_S` is indexed by position in S, `lambda` by user.
std::optional<DriftSolution> drift_solve(const UserSet& S, const Eigen::VectorXd& phi_S,
                                         const Eigen::VectorXd& lambda);

/// f^S(phi) = sum_{i in S} c'_i Lambda*_i(phi_i) / w'. Throws std::domain_error
/// when the drift system is infeasible.
Cost f_S(const UserSet& S, const Eigen::VectorXd& phi_S, const Eigen::VectorXd& lambda, const RateFunctions& rates);

/// Affine growth rate `arrival - share[coord] * service` of one queue.
struct DriftPiece {
  std::size_t coord{0};
  double arrival{0.0};
  double service{0.0};
};

/// sup over the simplex of  cost . c / max_p piece_p(c)  (the denominator's
/// positive part). Costs must be finite and nonnegative.
struct CostPerDriftProblem {
  Eigen::VectorXd cost;
  std::vector<DriftPiece> pieces;
};

struct SupOptions {
  double grid_resolution{1e-3};
  std::size_t grid_max_coords{3};  // simplex grid only for at most this many coordinates
  std::size_t candidate_max_coords{10};
  bool exact_refine{true};
};

struct SupResult {
  Cost value;
  Eigen::VectorXd share;
  double candidate_value{0.0};  // best drift-equalizing candidate
  double grid_value{0.0};       // best simplex grid point (0 when the grid is skipped)
  bool refined{false};
};

/// Ratio at one point of the simplex.
Cost cost_per_drift(const CostPerDriftProblem& problem, const Eigen::VectorXd& share);

/// Candidates are the drift-equalizing shares on every coordinate subset,
/// plus a simplex grid for few coordinates. The ratio is quasiconcave on the
/// simplex (linear over convex), so a Dinkelbach iteration with one LP per
/// step, started from the best candidate, reaches the global supremum.
/// +inf when the denominator can vanish.
SupResult sup_cost_per_drift(const CostPerDriftProblem& problem, const SupOptions& options = {});

struct UpperBoundEval {
  Cost value;
  Eigen::VectorXd share;  // maximizing c'
  bool in_hull{false};    // lambda in C(phi_1..phi_N)
  double candidate_value{0.0};
  double grid_value{0.0};
};

/// sup_{c'} sum_i c'_i Lambda*_i(phi_i) / [max_i (lambda_i - c'_i phi_i)]^+.
/// +inf when lambda lies in C(phi) or some phi_i is outside its rate
/// function's domain.
UpperBoundEval upper_bound_eval(const Eigen::VectorXd& lambda, const Eigen::VectorXd& phi,
                                const RateFunctions& rates, const SupOptions& options = {});

/// The same ratio at a fixed c'.
Cost upper_bound_at(const Eigen::VectorXd& lambda, const Eigen::VectorXd& phi, const Eigen::VectorXd& share,
                    const RateFunctions& rates);

struct SearchOptions {
  std::size_t multistarts{64};
  double grid_resolution{0.01};
  std::size_t grid_max_dims{3};
  std::size_t grid_cap{200'000};  // the grid is coarsened beyond this many points
  std::size_t max_users{12};
  std::uint64_t seed{0x5eed};
};

struct SubsetOptimum {
  UserSet users;
  Cost value;
  Eigen::VectorXd phi;  // minimizer, positions as in `users`
  Cost grid_value;      // dense-grid cross-check (+inf when skipped)
  double grid_step{0.0};
};

struct JStarResult {
  double value{0.0};
  UserSet argmin;
  Eigen::VectorXd phi_hat;   // on argmin
  Eigen::VectorXd phi_full;  // phi_hat extended by mu_i off argmin
  std::vector<SubsetOptimum> per_subset;
  double resolution{0.0};
};

/// min over nonempty S of inf f^S over the box R_min,i <= phi_i <= mu_i.
/// Each S gets a multistart coordinate pattern search plus, for |S| <= 3,
/// a dense-grid cross-check. Throws UnstableArrivals outside the region.
JStarResult jstar_singleton(const Eigen::VectorXd& lambda, const RateFunctions& rates,
                            const SearchOptions& options = {});

struct UpperBoundMin {
  double value{0.0};
  Eigen::VectorXd phi_hat;
  double grid_value{0.0};
  double resolution{0.0};
  std::size_t evaluations{0};
};

/// min over phi in prod_i [R_min,i, mu_i] of upper_bound_eval.
UpperBoundMin upper_bound_min(const Eigen::VectorXd& lambda, const RateFunctions& rates,
                              const SearchOptions& options = {});

struct SubsetUpperBound {
  Cost value;
  Eigen::VectorXd share;
  bool in_hull{false};
  /// Some user of a multi-user subset has zero service at a vertex, so its
  /// denominator piece is the constant lambda_i.
  bool literal_denominator_flag{false};
};

/// sup over c' on the |O|-simplex of sum_a c'_a D(phi_a || p_a) divided by
/// max_{a, v in V(phi_a)} max_{i in a} (lambda_i - c'_a v_i), with the inner
/// max taken over the enumerated vertices. +inf when lambda lies in the
/// convex hull of the subset regions.
SubsetUpperBound subset_upper_bound(const Eigen::VectorXd& lambda, const JointChannelDistribution& dist,
                                    const SubsetSystem& subsets, const std::vector<Eigen::VectorXd>& phi,
                                    const SupOptions& options = {});

struct SubsetUpperBoundMin {
  double value{0.0};
  std::vector<Eigen::VectorXd> phi_hat;
  bool literal_denominator_flag{false};
};

/// Multistart search for the smallest subset upper bound over sub-state laws.
SubsetUpperBoundMin subset_upper_bound_min(const Eigen::VectorXd& lambda, const JointChannelDistribution& dist,
                                           const SubsetSystem& subsets, const SearchOptions& options = {});

struct ExponentReport {
  std::string method;  // "singleton" or "subset_upper_bound"
  std::optional<double> jstar;
  double ub_min{0.0};
  Eigen::VectorXd phi_hat;
  std::optional<double> gap;
  double resolution{0.0};
  bool jstar_positive{false};
  ld::StabilityResult stability;
  std::optional<JStarResult> jstar_detail;
  std::optional<UpperBoundMin> ub_detail;
  std::optional<double> ub_at_jstar_phi;
  std::optional<SubsetUpperBoundMin> subset_detail;
};

/// Lower bound J* and minimized universal upper bound with their relative
/// gap (singleton subsets), or the minimized subset upper bound as the
/// predicted Max-Exp exponent (general disjoint subsets).
ExponentReport verify_matching(const Eigen::VectorXd& lambda, const JointChannelDistribution& dist,
                               const SubsetSystem& subsets, const SearchOptions& options = {});

}  // namespace pcsi::bounds
