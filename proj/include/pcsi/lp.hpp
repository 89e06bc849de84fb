#pragma once

#include <vector>

#include <Eigen/Dense>

namespace pcsi::lp {

enum class Sense { less_equal, equal, greater_equal };
enum class Status { optimal, infeasible, unbounded };

/// maximize objective' x  s.t.  A.row(i) x (sense_i) b(i),  x >= 0.
struct Problem {
  Eigen::VectorXd objective;
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  std::vector<Sense> senses;
};

struct Solution {
  Status status{Status::infeasible};
  Eigen::VectorXd x;
  double value{0.0};
};

/// Dense two-phase tableau simplex with Bland's rule. Meant for the small
/// programs arising here (tens of rows, up to a few thousand columns).
Solution maximize(const Problem& problem, double tol = 1e-10);

}  // namespace pcsi::lp
