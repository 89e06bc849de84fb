#include "pcsi/lp.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace pcsi::lp {

namespace {

class Tableau {
 public:
  // Rows 0..m-1 are constraints, row m is the reduced-cost row; the last
  // column is the right-hand side.
  Eigen::MatrixXd t;
  std::vector<Eigen::Index> basis;
  std::vector<bool> allowed;  // columns allowed to enter

  Eigen::Index rows() const { return t.rows() - 1; }
  Eigen::Index cols() const { return t.cols() - 1; }

  void pivot(Eigen::Index r, Eigen::Index c) {
    t.row(r) /= t(r, c);
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      if (i != r && t(i, c) != 0.0) t.row(i) -= t(i, c) * t.row(r);
    }
    basis[static_cast<std::size_t>(r)] = c;
  }

  void price(const Eigen::VectorXd& cost) {
    t.row(rows()).setZero();
    for (Eigen::Index j = 0; j < cols(); ++j) t(rows(), j) = -cost(j);
    for (Eigen::Index i = 0; i < rows(); ++i) {
      const double cb = cost(basis[static_cast<std::size_t>(i)]);
      if (cb != 0.0) t.row(rows()) += cb * t.row(i);
    }
  }

  // Returns false when unbounded.
  bool optimize(double tol) {
    for (int iter = 0; iter < 100000; ++iter) {
      Eigen::Index enter = -1;
      for (Eigen::Index j = 0; j < cols(); ++j) {
        if (allowed[static_cast<std::size_t>(j)] && t(rows(), j) < -tol) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return true;
      Eigen::Index leave = -1;
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < rows(); ++i) {
        if (t(i, enter) > tol) {
          const double ratio = t(i, cols()) / t(i, enter);
          if (ratio < best - 1e-12 ||
              (std::abs(ratio - best) <= 1e-12 && leave >= 0 &&
               basis[static_cast<std::size_t>(i)] < basis[static_cast<std::size_t>(leave)])) {
            best = ratio;
            leave = i;
          }
        }
      }
      if (leave < 0) return false;
      pivot(leave, enter);
    }
    throw std::runtime_error("simplex iteration limit reached");
  }
};

}  // namespace

Solution maximize(const Problem& p, double tol) {
  const Eigen::Index m = p.A.rows();
  const Eigen::Index n = p.A.cols();
  if (p.b.size() != m || static_cast<Eigen::Index>(p.senses.size()) != m || p.objective.size() != n)
    throw std::invalid_argument("lp: inconsistent problem dimensions");

  // Normalize to b >= 0.
  Eigen::MatrixXd A = p.A;
  Eigen::VectorXd b = p.b;
  std::vector<Sense> senses = p.senses;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (b(i) < 0.0) {
      A.row(i) *= -1.0;
      b(i) = -b(i);
      if (senses[static_cast<std::size_t>(i)] == Sense::less_equal)
        senses[static_cast<std::size_t>(i)] = Sense::greater_equal;
      else if (senses[static_cast<std::size_t>(i)] == Sense::greater_equal)
        senses[static_cast<std::size_t>(i)] = Sense::less_equal;
    }
  }

  Eigen::Index slacks = 0, artificials = 0;
  for (Sense s : senses) {
    if (s != Sense::equal) ++slacks;
    if (s != Sense::less_equal) ++artificials;
  }
  const Eigen::Index total = n + slacks + artificials;

  Tableau tab;
  tab.t = Eigen::MatrixXd::Zero(m + 1, total + 1);
  tab.basis.assign(static_cast<std::size_t>(m), 0);
  tab.allowed.assign(static_cast<std::size_t>(total), true);
  tab.t.block(0, 0, m, n) = A;
  tab.t.block(0, total, m, 1) = b;

  Eigen::Index slack_col = n, art_col = n + slacks;
  Eigen::VectorXd phase1 = Eigen::VectorXd::Zero(total);
  for (Eigen::Index i = 0; i < m; ++i) {
    switch (senses[static_cast<std::size_t>(i)]) {
      case Sense::less_equal:
        tab.t(i, slack_col) = 1.0;
        tab.basis[static_cast<std::size_t>(i)] = slack_col++;
        break;
      case Sense::greater_equal:
        tab.t(i, slack_col++) = -1.0;
        [[fallthrough]];
      case Sense::equal:
        tab.t(i, art_col) = 1.0;
        phase1(art_col) = -1.0;
        tab.basis[static_cast<std::size_t>(i)] = art_col++;
        break;
    }
  }

  Solution sol;
  if (artificials > 0) {
    tab.price(phase1);
    tab.optimize(tol);
    if (tab.t(m, total) < -1e-8) {
      sol.status = Status::infeasible;
      return sol;
    }
    // Drive zero-level artificials out of the basis where possible.
    for (Eigen::Index i = 0; i < tab.rows(); ++i) {
      if (tab.basis[static_cast<std::size_t>(i)] < n + slacks) continue;
      for (Eigen::Index j = 0; j < n + slacks; ++j) {
        if (std::abs(tab.t(i, j)) > 1e-9) {
          tab.pivot(i, j);
          break;
        }
      }
    }
    for (Eigen::Index j = n + slacks; j < total; ++j) tab.allowed[static_cast<std::size_t>(j)] = false;
  }

  Eigen::VectorXd cost = Eigen::VectorXd::Zero(total);
  cost.head(n) = p.objective;
  tab.price(cost);
  if (!tab.optimize(tol)) {
    sol.status = Status::unbounded;
    return sol;
  }
  sol.status = Status::optimal;
  sol.x = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < tab.rows(); ++i) {
    const Eigen::Index c = tab.basis[static_cast<std::size_t>(i)];
    if (c < n) sol.x(c) = tab.t(i, total);
  }
  sol.value = p.objective.dot(sol.x);
  return sol;
}

}  // namespace pcsi::lp
