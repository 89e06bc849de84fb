#include "pcsi/exponent_bounds.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "pcsi/lp.hpp"
#include "pcsi/random.hpp"

namespace pcsi::bounds {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using Objective = std::function<double(const Eigen::VectorXd&)>;

struct SearchResult {
  Eigen::VectorXd x;
  double value{kInf};
  std::size_t evaluations{0};
};

// Poll directions scaled per coordinate: all of {-1,0,1}^d \ {0} for small
// d, the coordinate axes plus the two main diagonals otherwise.
std::vector<Eigen::VectorXd> poll_directions(Eigen::Index d) {
  std::vector<Eigen::VectorXd> dirs;
  if (d <= 3) {
    Eigen::Index total = 1;
    for (Eigen::Index i = 0; i < d; ++i) total *= 3;
    for (Eigen::Index code = 0; code < total; ++code) {
      Eigen::VectorXd v(d);
      Eigen::Index c = code;
      for (Eigen::Index i = 0; i < d; ++i, c /= 3) v(i) = static_cast<double>(c % 3) - 1.0;
      if (v.cwiseAbs().sum() > 0) dirs.push_back(v);
    }
    return dirs;
  }
  for (Eigen::Index i = 0; i < d; ++i) {
    dirs.push_back(Eigen::VectorXd::Unit(d, i));
    dirs.push_back(-Eigen::VectorXd::Unit(d, i));
  }
  dirs.push_back(Eigen::VectorXd::Ones(d));
  dirs.push_back(-Eigen::VectorXd::Ones(d));
  return dirs;
}

// Projected compass search: move to the best improving poll point, halve the
// step when none improves.
SearchResult pattern_search(const Objective& f, Eigen::VectorXd x, const Eigen::VectorXd& lo,
                            const Eigen::VectorXd& hi, double min_step = 1e-9, std::size_t max_evals = 20000) {
  SearchResult out;
  const Eigen::VectorXd width = (hi - lo).cwiseMax(0.0);
  const auto dirs = poll_directions(x.size());
  x = x.cwiseMax(lo).cwiseMin(hi);
  double fx = f(x);
  out.evaluations = 1;
  double step = 0.25;
  while (step > min_step && out.evaluations < max_evals) {
    double best = fx;
    Eigen::VectorXd best_x;
    for (const auto& d : dirs) {
      Eigen::VectorXd y = (x + step * d.cwiseProduct(width)).cwiseMax(lo).cwiseMin(hi);
      if (y == x) continue;
      const double fy = f(y);
      ++out.evaluations;
      if (fy < best) {
        best = fy;
        best_x = std::move(y);
      }
    }
    if (best_x.size() > 0) {
      x = std::move(best_x);
      fx = best;
    } else {
      step /= 2;
    }
  }
  out.x = std::move(x);
  out.value = fx;
  return out;
}

// Row-major walk over a tensor grid with `points` values per coordinate.
template <typename Visit>
void for_each_grid_point(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, std::size_t points, Visit&& visit) {
  const Eigen::Index d = lo.size();
  std::vector<std::size_t> idx(static_cast<std::size_t>(d), 0);
  Eigen::VectorXd x(d);
  while (true) {
    for (Eigen::Index i = 0; i < d; ++i) {
      const double t = points > 1 ? static_cast<double>(idx[i]) / static_cast<double>(points - 1) : 0.0;
      x(i) = lo(i) + t * (hi(i) - lo(i));
    }
    visit(x, idx);
    Eigen::Index i = d - 1;
    while (i >= 0 && ++idx[i] == points) idx[i--] = 0;
    if (i < 0) break;
  }
}

// Grid points per axis honoring the total cap.
std::size_t grid_points(double resolution, std::size_t dims, std::size_t cap) {
  auto points = static_cast<std::size_t>(std::llround(1.0 / resolution)) + 1;
  while (points > 2 && std::pow(static_cast<double>(points), static_cast<double>(dims)) > static_cast<double>(cap))
    --points;
  return points;
}

double denominator(const CostPerDriftProblem& problem, const Eigen::VectorXd& share) {
  double d = -kInf;
  for (const auto& p : problem.pieces) d = std::max(d, p.arrival - share(p.coord) * p.service);
  return d;
}

// min over the simplex of the denominator (before the positive part).
double min_denominator(const CostPerDriftProblem& problem) {
  const auto k = problem.cost.size();
  lp::Problem prog;
  // Variables: shares, then z shifted by `offset` so that it stays nonnegative.
  double offset = 0.0;
  for (const auto& p : problem.pieces) offset = std::max(offset, p.service - p.arrival);
  prog.objective = Eigen::VectorXd::Zero(k + 1);
  prog.objective(k) = -1.0;
  prog.A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(problem.pieces.size()) + 1, k + 1);
  prog.b.resize(prog.A.rows());
  for (std::size_t p = 0; p < problem.pieces.size(); ++p) {
    const auto& piece = problem.pieces[p];
    const auto r = static_cast<Eigen::Index>(p);
    prog.A(r, static_cast<Eigen::Index>(piece.coord)) = -piece.service;
    prog.A(r, k) = -1.0;
    prog.b(r) = -(piece.arrival + offset);
    prog.senses.push_back(lp::Sense::less_equal);
  }
  prog.A.row(prog.A.rows() - 1).head(k).setOnes();
  prog.b(prog.A.rows() - 1) = 1.0;
  prog.senses.push_back(lp::Sense::equal);
  const auto sol = lp::maximize(prog);
  if (sol.status != lp::Status::optimal) throw std::runtime_error("min_denominator: LP failed");
  return sol.x(k) - offset;
}

// argmax over the simplex of cost.c - t * denominator(c).
Eigen::VectorXd dinkelbach_step(const CostPerDriftProblem& problem, double t) {
  const auto k = problem.cost.size();
  lp::Problem prog;
  double offset = 0.0;
  for (const auto& p : problem.pieces) offset = std::max(offset, p.service - p.arrival);
  prog.objective.resize(k + 1);
  prog.objective.head(k) = problem.cost;
  prog.objective(k) = -t;
  prog.A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(problem.pieces.size()) + 1, k + 1);
  prog.b.resize(prog.A.rows());
  for (std::size_t p = 0; p < problem.pieces.size(); ++p) {
    const auto& piece = problem.pieces[p];
    const auto r = static_cast<Eigen::Index>(p);
    prog.A(r, static_cast<Eigen::Index>(piece.coord)) = -piece.service;
    prog.A(r, k) = -1.0;
    prog.b(r) = -(piece.arrival + offset);
    prog.senses.push_back(lp::Sense::less_equal);
  }
  prog.A.row(prog.A.rows() - 1).head(k).setOnes();
  prog.b(prog.A.rows() - 1) = 1.0;
  prog.senses.push_back(lp::Sense::equal);
  const auto sol = lp::maximize(prog);
  if (sol.status != lp::Status::optimal) throw std::runtime_error("dinkelbach_step: LP failed");
  Eigen::VectorXd c = sol.x.head(k).cwiseMax(0.0);
  return c / c.sum();
}

// Share on `support` (bitmask over coordinates) that brings the largest
// growth rate of every supported coordinate to a common level w. Empty when
// no supported coordinate can be served.
std::optional<Eigen::VectorXd> equalizing_share(const CostPerDriftProblem& problem, std::uint64_t support) {
  const auto k = problem.cost.size();
  bool servable = false;
  double top = 0.0;
  for (const auto& p : problem.pieces) {
    top = std::max(top, p.arrival);
    if (((support >> p.coord) & 1u) && p.service > 0) servable = true;
  }
  if (!servable) return std::nullopt;
  auto needed = [&](double w) {
    Eigen::VectorXd c = Eigen::VectorXd::Zero(k);
    for (const auto& p : problem.pieces)
      if (((support >> p.coord) & 1u) && p.service > 0)
        c(p.coord) = std::max(c(p.coord), (p.arrival - w) / p.service);
    return c;
  };
  // The total needed share is zero at w = top and grows as w decreases.
  double hi = top, lo = top - 1.0;
  for (int i = 0; i < 200 && needed(lo).sum() < 1.0; ++i) lo = top - 2.0 * (top - lo);
  for (int it = 0; it < 200; ++it) {
    const double mid = (lo + hi) / 2;
    if (mid == lo || mid == hi) break;
    if (needed(mid).sum() > 1.0)
      lo = mid;
    else
      hi = mid;
  }
  Eigen::VectorXd c = needed(hi).cwiseMax(0.0);
  if (!(c.sum() > 0)) return std::nullopt;
  return c / c.sum();
}

double ratio(const CostPerDriftProblem& problem, const Eigen::VectorXd& share) {
  const double d = denominator(problem, share);
  const double n = problem.cost.dot(share);
  if (d <= 0) return n > 0 ? kInf : 0.0;
  return n / d;
}

}  // namespace

RateFunctions marginal_rate_functions(const JointChannelDistribution& dist) {
  RateFunctions out;
  out.reserve(dist.num_users());
  for (std::size_t i = 0; i < dist.num_users(); ++i) out.emplace_back(user_marginal(dist, i));
  return out;
}

std::optional<DriftSolution> drift_solve(const UserSet& S, const Eigen::VectorXd& phi_S,
                                         const Eigen::VectorXd& lambda) {
  if (S.empty() || static_cast<std::size_t>(phi_S.size()) != S.size()) return std::nullopt;
  double sum_ratio = 0.0, sum_inv = 0.0;
  for (std::size_t j = 0; j < S.size(); ++j) {
    const double phi = phi_S(static_cast<Eigen::Index>(j));
    if (!(phi > 0)) return std::nullopt;
    sum_ratio += lambda(static_cast<Eigen::Index>(S[j])) / phi;
    sum_inv += 1.0 / phi;
  }
  DriftSolution out;
  out.users = S;
  out.phi = phi_S;
  out.drift = (sum_ratio - 1.0) / sum_inv;
  if (!(out.drift > 0)) return std::nullopt;
  out.share.resize(phi_S.size());
  for (std::size_t j = 0; j < S.size(); ++j) {
    const auto e = static_cast<Eigen::Index>(j);
    out.share(e) = (lambda(static_cast<Eigen::Index>(S[j])) - out.drift) / phi_S(e);
    if (out.share(e) < 0) return std::nullopt;
  }
  return out;
}

Cost f_S(const UserSet& S, const Eigen::VectorXd& phi_S, const Eigen::VectorXd& lambda, const RateFunctions& rates) {
  const auto sol = drift_solve(S, phi_S, lambda);
  if (!sol) throw std::domain_error("f_S: infeasible drift system");
  Cost total(0.0);
  for (std::size_t j = 0; j < S.size(); ++j) {
    const auto e = static_cast<Eigen::Index>(j);
    const Cost r = rates[S[j]].rate(phi_S(e));
    if (r.is_infinite()) return Cost::infinity();
    total += sol->share(e) * r;
  }
  return total / sol->drift;
}

Cost cost_per_drift(const CostPerDriftProblem& problem, const Eigen::VectorXd& share) {
  const double r = ratio(problem, share);
  return std::isinf(r) ? Cost::infinity() : Cost(r);
}

SupResult sup_cost_per_drift(const CostPerDriftProblem& problem, const SupOptions& options) {
  const auto k = static_cast<std::size_t>(problem.cost.size());
  if (k == 0) throw std::invalid_argument("sup_cost_per_drift: empty simplex");
  if (!problem.cost.allFinite() || (problem.cost.array() < 0).any())
    throw std::invalid_argument("sup_cost_per_drift: costs must be finite and nonnegative");
  for (const auto& p : problem.pieces)
    if (p.coord >= k) throw std::invalid_argument("sup_cost_per_drift: piece coordinate out of range");

  SupResult out;
  out.share = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(k), 1.0 / static_cast<double>(k));
  if (min_denominator(problem) <= 1e-12) {
    out.value = Cost::infinity();
    return out;
  }

  double best = -1.0;
  auto consider = [&](const Eigen::VectorXd& c, double& slot) {
    const double r = ratio(problem, c);
    slot = std::max(slot, r);
    if (r > best) {
      best = r;
      out.share = c;
    }
  };

  double cand = 0.0;
  for (std::size_t a = 0; a < k; ++a) consider(Eigen::VectorXd::Unit(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(a)), cand);
  if (k <= options.candidate_max_coords && k < 64) {
    for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << k); ++mask)
      if (auto c = equalizing_share(problem, mask)) consider(*c, cand);
  } else if (auto c = equalizing_share(problem, (k >= 64) ? ~std::uint64_t{0} : (std::uint64_t{1} << k) - 1)) {
    consider(*c, cand);
  }
  out.candidate_value = cand;

  if (k >= 2 && k <= options.grid_max_coords && options.grid_resolution > 0) {
    const auto steps = static_cast<std::size_t>(std::llround(1.0 / options.grid_resolution));
    double grid = 0.0;
    Eigen::VectorXd c(static_cast<Eigen::Index>(k));
    std::vector<std::size_t> idx(k - 1, 0);
    // Compositions of `steps` into k parts.
    std::function<void(std::size_t, std::size_t)> walk = [&](std::size_t pos, std::size_t left) {
      if (pos + 1 == k) {
        c(static_cast<Eigen::Index>(pos)) = static_cast<double>(left) / static_cast<double>(steps);
        consider(c, grid);
        return;
      }
      for (std::size_t m = 0; m <= left; ++m) {
        c(static_cast<Eigen::Index>(pos)) = static_cast<double>(m) / static_cast<double>(steps);
        walk(pos + 1, left - m);
      }
    };
    walk(0, steps);
    out.grid_value = grid;
  }

  if (options.exact_refine) {
    double t = best;
    for (int it = 0; it < 100; ++it) {
      const Eigen::VectorXd c = dinkelbach_step(problem, t);
      const double r = ratio(problem, c);
      if (!(r > t + 1e-13 * std::max(1.0, t))) break;
      t = r;
      best = r;
      out.share = c;
      out.refined = true;
    }
  }
  out.value = Cost(std::max(best, 0.0));
  return out;
}

namespace {

bool in_singleton_hull(const Eigen::VectorXd& lambda, const Eigen::VectorXd& phi) {
  double load = 0.0;
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) <= 0) continue;
    if (!(phi(i) > 0)) return false;
    load += lambda(i) / phi(i);
  }
  return load <= 1.0 + 1e-12;
}

CostPerDriftProblem singleton_problem(const Eigen::VectorXd& lambda, const Eigen::VectorXd& phi,
                                      const Eigen::VectorXd& cost) {
  CostPerDriftProblem problem;
  problem.cost = cost;
  for (Eigen::Index i = 0; i < lambda.size(); ++i)
    problem.pieces.push_back({static_cast<std::size_t>(i), lambda(i), phi(i)});
  return problem;
}

}  // namespace

UpperBoundEval upper_bound_eval(const Eigen::VectorXd& lambda, const Eigen::VectorXd& phi,
                                const RateFunctions& rates, const SupOptions& options) {
  if (lambda.size() != phi.size() || static_cast<std::size_t>(phi.size()) != rates.size())
    throw std::invalid_argument("upper_bound_eval: dimension mismatch");
  UpperBoundEval out;
  out.share = Eigen::VectorXd::Constant(phi.size(), 1.0 / static_cast<double>(phi.size()));
  Eigen::VectorXd cost(phi.size());
  for (Eigen::Index i = 0; i < phi.size(); ++i) {
    const Cost r = rates[static_cast<std::size_t>(i)].rate(phi(i));
    if (r.is_infinite()) {
      out.value = Cost::infinity();
      return out;
    }
    cost(i) = r.value();
  }
  if (in_singleton_hull(lambda, phi)) {
    out.in_hull = true;
    out.value = Cost::infinity();
    return out;
  }
  const auto sup = sup_cost_per_drift(singleton_problem(lambda, phi, cost), options);
  out.value = sup.value;
  out.share = sup.share;
  out.candidate_value = sup.candidate_value;
  out.grid_value = sup.grid_value;
  return out;
}

Cost upper_bound_at(const Eigen::VectorXd& lambda, const Eigen::VectorXd& phi, const Eigen::VectorXd& share,
                    const RateFunctions& rates) {
  Eigen::VectorXd cost(phi.size());
  for (Eigen::Index i = 0; i < phi.size(); ++i) {
    const Cost r = rates[static_cast<std::size_t>(i)].rate(phi(i));
    if (r.is_infinite()) return Cost::infinity();
    cost(i) = r.value();
  }
  if (in_singleton_hull(lambda, phi)) return Cost::infinity();
  return cost_per_drift(singleton_problem(lambda, phi, cost), share);
}

namespace {

void require_singleton_stable(const Eigen::VectorXd& lambda, const RateFunctions& rates) {
  if (static_cast<std::size_t>(lambda.size()) != rates.size())
    throw std::invalid_argument("lambda and rate functions differ in size");
  double load = 0.0;
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) < 0) throw std::invalid_argument("negative arrival rate");
    if (lambda(i) == 0) continue;
    const double mu = rates[static_cast<std::size_t>(i)].mean();
    if (!(mu > 0)) throw UnstableArrivals();
    load += lambda(i) / mu;
  }
  if (!(load < 1.0 - 1e-9)) throw UnstableArrivals();
}

std::vector<UserSet> nonempty_subsets(std::size_t n) {
  std::vector<UserSet> out;
  for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << n); ++mask) {
    UserSet s;
    for (std::size_t i = 0; i < n; ++i)
      if ((mask >> i) & 1u) s.push_back(i);
    out.push_back(std::move(s));
  }
  // Smaller subsets first, then lexicographic.
  std::stable_sort(out.begin(), out.end(), [](const UserSet& a, const UserSet& b) {
    return a.size() != b.size() ? a.size() < b.size() : a < b;
  });
  return out;
}

bool lex_less(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

}  // namespace

JStarResult jstar_singleton(const Eigen::VectorXd& lambda, const RateFunctions& rates, const SearchOptions& options) {
  require_singleton_stable(lambda, rates);
  const std::size_t n = rates.size();
  if (n > options.max_users) throw std::length_error("jstar_singleton: too many users to enumerate subsets");

  JStarResult out;
  out.value = kInf;
  const auto subsets = nonempty_subsets(n);
  for (std::size_t si = 0; si < subsets.size(); ++si) {
    const UserSet& S = subsets[si];
    const auto d = static_cast<Eigen::Index>(S.size());
    Eigen::VectorXd lo(d), hi(d);
    for (Eigen::Index j = 0; j < d; ++j) {
      lo(j) = rates[S[j]].min();
      hi(j) = rates[S[j]].mean();
    }
    auto objective = [&](const Eigen::VectorXd& phi) {
      if (!drift_solve(S, phi, lambda)) return kInf;
      return f_S(S, phi, lambda, rates).to_scalar();
    };

    SubsetOptimum opt;
    opt.users = S;
    opt.value = Cost::infinity();
    opt.grid_value = Cost::infinity();
    opt.phi = (lo + hi) / 2;
    double best = kInf;
    auto take = [&](const SearchResult& r) {
      if (r.value < best || (r.value == best && std::isfinite(best) && lex_less(r.x, opt.phi))) {
        best = r.value;
        opt.phi = r.x;
      }
    };

    if (S.size() <= options.grid_max_dims) {
      const std::size_t points = grid_points(options.grid_resolution, S.size(), options.grid_cap);
      opt.grid_step = ((hi - lo).maxCoeff()) / static_cast<double>(std::max<std::size_t>(points - 1, 1));
      // Rate values on the grid axes, computed once.
      std::vector<std::vector<double>> axis(S.size(), std::vector<double>(points));
      for (std::size_t j = 0; j < S.size(); ++j)
        for (std::size_t p = 0; p < points; ++p) {
          const double t = points > 1 ? static_cast<double>(p) / static_cast<double>(points - 1) : 0.0;
          axis[j][p] = rates[S[j]].rate(lo(j) + t * (hi(j) - lo(j))).to_scalar();
        }
      double grid_best = kInf;
      Eigen::VectorXd grid_arg = opt.phi;
      for_each_grid_point(lo, hi, points, [&](const Eigen::VectorXd& phi, const std::vector<std::size_t>& idx) {
        const auto sol = drift_solve(S, phi, lambda);
        if (!sol) return;
        double v = 0.0;
        for (std::size_t j = 0; j < S.size(); ++j) {
          const double r = axis[j][idx[j]];
          if (std::isinf(r)) return;
          v += sol->share(static_cast<Eigen::Index>(j)) * r;
        }
        v /= sol->drift;
        if (v < grid_best) {
          grid_best = v;
          grid_arg = phi;
        }
      });
      if (std::isfinite(grid_best)) {
        opt.grid_value = Cost(grid_best);
        take(pattern_search(objective, grid_arg, lo, hi));
      }
    }

    Rng rng(replica_seed(options.seed, si));
    for (std::size_t s = 0; s < options.multistarts; ++s) {
      Eigen::VectorXd x0(d);
      bool found = false;
      for (int attempt = 0; attempt < 200 && !found; ++attempt) {
        for (Eigen::Index j = 0; j < d; ++j) x0(j) = lo(j) + rng.uniform() * (hi(j) - lo(j));
        found = std::isfinite(objective(x0));
      }
      if (!found) continue;
      take(pattern_search(objective, x0, lo, hi));
    }
    if (std::isfinite(best)) opt.value = Cost(best);

    if (best < out.value || (best == out.value && std::isfinite(best) && S < out.argmin)) {
      out.value = best;
      out.argmin = S;
      out.phi_hat = opt.phi;
    }
    out.resolution = std::max(out.resolution, opt.grid_step);
    out.per_subset.push_back(std::move(opt));
  }
  // No subset can build a positive drift: the queues never overflow and
  // the exponent is +inf, with phi_full left at the means.
  out.phi_full.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) out.phi_full(static_cast<Eigen::Index>(i)) = rates[i].mean();
  for (std::size_t j = 0; j < out.argmin.size(); ++j)
    out.phi_full(static_cast<Eigen::Index>(out.argmin[j])) = out.phi_hat(static_cast<Eigen::Index>(j));
  return out;
}

UpperBoundMin upper_bound_min(const Eigen::VectorXd& lambda, const RateFunctions& rates,
                              const SearchOptions& options) {
  require_singleton_stable(lambda, rates);
  const std::size_t n = rates.size();
  if (n > options.max_users) throw std::length_error("upper_bound_min: too many users");
  const auto d = static_cast<Eigen::Index>(n);
  Eigen::VectorXd lo(d), hi(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    lo(i) = rates[static_cast<std::size_t>(i)].min();
    hi(i) = rates[static_cast<std::size_t>(i)].mean();
  }
  // Inner sups during the search skip the simplex grid; the LP refinement
  // already makes them exact.
  SupOptions inner;
  inner.grid_max_coords = 0;

  UpperBoundMin out;
  auto objective = [&](const Eigen::VectorXd& phi) {
    ++out.evaluations;
    return upper_bound_eval(lambda, phi, rates, inner).value.to_scalar();
  };

  double best = kInf;
  out.phi_hat = hi;
  auto take = [&](const SearchResult& r) {
    if (r.value < best || (r.value == best && std::isfinite(best) && lex_less(r.x, out.phi_hat))) {
      best = r.value;
      out.phi_hat = r.x;
    }
  };

  out.grid_value = kInf;
  if (n <= options.grid_max_dims) {
    const std::size_t points = grid_points(options.grid_resolution, n, options.grid_cap);
    out.resolution = (hi - lo).maxCoeff() / static_cast<double>(std::max<std::size_t>(points - 1, 1));
    Eigen::VectorXd grid_arg = hi;
    for_each_grid_point(lo, hi, points, [&](const Eigen::VectorXd& phi, const std::vector<std::size_t>&) {
      const double v = objective(phi);
      if (v < out.grid_value) {
        out.grid_value = v;
        grid_arg = phi;
      }
    });
    if (std::isfinite(out.grid_value)) take(pattern_search(objective, grid_arg, lo, hi));
  }

  Rng rng(replica_seed(options.seed, 0x0b0d));
  for (std::size_t s = 0; s < options.multistarts; ++s) {
    Eigen::VectorXd x0(d);
    bool found = false;
    for (int attempt = 0; attempt < 200 && !found; ++attempt) {
      for (Eigen::Index j = 0; j < d; ++j) x0(j) = lo(j) + rng.uniform() * (hi(j) - lo(j));
      found = std::isfinite(objective(x0));
    }
    if (!found) continue;
    take(pattern_search(objective, x0, lo, hi));
  }
  if (!std::isfinite(best)) {
    // lambda lies in C(phi) for every admissible phi.
    out.value = kInf;
    return out;
  }
  // Final value with the full inner options.
  out.value = upper_bound_eval(lambda, out.phi_hat, rates).value.to_scalar();
  return out;
}

SubsetUpperBound subset_upper_bound(const Eigen::VectorXd& lambda, const JointChannelDistribution& dist,
                                    const SubsetSystem& subsets, const std::vector<Eigen::VectorXd>& phi,
                                    const SupOptions& options) {
  if (!subsets.disjoint()) throw std::invalid_argument("subset_upper_bound requires disjoint subsets");
  if (phi.size() != subsets.size()) throw std::invalid_argument("subset_upper_bound: one law per subset required");
  const std::size_t n = dist.num_users();
  if (static_cast<std::size_t>(lambda.size()) != n) throw std::invalid_argument("subset_upper_bound: dimension mismatch");

  SubsetUpperBound out;
  CostPerDriftProblem problem;
  problem.cost.resize(static_cast<Eigen::Index>(subsets.size()));
  std::vector<Eigen::MatrixXd> embedded;
  for (std::size_t a = 0; a < subsets.size(); ++a) {
    const auto shape = substate_marginal(dist, subsets[a]);
    const Cost kl = ld::sanov_rate(shape, phi[a]);
    if (kl.is_infinite()) {
      out.value = Cost::infinity();
      return out;
    }
    problem.cost(static_cast<Eigen::Index>(a)) = kl.value();
    const auto region = ld::region_vertices(shape, phi[a]);
    embedded.push_back(region.embedded(n));
    const Eigen::VectorXd floor = region.min_service();
    for (std::size_t j = 0; j < subsets[a].size(); ++j) {
      const std::size_t i = subsets[a][j];
      const double service = floor(static_cast<Eigen::Index>(j));
      problem.pieces.push_back({a, lambda(static_cast<Eigen::Index>(i)), service});
      if (subsets[a].size() >= 2 && service <= 1e-12 && lambda(static_cast<Eigen::Index>(i)) > 0)
        out.literal_denominator_flag = true;
    }
  }
  Eigen::Index rows = 0;
  for (const auto& m : embedded) rows += m.rows();
  Eigen::MatrixXd all(rows, static_cast<Eigen::Index>(n));
  rows = 0;
  for (const auto& m : embedded) {
    all.middleRows(rows, m.rows()) = m;
    rows += m.rows();
  }
  if (ld::capacity_scale(lambda, all) >= 1.0 - 1e-12) {
    out.in_hull = true;
    out.value = Cost::infinity();
    return out;
  }
  const auto sup = sup_cost_per_drift(problem, options);
  out.value = sup.value;
  out.share = sup.share;
  return out;
}

SubsetUpperBoundMin subset_upper_bound_min(const Eigen::VectorXd& lambda, const JointChannelDistribution& dist,
                                           const SubsetSystem& subsets, const SearchOptions& options) {
  const auto stab = ld::stability_check(lambda, dist, subsets);
  if (stab.status != ld::Stability::stable_interior) throw UnstableArrivals();

  std::vector<SubStateDistribution> shapes;
  std::vector<Eigen::Index> offsets;
  Eigen::Index dim = 0;
  for (const auto& s : subsets.subsets()) {
    shapes.push_back(substate_marginal(dist, s));
    offsets.push_back(dim);
    dim += static_cast<Eigen::Index>(shapes.back().size());
  }
  // Sub-state laws as softmax(log p + theta), one block of theta per subset.
  auto laws = [&](const Eigen::VectorXd& theta) {
    std::vector<Eigen::VectorXd> phi;
    for (std::size_t a = 0; a < shapes.size(); ++a) {
      const auto m = static_cast<Eigen::Index>(shapes[a].size());
      Eigen::ArrayXd logit = shapes[a].probs.array().log() + theta.segment(offsets[a], m).array();
      logit -= logit.maxCoeff();
      Eigen::VectorXd p = logit.exp().matrix();
      phi.push_back(p / p.sum());
    }
    return phi;
  };
  SupOptions inner;
  inner.grid_max_coords = 0;
  auto objective = [&](const Eigen::VectorXd& theta) {
    return subset_upper_bound(lambda, dist, subsets, laws(theta), inner).value.to_scalar();
  };

  constexpr double kBox = 8.0;
  const Eigen::VectorXd lo = Eigen::VectorXd::Constant(dim, -kBox);
  const Eigen::VectorXd hi = Eigen::VectorXd::Constant(dim, kBox);
  double best = kInf;
  Eigen::VectorXd best_theta = Eigen::VectorXd::Zero(dim);
  Rng rng(replica_seed(options.seed, 0x5b5e));
  for (std::size_t s = 0; s < options.multistarts; ++s) {
    Eigen::VectorXd x0(dim);
    bool found = false;
    for (int attempt = 0; attempt < 500 && !found; ++attempt) {
      for (Eigen::Index j = 0; j < dim; ++j) x0(j) = -kBox / 2 + rng.uniform() * kBox;
      found = std::isfinite(objective(x0));
    }
    if (!found) continue;
    const auto r = pattern_search(objective, x0, lo, hi, 1e-7, 5000);
    if (r.value < best || (r.value == best && lex_less(r.x, best_theta))) {
      best = r.value;
      best_theta = r.x;
    }
  }
  if (!std::isfinite(best)) throw std::runtime_error("subset_upper_bound_min: no sub-state law outside the hull found");
  SubsetUpperBoundMin out;
  out.phi_hat = laws(best_theta);
  const auto final_eval = subset_upper_bound(lambda, dist, subsets, out.phi_hat);
  out.value = final_eval.value.to_scalar();
  out.literal_denominator_flag = final_eval.literal_denominator_flag;
  return out;
}

ExponentReport verify_matching(const Eigen::VectorXd& lambda, const JointChannelDistribution& dist,
                               const SubsetSystem& subsets, const SearchOptions& options) {
  if (!subsets.disjoint()) throw std::invalid_argument("verify_matching requires disjoint subsets");
  ExponentReport report;
  report.stability = ld::stability_check(lambda, dist, subsets);
  if (report.stability.status != ld::Stability::stable_interior) throw UnstableArrivals();

  if (subsets.all_singletons() && subsets.size() == dist.num_users()) {
    const auto rates = marginal_rate_functions(dist);
    report.method = "singleton";
    auto js = jstar_singleton(lambda, rates, options);
    auto ub = upper_bound_min(lambda, rates, options);
    report.jstar = js.value;
    report.ub_min = ub.value;
    report.phi_hat = ub.phi_hat;
    report.gap = (std::isinf(js.value) && std::isinf(ub.value)) ? 0.0
                                                                : std::abs(js.value - ub.value) / std::max(js.value, 1e-12);
    report.resolution = std::max(js.resolution, ub.resolution);
    report.jstar_positive = js.value > 0;
    report.ub_at_jstar_phi = upper_bound_eval(lambda, js.phi_full, rates).value.to_scalar();
    report.jstar_detail = std::move(js);
    report.ub_detail = std::move(ub);
  } else {
    report.method = "subset_upper_bound";
    auto sub = subset_upper_bound_min(lambda, dist, subsets, options);
    report.ub_min = sub.value;
    Eigen::Index total = 0;
    for (const auto& p : sub.phi_hat) total += p.size();
    report.phi_hat.resize(total);
    total = 0;
    for (const auto& p : sub.phi_hat) {
      report.phi_hat.segment(total, p.size()) = p;
      total += p.size();
    }
    report.jstar_positive = sub.value > 0;
    report.subset_detail = std::move(sub);
  }
  if (!report.jstar_positive) throw std::runtime_error("computed exponent is not positive on a stable instance");
  return report;
}

}  // namespace pcsi::bounds
