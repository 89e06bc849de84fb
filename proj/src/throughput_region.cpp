#include "pcsi/throughput_region.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "pcsi/lp.hpp"

namespace pcsi::ld {

const char* to_string(Stability s) {
  switch (s) {
    case Stability::stable_interior:
      return "stable_interior";
    case Stability::boundary:
      return "boundary";
    case Stability::unstable:
      return "unstable";
  }
  return "unknown";
}

Eigen::MatrixXd SubsetRateRegion::embedded(std::size_t num_users) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(vertices.rows(), static_cast<Eigen::Index>(num_users));
  for (std::size_t c = 0; c < subset.size(); ++c)
    out.col(static_cast<Eigen::Index>(subset[c])) = vertices.col(static_cast<Eigen::Index>(c));
  return out;
}

SubsetRateRegion region_vertices(const SubStateDistribution& shape, const Eigen::VectorXd& phi,
                                 std::size_t cap) {
  const auto users = static_cast<Eigen::Index>(shape.subset.size());
  const auto states = static_cast<Eigen::Index>(shape.size());
  if (phi.size() != states) throw std::invalid_argument("region_vertices: dimension mismatch");

  double count = std::pow(static_cast<double>(users), static_cast<double>(states));
  if (count > static_cast<double>(cap))
    throw std::length_error("region_vertices: winner-map count exceeds cap");

  std::vector<Eigen::VectorXd> found;
  std::vector<Eigen::Index> map(static_cast<std::size_t>(states), 0);
  const auto total = static_cast<std::size_t>(count);
  for (std::size_t m = 0; m < total; ++m) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(users);
    for (Eigen::Index r = 0; r < states; ++r) {
      const Eigen::Index i = map[static_cast<std::size_t>(r)];
      v(i) += phi(r) * shape.substates(r, i);
    }
    found.push_back(std::move(v));
    // Advance the mixed-radix counter.
    for (Eigen::Index r = 0; r < states; ++r) {
      if (++map[static_cast<std::size_t>(r)] < users) break;
      map[static_cast<std::size_t>(r)] = 0;
    }
  }

  std::sort(found.begin(), found.end(), [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
  });
  std::vector<Eigen::VectorXd> unique;
  for (auto& v : found) {
    if (unique.empty() || (unique.back() - v).cwiseAbs().maxCoeff() > 1e-12) unique.push_back(std::move(v));
  }

  SubsetRateRegion region;
  region.subset = shape.subset;
  region.substate_probs = phi;
  region.vertices.resize(static_cast<Eigen::Index>(unique.size()), users);
  for (std::size_t k = 0; k < unique.size(); ++k)
    region.vertices.row(static_cast<Eigen::Index>(k)) = unique[k].transpose();
  return region;
}

double capacity_scale(const Eigen::VectorXd& lambda, const Eigen::MatrixXd& vertices) {
  if (lambda.size() != vertices.cols()) throw std::invalid_argument("capacity_scale: dimension mismatch");
  if ((lambda.array() <= 0.0).all()) return std::numeric_limits<double>::infinity();
  // Variables: t, w_1..w_V.  t*lambda_i - sum_v w_v v_i <= 0;  sum_v w_v <= 1.
  const Eigen::Index nv = vertices.rows();
  const Eigen::Index n = lambda.size();
  lp::Problem p;
  p.objective = Eigen::VectorXd::Zero(1 + nv);
  p.objective(0) = 1.0;
  p.A = Eigen::MatrixXd::Zero(n + 1, 1 + nv);
  p.b = Eigen::VectorXd::Zero(n + 1);
  p.senses.assign(static_cast<std::size_t>(n + 1), lp::Sense::less_equal);
  p.A.block(0, 0, n, 1) = lambda;
  p.A.block(0, 1, n, nv) = -vertices.transpose();
  p.A.block(n, 1, 1, nv).setOnes();
  p.b(n) = 1.0;
  const auto sol = lp::maximize(p);
  if (sol.status == lp::Status::unbounded) return std::numeric_limits<double>::infinity();
  if (sol.status != lp::Status::optimal) throw std::runtime_error("capacity_scale: LP failed");
  return sol.value;
}

Eigen::MatrixXd throughput_vertices(const JointChannelDistribution& dist, const SubsetSystem& subsets) {
  std::vector<Eigen::MatrixXd> blocks;
  Eigen::Index rows = 0;
  for (const auto& s : subsets.subsets()) {
    const auto shape = substate_marginal(dist, s);
    blocks.push_back(region_vertices(shape, shape.probs).embedded(dist.num_users()));
    rows += blocks.back().rows();
  }
  Eigen::MatrixXd all(rows, static_cast<Eigen::Index>(dist.num_users()));
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    all.middleRows(at, b.rows()) = b;
    at += b.rows();
  }
  return all;
}

StabilityResult stability_check(const Eigen::VectorXd& lambda, const JointChannelDistribution& dist,
                                const SubsetSystem& subsets, double boundary_tol) {
  if (!subsets.disjoint())
    throw std::invalid_argument("stability_check: non-disjoint observable subsets are not supported");
  if (static_cast<std::size_t>(lambda.size()) != dist.num_users())
    throw std::invalid_argument("stability_check: arrival vector has wrong dimension");
  if ((lambda.array() < 0.0).any()) throw std::invalid_argument("arrival rates must be nonnegative");

  StabilityResult res;
  if (subsets.all_singletons()) {
    const Eigen::VectorXd mu = mean_rates(dist);
    std::vector<bool> covered(dist.num_users(), false);
    for (const auto& s : subsets.subsets()) covered[s[0]] = true;
    double load = 0.0;
    bool impossible = false;
    for (Eigen::Index i = 0; i < lambda.size(); ++i) {
      if (lambda(i) <= 0.0) continue;
      if (!covered[static_cast<std::size_t>(i)] || mu(i) <= 0.0)
        impossible = true;
      else
        load += lambda(i) / mu(i);
    }
    if (impossible)
      res.scale = 0.0;
    else
      res.scale = load > 0.0 ? 1.0 / load : std::numeric_limits<double>::infinity();
  } else {
    res.scale = capacity_scale(lambda, throughput_vertices(dist, subsets));
  }
  res.margin = std::isinf(res.scale) ? 1.0 : (res.scale > 0.0 ? 1.0 - 1.0 / res.scale
                                                              : -std::numeric_limits<double>::infinity());
  if (res.margin > boundary_tol)
    res.status = Stability::stable_interior;
  else if (res.margin >= -boundary_tol)
    res.status = Stability::boundary;
  else
    res.status = Stability::unstable;
  return res;
}

double fluid_drift(const Eigen::VectorXd& lambda, const JointChannelDistribution& dist,
                   const SubsetSystem& subsets) {
  if (!subsets.disjoint())
    throw std::invalid_argument("fluid_drift: non-disjoint observable subsets are not supported");
  const Eigen::MatrixXd v = throughput_vertices(dist, subsets);
  const Eigen::Index nv = v.rows();
  const Eigen::Index n = lambda.size();
  // Variables: s+, s-, w.  min s+ - s-  s.t.  s+ - s- + sum_v w_v v_i >= lambda_i, sum w <= 1.
  lp::Problem p;
  p.objective = Eigen::VectorXd::Zero(2 + nv);
  p.objective(0) = -1.0;
  p.objective(1) = 1.0;
  p.A = Eigen::MatrixXd::Zero(n + 1, 2 + nv);
  p.b = Eigen::VectorXd::Zero(n + 1);
  p.senses.assign(static_cast<std::size_t>(n), lp::Sense::greater_equal);
  p.senses.push_back(lp::Sense::less_equal);
  p.A.col(0).head(n).setOnes();
  p.A.col(1).head(n).setConstant(-1.0);
  p.A.block(0, 2, n, nv) = v.transpose();
  p.b.head(n) = lambda;
  p.A.block(n, 2, 1, nv).setOnes();
  p.b(n) = 1.0;
  const auto sol = lp::maximize(p);
  if (sol.status != lp::Status::optimal) throw std::runtime_error("fluid_drift: LP failed");
  return -sol.value;
}

}  // namespace pcsi::ld
