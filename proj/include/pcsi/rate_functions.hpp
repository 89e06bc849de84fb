#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

#include "pcsi/channel_model.hpp"
#include "pcsi/extended.hpp"

namespace pcsi::ld {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Log-moment generating function, Cramer dual and exponential tilting of a
/// finite scalar rate distribution.
template <typename Scalar = double>
class ScalarRateFunction {
 public:
  ScalarRateFunction() = default;
  explicit ScalarRateFunction(const ScalarDistribution& marginal)
      : values_(marginal.values.cast<Scalar>()),
        log_probs_(marginal.probs.cast<Scalar>().array().log().matrix()),
        probs_(marginal.probs.cast<Scalar>()) {
    mean_ = values_.dot(probs_);
  }

  const Vector<Scalar>& values() const { return values_; }
  const Vector<Scalar>& probs() const { return probs_; }
  Scalar mean() const { return mean_; }
  Scalar min() const { return values_(0); }
  Scalar max() const { return values_(values_.size() - 1); }
  bool degenerate() const { return values_.size() == 1; }

  /// Lambda(eta) = log E[exp(eta R)], evaluated as a shifted log-sum-exp.
  Scalar log_mgf(Scalar eta) const {
    Scalar top = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index s = 0; s < values_.size(); ++s) top = std::max(top, eta * values_(s) + log_probs_(s));
    Scalar acc = 0;
    for (Eigen::Index s = 0; s < values_.size(); ++s) acc += std::exp(eta * values_(s) + log_probs_(s) - top);
    return top + std::log(acc);
  }

  /// Lambda'(eta): mean of the distribution tilted by eta.
  Scalar tilted_mean(Scalar eta) const {
    Scalar top = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index s = 0; s < values_.size(); ++s) top = std::max(top, eta * values_(s) + log_probs_(s));
    Scalar num = 0, den = 0;
    for (Eigen::Index s = 0; s < values_.size(); ++s) {
      const Scalar w = std::exp(eta * values_(s) + log_probs_(s) - top);
      num += w * values_(s);
      den += w;
    }
    return num / den;
  }

  /// Lambda''(eta): variance of the distribution tilted by eta.
  Scalar tilted_variance(Scalar eta) const {
    Scalar top = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index s = 0; s < values_.size(); ++s) top = std::max(top, eta * values_(s) + log_probs_(s));
    Scalar m0 = 0, m1 = 0, m2 = 0;
    for (Eigen::Index s = 0; s < values_.size(); ++s) {
      const Scalar w = std::exp(eta * values_(s) + log_probs_(s) - top);
      m0 += w;
      m1 += w * values_(s);
      m2 += w * values_(s) * values_(s);
    }
    const Scalar mean = m1 / m0;
    return std::max(Scalar(0), m2 / m0 - mean * mean);
  }

  /// Solves Lambda'(eta) = x for x strictly inside (min, max).
  ///
  /// Lambda' is strictly increasing for a non-degenerate law. The bracket
  /// starts at [-1, 1] and doubles until it contains the root. Newton steps
  /// are taken while they stay inside the bracket, bisection otherwise, for
  /// at most 200 iterations.
  Scalar solve_tilt(Scalar x) const {
    if (degenerate() || !(x > min() && x < max()))
      throw std::domain_error("tilt target must lie strictly inside the support hull");
    Scalar lo = -1, hi = 1;
    for (int i = 0; i < 200 && tilted_mean(lo) > x; ++i) lo *= 2;
    for (int i = 0; i < 200 && tilted_mean(hi) < x; ++i) hi *= 2;
    const Scalar scale = std::max(std::abs(min()), std::abs(max()));
    Scalar eta = (lo <= 0 && hi >= 0) ? Scalar(0) : (lo + hi) / 2;
    for (int it = 0; it < 200; ++it) {
      const Scalar err = tilted_mean(eta) - x;
      if (std::abs(err) <= Scalar(4) * std::numeric_limits<Scalar>::epsilon() * scale) break;
      if (err < 0)
        lo = eta;
      else
        hi = eta;
      const Scalar var = tilted_variance(eta);
      Scalar next = var > 0 ? eta - err / var : (lo + hi) / 2;
      if (!(next > lo && next < hi)) next = (lo + hi) / 2;
      if (next == eta || lo == hi) break;
      eta = next;
    }
    return eta;
  }

  /// Lambda*(x) = sup_eta (eta x - Lambda(eta)).
  ///
  /// +inf outside [min, max]; -log P[R = endpoint] at the endpoints; interior
  /// values through the tilt solving Lambda'(eta) = x.
  Extended<Scalar> rate(Scalar x) const {
    if (!(x >= min() && x <= max())) return Extended<Scalar>::infinity();
    if (degenerate()) return Extended<Scalar>(Scalar(0));
    if (x == min()) return Extended<Scalar>(-log_probs_(0));
    if (x == max()) return Extended<Scalar>(-log_probs_(values_.size() - 1));
    const Scalar eta = solve_tilt(x);
    const Scalar r = eta * x - log_mgf(eta);
    return Extended<Scalar>(r > Scalar(0) ? r : Scalar(0));
  }

 private:
  Vector<Scalar> values_;
  Vector<Scalar> log_probs_;
  Vector<Scalar> probs_;
  Scalar mean_{0};
};

/// Exponentially tilted version of a scalar law with a prescribed mean.
template <typename Scalar = double>
struct TiltedDistribution {
  Vector<Scalar> values;
  Vector<Scalar> base_probs;
  Vector<Scalar> probs;  // proportional to base_probs * exp(eta * values)
  Scalar eta{0};
  Scalar target_mean{0};

  Scalar mean() const { return values.dot(probs); }
};

template <typename Scalar>
Scalar log_mgf(const ScalarRateFunction<Scalar>& rf, Scalar eta) {
  return rf.log_mgf(eta);
}

template <typename Scalar>
Extended<Scalar> cramer_rate(const ScalarRateFunction<Scalar>& rf, Scalar x) {
  return rf.rate(x);
}

inline double log_mgf(const ScalarDistribution& marginal, double eta) {
  return ScalarRateFunction<double>(marginal).log_mgf(eta);
}

inline Cost cramer_rate(const ScalarDistribution& marginal, double x) {
  return ScalarRateFunction<double>(marginal).rate(x);
}

/// Tilt to mean `target`. The law at its own mean (or a point mass at its
/// atom) is returned untilted; any other target must lie strictly inside the
/// support hull.
template <typename Scalar>
TiltedDistribution<Scalar> tilt_to_mean(const ScalarRateFunction<Scalar>& rf, Scalar target) {
  TiltedDistribution<Scalar> out;
  out.values = rf.values();
  out.base_probs = rf.probs();
  out.target_mean = target;
  if (target == rf.mean()) {
    out.eta = 0;
    out.probs = rf.probs();
    return out;
  }
  out.eta = rf.solve_tilt(target);
  const Scalar lmgf = rf.log_mgf(out.eta);
  out.probs = (rf.probs().array().log() + out.eta * rf.values().array() - lmgf).exp().matrix();
  return out;
}

inline TiltedDistribution<double> tilt_to_mean(const ScalarDistribution& marginal, double target) {
  return tilt_to_mean(ScalarRateFunction<double>(marginal), target);
}

/// Relative entropy D(phi || base), the Sanov rate of the sub-state empirical
/// distribution. 0 log 0 = 0; +inf when phi charges a sub-state that base
/// does not.
template <typename Derived>
Extended<typename Derived::Scalar> sanov_rate(const Eigen::MatrixBase<Derived>& base,
                                              const Eigen::MatrixBase<Derived>& phi) {
  using Scalar = typename Derived::Scalar;
  if (base.size() != phi.size()) throw std::invalid_argument("sanov_rate: dimension mismatch");
  if ((phi.array() < Scalar(-1e-9)).any() || std::abs(phi.sum() - Scalar(1)) > Scalar(1e-9))
    throw std::invalid_argument("sanov_rate: phi is not on the probability simplex");
  Scalar total = 0;
  for (Eigen::Index r = 0; r < phi.size(); ++r) {
    if (phi(r) <= Scalar(0)) continue;
    if (base(r) <= Scalar(0)) return Extended<Scalar>::infinity();
    total += phi(r) * std::log(phi(r) / base(r));
  }
  return Extended<Scalar>(total > Scalar(0) ? total : Scalar(0));
}

inline Cost sanov_rate(const SubStateDistribution& base, const Eigen::VectorXd& phi) {
  return sanov_rate(base.probs, phi);
}

}  // namespace pcsi::ld
