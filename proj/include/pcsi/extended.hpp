#pragma once

#include <limits>
#include <ostream>
#include <stdexcept>

namespace pcsi {

/// Real value extended with a +infinity sentinel.
///
/// Rate functions and cost-per-drift ratios are +infinity outside their
/// effective domains. Keeping the sentinel separate from floating-point inf
/// makes every place that can produce or absorb it explicit:
///   inf + a = inf,   min(inf, a) = a,   w * inf = inf for w > 0, 0 * inf = 0.
template <typename Scalar>
class Extended {
 public:
  constexpr Extended() = default;
  constexpr Extended(Scalar value) : value_(value) {}  // NOLINT: implicit by intent

  static constexpr Extended infinity() {
    Extended e;
    e.infinite_ = true;
    return e;
  }

  constexpr bool is_finite() const { return !infinite_; }
  constexpr bool is_infinite() const { return infinite_; }

  Scalar value() const {
    if (infinite_) throw std::domain_error("value() on infinite Extended");
    return value_;
  }

  /// Lossy conversion for reporting; maps the sentinel to floating-point inf.
  constexpr Scalar to_scalar() const {
    return infinite_ ? std::numeric_limits<Scalar>::infinity() : value_;
  }

  friend constexpr Extended operator+(const Extended& a, const Extended& b) {
    if (a.infinite_ || b.infinite_) return infinity();
    return Extended(a.value_ + b.value_);
  }
  Extended& operator+=(const Extended& other) { return *this = *this + other; }

  /// Scaling by a nonnegative weight; 0 * inf = 0.
  friend constexpr Extended operator*(Scalar weight, const Extended& a) {
    if (a.infinite_) return weight > Scalar(0) ? infinity() : Extended(Scalar(0));
    return Extended(weight * a.value_);
  }

  /// Division by a positive denominator.
  friend constexpr Extended operator/(const Extended& a, Scalar denom) {
    if (a.infinite_) return infinity();
    return Extended(a.value_ / denom);
  }

  friend constexpr bool operator<(const Extended& a, const Extended& b) {
    if (a.infinite_) return false;
    if (b.infinite_) return true;
    return a.value_ < b.value_;
  }
  friend constexpr bool operator>(const Extended& a, const Extended& b) { return b < a; }
  friend constexpr bool operator<=(const Extended& a, const Extended& b) { return !(b < a); }
  friend constexpr bool operator>=(const Extended& a, const Extended& b) { return !(a < b); }
  friend constexpr bool operator==(const Extended& a, const Extended& b) {
    if (a.infinite_ || b.infinite_) return a.infinite_ == b.infinite_;
    return a.value_ == b.value_;
  }

  friend constexpr Extended min(const Extended& a, const Extended& b) { return b < a ? b : a; }
  friend constexpr Extended max(const Extended& a, const Extended& b) { return a < b ? b : a; }

  friend std::ostream& operator<<(std::ostream& os, const Extended& e) {
    if (e.infinite_) return os << "inf";
    return os << e.value_;
  }

 private:
  Scalar value_{0};
  bool infinite_{false};
};

using Cost = Extended<double>;

}  // namespace pcsi
