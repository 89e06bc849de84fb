#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "pcsi/extended.hpp"
#include "pcsi/random.hpp"
#include "pcsi/rate_functions.hpp"

using namespace pcsi;
using ld::ScalarRateFunction;

TEST_SUITE("rate_functions") {
  TEST_CASE("Extended arithmetic") {
    const Cost inf = Cost::infinity();
    CHECK((inf + 1.0).is_infinite());
    CHECK((0.0 * inf).value() == 0.0);
    CHECK((2.0 * inf).is_infinite());
    CHECK(min(inf, Cost(3.0)).value() == 3.0);
    CHECK(Cost(3.0) < inf);
    CHECK_THROWS(inf.value());
    CHECK(std::isinf(inf.to_scalar()));
  }

  TEST_CASE("log_mgf examples") {
    const ScalarDistribution point(Eigen::VectorXi::Constant(1, 1), Eigen::VectorXd::Ones(1));
    for (double eta : {-2.0, 0.0, 0.7}) CHECK(ld::log_mgf(point, eta) == doctest::Approx(eta));
    const auto m = fixture::two_point(0, 2);
    CHECK(ld::log_mgf(m, 0.0) == doctest::Approx(0.0));
    CHECK(ld::log_mgf(m, 1.0) == doctest::Approx(std::log((1 + std::exp(2.0)) / 2)).epsilon(1e-12));
    CHECK(ld::log_mgf(m, 1.0) == doctest::Approx(1.4338).epsilon(1e-4));
    // Midpoint convexity.
    for (double a : {-3.0, -0.5, 1.0})
      for (double b : {-1.0, 0.5, 4.0})
        CHECK(ld::log_mgf(m, (a + b) / 2) <= (ld::log_mgf(m, a) + ld::log_mgf(m, b)) / 2 + 1e-12);
  }

  TEST_CASE("cramer_rate examples") {
    const auto m = fixture::two_point(0, 2);
    CHECK(ld::cramer_rate(m, 1.0).value() == doctest::Approx(0.0));
    CHECK(ld::cramer_rate(m, 2.0).value() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(ld::cramer_rate(m, 0.0).value() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    const double closed = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
    CHECK(ld::cramer_rate(m, 1.5).value() == doctest::Approx(closed).epsilon(1e-12));
    CHECK(ld::cramer_rate(m, 1.5).value() == doctest::Approx(0.130812).epsilon(1e-5));
    CHECK(ld::cramer_rate(m, -0.1).is_infinite());
    CHECK(ld::cramer_rate(m, 2.1).is_infinite());
  }

  TEST_CASE("cramer_rate on a degenerate law") {
    const ScalarDistribution point(Eigen::VectorXi::Constant(1, 3), Eigen::VectorXd::Ones(1));
    CHECK(ld::cramer_rate(point, 3.0).value() == 0.0);
    CHECK(ld::cramer_rate(point, 2.9).is_infinite());
    CHECK_THROWS_AS(ld::tilt_to_mean(point, 2.5), std::domain_error);
  }

  TEST_CASE("cramer_rate matches the grid oracle and is convex") {
    Rng rng(99);
    for (int trial = 0; trial < 8; ++trial) {
      const int k = 2 + static_cast<int>(rng.below(3));
      std::vector<int> vals;
      std::vector<double> ps;
      int v = static_cast<int>(rng.below(2));
      double total = 0;
      for (int s = 0; s < k; ++s) {
        vals.push_back(v);
        v += 1 + static_cast<int>(rng.below(2));
        ps.push_back(0.05 + rng.uniform());
        total += ps.back();
      }
      for (double& p : ps) p /= total;
      const ScalarDistribution m(Eigen::Map<Eigen::VectorXi>(vals.data(), k), Eigen::Map<Eigen::VectorXd>(ps.data(), k));
      const ScalarRateFunction<double> rf(m);
      const oracle::GridLegendre grid(std::vector<double>(vals.begin(), vals.end()), ps);
      const double lo = vals.front(), hi = vals.back();
      for (int q = 0; q <= 10; ++q) {
        const double x = lo + 0.05 * (hi - lo) + 0.9 * (hi - lo) * q / 10.0;
        CHECK(std::abs(rf.rate(x).value() - grid(x)) < 1e-6);
      }
      for (int q = 0; q < 20; ++q) {
        const double x = lo + (hi - lo) * rng.uniform(), y = lo + (hi - lo) * rng.uniform();
        CHECK(rf.rate((x + y) / 2).value() <= (rf.rate(x).value() + rf.rate(y).value()) / 2 + 1e-10);
      }
    }
  }

  TEST_CASE("tilt_to_mean examples") {
    const auto m = fixture::two_point(0, 2);
    auto t = ld::tilt_to_mean(m, 1.0);
    CHECK(t.eta == 0.0);
    CHECK(t.probs == t.base_probs);

    t = ld::tilt_to_mean(m, 0.5);
    CHECK(t.probs(1) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(t.eta == doctest::Approx(-std::log(3.0) / 2).epsilon(1e-10));
    CHECK(t.mean() == doctest::Approx(0.5).epsilon(1e-12));

    t = ld::tilt_to_mean(m, 1.5);
    CHECK(t.probs(1) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(t.eta == doctest::Approx(std::log(3.0) / 2).epsilon(1e-10));

    CHECK_THROWS_AS(ld::tilt_to_mean(m, 0.0), std::domain_error);
    CHECK_THROWS_AS(ld::tilt_to_mean(m, 2.0), std::domain_error);
    CHECK_THROWS_AS(ld::tilt_to_mean(m, 3.0), std::domain_error);
  }

  TEST_CASE("tilt duality") {
    const ScalarDistribution m(Eigen::Vector3i(0, 1, 4), Eigen::Vector3d(0.2, 0.5, 0.3));
    const ScalarRateFunction<double> rf(m);
    for (double phi : {0.05, 0.5, 1.7, 3.2, 3.95}) {
      const auto t = ld::tilt_to_mean(rf, phi);
      CHECK(std::abs(t.mean() - phi) < 1e-9);
      CHECK(std::abs(rf.rate(phi).value() - (t.eta * phi - rf.log_mgf(t.eta))) < 1e-8);
    }
  }

  TEST_CASE("templated on the scalar type") {
    const ScalarRateFunction<long double> rf(fixture::two_point(0, 2));
    const long double closed = 0.75L * std::log(1.5L) + 0.25L * std::log(0.5L);
    CHECK(std::abs(rf.rate(1.5L).value() - closed) < 1e-15L);
  }

  TEST_CASE("sanov_rate examples") {
    const Eigen::Vector2d p(0.5, 0.5);
    CHECK(ld::sanov_rate(p, p).value() == doctest::Approx(0.0));
    const double expected = 0.9 * std::log(1.8) + 0.1 * std::log(0.2);
    CHECK(ld::sanov_rate(p, Eigen::Vector2d(0.9, 0.1)).value() == doctest::Approx(expected).epsilon(1e-12));
    CHECK(ld::sanov_rate(p, Eigen::Vector2d(0.9, 0.1)).value() == doctest::Approx(0.368064).epsilon(1e-5));
    CHECK(ld::sanov_rate(Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(0.5, 0.5)).is_infinite());
    CHECK(ld::sanov_rate(p, Eigen::Vector2d(1.0, 0.0)).value() == doctest::Approx(std::log(2.0)));
    CHECK_THROWS_AS(ld::sanov_rate(Eigen::VectorXd(p), Eigen::VectorXd(Eigen::Vector3d(0.2, 0.3, 0.5))), std::invalid_argument);
    CHECK_THROWS_AS(ld::sanov_rate(p, Eigen::Vector2d(0.6, 0.6)), std::invalid_argument);
  }

  TEST_CASE("Sanov contracted to a mean is the Cramer rate") {
    const ScalarDistribution m(Eigen::Vector3i(0, 1, 3), Eigen::Vector3d(0.3, 0.4, 0.3));
    const Eigen::Vector3d p = m.probs;
    for (double x : {0.4, 1.0, 2.2}) {
      // Laws on {0,1,3} with mean x: phi = (1 - a - b, a, b), a + 3b = x.
      double best = 1e300;
      for (int k = 0; k <= 20000; ++k) {
        const double b = (x / 3.0) * k / 20000.0;
        const double a = x - 3 * b;
        if (a < 0 || a + b > 1) continue;
        best = std::min(best, ld::sanov_rate(p, Eigen::Vector3d(1 - a - b, a, b)).value());
      }
      CHECK(std::abs(best - ld::cramer_rate(m, x).value()) < 1e-4);
    }
  }
}
