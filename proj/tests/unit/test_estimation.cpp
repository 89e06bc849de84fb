#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "pcsi/estimation.hpp"

using namespace pcsi;
using namespace pcsi::est;

namespace {

sim::SystemModel reference_model(const Eigen::VectorXd& lambda = fixture::reference_lambda()) {
  return sim::SystemModel(fixture::reference_channel(), SubsetSystem::singletons(2),
                          sim::ArrivalSpec::from_doubles(lambda));
}

sim::SystemModel one_user(double lambda) {
  return sim::SystemModel(JointChannelDistribution::product_form({fixture::two_point(0, 2)}),
                          SubsetSystem::singletons(1), sim::ArrivalSpec::from_doubles(Eigen::VectorXd::Constant(1, lambda)));
}

OverflowEstimate synthetic(Count n, double p, double se) {
  OverflowEstimate e;
  e.level = n;
  e.p_hat = p;
  e.std_error = se;
  e.ci_lo = std::max(0.0, p - 1.96 * se);
  e.ci_hi = std::min(1.0, p + 1.96 * se);
  return e;
}

}  // namespace

TEST_SUITE("estimation") {
  TEST_CASE("fit_exponent on an exact exponential") {
    std::vector<OverflowEstimate> rows;
    for (Count n : {2, 4, 6, 8, 10}) rows.push_back(synthetic(n, std::exp(-0.5 * static_cast<double>(n)), 0.0));
    const auto fit = fit_exponent(rows);
    CHECK(fit.slope == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(fit.std_error < 1e-10);
    CHECK(fit.levels.size() == 5);
  }

  TEST_CASE("fit_exponent with 5% multiplicative noise") {
    std::mt19937_64 gen(99);
    std::normal_distribution<double> z(0.0, 1.0);
    int inside = 0;
    const int trials = 200;
    for (int t = 0; t < trials; ++t) {
      std::vector<OverflowEstimate> rows;
      for (Count n = 2; n <= 20; n += 2) {
        const double p = std::exp(-0.5 * static_cast<double>(n));
        rows.push_back(synthetic(n, p * (1.0 + 0.05 * z(gen)), 0.05 * p));
      }
      const auto fit = fit_exponent(rows);
      if (std::abs(fit.slope - 0.5) <= 3 * fit.std_error) ++inside;
    }
    // Three-sigma coverage is 99.7%; allow a little slack for the delta method.
    CHECK(inside >= trials * 97 / 100);
  }

  TEST_CASE("fit_exponent guards") {
    std::vector<OverflowEstimate> rows{synthetic(1, 0.3, 0.01), synthetic(2, 0.1, 0.01)};
    CHECK_THROWS_AS(fit_exponent(rows), std::invalid_argument);
    rows.push_back(synthetic(3, 0.03, 0.001));
    rows.push_back(synthetic(9, 0.0, 0.0));
    rows.back().flag = "level too deep for direct MC";
    const auto fit = fit_exponent(rows);
    CHECK(fit.excluded == std::vector<Count>{9});
    CHECK(fit.levels.size() == 3);
  }

  TEST_CASE("linear_trend and wilson_interval") {
    const std::vector<double> y{1.0, 3.0, 5.0, 7.0};
    const auto t = linear_trend(y);
    CHECK(t.slope == doctest::Approx(2.0));
    CHECK(t.intercept == doctest::Approx(1.0));
    CHECK(t.std_error < 1e-12);
    const auto [lo, hi] = wilson_interval(10, 100);
    CHECK(lo == doctest::Approx(0.0552).epsilon(1e-3));
    CHECK(hi == doctest::Approx(0.1744).epsilon(1e-3));
    const auto [lo0, hi0] = wilson_interval(0, 100);
    CHECK(lo0 == 0.0);
    CHECK(hi0 > 0.0);
  }

  TEST_CASE("direct estimator: level 0, monotonicity and determinism") {
    const auto model = reference_model();
    const auto factory = named_policy("max_queue", model.subsets());
    DirectOptions o;
    o.levels = {0, 2, 4, 6};
    o.replicas = 8;
    o.horizon = 20000;
    o.seed = 5;
    o.threads = 1;
    const auto a = estimate_overflow_direct(model, factory, o);
    REQUIRE(a.size() == 4);
    CHECK(a[0].p_hat == 1.0);
    for (std::size_t l = 1; l < a.size(); ++l) CHECK(a[l].p_hat <= a[l - 1].p_hat);
    CHECK(a[3].p_hat < a[1].p_hat);
    for (const auto& e : a) {
      CHECK(e.ci_lo <= e.p_hat);
      CHECK(e.p_hat <= e.ci_hi);
      CHECK(e.slots == 8 * 20000);
    }
    o.threads = 3;
    const auto b = estimate_overflow_direct(model, factory, o);
    for (std::size_t l = 0; l < a.size(); ++l) {
      CHECK(a[l].p_hat == b[l].p_hat);
      CHECK(a[l].std_error == b[l].std_error);
    }
  }

  TEST_CASE("direct estimator on an unstable instance tends to one") {
    const auto model = reference_model(Eigen::Vector2d(0.7, 0.7));
    DirectOptions o;
    o.levels = {20};
    o.replicas = 4;
    o.horizon = 20000;
    o.threads = 1;
    const auto e = estimate_overflow_direct(model, named_policy("max_queue", model.subsets()), o);
    CHECK(e[0].p_hat > 0.99);
  }

  TEST_CASE("zero events are flagged") {
    const auto model = reference_model();
    DirectOptions o;
    o.levels = {200};
    o.replicas = 2;
    o.horizon = 2000;
    o.threads = 1;
    const auto e = estimate_overflow_direct(model, named_policy("max_queue", model.subsets()), o);
    CHECK(e[0].p_hat == 0.0);
    CHECK(e[0].flag == "level too deep for direct MC");
    CHECK(e[0].ci_lo == 0.0);
    CHECK(e[0].ci_hi > 0.0);
  }

  TEST_CASE("untilted importance sampling is the direct first-hitting estimator") {
    const auto model = one_user(0.4);
    const auto factory = named_policy("max_queue", model.subsets());
    const std::vector<Count> levels{1, 3, 5};
    DirectOptions d;
    d.levels = levels;
    d.replicas = 5000;
    d.horizon = 100000;
    d.view = View::first_hitting;
    d.seed = 8;
    d.threads = 1;
    ImportanceOptions is;
    is.levels = levels;
    is.replicas = 5000;
    is.cycle_cap = 100000;
    is.seed = 8;
    is.threads = 1;
    const auto a = estimate_overflow_direct(model, factory, d);
    const auto b = estimate_overflow_importance(model, factory, Eigen::VectorXd::Constant(1, 1.0), is);
    for (std::size_t l = 0; l < levels.size(); ++l) {
      CHECK(a[l].p_hat == doctest::Approx(b[l].p_hat).epsilon(1e-12));
      CHECK(b[l].ess == doctest::Approx(static_cast<double>(b[l].events)));
    }
  }

  TEST_CASE("importance sampling is unbiased against enumeration") {
    const auto model = one_user(0.8);
    const auto factory = named_policy("max_queue", model.subsets());
    const auto r = sim::Rational::from_double(0.8);
    const Count level = 4;
    const int horizon = 10;
    const double exact = oracle::first_hit_probability({0, 2}, {0.5, 0.5}, r.num, r.den, level, horizon);
    ImportanceOptions o;
    o.levels = {level};
    o.replicas = 20000;
    o.cycle_cap = horizon;
    o.seed = 77;
    o.threads = 1;
    const auto e = estimate_overflow_importance(model, factory, Eigen::VectorXd::Constant(1, 0.6), o);
    CHECK(exact > 0.0);
    CHECK(std::abs(e[0].p_hat - exact) <= 3.0 * e[0].std_error);
  }

  TEST_CASE("tilted channel validation") {
    const auto model = one_user(0.4);
    CHECK_THROWS(TiltedChannel(model, Eigen::VectorXd::Constant(1, 2.0)));
    CHECK_THROWS(TiltedChannel(model, Eigen::VectorXd::Constant(1, 0.0)));
    CHECK_THROWS(TiltedChannel(model, Eigen::Vector2d(0.5, 0.5)));
    const TiltedChannel ch(model, Eigen::VectorXd::Constant(1, 0.5));
    CHECK(ch.etas()[0] == doctest::Approx(-std::log(3.0) / 2).epsilon(1e-9));
    const sim::SystemModel grouped(fixture::reference_channel(), SubsetSystem({{0, 1}}, 2),
                                   sim::ArrivalSpec::from_doubles(fixture::reference_lambda()));
    CHECK_THROWS(TiltedChannel(grouped, Eigen::Vector2d(0.5, 0.5)));
  }

  TEST_CASE("merging replica batches is order independent") {
    Rng rng(3);
    std::vector<StationaryRecord> recs(12);
    std::vector<CycleRecord> cycles(12);
    for (auto& r : recs) {
      r.slots = 1000;
      r.samples = 100;
      r.hits = {static_cast<Count>(rng.below(60)), static_cast<Count>(rng.below(10))};
    }
    for (auto& c : cycles) {
      c.weight = {rng.uniform(), rng.uniform() < 0.5 ? 0.0 : rng.uniform()};
      c.length = static_cast<Count>(rng.below(50));
    }
    const std::vector<Count> levels{1, 2};

    ReplicaBatch<StationaryRecord> whole;
    ReplicaBatch<CycleRecord> whole_c;
    for (std::size_t i = 0; i < 12; ++i) {
      whole.add(i, recs[i]);
      whole_c.add(i, cycles[i]);
    }
    // ((8..11) + (0..3)) + (4..7), added in reverse inside each group.
    ReplicaBatch<StationaryRecord> g1, g2, g3;
    ReplicaBatch<CycleRecord> c1, c2, c3;
    for (std::size_t i = 12; i-- > 0;) {
      auto& g = i < 4 ? g2 : (i < 8 ? g3 : g1);
      auto& c = i < 4 ? c2 : (i < 8 ? c3 : c1);
      g.add(i, recs[i]);
      c.add(i, cycles[i]);
    }
    g1.merge(g2);
    g1.merge(g3);
    c1.merge(c2);
    c1.merge(c3);
    const auto a = reduce_stationary(levels, whole), b = reduce_stationary(levels, g1);
    const auto ca = reduce_cycles(levels, whole_c, Method::importance);
    const auto cb = reduce_cycles(levels, c1, Method::importance);
    for (std::size_t l = 0; l < 2; ++l) {
      CHECK(a[l].p_hat == b[l].p_hat);
      CHECK(a[l].std_error == b[l].std_error);
      CHECK(ca[l].p_hat == cb[l].p_hat);
      CHECK(ca[l].std_error == cb[l].std_error);
      CHECK(ca[l].ess == cb[l].ess);
    }
  }

  TEST_CASE("parallel_for covers every index once and propagates errors") {
    std::vector<int> seen(1000, 0);
    parallel_for(seen.size(), 4, [&](std::size_t i) { ++seen[i]; });
    for (int s : seen) CHECK(s == 1);
    CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) {
                      if (i == 7) throw std::runtime_error("boom");
                    }),
                    std::runtime_error);
  }

  TEST_CASE("policy seeds stay off the channel stream") {
    CHECK(policy_seed(1) != policy_seed(2));
    CHECK(policy_seed(1) != 1);
    CHECK_THROWS(named_policy("nope", SubsetSystem::singletons(1)));
  }
}
