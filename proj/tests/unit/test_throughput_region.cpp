#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "pcsi/policies.hpp"
#include "pcsi/queueing_sim.hpp"
#include "pcsi/throughput_region.hpp"

using namespace pcsi;
using fixture::joint;

namespace {

bool has_row(const Eigen::MatrixXd& m, const Eigen::VectorXd& v) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    if ((m.row(r).transpose() - v).cwiseAbs().maxCoeff() < 1e-12) return true;
  return false;
}

// Schedules a fixed winner for every sub-state of the single observed subset.
class WinnerMap final : public sim::Policy {
 public:
  WinnerMap(const SubStateDistribution& shape, std::vector<std::size_t> winner)
      : shape_(shape), winner_(std::move(winner)) {}
  std::size_t choose_subset(const sim::QueueVector&, sim::Count) override { return 0; }
  std::size_t choose_user(std::size_t, const Eigen::Ref<const Eigen::VectorXi>& rates,
                          const sim::QueueVector&) override {
    return shape_.subset[winner_[shape_.index_of(rates)]];
  }

 private:
  const SubStateDistribution& shape_;
  std::vector<std::size_t> winner_;
};

}  // namespace

TEST_SUITE("throughput_region") {
  TEST_CASE("region_vertices of a singleton is the mean rate") {
    const auto d = joint({{0}, {1}, {3}}, {0.2, 0.5, 0.3});
    const auto shape = substate_marginal(d, {0});
    const Eigen::Vector3d phi(0.1, 0.1, 0.8);
    const auto reg = ld::region_vertices(shape, phi);
    REQUIRE(reg.vertices.rows() == 1);
    CHECK(reg.vertices(0, 0) == doctest::Approx(0.1 + 2.4));
  }

  TEST_CASE("region_vertices of the antipodal pair") {
    const auto d = joint({{2, 0}, {0, 2}}, {0.5, 0.5});
    const auto shape = substate_marginal(d, {0, 1});
    const auto reg = ld::region_vertices(shape, shape.probs);
    // Winner maps: both to 0, both to 1, matched, crossed.
    CHECK(reg.vertices.rows() == 4);
    for (const auto& v : {Eigen::Vector2d(1, 1), Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1), Eigen::Vector2d(0, 0)})
      CHECK(has_row(reg.vertices, v));
    CHECK(ld::capacity_scale(Eigen::Vector2d(0.5, 0.5), reg.vertices) == doctest::Approx(2.0));
    CHECK(ld::capacity_scale(Eigen::Vector2d(1.0, 1.0), reg.vertices) == doctest::Approx(1.0));
  }

  TEST_CASE("point-mass sub-state law gives scaled unit vectors") {
    const auto d = joint({{1, 3}, {2, 2}}, {0.5, 0.5});
    const auto shape = substate_marginal(d, {0, 1});
    const auto reg = ld::region_vertices(shape, Eigen::Vector2d(1.0, 0.0));
    CHECK(reg.vertices.rows() == 2);
    CHECK(has_row(reg.vertices, Eigen::Vector2d(1, 0)));
    CHECK(has_row(reg.vertices, Eigen::Vector2d(0, 3)));
  }

  TEST_CASE("region_vertices errors") {
    const auto d = joint({{1, 3}, {2, 2}}, {0.5, 0.5});
    const auto shape = substate_marginal(d, {0, 1});
    CHECK_THROWS_AS(ld::region_vertices(shape, Eigen::Vector3d(0.2, 0.3, 0.5)), std::invalid_argument);
    CHECK_THROWS_AS(ld::region_vertices(shape, shape.probs, 3), std::length_error);
  }

  TEST_CASE("vertices are bounded and match the support function oracle") {
    Rng rng(7);
    const auto d = JointChannelDistribution::product_form(
        {fixture::two_point(0, 2, 0.3), fixture::two_point(1, 3, 0.6),
         ScalarDistribution(Eigen::Vector3i(0, 1, 2), Eigen::Vector3d(0.3, 0.3, 0.4))});
    const auto shape = substate_marginal(d, {0, 1, 2});
    const auto reg = ld::region_vertices(shape, shape.probs);
    CHECK((reg.vertices.array() >= 0).all());
    CHECK((reg.vertices.array() <= d.max_rate()).all());
    for (int t = 0; t < 20; ++t) {
      const Eigen::Vector3d w(rng.uniform(), rng.uniform(), rng.uniform());
      const double support = (reg.vertices * w).maxCoeff();
      CHECK(support == doctest::Approx(oracle::region_support(shape.substates, shape.probs, w)).epsilon(1e-12));
    }
  }

  TEST_CASE("every vertex is achieved by its winner map in simulation") {
    const auto d = joint({{2, 0}, {0, 2}, {1, 1}}, {0.4, 0.4, 0.2});
    const SubsetSystem subsets({{0, 1}}, 2);
    const sim::SystemModel model(d, subsets, sim::ArrivalSpec::from_doubles(Eigen::Vector2d::Zero()));
    const auto& shape = model.substates(0);
    const sim::Count slots = 100000;
    for (std::size_t code = 0; code < 8; ++code) {
      std::vector<std::size_t> winner{code & 1, (code >> 1) & 1, (code >> 2) & 1};
      Eigen::Vector2d vertex = Eigen::Vector2d::Zero();
      for (std::size_t r = 0; r < 3; ++r)
        vertex(static_cast<Eigen::Index>(winner[r])) +=
            shape.probs(static_cast<Eigen::Index>(r)) * shape.substates(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(winner[r]));
      WinnerMap policy(shape, winner);
      sim::RunOptions opt;
      opt.horizon = slots;
      opt.initial_queue = sim::QueueVector::Constant(2, 10 * slots);
      const auto res = sim::run(model, policy, opt, 100 + code);
      const Eigen::Vector2d rate = res.final_state.served.cast<double>() / static_cast<double>(slots);
      for (int i = 0; i < 2; ++i) CHECK(std::abs(rate(i) - vertex(i)) <= 0.02 * std::max(vertex(i), 0.05));
    }
  }

  TEST_CASE("stability_check examples") {
    const auto unit = JointChannelDistribution::product_form({fixture::two_point(0, 2), fixture::two_point(0, 2)});
    const auto singles = SubsetSystem::singletons(2);
    auto s = ld::stability_check(Eigen::Vector2d(0.4, 0.4), unit, singles);
    CHECK(s.status == ld::Stability::stable_interior);
    CHECK(s.margin == doctest::Approx(0.2));
    s = ld::stability_check(Eigen::Vector2d(0.6, 0.6), unit, singles);
    CHECK(s.status == ld::Stability::unstable);
    s = ld::stability_check(Eigen::Vector2d(0.5, 0.5), unit, singles);
    CHECK(s.status == ld::Stability::boundary);
    s = ld::stability_check(Eigen::Vector2d::Zero(), unit, singles);
    CHECK(s.status == ld::Stability::stable_interior);
    CHECK(s.margin == 1.0);
    CHECK(std::isinf(s.scale));
    CHECK_THROWS(ld::stability_check(Eigen::Vector2d(0.1, 0.1), unit, SubsetSystem({{0, 1}, {1}}, 2)));
  }

  TEST_CASE("LP path agrees with the singleton closed form") {
    const auto d = JointChannelDistribution::product_form({fixture::two_point(0, 2, 0.3), fixture::two_point(1, 3)});
    const auto singles = SubsetSystem::singletons(2);
    const Eigen::Vector2d lambda(0.5, 0.7);
    const auto closed = ld::stability_check(lambda, d, singles);
    const double lp_scale = ld::capacity_scale(lambda, ld::throughput_vertices(d, singles));
    CHECK(lp_scale == doctest::Approx(closed.scale).epsilon(1e-9));
  }

  TEST_CASE("full-CSI subset enlarges the region") {
    const auto d = joint({{2, 0}, {0, 2}}, {0.5, 0.5});
    const Eigen::Vector2d lambda(0.6, 0.6);
    CHECK(ld::stability_check(lambda, d, SubsetSystem::singletons(2)).status == ld::Stability::unstable);
    const auto full = ld::stability_check(lambda, d, SubsetSystem({{0, 1}}, 2));
    CHECK(full.status == ld::Stability::stable_interior);
    CHECK(full.scale == doctest::Approx(1.0 / 0.6));
  }

  TEST_CASE("fluid_drift") {
    const auto d = JointChannelDistribution::product_form({fixture::two_point(0, 2), fixture::two_point(0, 2)});
    const auto singles = SubsetSystem::singletons(2);
    // Best time sharing equalizes: lambda - v = 0.6 - 0.5 = 0.1.
    CHECK(ld::fluid_drift(Eigen::Vector2d(0.6, 0.6), d, singles) == doctest::Approx(0.1));
    CHECK(ld::fluid_drift(Eigen::Vector2d(0.4, 0.4), d, singles) == doctest::Approx(-0.1));
  }
}
