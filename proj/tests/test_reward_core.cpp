#include "doctest.h"

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "prefalign/errors.hpp"
#include "prefalign/reward_core.hpp"

using namespace prefalign;

namespace {

Trajectory constant_traj(const std::string& id, std::size_t len, FeatureVector phi) {
  return Trajectory(id, std::vector<FeatureVector>(len, std::move(phi)));
}

}  // namespace

TEST_SUITE("reward_core") {

TEST_CASE("trajectory validation") {
  CHECK_THROWS_AS(Trajectory("", {{1.0}}), ValidationError);
  CHECK_THROWS_AS(Trajectory("a", {}), ValidationError);
  CHECK_THROWS_AS(Trajectory("a", {{}}), ValidationError);
  CHECK_THROWS_AS(Trajectory("a", {{1.0, 2.0}, {1.0}}), ValidationError);
  CHECK_THROWS_AS(Trajectory("a", {{NAN}}), ValidationError);
  CHECK_THROWS_AS(Trajectory("a", {{INFINITY}}), ValidationError);
  Trajectory t("a", {{1.0, 2.0}, {3.0, 4.0}}, {{"k", "v"}});
  CHECK(t.dim() == 2);
  CHECK(t.length() == 2);
  CHECK(t.metadata().at("k") == "v");
}

TEST_CASE("truncation") {
  Trajectory t("a", {{1.0}, {2.0}, {3.0}});
  CHECK(t.truncated(2).length() == 2);
  CHECK(t.truncated(2).steps().back()[0] == 2.0);
  CHECK(t.truncated(10).length() == 3);
  CHECK_THROWS_AS(t.truncated(0), InvalidArgument);
}

TEST_CASE("labels") {
  CHECK(label_from_int(1) == Label::LeftPreferred);
  CHECK(label_from_int(-1) == Label::RightPreferred);
  CHECK(label_from_int(0) == Label::Tie);
  CHECK_THROWS_AS(label_from_int(2), ValidationError);
  CHECK(flipped(Label::LeftPreferred) == Label::RightPreferred);
  CHECK(flipped(Label::Tie) == Label::Tie);
}

TEST_CASE("model validation") {
  CHECK_THROWS_AS(LinearRewardModel({1.0}, 1.5), InvalidArgument);
  CHECK_THROWS_AS(LinearRewardModel({1.0}, -0.1), InvalidArgument);
  CHECK_THROWS_AS(LinearRewardModel({NAN}), InvalidArgument);
  CHECK_NOTHROW(LinearRewardModel({1.0}, 0.0));
  CHECK_NOTHROW(LinearRewardModel({1.0}, 1.0));
}

TEST_CASE("constant reward return is a geometric series") {
  // r per step = 2 * 0.5 + (-1) * 1 + 3 * 1 = 3.
  const auto t = constant_traj("a", 25, {0.5, 1.0, 1.0});
  for (double gamma : {0.0, 0.3, 0.9, 0.99, 1.0}) {
    LinearRewardModel m({2.0, -1.0, 3.0}, gamma);
    const double closed = gamma == 1.0 ? 3.0 * 25 : 3.0 * (1.0 - std::pow(gamma, 25)) / (1.0 - gamma);
    CHECK(discounted_return(m, t) == doctest::Approx(closed).epsilon(1e-12));
  }
}

TEST_CASE("gamma zero keeps only the first step") {
  Trajectory t("a", {{1.0}, {100.0}, {1000.0}});
  CHECK(discounted_return(LinearRewardModel({2.0}, 0.0), t) == 2.0);
}

TEST_CASE("return is linear in the weights and matches its gradient") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t d = 1 + rng() % 6, len = 1 + rng() % 12;
    std::vector<FeatureVector> steps(len, FeatureVector(d));
    for (auto& s : steps)
      for (auto& v : s) v = n(rng);
    Trajectory t("t", steps);
    std::vector<double> w(d);
    for (auto& x : w) x = n(rng);
    const double gamma = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    LinearRewardModel m(w, gamma);
    CHECK(discounted_return(m, t) == doctest::Approx(oracle::slow_return(t, w, gamma)).epsilon(1e-12));
    const auto g = return_gradient(m, t);
    CHECK(dot(g, w) == doctest::Approx(discounted_return(m, t)).epsilon(1e-12));
    CHECK(g == discounted_feature_sum(t, gamma));
  }
}

TEST_CASE("dimension mismatch") {
  LinearRewardModel m({1.0, 2.0});
  Trajectory t("a", {{1.0}});
  CHECK_THROWS_AS(discounted_return(m, t), DimensionMismatch);
  CHECK_THROWS_AS(step_reward(m, std::vector<double>{1.0, 2.0, 3.0}), DimensionMismatch);
}

TEST_CASE("dataset validation") {
  std::vector<Trajectory> ts{constant_traj("a", 1, {1.0}), constant_traj("b", 1, {2.0}),
                             constant_traj("c", 1, {3.0})};
  CHECK_THROWS_AS(PreferenceDataset(ts, {{"a", "zz", Label::Tie}}), ValidationError);
  CHECK_THROWS_AS(PreferenceDataset(ts, {{"a", "a", Label::Tie}}), ValidationError);
  CHECK_THROWS_AS(PreferenceDataset({constant_traj("a", 1, {1.0}), constant_traj("a", 1, {2.0})}, {}),
                  ValidationError);
  CHECK_THROWS_AS(PreferenceDataset({constant_traj("a", 1, {1.0}), constant_traj("b", 1, {2.0, 1.0})}, {}),
                  ValidationError);
  // Same pair in both orientations: consistent is fine, contradictory is not.
  CHECK_NOTHROW(PreferenceDataset(ts, {{"a", "b", Label::LeftPreferred}, {"b", "a", Label::RightPreferred}}));
  CHECK_THROWS_AS(PreferenceDataset(ts, {{"a", "b", Label::LeftPreferred}, {"b", "a", Label::LeftPreferred}}),
                  ValidationError);
  CHECK_THROWS_AS(PreferenceDataset(ts, {{"a", "b", Label::Tie}, {"a", "b", Label::LeftPreferred}}),
                  ValidationError);
}

TEST_CASE("intransitive cycles are kept and reported") {
  std::vector<Trajectory> ts{constant_traj("a", 1, {1.0}), constant_traj("b", 1, {2.0}),
                             constant_traj("c", 1, {3.0})};
  PreferenceDataset data(ts, {{"a", "b", Label::LeftPreferred},
                              {"b", "c", Label::LeftPreferred},
                              {"c", "a", Label::LeftPreferred}});
  CHECK(data.size() == 3);
  CHECK(data.transitivity_violations().size() == 1);
  PreferenceDataset ok(ts, {{"a", "b", Label::LeftPreferred}, {"b", "c", Label::LeftPreferred}});
  CHECK(ok.transitivity_violations().empty());
}

TEST_CASE("subset and lookup") {
  std::vector<Trajectory> ts{constant_traj("a", 1, {1.0}), constant_traj("b", 1, {2.0}),
                             constant_traj("c", 1, {3.0})};
  PreferenceDataset data(ts, {{"a", "b", Label::LeftPreferred}, {"b", "c", Label::Tie}});
  const std::vector<std::size_t> pick{1};
  auto sub = data.subset(pick);
  REQUIRE(sub.size() == 1);
  CHECK(sub.records()[0].label == Label::Tie);
  CHECK(data.trajectory_index("c") == 2);
  CHECK_THROWS_AS(data.trajectory("zz"), ValidationError);
}

TEST_CASE("pair table agrees with direct returns") {
  std::vector<Trajectory> ts{Trajectory("a", {{1.0, 0.0}, {0.0, 1.0}}), Trajectory("b", {{2.0, 2.0}})};
  PreferenceDataset data(ts, {{"a", "b", Label::RightPreferred}});
  const double gamma = 0.5;
  const auto table = compile_pairs(data, gamma);
  const std::vector<double> w{1.5, -2.0};
  const double direct = oracle::slow_return(ts[0], w, gamma) - oracle::slow_return(ts[1], w, gamma);
  CHECK(table.delta_return(0, w) == doctest::Approx(direct));
  CHECK(table.label[0] == -1);
  std::vector<double> g(2);
  table.delta_gradient(0, g);
  CHECK(g[0] == doctest::Approx(1.0 - 2.0));
  CHECK(g[1] == doctest::Approx(0.5 - 2.0));
}

}  // TEST_SUITE
