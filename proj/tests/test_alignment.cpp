#include "doctest.h"

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "prefalign/alignment.hpp"
#include "prefalign/datalab.hpp"
#include "prefalign/errors.hpp"

using namespace prefalign;

namespace {

PreferenceDataset line_data(std::vector<PreferenceRecord> recs) {
  std::vector<Trajectory> ts;
  for (int i = 0; i < 4; ++i) ts.emplace_back("x" + std::to_string(i), std::vector<FeatureVector>{{double(i)}});
  return PreferenceDataset(ts, std::move(recs));
}

}  // namespace

TEST_SUITE("alignment") {

TEST_CASE("toy fixtures") {
  const LinearRewardModel one({1.0});
  auto clean = tac(toy_fixture(false), one);
  CHECK(clean.tac == 1.0);
  CHECK(clean.counts.concordant == 4);

  auto noisy = tac(toy_fixture(true), one);
  CHECK(noisy.tac == doctest::Approx(0.6));
  CHECK(noisy.counts.concordant == 4);
  CHECK(noisy.counts.discordant == 1);
  CHECK(noisy.per_pair[kToyMislabeledRecord].classification == PairClass::Discordant);

  // Reversing the reward reverses every verdict.
  CHECK(tac(toy_fixture(false), LinearRewardModel({-1.0})).tac == -1.0);
}

TEST_CASE("classification") {
  CHECK(classify(Label::LeftPreferred, Label::LeftPreferred) == PairClass::Concordant);
  CHECK(classify(Label::LeftPreferred, Label::RightPreferred) == PairClass::Discordant);
  CHECK(classify(Label::LeftPreferred, Label::Tie) == PairClass::TiedInducedOnly);
  CHECK(classify(Label::Tie, Label::RightPreferred) == PairClass::TiedHumanOnly);
  CHECK(classify(Label::Tie, Label::Tie) == PairClass::TiedBoth);
}

TEST_CASE("hand-counted tie handling") {
  auto data = line_data({{"x1", "x0", Label::LeftPreferred},
                         {"x2", "x1", Label::Tie},
                         {"x3", "x2", Label::RightPreferred},
                         {"x0", "x3", Label::Tie}});
  // With w = 1 every induced verdict is strict: P=1, Q=1, Y0=2.
  auto r = tac(data, LinearRewardModel({1.0}));
  CHECK(r.counts.concordant == 1);
  CHECK(r.counts.discordant == 1);
  CHECK(r.counts.tied_only_human == 2);
  CHECK(r.tac == 0.0);
  // tie_epsilon 1.5 ties the unit gaps: x0 vs x3 (gap 3) stays strict.
  auto e = tac(data, LinearRewardModel({1.0}), 1.5);
  CHECK(e.counts.tied_only_induced == 2);
  CHECK(e.counts.tied_both == 1);
  CHECK(e.counts.tied_only_human == 1);
  CHECK(e.tac == 0.0);
}

TEST_CASE("tied-both pairs leave the coefficient unchanged") {
  auto base = line_data({{"x1", "x0", Label::LeftPreferred}, {"x3", "x1", Label::RightPreferred},
                         {"x2", "x0", Label::LeftPreferred}});
  std::vector<Trajectory> ts(base.trajectories());
  ts.emplace_back("y", std::vector<FeatureVector>{{2.0}});
  auto recs = base.records();
  PreferenceDataset with(ts, recs);
  recs.push_back({"y", "x2", Label::Tie});
  PreferenceDataset extra(ts, recs);
  CHECK(tac(with, LinearRewardModel({1.0})).tac == tac(extra, LinearRewardModel({1.0})).tac);
  CHECK(tac(extra, LinearRewardModel({1.0})).counts.tied_both == 1);
}

TEST_CASE("degenerate datasets") {
  auto all_tie = line_data({{"x0", "x1", Label::Tie}, {"x1", "x2", Label::Tie}});
  CHECK_THROWS_AS(tac(all_tie, LinearRewardModel({1.0})), DegenerateDataset);
  auto strict = line_data({{"x0", "x1", Label::RightPreferred}});
  CHECK_THROWS_AS(tac(strict, LinearRewardModel({0.0})), DegenerateDataset);
  CHECK_THROWS_AS(tac(strict, LinearRewardModel({1.0, 2.0})), DimensionMismatch);
}

TEST_CASE("matches the textbook formula on random tie patterns") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 300; ++rep) {
    auto c = oracle::random_tie_case(rng, oracle::TiePattern::Mixed);
    auto expected = oracle::tau_b(c.data, c.weights);
    LinearRewardModel m(c.weights);
    if (expected) {
      CHECK(tac(c.data, m).tac == *expected);
    } else {
      CHECK_THROWS_AS(tac(c.data, m), DegenerateDataset);
    }
  }
}

TEST_CASE("TAC is invariant to positive rescaling and swapped orientation") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 100; ++rep) {
    auto c = oracle::random_tie_case(rng, oracle::TiePattern::None);
    LinearRewardModel m(c.weights);
    if (!oracle::tau_b(c.data, c.weights)) continue;
    const double t = tac(c.data, m).tac;
    auto scaled = c.weights;
    for (auto& w : scaled) w *= 3.5;
    CHECK(tac(c.data, LinearRewardModel(scaled)).tac == doctest::Approx(t));
    std::vector<PreferenceRecord> swapped;
    for (const auto& r : c.data.records()) swapped.push_back({r.right, r.left, flipped(r.label)});
    CHECK(tac(c.data.with_records(swapped), m).tac == doctest::Approx(t));
  }
}

TEST_CASE("soft TAC bounds and limits") {
  const auto data = toy_fixture(true);
  const LinearRewardModel m({1.0});
  for (double a : {0.01, 1.0, 10.0, 1e6}) {
    const double s = soft_tac(data, m, a);
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
  }
  // Every |dG| is 1 or 2 here, so alpha = 50 saturates tanh.
  CHECK(soft_tac(data, m, 50.0) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(soft_tac(data, m, 1.0) ==
        doctest::Approx((4.0 * std::tanh(1.0) - std::tanh(2.0)) / 5.0));
  CHECK_THROWS_AS(soft_tac(data, m, 0.0), InvalidArgument);
  CHECK_THROWS_AS(soft_tac(data, m, -1.0), InvalidArgument);
}

TEST_CASE("accuracy counts exact matches, ties included") {
  auto data = line_data({{"x1", "x0", Label::LeftPreferred}, {"x2", "x1", Label::Tie}});
  CHECK(accuracy(data, LinearRewardModel({1.0})) == 0.5);
  CHECK(accuracy(data, LinearRewardModel({0.0})) == 0.5);
  CHECK(accuracy(data, LinearRewardModel({1.0}), 2.0) == 0.5);
}

TEST_CASE("verdict thresholds") {
  CHECK(verdict_for(0.0, 0.0) == Label::Tie);
  CHECK(verdict_for(1e-300, 0.0) == Label::LeftPreferred);
  CHECK(verdict_for(-0.5, 0.5) == Label::Tie);
  CHECK(verdict_for(-0.50001, 0.5) == Label::RightPreferred);
}

}  // TEST_SUITE
