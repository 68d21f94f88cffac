#include "mipl/analysis.hpp"

#include <gtest/gtest.h>

#include "mipl/corpus.hpp"
#include "mipl/rng.hpp"

using namespace mipl;

namespace {

TEST(YoudenIntegral, PointMassesMatchClosedForm) {
  // members at squash(2), non-members at squash(1): the integral equals the
  // difference of the squashed means
  const double hi = squash(2.0);  // 0.8807970779778823
  const double lo = squash(1.0);  // 0.7310585786300049
  const std::vector<double> members(50, hi), nonmembers(50, lo);
  const double integral = youden_integral(members, nonmembers, 1e-3);
  EXPECT_NEAR(integral, hi - lo, 2e-3);
  EXPECT_NEAR(integral, 0.1497, 3e-3);
}

TEST(YoudenIntegral, IdenticalAndPerfect) {
  Rng rng(5);
  std::vector<double> same_a(400), same_b(400);
  for (int i = 0; i < 400; ++i) {
    same_a[i] = squash(rng.gaussian());
    same_b[i] = squash(rng.gaussian());
  }
  EXPECT_NEAR(youden_integral(same_a, same_b, 1e-3), 0.0, 0.05);

  const std::vector<double> ones(20, 1.0), zeros(20, 0.0);
  EXPECT_NEAR(youden_integral(ones, zeros, 1e-3), 1.0, 2e-3);
}

TEST(YoudenIntegral, InputValidation) {
  EXPECT_THROW(youden_integral({}, {0.5}, 1e-3), Error);
  EXPECT_THROW(youden_integral({1.5}, {0.5}, 1e-3), Error);  // unsquashed
}

TEST(VerifyLemma1, UniformPairsWithinTolerance) {
  const auto uniform_sampler = [](double lo, double hi) {
    return [lo, hi](Rng& rng) { return lo + (hi - lo) * rng.next_unit(); };
  };
  const AdvantageReport r = verify_lemma1(uniform_sampler(0.6, 0.9), uniform_sampler(0.1, 0.4),
                                          10000, 1e-3, 0.01, 42);
  EXPECT_TRUE(r.passed);
  EXPECT_LT(r.gap, 0.01);
  EXPECT_NEAR(r.mean_difference, 0.5, 0.02);

  const AdvantageReport same =
      verify_lemma1(uniform_sampler(0.2, 0.8), uniform_sampler(0.2, 0.8), 10000, 1e-3, 0.02, 43);
  EXPECT_TRUE(same.passed);
  EXPECT_NEAR(same.quadrature, 0.0, 0.02);
  EXPECT_NEAR(same.mean_difference, 0.0, 0.02);
}

TEST(VerifyLemma1, PropertyOverRandomMixtures) {
  // bounded two-component mixtures with random parameters
  Rng meta(17);
  for (int rep = 0; rep < 6; ++rep) {
    const double a1 = meta.next_unit(), b1 = a1 + (1.0 - a1) * meta.next_unit();
    const double a2 = meta.next_unit(), b2 = a2 + (1.0 - a2) * meta.next_unit();
    const double w = meta.next_unit();
    const auto mix_sampler = [=](Rng& rng) {
      if (rng.next_unit() < w) return a1 + (b1 - a1) * rng.next_unit();
      return a2 + (b2 - a2) * rng.next_unit();
    };
    const double c1 = meta.next_unit(), c2 = meta.next_unit();
    const auto other = [=](Rng& rng) {
      return std::min(c1, c2) + std::abs(c1 - c2) * rng.next_unit();
    };
    const AdvantageReport r = verify_lemma1(mix_sampler, other, 8000, 1e-3, 0.025, 100 + rep);
    EXPECT_TRUE(r.passed) << "rep " << rep << " gap " << r.gap;
  }
}

struct DeltaFixture : public ::testing::Test {
  void SetUp() override {
    pool = synth_background(400, 48, 81);
    aux = synth_background(60, 48, 82);
    ModelConfig mc;
    ScoreConfig sc;
    sc.seed = 83;
    env = make_game_env(pool, aux, mc, sc, /*dataset_size=*/120, /*seed=*/84);
    Rng rng(85);
    target.clear();
    for (int i = 0; i < 48; ++i) target.push_back(static_cast<Token>(32 + rng.below(95)));
    base = detail::challenger_sample(pool, target, NeighborhoodSpec::ngram(7), 119, 86);
  }

  Dataset pool, aux, base;
  GameEnv env;
  Sequence target;
};

TEST_F(DeltaFixture, IdenticalInsertionsGiveZero) {
  ModelConfig mc = env.model_config;
  mc.seed = 87;
  const std::vector<Sequence> pts = {aux.points[0], aux.points[1]};
  EXPECT_DOUBLE_EQ(
      measure_delta(target, base, pts, pts, TestKind::loss, mc, env.score_env()), 0.0);
}

TEST_F(DeltaFixture, SwapSymmetry) {
  ModelConfig mc = env.model_config;
  mc.seed = 88;
  const std::vector<Sequence> a = {aux.points[0]};
  const std::vector<Sequence> b = {aux.points[1]};
  const double d1 = measure_delta(target, base, a, b, TestKind::loss, mc, env.score_env());
  const double d2 = measure_delta(target, base, b, a, TestKind::loss, mc, env.score_env());
  EXPECT_DOUBLE_EQ(d1, d2);
  EXPECT_THROW(
      measure_delta(target, base, a, {}, TestKind::loss, mc, env.score_env()), Error);
}

TEST_F(DeltaFixture, PoisonMBeatsRandomNonNeighborAblation) {
  // the attack's point: its non-neighbor poisons imitate training on the
  // target far better than arbitrary non-neighbors do
  ModelConfig mc = env.model_config;
  const NeighborhoodSpec spec = NeighborhoodSpec::ngram(7);
  double delta_attack = 0.0, delta_random = 0.0;
  const int trials = 6;
  for (int t = 0; t < trials; ++t) {
    Rng rng(900 + t);
    Sequence x_t;
    for (int i = 0; i < 48; ++i) x_t.push_back(static_cast<Token>(32 + rng.below(95)));
    const Dataset b = detail::challenger_sample(pool, x_t, spec, 119, 910 + t);
    PoisonConfig cfg;
    cfg.seed = 920 + t;
    const PoisonRecord rec = poisonm(x_t, spec, env.attack_surrogate,
                                     AttackDirection::make_non_member_look_member, aux, cfg);
    mc.seed = 930 + t;
    delta_attack +=
        measure_delta(x_t, b, {x_t}, {rec.poison}, TestKind::loss, mc, env.score_env());
    delta_random +=
        measure_delta(x_t, b, {x_t}, {aux.points[t]}, TestKind::loss, mc, env.score_env());
  }
  EXPECT_LT(delta_attack, delta_random);
}

TEST_F(DeltaFixture, ConstantScorerDegenerateTheorem) {
  GameEnv const_env = env;
  ScoreConfig sc = env.scoring;
  const_env.scoring = sc;
  TradeoffOptions opts;
  opts.n_trials = 4;
  opts.fixed_b2 = 0;

  // constant test: both advantages and both delta terms are exactly zero
  GameEnv patched = env;
  // run through the internals with an override scorer
  ScoreEnv se = patched.score_env();
  se.override_scorer = [](const ModelParams&, const Sequence&) { return 0.7; };
  // verify_theorem1 uses env.score_env(); emulate by checking measure_delta
  ModelConfig mc = env.model_config;
  mc.seed = 89;
  const double d =
      measure_delta(target, base, {aux.points[0]}, {aux.points[1]}, TestKind::loss, mc, se);
  EXPECT_DOUBLE_EQ(d, 0.0);
}

TEST_F(DeltaFixture, Theorem1HoldsOnSmallRun) {
  TradeoffOptions opts;
  opts.n_trials = 8;
  opts.fixed_b2 = 2;
  const TradeoffReport r =
      verify_theorem1(target, NeighborhoodSpec::ngram(7), TestKind::loss, opts, 90, env);
  EXPECT_EQ(r.n_trials, 8);
  EXPECT_TRUE(r.passed) << "slack " << r.slack << " tol " << r.tolerance;
  EXPECT_NEAR(r.slack, r.delta_star - (r.clean_advantage + r.robust_advantage), 1e-12);
  EXPECT_EQ(r.extension_b2, 2);
  // exact-match spec cannot supply poisoned neighbors
  EXPECT_THROW(
      verify_theorem1(target, NeighborhoodSpec::exact(), TestKind::loss, opts, 91, env), Error);
}

TEST_F(DeltaFixture, Theorem1DeterministicAcrossRuns) {
  TradeoffOptions opts;
  opts.n_trials = 3;
  opts.fixed_b2 = 0;
  const TradeoffReport a =
      verify_theorem1(target, NeighborhoodSpec::ngram(7), TestKind::loss, opts, 92, env);
  const TradeoffReport b =
      verify_theorem1(target, NeighborhoodSpec::ngram(7), TestKind::loss, opts, 92, env);
  EXPECT_DOUBLE_EQ(a.clean_advantage, b.clean_advantage);
  EXPECT_DOUBLE_EQ(a.robust_advantage, b.robust_advantage);
  EXPECT_DOUBLE_EQ(a.delta_star, b.delta_star);
}

}  // namespace
