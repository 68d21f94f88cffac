#include "mipl/poison.hpp"

#include <gtest/gtest.h>

#include "mipl/corpus.hpp"
#include "mipl/model.hpp"
#include "mipl/rng.hpp"
#include "oracles.hpp"

using namespace mipl;

namespace {

Sequence printable_seq(Rng& rng, int len) {
  Sequence s;
  for (int i = 0; i < len; ++i) s.push_back(static_cast<Token>(32 + rng.below(95)));
  return s;
}

struct AttackFixture : public ::testing::Test {
  void SetUp() override {
    Rng rng(101);
    bg = synth_background(300, 64, 7);
    aux = synth_background(80, 64, 8);
    ModelConfig mc;
    mc.seed = 9;
    model = train(init_model(mc), bg);
    target = printable_seq(rng, 64);
  }

  Dataset bg, aux;
  ModelParams model;
  Sequence target;
};

TEST_F(AttackFixture, PoisonLossPinnedCases) {
  // in-ball embedding loss of the target itself: maximal closeness
  EXPECT_NEAR(poison_loss(target, target, model, NeighborhoodSpec::embedding(),
                          AttackDirection::make_member_look_non_member),
              -1.0, 1e-9);

  // zero shared k-grams -> in-ball ngram loss is 0
  Rng rng(5);
  const Sequence far = printable_seq(rng, 64);
  ASSERT_FALSE(shares_ngram(far, target, 7));
  EXPECT_DOUBLE_EQ(poison_loss(far, target, model, NeighborhoodSpec::ngram(),
                               AttackDirection::make_member_look_non_member),
                   0.0);

  // lambda = 0: out-of-ball loss reduces to pure negative activation cosine
  const double base = -cosine(activation(model, far), activation(model, target));
  EXPECT_NEAR(poison_loss(far, target, model, NeighborhoodSpec::ngram(),
                          AttackDirection::make_non_member_look_member),
              base, 1e-12);
  EXPECT_NEAR(poison_loss(far, target, model, NeighborhoodSpec::exact(),
                          AttackDirection::make_non_member_look_member),
              base, 1e-12);

  // no poisoned neighbor exists under exact match
  try {
    poison_loss(far, target, model, NeighborhoodSpec::exact(),
                AttackDirection::make_member_look_non_member);
    FAIL() << "expected Unsupported";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::unsupported);
  }
}

TEST_F(AttackFixture, EmbeddingLambdaComposesOutward) {
  // With the default lambda, a candidate that is closer in embedding space
  // must cost more: the loss pushes out of the neighborhood while the
  // activation term rewards mimicry.
  Sequence near_copy = target;
  Rng rng(7);
  near_copy[rng.below(near_copy.size())] = static_cast<Token>(32 + rng.below(95));
  const Sequence far = printable_seq(rng, 64);

  const NeighborhoodSpec spec = NeighborhoodSpec::embedding();
  const Embedder emb(spec.embedder);
  ASSERT_GT(cosine(emb(near_copy), emb(target)), cosine(emb(far), emb(target)));

  const double act_near = -cosine(activation(model, near_copy), activation(model, target));
  const double act_far = -cosine(activation(model, far), activation(model, target));
  const double loss_near = poison_loss(near_copy, target, model, spec,
                                       AttackDirection::make_non_member_look_member);
  const double loss_far =
      poison_loss(far, target, model, spec, AttackDirection::make_non_member_look_member);
  // subtract the activation part: the remaining closeness penalty must be
  // larger for the embedding-closer candidate
  EXPECT_GT(loss_near - act_near, loss_far - act_far);
}

TEST_F(AttackFixture, OutwardNgramLeavesBallAndMimics) {
  // the attack's efficacy signature: output shares no 7-gram with the target
  // yet its activations stay closer than a random aux sequence's
  const NeighborhoodSpec spec = NeighborhoodSpec::ngram(7);
  int closer = 0;
  const int trials = 20;
  for (int i = 0; i < trials; ++i) {
    Rng rng(1000 + i);
    const Sequence x_t = printable_seq(rng, 64);
    PoisonConfig cfg;
    cfg.seed = 500 + i;
    const PoisonRecord rec = poisonm(x_t, spec, model,
                                     AttackDirection::make_non_member_look_member, aux, cfg);
    EXPECT_FALSE(oracle::shares_ngram(rec.poison, x_t, 7));
    EXPECT_FALSE(rec.neighbor_after);
    EXPECT_TRUE(rec.audit_passed());
    EXPECT_NE(rec.poison, x_t);
    EXPECT_GT(rec.iterations, 0);

    const double mimic = cosine(activation(model, rec.poison), activation(model, x_t));
    const double random_ref =
        cosine(activation(model, aux.points[i]), activation(model, x_t));
    if (mimic > random_ref) ++closer;
  }
  EXPECT_GE(closer, 17) << "activation mimicry should beat random aux almost always";
}

TEST_F(AttackFixture, OutwardExactMatchSingleSubstitution) {
  PoisonConfig cfg;
  cfg.seed = 11;
  const PoisonRecord rec = poisonm(target, NeighborhoodSpec::exact(), model,
                                   AttackDirection::make_non_member_look_member, aux, cfg);
  EXPECT_EQ(rec.iterations, 1);
  EXPECT_NE(rec.poison, target);
  int diffs = 0;
  for (std::size_t i = 0; i < target.size(); ++i) diffs += rec.poison[i] != target[i];
  EXPECT_EQ(diffs, 1);
  EXPECT_TRUE(rec.audit_passed());
}

TEST_F(AttackFixture, InwardNgramInjectsGram) {
  PoisonConfig cfg;
  cfg.seed = 13;
  const NeighborhoodSpec spec = NeighborhoodSpec::ngram(7);
  const PoisonRecord rec =
      poisonm(target, spec, model, AttackDirection::make_member_look_non_member, aux, cfg);
  EXPECT_TRUE(oracle::shares_ngram(rec.poison, target, 7));
  EXPECT_TRUE(rec.neighbor_after);
  EXPECT_NE(rec.poison, target);
  EXPECT_TRUE(rec.audit_passed());
  EXPECT_GE(rec.metric_value, 1.0);
}

TEST_F(AttackFixture, InwardEmbeddingPullsIn) {
  PoisonConfig cfg;
  cfg.seed = 15;
  const NeighborhoodSpec spec = NeighborhoodSpec::embedding(0.9);
  const PoisonRecord rec =
      poisonm(target, spec, model, AttackDirection::make_member_look_non_member, aux, cfg);
  const Embedder emb(spec.embedder);
  EXPECT_GE(cosine(emb(rec.poison), emb(target)), 0.9);
  EXPECT_TRUE(rec.audit_passed());
  // greedy keep-if-better: the recorded trace never increases
  for (std::size_t i = 1; i < rec.loss_trace.size(); ++i) {
    EXPECT_LE(rec.loss_trace[i], rec.loss_trace[i - 1]);
  }
}

TEST_F(AttackFixture, InwardEditPullsIn) {
  PoisonConfig cfg;
  cfg.seed = 17;
  const NeighborhoodSpec spec = NeighborhoodSpec::edit(0.4);
  const PoisonRecord rec =
      poisonm(target, spec, model, AttackDirection::make_member_look_non_member, aux, cfg);
  EXPECT_LE(normalized_edit(rec.poison, target), 0.4);
  EXPECT_TRUE(rec.audit_passed());
  for (std::size_t i = 1; i < rec.loss_trace.size(); ++i) {
    EXPECT_LE(rec.loss_trace[i], rec.loss_trace[i - 1]);
  }
}

TEST_F(AttackFixture, InwardExactMatchUnsupported) {
  try {
    poisonm(target, NeighborhoodSpec::exact(), model,
            AttackDirection::make_member_look_non_member, aux, PoisonConfig{});
    FAIL() << "expected Unsupported";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::unsupported);
  }
}

TEST_F(AttackFixture, DeterministicPerSeed) {
  PoisonConfig cfg;
  cfg.seed = 19;
  for (AttackDirection dir : {AttackDirection::make_non_member_look_member,
                              AttackDirection::make_member_look_non_member}) {
    const PoisonRecord a = poisonm(target, NeighborhoodSpec::ngram(7), model, dir, aux, cfg);
    const PoisonRecord b = poisonm(target, NeighborhoodSpec::ngram(7), model, dir, aux, cfg);
    EXPECT_EQ(a.poison, b.poison);
    EXPECT_EQ(a.iterations, b.iterations);
  }
}

TEST_F(AttackFixture, MaxItersExhaustionFails) {
  PoisonConfig cfg;
  cfg.seed = 21;
  cfg.max_iters = 1;  // cannot break every shared 7-gram in one substitution
  try {
    poisonm(target, NeighborhoodSpec::ngram(7), model,
            AttackDirection::make_non_member_look_member, aux, cfg);
    FAIL() << "expected AttackFailed";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::attack_failed);
  }
}

TEST_F(AttackFixture, ActivationMimicMatchesDirectComputation) {
  detail::ActivationMimic mimic(model, target);
  Rng rng(23);
  Sequence x = printable_seq(rng, 48);
  mimic.reset(x);
  for (int step = 0; step < 10; ++step) {
    const std::size_t pos = rng.below(x.size());
    const Token v = static_cast<Token>(32 + rng.below(95));
    const double predicted = mimic.cosine_if_substituted(pos, v);
    Sequence y = x;
    y[pos] = v;
    const double direct = cosine(activation(model, y), activation(model, target));
    EXPECT_NEAR(predicted, direct, 1e-9);
    mimic.apply(pos, v);
    x = y;
  }
}

TEST(Baselines, DropoutCaseFlipChunk) {
  const Sequence x = tokenize("abcdefghij");
  EXPECT_EQ(baseline_token_dropout(x, 0.0, 1), x);
  const Sequence dropped = baseline_token_dropout(x, 0.5, 1);  // every 2nd token
  EXPECT_EQ(detokenize(dropped), "acegi");

  EXPECT_EQ(detokenize(baseline_case_flip(tokenize("abc"), 1.0, 1)), "ABC");
  EXPECT_EQ(detokenize(baseline_case_flip(tokenize("AbC1"), 1.0, 1)), "aBc1");

  Rng rng(25);
  Sequence target;
  for (int i = 0; i < 64; ++i) target.push_back(static_cast<Token>(32 + rng.below(95)));
  const Sequence chunky = baseline_chunk(target, 9, 64, 3);
  EXPECT_EQ(chunky.size(), 64u);
  // chunk_len >= k leaves a shared k-gram: the audit must flag it a neighbor
  EXPECT_TRUE(is_neighbor(chunky, target, NeighborhoodSpec::ngram(7)));

  const Sequence fine = baseline_chunk(target, 5, 64, 3);
  EXPECT_FALSE(is_neighbor(fine, target, NeighborhoodSpec::ngram(7)));
}

TEST(Baselines, TuneSelectsLeastDestructiveFeasible) {
  Rng rng(27);
  Sequence target;
  for (int i = 0; i < 64; ++i) target.push_back(static_cast<Token>(32 + rng.below(95)));

  // identity-only grid: never a non-neighbor
  try {
    tune_baseline(BaselineKind::token_dropout, target, NeighborhoodSpec::ngram(7),
                  {BaselineParams{0.0, 0, 0}});
    FAIL() << "expected NoFeasibleParams";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::no_feasible_params);
  }

  // monotone grid: rate 0 keeps every 7-gram, rate 0.2 (drop every 5th) is
  // the first point that breaks them all
  const std::vector<BaselineParams> grid = {{0.0, 0, 0}, {0.05, 0, 0}, {0.2, 0, 0}, {0.5, 0, 0}};
  const BaselineParams chosen =
      tune_baseline(BaselineKind::token_dropout, target, NeighborhoodSpec::ngram(7), grid);
  EXPECT_DOUBLE_EQ(chosen.value, 0.2);

  // determinism
  const BaselineParams again =
      tune_baseline(BaselineKind::token_dropout, target, NeighborhoodSpec::ngram(7), grid);
  EXPECT_DOUBLE_EQ(chosen.value, again.value);
}

struct PoisonDatasetFixture : public ::testing::Test {
  void SetUp() override {
    bg = synth_background(200, 64, 31);
    aux = synth_background(60, 64, 32);
    const Dataset canaries =
        gen_canaries(20, 64, 33,
                     {NeighborhoodSpec::exact(), NeighborhoodSpec::ngram(7)});
    mr = mix(bg, canaries, 10, 10, 34);
    ModelConfig mc;
    mc.seed = 35;
    model = train(init_model(mc), bg);
    const LabeledEvalSet labels = label_membership(mr.eval, mr.train, NeighborhoodSpec::ngram(7));
    for (std::size_t i = 0; i < mr.eval.size(); ++i) {
      targets.push_back({mr.eval[i], labels.member[i] != 0});
    }
  }

  Dataset bg, aux;
  MixResult mr;
  ModelParams model;
  std::vector<std::pair<Sequence, bool>> targets;
};

TEST_F(PoisonDatasetFixture, ZeroBudgetsNoop) {
  const PoisonDatasetResult r = poison_dataset(mr.train, targets, NeighborhoodSpec::ngram(7),
                                               model, 0, 0, aux, PoisonConfig{});
  EXPECT_EQ(r.data.points, mr.train.points);
  EXPECT_TRUE(r.records.empty());
}

TEST_F(PoisonDatasetFixture, SubstitutionInvariants) {
  PoisonConfig cfg;
  cfg.seed = 37;
  const NeighborhoodSpec spec = NeighborhoodSpec::ngram(7);
  const PoisonDatasetResult r = poison_dataset(mr.train, targets, spec, model, 1, 3, aux, cfg);

  EXPECT_EQ(r.data.size(), mr.train.size());
  // 10 members * b1 + 10 non-members * b2
  EXPECT_EQ(r.records.size(), 10u * 1u + 10u * 3u);

  // every emitted poison passes the independent neighborhood audit
  for (const PoisonRecord& rec : r.records) {
    EXPECT_TRUE(rec.audit_passed());
    if (rec.direction == AttackDirection::make_member_look_non_member) {
      EXPECT_TRUE(oracle::shares_ngram(rec.poison, rec.target, 7));
    } else {
      EXPECT_FALSE(oracle::shares_ngram(rec.poison, rec.target, 7));
    }
  }

  // Def. 3: every target's Eq. (1) label is preserved (independent scan)
  for (const auto& [seq, label] : targets) {
    EXPECT_EQ(oracle::is_member(seq, r.data.points, spec), label);
  }

  // untouched region is identical; |D' delta D| <= 2 * replacements
  std::size_t changed = 0;
  for (std::size_t i = 0; i < r.data.size(); ++i) {
    if (r.data.points[i] != mr.train.points[i]) ++changed;
  }
  EXPECT_EQ(changed, r.replaced_indices.size());

  // determinism
  const PoisonDatasetResult again =
      poison_dataset(mr.train, targets, spec, model, 1, 3, aux, cfg);
  EXPECT_EQ(again.data.points, r.data.points);
}

TEST_F(PoisonDatasetFixture, BudgetInfeasibleWithoutNeighbors) {
  // a brand-new member "target" with no in-dataset neighbor cannot be hidden
  Rng rng(39);
  Sequence stranger;
  for (int i = 0; i < 64; ++i) stranger.push_back(static_cast<Token>(32 + rng.below(95)));
  std::vector<std::pair<Sequence, bool>> bad = {{stranger, true}};
  try {
    poison_dataset(mr.train, bad, NeighborhoodSpec::ngram(7), model, 1, 0, aux, PoisonConfig{});
    FAIL() << "expected BudgetInfeasible";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::budget_infeasible);
  }
}

TEST_F(PoisonDatasetFixture, RecordsSerializeAsJsonl) {
  PoisonConfig cfg;
  cfg.seed = 41;
  const PoisonDatasetResult r =
      poison_dataset(mr.train, targets, NeighborhoodSpec::ngram(7), model, 1, 1, aux, cfg);
  const std::string path = testing::TempDir() + "/mipl_records.jsonl";
  save_records_jsonl(path, r.records, "config_hash=0 seed=41 version=mipl-v1");
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line.rfind("# config_hash", 0), 0u);
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) ++lines;
  }
  EXPECT_EQ(lines, r.records.size());
}

}  // namespace
