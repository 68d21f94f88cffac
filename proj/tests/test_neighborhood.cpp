#include "mipl/neighborhood.hpp"

#include <gtest/gtest.h>

#include "mipl/corpus.hpp"
#include "mipl/rng.hpp"
#include "mipl/sequence.hpp"
#include "oracles.hpp"

using namespace mipl;

namespace {

Sequence random_seq(Rng& rng, int len, int lo = 32, int hi = 127) {
  Sequence s;
  s.reserve(len);
  for (int i = 0; i < len; ++i) s.push_back(static_cast<Token>(lo + rng.below(hi - lo)));
  return s;
}

Sequence iota_seq(int from, int count) {
  Sequence s;
  for (int i = 0; i < count; ++i) s.push_back(from + i);
  return s;
}

TEST(NgramSet, DefinitionAndDedup) {
  const Sequence x = iota_seq(1, 8);
  const auto grams = ngram_set(x, 7);
  EXPECT_EQ(grams.size(), 2u);
  EXPECT_TRUE(grams.count(iota_seq(1, 7)));
  EXPECT_TRUE(grams.count(iota_seq(2, 7)));

  const Sequence ones(8, 1);
  EXPECT_EQ(ngram_set(ones, 7).size(), 1u);

  EXPECT_THROW(ngram_set(iota_seq(0, 3), 7), Error);

  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Sequence r = random_seq(rng, 64);
    EXPECT_LE(ngram_set(r, 7).size(), 58u);
  }
}

TEST(SharesNgram, MatchesQuadraticOracle) {
  Rng rng(17);
  EXPECT_TRUE(shares_ngram(iota_seq(1, 7), iota_seq(1, 7), 7));
  EXPECT_FALSE(shares_ngram(iota_seq(1, 7), iota_seq(8, 7), 7));
  EXPECT_FALSE(shares_ngram(iota_seq(1, 5), iota_seq(1, 5), 7));  // too short -> false

  for (int trial = 0; trial < 200; ++trial) {
    const int la = 8 + static_cast<int>(rng.below(57));
    const int lb = 8 + static_cast<int>(rng.below(57));
    Sequence a = random_seq(rng, la, 0, 6);  // small alphabet to force overlaps
    Sequence b = random_seq(rng, lb, 0, 6);
    for (int k : {2, 3, 7}) {
      EXPECT_EQ(shares_ngram(a, b, k), oracle::shares_ngram(a, b, k));
    }
  }
}

TEST(SharesNgram, MonotoneInK) {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    Sequence a = random_seq(rng, 32, 0, 4);
    Sequence b = random_seq(rng, 32, 0, 4);
    for (int k = 2; k <= 9; ++k) {
      if (shares_ngram(a, b, k)) {
        EXPECT_TRUE(shares_ngram(a, b, k - 1));
      }
    }
  }
}

TEST(SharedNgramCount, CountsDistinctWindows) {
  const Sequence x = iota_seq(1, 10);
  EXPECT_EQ(shared_ngram_count(x, x, 7), 4);
  EXPECT_EQ(shared_ngram_count(x, iota_seq(100, 10), 7), 0);
  const Sequence ones(12, 1);
  EXPECT_EQ(shared_ngram_count(ones, ones, 7), 1);
}

TEST(EditDistance, KnownValuesAndOracle) {
  const Sequence kitten = tokenize("kitten");
  const Sequence sitting = tokenize("sitting");
  EXPECT_EQ(edit_distance(kitten, sitting), 3);
  EXPECT_EQ(edit_distance(kitten, sitting), oracle::edit_distance(kitten, sitting));
  EXPECT_EQ(edit_distance(kitten, kitten), 0);
  EXPECT_EQ(edit_distance({}, iota_seq(0, 9)), 9);

  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const Sequence a = random_seq(rng, 4 + static_cast<int>(rng.below(28)), 0, 8);
    const Sequence b = random_seq(rng, 4 + static_cast<int>(rng.below(28)), 0, 8);
    EXPECT_EQ(edit_distance(a, b), oracle::edit_distance(a, b));
  }
}

TEST(EditDistance, SymmetryAndTriangle) {
  Rng rng(37);
  for (int trial = 0; trial < 60; ++trial) {
    const Sequence a = random_seq(rng, 4 + static_cast<int>(rng.below(20)), 0, 6);
    const Sequence b = random_seq(rng, 4 + static_cast<int>(rng.below(20)), 0, 6);
    const Sequence c = random_seq(rng, 4 + static_cast<int>(rng.below(20)), 0, 6);
    EXPECT_EQ(edit_distance(a, b), edit_distance(b, a));
    EXPECT_LE(edit_distance(a, c), edit_distance(a, b) + edit_distance(b, c));
  }
}

TEST(NormalizedEdit, PinnedValues) {
  EXPECT_NEAR(normalized_edit(tokenize("kitten"), tokenize("sitting")), 3.0 / 13.0, 1e-12);
  const Sequence x = tokenize("abcdef");
  EXPECT_EQ(normalized_edit(x, x), 0.0);
  EXPECT_LE(normalized_edit(iota_seq(0, 10), iota_seq(100, 10)), 0.5);
  EXPECT_THROW(normalized_edit({}, {}), Error);
}

TEST(Embed, DeterministicUnitNorm) {
  EmbedderConfig cfg;
  Rng rng(41);
  const Sequence x = random_seq(rng, 64);
  const auto u = embed(x, cfg);
  const auto v = embed(x, cfg);
  EXPECT_EQ(u, v);
  double norm = 0.0;
  for (double e : u) norm += e * e;
  EXPECT_NEAR(std::sqrt(norm), 1.0, 1e-9);
  EXPECT_NEAR(cosine(u, u), 1.0, 1e-12);
  EXPECT_THROW(embed(iota_seq(0, 2), cfg), Error);  // below char_n
}

TEST(Embed, OneByteChangeStaysClose) {
  // One substitution in a 64-byte input disturbs at most char_n trigrams;
  // the cosine must drop below 1 but stay comfortably above 0.5.
  EmbedderConfig cfg;
  Rng rng(43);
  double min_cos = 1.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Sequence x = random_seq(rng, 64);
    Sequence y = x;
    const std::size_t pos = rng.below(y.size());
    y[pos] = static_cast<Token>(32 + rng.below(95));
    if (y == x) continue;
    const double c = cosine(embed(x, cfg), embed(y, cfg));
    EXPECT_LT(c, 1.0);
    EXPECT_GT(c, 0.5);
    min_cos = std::min(min_cos, c);
  }
  EXPECT_GT(min_cos, 0.5);
}

TEST(Cosine, ClosedForms) {
  EXPECT_NEAR(cosine({1, 0}, {0, 1}), 0.0, 1e-12);
  EXPECT_NEAR(cosine({1, 1}, {1, 0}), 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_THROW(cosine({0, 0}, {1, 0}), Error);
}

TEST(ExternalTableEmbedder, RoundTrip) {
  const std::string path = testing::TempDir() + "/mipl_table.txt";
  Rng rng(47);
  const Sequence x = random_seq(rng, 16);
  {
    std::ofstream out(path);
    out << std::hex << sequence_content_hash(x) << std::dec;
    for (int i = 0; i < 64; ++i) out << ' ' << (i == 0 ? 1.0 : 0.0);
    out << '\n';
  }
  EmbedderConfig cfg;
  cfg.mode = EmbedderConfig::Mode::external_table;
  cfg.table_path = path;
  const auto v = embed(x, cfg);
  ASSERT_EQ(v.size(), 64u);
  EXPECT_EQ(v[0], 1.0);
  const Sequence other = random_seq(rng, 16);
  EXPECT_THROW(embed(other, cfg), Error);
}

TEST(IsNeighbor, ReflexiveSymmetricAcrossKinds) {
  Rng rng(53);
  const std::vector<NeighborhoodSpec> specs = {
      NeighborhoodSpec::ngram(), NeighborhoodSpec::embedding(), NeighborhoodSpec::edit(),
      NeighborhoodSpec::exact()};
  for (int trial = 0; trial < 25; ++trial) {
    const Sequence x = random_seq(rng, 32);
    const Sequence y = random_seq(rng, 32);
    for (const auto& spec : specs) {
      EXPECT_TRUE(is_neighbor(x, x, spec)) << spec.name();
      EXPECT_EQ(is_neighbor(x, y, spec), is_neighbor(y, x, spec)) << spec.name();
    }
  }
}

TEST(IsNeighbor, ExactMatchOnlyItself) {
  const Sequence x = tokenize("abcdefgh");
  Sequence y = x;
  y[3] = 'z';
  EXPECT_FALSE(is_neighbor(x, y, NeighborhoodSpec::exact()));
  EXPECT_TRUE(is_neighbor(x, x, NeighborhoodSpec::exact()));
}

TEST(IsNeighbor, ExactImpliesEveryDefaultKind) {
  Rng rng(59);
  for (int trial = 0; trial < 20; ++trial) {
    const Sequence x = random_seq(rng, 32);
    for (const auto& spec : default_check_specs()) {
      EXPECT_TRUE(is_neighbor(x, x, spec)) << spec.name();
    }
  }
}

TEST(IsNeighbor, EmbeddingThresholdMatchesCosine) {
  Rng rng(61);
  const NeighborhoodSpec spec = NeighborhoodSpec::embedding(0.9);
  const Embedder emb(spec.embedder);
  for (int trial = 0; trial < 40; ++trial) {
    const Sequence x = random_seq(rng, 48);
    Sequence y = x;
    const int flips = static_cast<int>(rng.below(12));
    for (int f = 0; f < flips; ++f) y[rng.below(y.size())] = static_cast<Token>(32 + rng.below(95));
    EXPECT_EQ(is_neighbor(x, y, spec), cosine(emb(x), emb(y)) >= 0.9);
  }
}

TEST(IsMember, MatchesExhaustiveScan) {
  Rng rng(67);
  Dataset train;
  for (int i = 0; i < 50; ++i) train.add(random_seq(rng, 24, 0, 12), Provenance::background);
  const std::vector<NeighborhoodSpec> specs = {
      NeighborhoodSpec::ngram(3), NeighborhoodSpec::edit(0.3), NeighborhoodSpec::exact()};
  for (int e = 0; e < 20; ++e) {
    Sequence x = e % 3 == 0 ? train.points[rng.below(train.size())] : random_seq(rng, 24, 0, 12);
    for (const auto& spec : specs) {
      EXPECT_EQ(is_member(x, train, spec), oracle::is_member(x, train.points, spec))
          << spec.name();
    }
  }
  EXPECT_FALSE(is_member(random_seq(rng, 24), Dataset{}, NeighborhoodSpec::exact()));
}

}  // namespace
