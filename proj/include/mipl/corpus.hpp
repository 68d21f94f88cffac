#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mipl/errors.hpp"
#include "mipl/neighborhood.hpp"
#include "mipl/rng.hpp"
#include "mipl/sequence.hpp"

namespace mipl {

enum class Provenance : std::uint8_t { background, canary, poison_neighbor, poison_non_neighbor };

inline std::string provenance_name(Provenance p) {
  switch (p) {
    case Provenance::background: return "background";
    case Provenance::canary: return "canary";
    case Provenance::poison_neighbor: return "poison-neighbor";
    case Provenance::poison_non_neighbor: return "poison-non-neighbor";
  }
  return "?";
}

/// Ordered multiset of sequences with a provenance tag per point.
struct Dataset {
  std::vector<Sequence> points;
  std::vector<Provenance> provenance;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  void add(Sequence seq, Provenance prov) {
    points.push_back(std::move(seq));
    provenance.push_back(prov);
  }

  void append(const Dataset& other) {
    points.insert(points.end(), other.points.begin(), other.points.end());
    provenance.insert(provenance.end(), other.provenance.begin(), other.provenance.end());
  }
};

/// Eq. (1): x is a member of D iff some point of D lies in N_r(x).
inline bool is_member(const Sequence& x, std::span<const Sequence> points,
                      const NeighborhoodSpec& spec) {
  for (const Sequence& p : points) {
    if (is_neighbor(x, p, spec)) return true;
  }
  return false;
}

inline bool is_member(const Sequence& x, const Dataset& data, const NeighborhoodSpec& spec) {
  return is_member(x, std::span<const Sequence>(data.points), spec);
}

struct LabeledEvalSet {
  std::vector<Sequence> points;
  std::vector<std::uint8_t> member;  // 1 = member under `spec`
  NeighborhoodSpec spec;
};

/// Labels every eval point with the Eq. (1) predicate against `train`.
/// The n-gram and exact kinds go through a train-side window index; the result
/// is identical to the exhaustive scan (verified against it in tests).
inline LabeledEvalSet label_membership(const std::vector<Sequence>& eval, const Dataset& train,
                                       const NeighborhoodSpec& spec) {
  LabeledEvalSet out;
  out.points = eval;
  out.spec = spec;
  out.member.resize(eval.size(), 0);

  if (spec.kind == NeighborhoodKind::ngram) {
    // gram-hash -> (point, start) occurrences, verified exactly on hit
    std::unordered_map<std::uint64_t, std::vector<std::pair<std::uint32_t, std::uint32_t>>> index;
    for (std::size_t p = 0; p < train.points.size(); ++p) {
      const Sequence& s = train.points[p];
      if (static_cast<int>(s.size()) < spec.k) continue;
      for (std::size_t i = 0; i + spec.k <= s.size(); ++i) {
        index[detail::window_hash(s, i, spec.k)].push_back(
            {static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(i)});
      }
    }
    for (std::size_t e = 0; e < eval.size(); ++e) {
      const Sequence& x = eval[e];
      if (static_cast<int>(x.size()) < spec.k) continue;
      bool member = false;
      for (std::size_t i = 0; !member && i + spec.k <= x.size(); ++i) {
        const auto it = index.find(detail::window_hash(x, i, spec.k));
        if (it == index.end()) continue;
        for (const auto& [p, start] : it->second) {
          if (std::equal(x.begin() + i, x.begin() + i + spec.k,
                         train.points[p].begin() + start)) {
            member = true;
            break;
          }
        }
      }
      out.member[e] = member ? 1 : 0;
    }
    return out;
  }

  if (spec.kind == NeighborhoodKind::exact_match) {
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> index;
    for (std::size_t p = 0; p < train.points.size(); ++p) {
      index[sequence_content_hash(train.points[p])].push_back(static_cast<std::uint32_t>(p));
    }
    for (std::size_t e = 0; e < eval.size(); ++e) {
      const auto it = index.find(sequence_content_hash(eval[e]));
      if (it == index.end()) continue;
      for (std::uint32_t p : it->second) {
        if (train.points[p] == eval[e]) {
          out.member[e] = 1;
          break;
        }
      }
    }
    return out;
  }

  if (spec.kind == NeighborhoodKind::embedding) {
    const Embedder emb(spec.embedder);
    std::vector<std::vector<double>> train_vecs(train.points.size());
    for (std::size_t p = 0; p < train.points.size(); ++p) train_vecs[p] = emb(train.points[p]);
    for (std::size_t e = 0; e < eval.size(); ++e) {
      const std::vector<double> v = emb(eval[e]);
      for (std::size_t p = 0; p < train_vecs.size(); ++p) {
        if (cosine(v, train_vecs[p]) >= spec.c) {
          out.member[e] = 1;
          break;
        }
      }
    }
    return out;
  }

  for (std::size_t e = 0; e < eval.size(); ++e) {
    out.member[e] = is_member(eval[e], train, spec) ? 1 : 0;
  }
  return out;
}

inline std::vector<NeighborhoodSpec> default_check_specs() {
  return {NeighborhoodSpec::exact(), NeighborhoodSpec::ngram(), NeighborhoodSpec::embedding(),
          NeighborhoodSpec::edit()};
}

namespace detail {

inline Sequence random_canary(Rng& rng, int length) {
  // 8-byte lowercase tag followed by uniform printable-ASCII body; the tag
  // keys the canary to (seed, index) so regenerated corpora stay auditable.
  Sequence seq;
  seq.reserve(length);
  for (int j = 0; j < 8 && j < length; ++j) {
    seq.push_back(static_cast<Token>('a' + rng.below(26)));
  }
  while (static_cast<int>(seq.size()) < length) {
    seq.push_back(static_cast<Token>(32 + rng.below(95)));
  }
  return seq;
}

}  // namespace detail

/// n pseudorandom canaries, pairwise non-neighbors under every spec in
/// `check_specs`; colliding draws are regenerated (bounded retries).
///
/// Note the default pipeline passes {exact, ngram, embedding} here: under the
/// default edit spec (l=0.48), 5-7% of independent printable pairs fall inside
/// the ball, so a mutually non-colliding set of several hundred equal-length
/// canaries does not exist and generation would always fail.
inline Dataset gen_canaries(int n, int length, std::uint64_t seed,
                            const std::vector<NeighborhoodSpec>& check_specs = default_check_specs()) {
  if (n < 1) throw Error(Errc::bad_param, "gen_canaries: n must be >= 1");
  if (length < 16) throw Error(Errc::bad_param, "gen_canaries: length must be >= 16");

  Rng rng(stream_seed(seed, "canaries"));
  Dataset out;
  std::vector<std::vector<double>> embeds;  // cache for embedding checks
  const Embedder* embedder = nullptr;
  Embedder embedder_storage{EmbedderConfig{}};
  for (const auto& s : check_specs) {
    if (s.kind == NeighborhoodKind::embedding) {
      embedder_storage = Embedder(s.embedder);
      embedder = &embedder_storage;
    }
  }

  constexpr int kMaxAttemptsPerSlot = 64;
  for (int i = 0; i < n; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttemptsPerSlot; ++attempt) {
      Sequence cand = detail::random_canary(rng, length);
      std::vector<double> cand_vec;
      if (embedder != nullptr) cand_vec = (*embedder)(cand);
      bool collides = false;
      for (std::size_t j = 0; j < out.points.size() && !collides; ++j) {
        for (const auto& spec : check_specs) {
          if (spec.kind == NeighborhoodKind::embedding) {
            if (cosine(cand_vec, embeds[j]) >= spec.c) {
              collides = true;
              break;
            }
          } else if (is_neighbor(out.points[j], cand, spec)) {
            collides = true;
            break;
          }
        }
      }
      if (!collides) {
        out.add(std::move(cand), Provenance::canary);
        if (embedder != nullptr) embeds.push_back(std::move(cand_vec));
        placed = true;
        break;
      }
    }
    if (!placed) {
      throw Error(Errc::generation_failed,
                  "gen_canaries: could not satisfy pairwise non-neighbor constraint for slot " +
                      std::to_string(i));
    }
  }
  return out;
}

struct MixResult {
  Dataset train;
  std::vector<Sequence> eval;  // injected canaries first, then held-out ones
  int n_injected = 0;
};

/// Injects a seeded split of the canaries into the background and returns the
/// eval list (injected followed by held-out). No canary lands in both splits.
inline MixResult mix(const Dataset& background, const Dataset& canaries, int n_inject,
                     int n_holdout, std::uint64_t seed) {
  if (n_inject < 0 || n_holdout < 0) throw Error(Errc::bad_param, "mix: negative split size");
  if (static_cast<int>(canaries.size()) < n_inject + n_holdout) {
    throw Error(Errc::size_mismatch, "mix: not enough canaries for inject + holdout");
  }
  std::vector<std::uint32_t> perm(canaries.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(stream_seed(seed, "mix"));
  rng.shuffle(perm);

  MixResult out;
  out.train = background;
  out.n_injected = n_inject;
  for (int i = 0; i < n_inject; ++i) {
    out.train.add(canaries.points[perm[i]], Provenance::canary);
    out.eval.push_back(canaries.points[perm[i]]);
  }
  for (int i = 0; i < n_holdout; ++i) {
    out.eval.push_back(canaries.points[perm[n_inject + i]]);
  }
  return out;
}

/// Splits UTF-8 plain text into fixed-length byte sequences (tail dropped).
inline Dataset ingest_text(std::string_view text, int seq_len,
                           Provenance prov = Provenance::background) {
  if (seq_len < 1) throw Error(Errc::bad_param, "ingest_text: seq_len must be >= 1");
  if (text.empty()) throw Error(Errc::empty_input, "ingest_text: empty text");
  Dataset out;
  for (std::size_t off = 0; off + seq_len <= text.size(); off += seq_len) {
    out.add(tokenize(text.substr(off, seq_len)), prov);
  }
  if (out.empty()) throw Error(Errc::empty_input, "ingest_text: text shorter than one sequence");
  return out;
}

/// Seeded word-soup text for self-contained runs (no bundled dataset): a
/// derived 2000-word lowercase vocabulary sampled with a Zipf-like law.
inline std::string synth_background_text(std::size_t n_bytes, std::uint64_t seed) {
  Rng rng(stream_seed(seed, "bgtext"));
  std::vector<std::string> vocab;
  vocab.reserve(2000);
  for (int w = 0; w < 2000; ++w) {
    const int len = 2 + static_cast<int>(rng.below(7));
    std::string word;
    for (int j = 0; j < len; ++j) word.push_back(static_cast<char>('a' + rng.below(26)));
    vocab.push_back(std::move(word));
  }
  std::vector<double> cdf(vocab.size());
  double total = 0.0;
  for (std::size_t w = 0; w < vocab.size(); ++w) {
    total += 1.0 / std::pow(static_cast<double>(w + 1), 1.1);
    cdf[w] = total;
  }
  std::string out;
  out.reserve(n_bytes + 16);
  while (out.size() < n_bytes) {
    const double u = rng.next_unit() * total;
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
    out += vocab[static_cast<std::size_t>(it - cdf.begin())];
    out.push_back(' ');
  }
  out.resize(n_bytes);
  return out;
}

/// Synthetic background corpus: word-soup sequences with a small blend of
/// uniform-printable noise sequences. The blend keeps models calibrated on
/// high-entropy bytes, which the reference-based test needs.
inline Dataset synth_background(int n_seqs, int seq_len, std::uint64_t seed,
                                double noise_fraction = 0.05) {
  if (n_seqs < 1) throw Error(Errc::bad_param, "synth_background: n_seqs must be >= 1");
  if (noise_fraction < 0.0 || noise_fraction > 1.0) {
    throw Error(Errc::bad_param, "synth_background: noise_fraction outside [0,1]");
  }
  const int n_noise = static_cast<int>(n_seqs * noise_fraction);
  const int n_text = n_seqs - n_noise;

  Dataset text_part;
  if (n_text > 0) {
    text_part = ingest_text(
        synth_background_text(static_cast<std::size_t>(n_text) * seq_len, seed), seq_len);
  }
  Rng noise_rng(stream_seed(seed, "bgnoise"));
  Dataset out;
  std::vector<const Sequence*> order;

  Dataset noise_part;
  for (int i = 0; i < n_noise; ++i) {
    Sequence s;
    s.reserve(seq_len);
    for (int j = 0; j < seq_len; ++j) s.push_back(static_cast<Token>(32 + noise_rng.below(95)));
    noise_part.add(std::move(s), Provenance::background);
  }

  std::vector<std::uint32_t> perm(static_cast<std::size_t>(n_seqs));
  std::iota(perm.begin(), perm.end(), 0);
  Rng perm_rng(stream_seed(seed, "bgperm"));
  perm_rng.shuffle(perm);
  for (std::uint32_t idx : perm) {
    if (idx < static_cast<std::uint32_t>(n_text)) {
      out.add(text_part.points[idx], Provenance::background);
    } else {
      out.add(noise_part.points[idx - n_text], Provenance::background);
    }
  }
  return out;
}

/// Dataset file format: `#vocab=256 seqlen=<L>` header, then one sequence per
/// line as space-separated decimal token ids. seqlen records the generator's
/// nominal length; individual lines may differ (e.g. poisons from baselines).
inline void save_dataset(const std::string& path, const Dataset& data, int nominal_seq_len) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_error, "save_dataset: cannot open " + path);
  out << "#vocab=" << kVocabSize << " seqlen=" << nominal_seq_len << "\n";
  for (const Sequence& s : data.points) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i > 0) out << ' ';
      out << s[i];
    }
    out << '\n';
  }
  if (!out) throw Error(Errc::io_error, "save_dataset: write failed for " + path);
}

/// Provenance sidecar: one tag per line, aligned with the dataset file.
inline void save_provenance(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_error, "save_provenance: cannot open " + path);
  for (Provenance p : data.provenance) out << provenance_name(p) << '\n';
}

inline Dataset load_dataset(const std::string& path,
                            Provenance default_prov = Provenance::background) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "load_dataset: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("#vocab=", 0) != 0) {
    throw Error(Errc::corrupt_file, "load_dataset: missing #vocab header in " + path);
  }
  Dataset out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    Sequence s;
    long long t = 0;
    while (is >> t) {
      if (t < 0 || t >= kVocabSize) {
        throw Error(Errc::corrupt_file, "load_dataset: token id out of range in " + path);
      }
      s.push_back(static_cast<Token>(t));
    }
    if (!s.empty()) out.add(std::move(s), default_prov);
  }
  if (out.empty()) throw Error(Errc::corrupt_file, "load_dataset: no sequences in " + path);
  return out;
}

}  // namespace mipl
