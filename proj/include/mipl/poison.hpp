#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mipl/corpus.hpp"
#include "mipl/errors.hpp"
#include "mipl/mitests.hpp"
#include "mipl/model.hpp"
#include "mipl/neighborhood.hpp"
#include "mipl/rng.hpp"
#include "mipl/sequence.hpp"

namespace mipl {

/// Attack goal for a target point.
///  - make_member_look_non_member: hide a member by substituting its in-dataset
///    neighbors with minimally-informative points that still lie inside the
///    ball ("poisoned neighbors"). Unsupported for exact match, whose only
///    neighbor is the point itself.
///  - make_non_member_look_member: frame a non-member by planting points that
///    stay outside the ball but mimic the target's activations
///    ("poisoned non-neighbors").
enum class AttackDirection { make_non_member_look_member, make_member_look_non_member };

inline std::string direction_name(AttackDirection d) {
  return d == AttackDirection::make_non_member_look_member ? "make-non-member-look-member"
                                                           : "make-member-look-non-member";
}

struct PoisonConfig {
  std::optional<double> lambda;  // defaults per metric: ngram 0, embedding -1.5, edit 1.5
  int max_iters = 0;             // 0 -> 20 * |x_sample|
  enum class CandidatePolicy { full_vocab, sampled };
  CandidatePolicy candidate_policy = CandidatePolicy::full_vocab;
  int candidate_sample_size = 64;
  std::uint64_t seed = 0;
};

inline double default_lambda(NeighborhoodKind kind) {
  switch (kind) {
    case NeighborhoodKind::ngram: return 0.0;
    case NeighborhoodKind::embedding: return -1.5;
    case NeighborhoodKind::edit_distance: return 1.5;
    case NeighborhoodKind::exact_match: return 0.0;
  }
  return 0.0;
}

inline double lambda_for(const NeighborhoodSpec& spec, const PoisonConfig& cfg) {
  return cfg.lambda ? *cfg.lambda : default_lambda(spec.kind);
}

namespace detail {

inline double activation_cosine(const ModelParams& params, const Sequence& a,
                                const Sequence& b) {
  return cosine(activation(params, a), activation(params, b));
}

}  // namespace detail

/// The per-candidate substitution loss the greedy attack minimizes.
///
/// Poisoned-neighbor (make_member_look_non_member) losses are the pure
/// neighborhood-closeness terms: -shared-k-gram count / -embedding cosine /
/// +normalized edit distance. Poisoned-non-neighbor losses combine
/// -activation cosine with the lambda-weighted closeness term; with the
/// default lambdas each composition rewards activation mimicry while pushing
/// the candidate out of the neighborhood.
inline double poison_loss(const Sequence& candidate, const Sequence& x_t,
                          const ModelParams& params, const NeighborhoodSpec& spec,
                          AttackDirection direction, const PoisonConfig& cfg = {}) {
  if (candidate.empty()) throw Error(Errc::empty_input, "poison_loss: empty candidate");
  const double lambda = lambda_for(spec, cfg);

  if (direction == AttackDirection::make_member_look_non_member) {
    switch (spec.kind) {
      case NeighborhoodKind::ngram:
        return -static_cast<double>(shared_ngram_count(candidate, x_t, spec.k));
      case NeighborhoodKind::embedding: {
        const Embedder emb(spec.embedder);
        return -cosine(emb(candidate), emb(x_t));
      }
      case NeighborhoodKind::edit_distance:
        return normalized_edit(candidate, x_t);
      case NeighborhoodKind::exact_match:
        throw Error(Errc::unsupported,
                    "poison_loss: no poisoned neighbor exists for exact match (radius 0)");
    }
  }

  const double base = -detail::activation_cosine(params, candidate, x_t);
  switch (spec.kind) {
    case NeighborhoodKind::ngram:
      return base + lambda * static_cast<double>(shared_ngram_count(candidate, x_t, spec.k));
    case NeighborhoodKind::embedding: {
      const Embedder emb(spec.embedder);
      return base - lambda * cosine(emb(candidate), emb(x_t));
    }
    case NeighborhoodKind::edit_distance:
      return base - lambda * normalized_edit(candidate, x_t);
    case NeighborhoodKind::exact_match:
      return base;
  }
  return base;
}

struct PoisonRecord {
  Sequence target;
  Sequence seed_point;  // the sampled x_sample the attack started from
  Sequence poison;
  AttackDirection direction = AttackDirection::make_non_member_look_member;
  double metric_value = 0.0;     // shared-gram count / cosine / normalized edit / equality
  double threshold_value = 0.0;  // the spec boundary the audit compares against
  bool neighbor_after = false;   // independent is_neighbor audit of the emitted point
  int iterations = 0;
  std::vector<double> loss_trace;

  /// The emitted point must sit on the intended side of the boundary.
  bool audit_passed() const {
    return direction == AttackDirection::make_member_look_non_member ? neighbor_after
                                                                     : !neighbor_after;
  }
};

namespace detail {

inline void fill_audit(PoisonRecord& rec, const NeighborhoodSpec& spec) {
  switch (spec.kind) {
    case NeighborhoodKind::ngram:
      rec.metric_value = static_cast<double>(shared_ngram_count(rec.poison, rec.target, spec.k));
      rec.threshold_value = 1.0;  // neighbor iff at least one shared k-gram
      break;
    case NeighborhoodKind::embedding: {
      const Embedder emb(spec.embedder);
      rec.metric_value = cosine(emb(rec.poison), emb(rec.target));
      rec.threshold_value = spec.c;
      break;
    }
    case NeighborhoodKind::edit_distance:
      rec.metric_value = normalized_edit(rec.poison, rec.target);
      rec.threshold_value = spec.l;
      break;
    case NeighborhoodKind::exact_match:
      rec.metric_value = rec.poison == rec.target ? 1.0 : 0.0;
      rec.threshold_value = 1.0;
      break;
  }
  rec.neighbor_after = is_neighbor(rec.poison, rec.target, spec);
}

/// Closed-form activation handling for this architecture: activation(x) is a
/// weighted bag (1/(|x| m)) * sum_i c_i emb[x_i] with c_i the number of
/// prediction windows that read position i. Lets candidate scoring run in
/// O(d) instead of re-walking the sequence.
class ActivationMimic {
 public:
  ActivationMimic(const ModelParams& params, const Sequence& target)
      : params_(&params), d_(params.config.embed_dim) {
    target_act_ = activation(params, target);
    target_norm_ = norm(target_act_);
  }

  void reset(const Sequence& x) {
    x_ = x;
    const int m = params_->config.context;
    const int len = static_cast<int>(x.size());
    coeff_.assign(x.size(), 0.0);
    for (int i = 0; i < len; ++i) {
      coeff_[i] = static_cast<double>(std::max(0, std::min(m, len - 1 - i))) /
                  (static_cast<double>(len) * m);
    }
    act_.assign(d_, 0.0);
    for (int i = 0; i < len; ++i) {
      const float* row = params_->emb.data() + static_cast<std::size_t>(x[i]) * d_;
      for (int e = 0; e < d_; ++e) act_[e] += coeff_[i] * row[e];
    }
  }

  double cosine_if_substituted(std::size_t pos, Token v) const {
    const float* old_row = params_->emb.data() + static_cast<std::size_t>(x_[pos]) * d_;
    const float* new_row = params_->emb.data() + static_cast<std::size_t>(v) * d_;
    const double w = coeff_[pos];
    double dot = 0.0, nn = 0.0;
    for (int e = 0; e < d_; ++e) {
      const double a = act_[e] + w * (new_row[e] - old_row[e]);
      dot += a * target_act_[e];
      nn += a * a;
    }
    if (nn <= 0.0 || target_norm_ <= 0.0) return 0.0;
    return dot / (std::sqrt(nn) * target_norm_);
  }

  void apply(std::size_t pos, Token v) {
    const float* old_row = params_->emb.data() + static_cast<std::size_t>(x_[pos]) * d_;
    const float* new_row = params_->emb.data() + static_cast<std::size_t>(v) * d_;
    const double w = coeff_[pos];
    for (int e = 0; e < d_; ++e) act_[e] += w * (new_row[e] - old_row[e]);
    x_[pos] = v;
  }

  const Sequence& current() const { return x_; }

 private:
  static double norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double e : v) s += e * e;
    return std::sqrt(s);
  }

  const ModelParams* params_;
  int d_;
  Sequence x_;
  std::vector<double> coeff_;
  std::vector<double> act_;
  std::vector<double> target_act_;
  double target_norm_ = 0.0;
};

inline std::vector<Token> candidate_tokens(const PoisonConfig& cfg, int vocab, Token exclude,
                                           Rng& rng) {
  std::vector<Token> out;
  if (cfg.candidate_policy == PoisonConfig::CandidatePolicy::full_vocab) {
    out.reserve(vocab - 1);
    for (Token v = 0; v < vocab; ++v) {
      if (v != exclude) out.push_back(v);
    }
    return out;
  }
  out.reserve(cfg.candidate_sample_size);
  while (static_cast<int>(out.size()) < cfg.candidate_sample_size) {
    const Token v = static_cast<Token>(rng.below(static_cast<std::uint64_t>(vocab)));
    if (v != exclude) out.push_back(v);
  }
  return out;
}

/// Algorithm-1 loop: start at x_t, substitute random positions with the
/// loss-minimizing token until the point leaves the neighborhood. The current
/// token is excluded from the candidate set; otherwise the argmin would keep
/// the copy and never drift.
inline PoisonRecord outward_attack(const Sequence& x_t, const NeighborhoodSpec& spec,
                                   const ModelParams& params, const PoisonConfig& cfg) {
  PoisonRecord rec;
  rec.target = x_t;
  rec.seed_point = x_t;
  rec.direction = AttackDirection::make_non_member_look_member;

  const int max_iters = cfg.max_iters > 0 ? cfg.max_iters : 20 * static_cast<int>(x_t.size());
  const double lambda = lambda_for(spec, cfg);
  Rng rng(stream_seed(cfg.seed, "outward", sequence_content_hash(x_t)));

  ActivationMimic mimic(params, x_t);
  mimic.reset(x_t);
  const Embedder* embedder = nullptr;
  Embedder embedder_storage{EmbedderConfig{}};
  std::vector<double> target_emb;
  if (spec.kind == NeighborhoodKind::embedding) {
    embedder_storage = Embedder(spec.embedder);
    embedder = &embedder_storage;
    target_emb = (*embedder)(x_t);
  }

  Sequence poison = x_t;
  int iters = 0;
  while (is_neighbor(poison, x_t, spec)) {
    if (iters >= max_iters) {
      throw Error(Errc::attack_failed, "poisonm: max_iters (" + std::to_string(max_iters) +
                                           ") exhausted before leaving the neighborhood");
    }
    const std::size_t pos = rng.below(poison.size());
    const std::vector<Token> cands =
        candidate_tokens(cfg, params.config.vocab, poison[pos], rng);

    double best_loss = std::numeric_limits<double>::infinity();
    Token best_tok = cands.front();
    for (Token v : cands) {
      double loss = -mimic.cosine_if_substituted(pos, v);
      if (lambda != 0.0 || spec.kind == NeighborhoodKind::embedding ||
          spec.kind == NeighborhoodKind::edit_distance) {
        Sequence trial = poison;
        trial[pos] = v;
        switch (spec.kind) {
          case NeighborhoodKind::ngram:
            loss += lambda * static_cast<double>(shared_ngram_count(trial, x_t, spec.k));
            break;
          case NeighborhoodKind::embedding:
            loss -= lambda * cosine((*embedder)(trial), target_emb);
            break;
          case NeighborhoodKind::edit_distance:
            loss -= lambda * normalized_edit(trial, x_t);
            break;
          case NeighborhoodKind::exact_match:
            break;
        }
      }
      if (loss < best_loss) {
        best_loss = loss;
        best_tok = v;
      }
    }
    mimic.apply(pos, best_tok);
    poison[pos] = best_tok;
    rec.loss_trace.push_back(best_loss);
    ++iters;
  }
  rec.iterations = iters;
  rec.poison = std::move(poison);
  fill_audit(rec, spec);
  if (!rec.audit_passed()) {
    throw Error(Errc::attack_failed, "poisonm: emitted point failed the non-neighbor audit");
  }
  return rec;
}

/// Appendix-style poisoned-neighbor constructions: pull a sampled aux
/// non-neighbor into the ball with the pure closeness loss. Accepted steps
/// never increase the loss (greedy keep-if-better), so the trace is monotone.
inline PoisonRecord inward_attack(const Sequence& x_t, const NeighborhoodSpec& spec,
                                  const ModelParams& params, const Dataset& aux,
                                  const PoisonConfig& cfg) {
  (void)params;
  if (spec.kind == NeighborhoodKind::exact_match) {
    throw Error(Errc::unsupported,
                "poisonm: cannot hide an exact-match member (neighborhood radius 0)");
  }
  if (aux.empty()) throw Error(Errc::empty_input, "poisonm: aux corpus is empty");

  PoisonRecord rec;
  rec.target = x_t;
  rec.direction = AttackDirection::make_member_look_non_member;

  Rng rng(stream_seed(cfg.seed, "inward", sequence_content_hash(x_t)));
  // seeded scan for an actual non-neighbor to start from; if the ball covers
  // the whole aux corpus (huge-radius degenerate case) take the first point
  std::vector<std::uint32_t> order(aux.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::uint32_t>(i);
  rng.shuffle(order);
  const Sequence* sample = &aux.points[order[0]];
  for (std::uint32_t idx : order) {
    if (!is_neighbor(aux.points[idx], x_t, spec)) {
      sample = &aux.points[idx];
      break;
    }
  }
  rec.seed_point = *sample;

  const int max_iters =
      cfg.max_iters > 0 ? cfg.max_iters : 20 * static_cast<int>(std::max(x_t.size(), sample->size()));
  Sequence poison = *sample;
  int iters = 0;

  switch (spec.kind) {
    case NeighborhoodKind::ngram: {
      if (static_cast<int>(x_t.size()) < spec.k) {
        throw Error(Errc::sequence_too_short, "poisonm: target shorter than k");
      }
      // all byte-level k-grams have equal character length; the tie-break for
      // "shortest" is the lexicographically smallest window
      const std::set<Sequence> grams = ngram_set(x_t, spec.k);
      const Sequence& gram = *grams.begin();
      if (poison.size() < static_cast<std::size_t>(spec.k)) poison = gram;
      const std::size_t at = rng.below(poison.size() - spec.k + 1);
      std::copy(gram.begin(), gram.end(), poison.begin() + at);
      rec.loss_trace.push_back(
          -static_cast<double>(shared_ngram_count(poison, x_t, spec.k)));
      iters = 1;
      break;
    }
    case NeighborhoodKind::embedding: {
      const Embedder emb(spec.embedder);
      const std::vector<double> target_emb = emb(x_t);
      double current = cosine(emb(poison), target_emb);
      while (current < spec.c) {
        if (iters >= max_iters) {
          throw Error(Errc::attack_failed, "poisonm: embedding pull-in exhausted max_iters");
        }
        const std::size_t pos = rng.below(poison.size());
        const std::vector<Token> cands =
            candidate_tokens(cfg, kVocabSize, poison[pos], rng);
        double best = -2.0;
        Token best_tok = cands.front();
        Sequence trial = poison;
        for (Token v : cands) {
          trial[pos] = v;
          const double c = cosine(emb(trial), target_emb);
          if (c > best) {
            best = c;
            best_tok = v;
          }
        }
        ++iters;
        if (best > current) {  // keep only improving substitutions
          poison[pos] = best_tok;
          current = best;
          rec.loss_trace.push_back(-current);
        }
      }
      break;
    }
    case NeighborhoodKind::edit_distance: {
      constexpr std::size_t kMinLen = 8;
      double current = normalized_edit(poison, x_t);
      while (current > spec.l) {
        if (iters >= max_iters) {
          throw Error(Errc::attack_failed, "poisonm: edit pull-in exhausted max_iters");
        }
        ++iters;
        Sequence trial = poison;
        const std::uint64_t op = rng.below(3);
        if (op == 0) {  // insert
          const std::size_t pos = rng.below(trial.size() + 1);
          trial.insert(trial.begin() + pos, static_cast<Token>(32 + rng.below(95)));
        } else if (op == 1) {  // delete
          if (trial.size() <= kMinLen) continue;
          trial.erase(trial.begin() + rng.below(trial.size()));
        } else {  // substitute
          const std::size_t pos = rng.below(trial.size());
          trial[pos] = static_cast<Token>(32 + rng.below(95));
        }
        const double cand = normalized_edit(trial, x_t);
        if (cand < current) {  // greedy keep while the distance decreases
          poison = std::move(trial);
          current = cand;
          rec.loss_trace.push_back(current);
        }
      }
      break;
    }
    case NeighborhoodKind::exact_match:
      break;  // unreachable
  }

  rec.iterations = iters;
  rec.poison = std::move(poison);
  fill_audit(rec, spec);
  if (!rec.audit_passed()) {
    throw Error(Errc::attack_failed, "poisonm: emitted point failed the neighbor audit");
  }
  return rec;
}

}  // namespace detail

/// PoisonM: crafts one poison for target x_t under the given neighborhood.
/// aux supplies the sampled starting points for poisoned neighbors; the model
/// params supply activations for the mimicry losses.
inline PoisonRecord poisonm(const Sequence& x_t, const NeighborhoodSpec& spec,
                            const ModelParams& params, AttackDirection direction,
                            const Dataset& aux, const PoisonConfig& cfg = {}) {
  if (x_t.empty()) throw Error(Errc::empty_input, "poisonm: empty target");
  if (direction == AttackDirection::make_member_look_non_member) {
    return detail::inward_attack(x_t, spec, params, aux, cfg);
  }
  return detail::outward_attack(x_t, spec, params, cfg);
}

// ------------------------------------------------------------------ baselines

inline Sequence baseline_token_dropout(const Sequence& x, double rate, std::uint64_t seed) {
  (void)seed;  // the drop pattern is a fixed interval, no randomness needed
  if (rate < 0.0 || rate >= 1.0) throw Error(Errc::bad_param, "dropout: rate outside [0,1)");
  if (rate == 0.0) return x;
  const auto interval = static_cast<std::size_t>(std::ceil(1.0 / rate));
  Sequence out;
  out.reserve(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if ((i + 1) % interval == 0) continue;
    out.push_back(x[i]);
  }
  if (out.empty()) throw Error(Errc::degenerate_output, "dropout: emptied the sequence");
  return out;
}

inline Sequence baseline_case_flip(const Sequence& x, double p, std::uint64_t seed) {
  if (p < 0.0 || p > 1.0) throw Error(Errc::bad_param, "case_flip: p outside [0,1]");
  Rng rng(stream_seed(seed, "case_flip", sequence_content_hash(x)));
  Sequence out = x;
  for (Token& t : out) {
    const bool lower = t >= 'a' && t <= 'z';
    const bool upper = t >= 'A' && t <= 'Z';
    if ((lower || upper) && rng.next_unit() < p) t = lower ? t - 32 : t + 32;
  }
  if (out.empty()) throw Error(Errc::degenerate_output, "case_flip: empty sequence");
  return out;
}

/// Contiguous spans of x_t embedded into seeded random printable tokens.
inline Sequence baseline_chunk(const Sequence& x_t, int chunk_len, int total_len,
                               std::uint64_t seed) {
  if (chunk_len < 1 || total_len < chunk_len) {
    throw Error(Errc::bad_param, "chunk: need 1 <= chunk_len <= total_len");
  }
  if (static_cast<std::size_t>(chunk_len) > x_t.size()) {
    throw Error(Errc::bad_param, "chunk: chunk_len exceeds target length");
  }
  Rng rng(stream_seed(seed, "chunk", sequence_content_hash(x_t)));
  Sequence out;
  out.reserve(total_len);
  for (int i = 0; i < total_len; ++i) out.push_back(static_cast<Token>(32 + rng.below(95)));
  // one span per 2*chunk_len stride
  for (int at = 0; at + chunk_len <= total_len; at += 2 * chunk_len) {
    const std::size_t src = rng.below(x_t.size() - chunk_len + 1);
    std::copy(x_t.begin() + src, x_t.begin() + src + chunk_len, out.begin() + at);
  }
  if (out.empty()) throw Error(Errc::degenerate_output, "chunk: empty sequence");
  return out;
}

enum class BaselineKind { token_dropout, case_flip, chunk };

inline std::string baseline_name(BaselineKind k) {
  switch (k) {
    case BaselineKind::token_dropout: return "token_dropouts";
    case BaselineKind::case_flip: return "casing_flips";
    case BaselineKind::chunk: return "chunking";
  }
  return "?";
}

/// One grid point of a baseline's hyperparameter search. `value` is the drop
/// rate or flip probability; the chunk baseline uses the two lengths.
struct BaselineParams {
  double value = 0.0;
  int chunk_len = 0;
  int total_len = 0;
};

inline Sequence generate_baseline(BaselineKind kind, const Sequence& x_t,
                                  const BaselineParams& p, std::uint64_t seed) {
  switch (kind) {
    case BaselineKind::token_dropout: return baseline_token_dropout(x_t, p.value, seed);
    case BaselineKind::case_flip: return baseline_case_flip(x_t, p.value, seed);
    case BaselineKind::chunk: return baseline_chunk(x_t, p.chunk_len, p.total_len, seed);
  }
  throw Error(Errc::bad_param, "generate_baseline: unknown kind");
}

/// Least-destructive grid point whose output passes the non-neighbor audit.
/// The grid must be ordered least-destructive first.
inline BaselineParams tune_baseline(BaselineKind kind, const Sequence& x_t,
                                    const NeighborhoodSpec& spec,
                                    const std::vector<BaselineParams>& grid,
                                    std::uint64_t seed = 0) {
  for (const BaselineParams& p : grid) {
    Sequence out;
    try {
      out = generate_baseline(kind, x_t, p, seed);
    } catch (const Error&) {
      continue;  // infeasible grid point (e.g. empty output)
    }
    if (!is_neighbor(out, x_t, spec)) return p;
  }
  throw Error(Errc::no_feasible_params,
              "tune_baseline: no grid point maintains non-neighbor status");
}

// -------------------------------------------------------------- poison_dataset

struct PoisonDatasetResult {
  Dataset data;
  std::vector<PoisonRecord> records;
  std::vector<std::size_t> replaced_indices;
};

namespace detail {

/// Per-target lists of in-dataset neighbor indices, via a shared window/hash
/// index for the cheap metrics and direct scans otherwise.
inline std::vector<std::vector<std::uint32_t>> neighbor_lists(
    const Dataset& data, const std::vector<Sequence>& targets, const NeighborhoodSpec& spec) {
  std::vector<std::vector<std::uint32_t>> lists(targets.size());
  if (spec.kind == NeighborhoodKind::ngram || spec.kind == NeighborhoodKind::exact_match) {
    // index the targets, stream the dataset
    std::unordered_map<std::uint64_t, std::vector<std::pair<std::uint32_t, std::uint32_t>>> index;
    if (spec.kind == NeighborhoodKind::ngram) {
      for (std::size_t t = 0; t < targets.size(); ++t) {
        const Sequence& x = targets[t];
        if (static_cast<int>(x.size()) < spec.k) continue;
        for (std::size_t i = 0; i + spec.k <= x.size(); ++i) {
          index[window_hash(x, i, spec.k)].push_back(
              {static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(i)});
        }
      }
      for (std::size_t p = 0; p < data.points.size(); ++p) {
        const Sequence& s = data.points[p];
        if (static_cast<int>(s.size()) < spec.k) continue;
        std::set<std::uint32_t> hit;
        for (std::size_t i = 0; i + spec.k <= s.size(); ++i) {
          const auto it = index.find(window_hash(s, i, spec.k));
          if (it == index.end()) continue;
          for (const auto& [t, start] : it->second) {
            if (hit.count(t)) continue;
            if (std::equal(s.begin() + i, s.begin() + i + spec.k,
                           targets[t].begin() + start)) {
              hit.insert(t);
            }
          }
        }
        for (std::uint32_t t : hit) lists[t].push_back(static_cast<std::uint32_t>(p));
      }
    } else {
      std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> by_hash;
      for (std::size_t t = 0; t < targets.size(); ++t) {
        by_hash[sequence_content_hash(targets[t])].push_back(static_cast<std::uint32_t>(t));
      }
      for (std::size_t p = 0; p < data.points.size(); ++p) {
        const auto it = by_hash.find(sequence_content_hash(data.points[p]));
        if (it == by_hash.end()) continue;
        for (std::uint32_t t : it->second) {
          if (targets[t] == data.points[p]) lists[t].push_back(static_cast<std::uint32_t>(p));
        }
      }
    }
    return lists;
  }

  if (spec.kind == NeighborhoodKind::embedding) {
    const Embedder emb(spec.embedder);
    std::vector<std::vector<double>> tv(targets.size());
    for (std::size_t t = 0; t < targets.size(); ++t) tv[t] = emb(targets[t]);
    for (std::size_t p = 0; p < data.points.size(); ++p) {
      const std::vector<double> v = emb(data.points[p]);
      for (std::size_t t = 0; t < targets.size(); ++t) {
        if (cosine(v, tv[t]) >= spec.c) lists[t].push_back(static_cast<std::uint32_t>(p));
      }
    }
    return lists;
  }

  for (std::size_t p = 0; p < data.points.size(); ++p) {
    for (std::size_t t = 0; t < targets.size(); ++t) {
      if (is_neighbor(data.points[p], targets[t], spec)) {
        lists[t].push_back(static_cast<std::uint32_t>(p));
      }
    }
  }
  return lists;
}

}  // namespace detail

/// Builds the single poisoned dataset of the experiment protocol: for each
/// member target, b1 of its in-dataset neighbors are substituted by poisoned
/// neighbors; for each non-member target, b2 background points are substituted
/// by poisoned non-neighbors. Substitution keeps |output| == |input| and every
/// target's Eq. (1) label, which is re-audited at the end.
inline PoisonDatasetResult poison_dataset(const Dataset& data,
                                          const std::vector<std::pair<Sequence, bool>>& targets,
                                          const NeighborhoodSpec& spec, const ModelParams& params,
                                          int b1, int b2, const Dataset& aux,
                                          const PoisonConfig& cfg = {}) {
  if (b1 < 0 || b2 < 0) throw Error(Errc::bad_param, "poison_dataset: negative budget");

  PoisonDatasetResult result;
  result.data = data;

  std::vector<Sequence> target_seqs;
  target_seqs.reserve(targets.size());
  for (const auto& [seq, label] : targets) target_seqs.push_back(seq);

  auto lists = detail::neighbor_lists(data, target_seqs, spec);

  // remaining neighbor count per member target; replacements must never zero
  // another member's count
  std::vector<int> remaining(targets.size(), 0);
  std::vector<std::vector<std::uint32_t>> member_of_slot(data.size());
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (!targets[t].second) continue;
    remaining[t] = static_cast<int>(lists[t].size());
    for (std::uint32_t p : lists[t]) member_of_slot[p].push_back(static_cast<std::uint32_t>(t));
  }

  std::vector<std::uint8_t> replaced(data.size(), 0);
  const auto removal_safe = [&](std::uint32_t slot, std::size_t for_target) {
    for (std::uint32_t t : member_of_slot[slot]) {
      if (t != for_target && remaining[t] <= 1) return false;
    }
    return true;
  };
  const auto mark_removed = [&](std::uint32_t slot) {
    for (std::uint32_t t : member_of_slot[slot]) remaining[t] -= 1;
  };

  // an emitted poison must not pull any non-member target into membership
  const auto safe_for_non_members = [&](const Sequence& poison, std::size_t own_target,
                                        bool own_is_member) {
    for (std::size_t t = 0; t < targets.size(); ++t) {
      if (targets[t].second) continue;  // members keep their label when gaining neighbors
      if (!own_is_member && t == own_target) continue;  // audited separately
      if (is_neighbor(poison, target_seqs[t], spec)) return false;
    }
    return true;
  };

  if (b1 > 0) {
    for (std::size_t t = 0; t < targets.size(); ++t) {
      if (!targets[t].second) continue;
      std::vector<std::uint32_t> usable;
      for (std::uint32_t p : lists[t]) {
        if (!replaced[p] && removal_safe(p, t)) usable.push_back(p);
      }
      if (static_cast<int>(usable.size()) < b1) {
        throw Error(Errc::budget_infeasible,
                    "poison_dataset: member target has fewer than b1 replaceable neighbors");
      }
      Rng slot_rng(stream_seed(cfg.seed, "member_slots", t));
      slot_rng.shuffle(usable);
      for (int b = 0; b < b1; ++b) {
        const std::uint32_t slot = usable[b];
        PoisonRecord rec;
        bool ok = false;
        for (int attempt = 0; attempt < 8 && !ok; ++attempt) {
          PoisonConfig attempt_cfg = cfg;
          attempt_cfg.seed = stream_seed(cfg.seed, "member_poison", (t << 8) ^ (b << 4) ^ attempt);
          rec = poisonm(target_seqs[t], spec, params,
                        AttackDirection::make_member_look_non_member, aux, attempt_cfg);
          ok = safe_for_non_members(rec.poison, t, true);
        }
        if (!ok) {
          throw Error(Errc::attack_failed,
                      "poison_dataset: neighbor poison kept colliding with non-member targets");
        }
        mark_removed(slot);
        replaced[slot] = 1;
        result.data.points[slot] = rec.poison;
        result.data.provenance[slot] = Provenance::poison_neighbor;
        result.replaced_indices.push_back(slot);
        result.records.push_back(std::move(rec));
        // the inserted poison is itself a neighbor of target t
        remaining[t] += 1;
        member_of_slot[slot] = {static_cast<std::uint32_t>(t)};
      }
    }
  }

  if (b2 > 0) {
    // background slots that are neighbors of no member target and free
    std::vector<std::uint32_t> pool;
    for (std::size_t p = 0; p < data.size(); ++p) {
      if (replaced[p] || !member_of_slot[p].empty()) continue;
      if (data.provenance[p] != Provenance::background) continue;
      pool.push_back(static_cast<std::uint32_t>(p));
    }
    Rng pool_rng(stream_seed(cfg.seed, "nonmember_slots"));
    pool_rng.shuffle(pool);
    std::size_t cursor = 0;

    for (std::size_t t = 0; t < targets.size(); ++t) {
      if (targets[t].second) continue;
      for (int b = 0; b < b2; ++b) {
        // find the next slot that is a non-neighbor of this target
        std::uint32_t slot = 0;
        bool found = false;
        while (cursor < pool.size()) {
          slot = pool[cursor++];
          if (!is_neighbor(data.points[slot], target_seqs[t], spec)) {
            found = true;
            break;
          }
        }
        if (!found) {
          throw Error(Errc::budget_infeasible,
                      "poison_dataset: ran out of substitutable background non-neighbors");
        }
        PoisonRecord rec;
        bool ok = false;
        for (int attempt = 0; attempt < 8 && !ok; ++attempt) {
          PoisonConfig attempt_cfg = cfg;
          attempt_cfg.seed =
              stream_seed(cfg.seed, "nonmember_poison", (t << 8) ^ (b << 4) ^ attempt);
          rec = poisonm(target_seqs[t], spec, params,
                        AttackDirection::make_non_member_look_member, aux, attempt_cfg);
          ok = safe_for_non_members(rec.poison, t, false);
        }
        if (!ok) {
          throw Error(Errc::attack_failed,
                      "poison_dataset: non-neighbor poison kept colliding with other targets");
        }
        replaced[slot] = 1;
        result.data.points[slot] = rec.poison;
        result.data.provenance[slot] = Provenance::poison_non_neighbor;
        result.replaced_indices.push_back(slot);
        result.records.push_back(std::move(rec));
      }
    }
  }

  // membership-invariance audit over every target (Def. 3)
  const auto after = detail::neighbor_lists(result.data, target_seqs, spec);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const bool now_member = !after[t].empty();
    if (now_member != targets[t].second) {
      throw Error(Errc::protocol_violation,
                  "poison_dataset: target " + std::to_string(t) + " changed membership label");
    }
  }
  return result;
}

// --------------------------------------------------------------------- output

/// JSON-lines emission of attack records (one object per poison).
inline void save_records_jsonl(const std::string& path, const std::vector<PoisonRecord>& records,
                               const std::string& header_comment = {}) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_error, "save_records_jsonl: cannot open " + path);
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const PoisonRecord& r = records[i];
    out << "{\"target_id\":" << i << ",\"direction\":\"" << direction_name(r.direction)
        << "\",\"iterations\":" << r.iterations << ",\"metric_value\":"
        << format_double(r.metric_value) << ",\"threshold\":" << format_double(r.threshold_value)
        << ",\"neighbor_after\":" << (r.neighbor_after ? "true" : "false") << ",\"poison\":[";
    for (std::size_t j = 0; j < r.poison.size(); ++j) {
      if (j > 0) out << ',';
      out << r.poison[j];
    }
    out << "]}\n";
  }
  if (!out) throw Error(Errc::io_error, "save_records_jsonl: write failed for " + path);
}

}  // namespace mipl
