#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mipl/corpus.hpp"
#include "mipl/errors.hpp"
#include "mipl/mitests.hpp"
#include "mipl/model.hpp"
#include "mipl/poison.hpp"
#include "mipl/rng.hpp"

namespace mipl {

/// Scoring context shared by the game arbiter and the analysis estimators.
struct ScoreEnv {
  ScoreConfig scoring{};
  const ModelParams* reference = nullptr;  // required for TestKind::reference
  // replaces the named test when set (e.g. a constant scorer in tests)
  std::function<double(const ModelParams&, const Sequence&)> override_scorer;
};

inline double raw_score(TestKind test, const ModelParams& params, const Sequence& x,
                        const ScoreEnv& env) {
  if (env.override_scorer) return env.override_scorer(params, x);
  switch (test) {
    case TestKind::loss: return score_loss(params, x).value;
    case TestKind::mink: return score_mink(params, x, env.scoring.mink_k).value;
    case TestKind::zlib: return score_zlib(params, x, env.scoring.zlib_level).value;
    case TestKind::perturb:
      return score_perturb(params, x, env.scoring.perturb, env.scoring.seed).value;
    case TestKind::reference:
      if (env.reference == nullptr) {
        throw Error(Errc::bad_param, "raw_score: reference test needs a reference model");
      }
      return score_reference(params, *env.reference, x).value;
  }
  throw Error(Errc::bad_param, "raw_score: unknown test");
}

inline double squashed_score(TestKind test, const ModelParams& params, const Sequence& x,
                             const ScoreEnv& env) {
  return squash(raw_score(test, params, x, env));
}

/// Youden-optimal threshold over squashed scores: the candidate gamma
/// maximizing empirical Sens + Spec - 1 (smallest such gamma on ties).
inline double calibrate_gamma(const std::vector<double>& member_squashed,
                              const std::vector<double>& nonmember_squashed) {
  if (member_squashed.empty() || nonmember_squashed.empty()) {
    throw Error(Errc::degenerate_input, "calibrate_gamma: empty score sample");
  }
  std::vector<double> candidates = member_squashed;
  candidates.insert(candidates.end(), nonmember_squashed.begin(), nonmember_squashed.end());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  double best_gamma = candidates.front();
  double best_j = -2.0;
  for (double g : candidates) {
    double sens = 0.0, spec = 0.0;
    for (double s : member_squashed) sens += s >= g ? 1.0 : 0.0;
    for (double s : nonmember_squashed) spec += s < g ? 1.0 : 0.0;
    const double j = sens / static_cast<double>(member_squashed.size()) +
                     spec / static_cast<double>(nonmember_squashed.size()) - 1.0;
    if (j > best_j) {
      best_j = j;
      best_gamma = g;
    }
  }
  return best_gamma;
}

/// Shared fixtures for game and analysis trials: the background pool the
/// challenger samples from, the aux corpus the attack samples from, and the
/// background-only reference/surrogate models.
struct GameEnv {
  const Dataset* background_pool = nullptr;
  const Dataset* aux = nullptr;
  ModelConfig model_config{};
  ScoreConfig scoring{};
  int dataset_size = 300;
  ModelParams reference;         // background-only, independent seed
  ModelParams attack_surrogate;  // background-only; supplies attack activations

  ScoreEnv score_env() const { return ScoreEnv{scoring, &reference, {}}; }
};

inline GameEnv make_game_env(const Dataset& background_pool, const Dataset& aux,
                             ModelConfig model_config, ScoreConfig scoring, int dataset_size,
                             std::uint64_t seed) {
  GameEnv env;
  env.background_pool = &background_pool;
  env.aux = &aux;
  env.model_config = model_config;
  env.scoring = scoring;
  env.dataset_size = dataset_size;

  ModelConfig ref_cfg = model_config;
  ref_cfg.seed = stream_seed(seed, "reference_model");
  env.reference = train(init_model(ref_cfg), background_pool);

  ModelConfig sur_cfg = model_config;
  sur_cfg.seed = stream_seed(seed, "surrogate_model");
  env.attack_surrogate = train(init_model(sur_cfg), background_pool);
  return env;
}

namespace detail {

/// Seeded background sample of `count` points, none of them neighbors of x_t.
inline Dataset challenger_sample(const Dataset& pool, const Sequence& x_t,
                                 const NeighborhoodSpec& spec, int count, std::uint64_t seed) {
  std::vector<std::uint32_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::uint32_t>(i);
  Rng rng(seed);
  rng.shuffle(order);
  Dataset out;
  for (std::uint32_t idx : order) {
    if (static_cast<int>(out.size()) == count) break;
    if (is_neighbor(pool.points[idx], x_t, spec)) continue;
    out.add(pool.points[idx], pool.provenance[idx]);
  }
  if (static_cast<int>(out.size()) < count) {
    throw Error(Errc::generation_failed,
                "challenger_sample: pool too small after dropping neighbors of the target");
  }
  return out;
}

inline std::uint64_t dataset_hash(const Dataset& d) {
  std::uint64_t h = fnv1a64("dataset");
  for (const Sequence& s : d.points) h = mix_seed(h, sequence_content_hash(s));
  return h;
}

}  // namespace detail

/// Verifies that `poisoned` lies in the budget-b expansion of `original`
/// around x_t: same size, at most b in-place substitutions, and on the member
/// side both the removed and inserted points lie inside the ball (outside it
/// on the non-member side). Throws ProtocolViolation otherwise.
inline void verify_expansion(const Dataset& original, const Dataset& poisoned,
                             const Sequence& x_t, const NeighborhoodSpec& spec, int budget,
                             bool member_side) {
  if (original.size() != poisoned.size()) {
    throw Error(Errc::protocol_violation, "expansion: dataset size changed");
  }
  int changed = 0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    if (original.points[i] == poisoned.points[i]) continue;
    ++changed;
    const bool removed_in = is_neighbor(original.points[i], x_t, spec);
    const bool inserted_in = is_neighbor(poisoned.points[i], x_t, spec);
    if (member_side && (!removed_in || !inserted_in)) {
      throw Error(Errc::protocol_violation,
                  "expansion: member-side substitution crossed the neighborhood boundary");
    }
    if (!member_side && (removed_in || inserted_in)) {
      throw Error(Errc::protocol_violation,
                  "expansion: non-member-side substitution crossed the neighborhood boundary");
    }
  }
  if (changed > budget) {
    throw Error(Errc::protocol_violation, "expansion: more substitutions than the budget");
  }
  const bool member_after = is_member(x_t, poisoned, spec);
  if (member_side && !member_after) {
    throw Error(Errc::protocol_violation, "expansion: target lost membership on the member side");
  }
  if (!member_side && member_after) {
    throw Error(Errc::protocol_violation,
                "expansion: target gained membership on the non-member side");
  }
}

/// One run of the six-step challenger/adversary/arbiter game. Convention:
/// challenger bit c = 1 means the member-side dataset D_I^p was trained on;
/// the arbiter's prediction is 1 when the squashed test score clears gamma.
struct GameTranscript {
  std::uint64_t target_hash = 0;
  std::string spec_name;
  TestKind test = TestKind::loss;
  int b1 = 0;
  int b2 = 0;
  double gamma = 0.0;
  int challenger_bit = 0;
  int predicted_bit = 0;
  bool adversary_wins = false;
  double arbiter_score = 0.0;  // squashed
  std::uint64_t seed = 0;
  std::uint64_t d_in_hash = 0, d_out_hash = 0, d_in_poisoned_hash = 0, d_out_poisoned_hash = 0;
};

inline GameTranscript run_game(const Sequence& x_t, const NeighborhoodSpec& spec, int b1, int b2,
                               TestKind test, double gamma, std::uint64_t seed,
                               const GameEnv& env) {
  GameTranscript tr;
  tr.target_hash = sequence_content_hash(x_t);
  tr.spec_name = spec.name();
  tr.test = test;
  tr.b1 = b1;
  tr.b2 = b2;
  tr.gamma = gamma;
  tr.seed = seed;

  // step 2: challenger samples D_I (x_t injected) and D_O (audited clean)
  Dataset d_in = detail::challenger_sample(*env.background_pool, x_t, spec,
                                           env.dataset_size - 1, stream_seed(seed, "d_in"));
  d_in.add(x_t, Provenance::canary);
  const Dataset d_out = detail::challenger_sample(*env.background_pool, x_t, spec,
                                                  env.dataset_size, stream_seed(seed, "d_out"));
  tr.d_in_hash = detail::dataset_hash(d_in);
  tr.d_out_hash = detail::dataset_hash(d_out);

  // step 3: adversary poisons within the declared expansions
  Dataset d_in_p = d_in;
  Dataset d_out_p = d_out;
  if (b1 > 0) {
    PoisonConfig cfg;
    cfg.seed = stream_seed(seed, "attack_in");
    d_in_p = poison_dataset(d_in, {{x_t, true}}, spec, env.attack_surrogate, b1, 0, *env.aux, cfg)
                 .data;
  }
  if (b2 > 0) {
    PoisonConfig cfg;
    cfg.seed = stream_seed(seed, "attack_out");
    d_out_p =
        poison_dataset(d_out, {{x_t, false}}, spec, env.attack_surrogate, 0, b2, *env.aux, cfg)
            .data;
  }
  verify_expansion(d_in, d_in_p, x_t, spec, b1, /*member_side=*/true);
  verify_expansion(d_out, d_out_p, x_t, spec, b2, /*member_side=*/false);
  tr.d_in_poisoned_hash = detail::dataset_hash(d_in_p);
  tr.d_out_poisoned_hash = detail::dataset_hash(d_out_p);

  // steps 4-6: train on the side chosen by the challenger bit, arbitrate
  Rng coin(stream_seed(seed, "challenger_bit"));
  tr.challenger_bit = static_cast<int>(coin.below(2));
  ModelConfig mc = env.model_config;
  mc.seed = stream_seed(seed, "trial_model");
  const ModelParams theta = train(init_model(mc), tr.challenger_bit ? d_in_p : d_out_p);
  const ScoreEnv score_env = env.score_env();
  tr.arbiter_score = squashed_score(test, theta, x_t, score_env);
  tr.predicted_bit = tr.arbiter_score >= gamma ? 1 : 0;
  tr.adversary_wins = tr.predicted_bit != tr.challenger_bit;
  return tr;
}

/// Attack-based Eqs. (2)-(3) estimates. One attack instance bounds the inner
/// min/max one-sidedly, so rsens/rspec are upper bounds on the true robust
/// rates; the report carries that label.
struct RobustReport {
  std::vector<double> gamma_grid;
  std::vector<double> sens, spec, rsens, rspec;
  int n_trials = 0;
  int attack_failures = 0;
  double ci_half_width = 0.0;
  std::string estimate_kind = "attack_upper_bound";
  // per-trial squashed scores (member clean/poisoned, non-member clean/poisoned)
  std::vector<double> member_clean, member_poisoned, non_member_clean, non_member_poisoned;
};

inline RobustReport estimate_robust_metrics(const Sequence& x_t, const NeighborhoodSpec& spec,
                                            TestKind test, int b1, int b2, int n_trials,
                                            int gamma_points, std::uint64_t seed,
                                            const GameEnv& env) {
  if (n_trials < 1) throw Error(Errc::bad_param, "estimate_robust_metrics: n_trials must be >= 1");
  if (gamma_points < 2) throw Error(Errc::bad_param, "estimate_robust_metrics: grid too small");

  RobustReport report;
  const ScoreEnv score_env = env.score_env();

  for (int t = 0; t < n_trials; ++t) {
    const std::uint64_t trial_seed = stream_seed(seed, "robust_trial", t);
    try {
      Dataset d_in = detail::challenger_sample(*env.background_pool, x_t, spec,
                                               env.dataset_size - 1,
                                               stream_seed(trial_seed, "d_in"));
      d_in.add(x_t, Provenance::canary);
      const Dataset d_out =
          detail::challenger_sample(*env.background_pool, x_t, spec, env.dataset_size,
                                    stream_seed(trial_seed, "d_out"));
      Dataset d_in_p = d_in;
      Dataset d_out_p = d_out;
      if (b1 > 0) {
        PoisonConfig cfg;
        cfg.seed = stream_seed(trial_seed, "attack_in");
        d_in_p =
            poison_dataset(d_in, {{x_t, true}}, spec, env.attack_surrogate, b1, 0, *env.aux, cfg)
                .data;
      }
      if (b2 > 0) {
        PoisonConfig cfg;
        cfg.seed = stream_seed(trial_seed, "attack_out");
        d_out_p = poison_dataset(d_out, {{x_t, false}}, spec, env.attack_surrogate, 0, b2,
                                 *env.aux, cfg)
                      .data;
      }
      ModelConfig mc = env.model_config;
      mc.seed = stream_seed(trial_seed, "trial_model");
      const ModelParams m_in = train(init_model(mc), d_in);
      const ModelParams m_out = train(init_model(mc), d_out);
      const ModelParams m_in_p = b1 > 0 ? train(init_model(mc), d_in_p) : m_in;
      const ModelParams m_out_p = b2 > 0 ? train(init_model(mc), d_out_p) : m_out;

      report.member_clean.push_back(squashed_score(test, m_in, x_t, score_env));
      report.non_member_clean.push_back(squashed_score(test, m_out, x_t, score_env));
      report.member_poisoned.push_back(squashed_score(test, m_in_p, x_t, score_env));
      report.non_member_poisoned.push_back(squashed_score(test, m_out_p, x_t, score_env));
    } catch (const Error& e) {
      if (e.code() == Errc::attack_failed || e.code() == Errc::budget_infeasible) {
        report.attack_failures += 1;
        continue;
      }
      throw;
    }
  }

  const auto n = static_cast<double>(report.member_clean.size());
  if (n == 0) throw Error(Errc::attack_failed, "estimate_robust_metrics: every trial failed");
  report.n_trials = static_cast<int>(n);
  report.ci_half_width = 1.96 * std::sqrt(0.25 / n);

  const auto rate_ge = [](const std::vector<double>& v, double g) {
    double c = 0.0;
    for (double s : v) c += s >= g ? 1.0 : 0.0;
    return c / static_cast<double>(v.size());
  };
  for (int i = 0; i < gamma_points; ++i) {
    const double g = static_cast<double>(i) / (gamma_points - 1);
    report.gamma_grid.push_back(g);
    report.sens.push_back(rate_ge(report.member_clean, g));
    report.spec.push_back(1.0 - rate_ge(report.non_member_clean, g));
    report.rsens.push_back(rate_ge(report.member_poisoned, g));
    report.rspec.push_back(1.0 - rate_ge(report.non_member_poisoned, g));
  }
  return report;
}

// --------------------------------------------------------------------- output

inline void save_transcripts_jsonl(const std::string& path,
                                   const std::vector<GameTranscript>& transcripts,
                                   const std::string& header_comment = {}) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_error, "save_transcripts_jsonl: cannot open " + path);
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  for (const GameTranscript& tr : transcripts) {
    out << "{\"target_hash\":\"" << std::hex << tr.target_hash << std::dec << "\",\"spec\":\""
        << tr.spec_name << "\",\"test\":\"" << test_name(tr.test) << "\",\"b1\":" << tr.b1
        << ",\"b2\":" << tr.b2 << ",\"gamma\":" << format_double(tr.gamma)
        << ",\"challenger_bit\":" << tr.challenger_bit
        << ",\"predicted_bit\":" << tr.predicted_bit
        << ",\"adversary_wins\":" << (tr.adversary_wins ? "true" : "false")
        << ",\"arbiter_score\":" << format_double(tr.arbiter_score) << ",\"seed\":" << tr.seed
        << ",\"d_in_hash\":\"" << std::hex << tr.d_in_hash << "\",\"d_out_hash\":\""
        << tr.d_out_hash << "\",\"d_in_poisoned_hash\":\"" << tr.d_in_poisoned_hash
        << "\",\"d_out_poisoned_hash\":\"" << tr.d_out_poisoned_hash << std::dec << "\"}\n";
  }
  if (!out) throw Error(Errc::io_error, "save_transcripts_jsonl: write failed for " + path);
}

/// CSV schema: gamma,sens,spec,rsens,rspec,ci.
inline void save_robust_report(const std::string& path, const RobustReport& report,
                               const std::string& header_comment = {}) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_error, "save_robust_report: cannot open " + path);
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  out << "# estimate_kind=" << report.estimate_kind << " trials=" << report.n_trials
      << " attack_failures=" << report.attack_failures << "\n";
  out << "gamma,sens,spec,rsens,rspec,ci\n";
  for (std::size_t i = 0; i < report.gamma_grid.size(); ++i) {
    out << format_double(report.gamma_grid[i]) << ',' << format_double(report.sens[i]) << ','
        << format_double(report.spec[i]) << ',' << format_double(report.rsens[i]) << ','
        << format_double(report.rspec[i]) << ',' << format_double(report.ci_half_width) << '\n';
  }
  if (!out) throw Error(Errc::io_error, "save_robust_report: write failed for " + path);
}

}  // namespace mipl
