#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mipl/corpus.hpp"
#include "mipl/errors.hpp"
#include "mipl/game.hpp"
#include "mipl/mitests.hpp"
#include "mipl/model.hpp"
#include "mipl/poison.hpp"
#include "mipl/rng.hpp"

namespace mipl {

/// Trapezoid quadrature of the empirical Youden J statistic
/// (Sens + Spec - 1) over gamma in [0,1]. Scores must be squashed to [0,1].
inline double youden_integral(std::vector<double> member_scores,
                              std::vector<double> nonmember_scores, double grid_step = 1e-3) {
  if (member_scores.empty() || nonmember_scores.empty()) {
    throw Error(Errc::degenerate_input, "youden_integral: empty score sample");
  }
  if (!(grid_step > 0.0) || grid_step > 0.5) {
    throw Error(Errc::bad_param, "youden_integral: grid step outside (0, 0.5]");
  }
  for (double s : member_scores) {
    if (s < 0.0 || s > 1.0) throw Error(Errc::bad_param, "youden_integral: unsquashed score");
  }
  for (double s : nonmember_scores) {
    if (s < 0.0 || s > 1.0) throw Error(Errc::bad_param, "youden_integral: unsquashed score");
  }
  std::sort(member_scores.begin(), member_scores.end());
  std::sort(nonmember_scores.begin(), nonmember_scores.end());
  const double nm = static_cast<double>(member_scores.size());
  const double nn = static_cast<double>(nonmember_scores.size());

  const auto j_at = [&](double gamma) {
    const double sens =
        static_cast<double>(member_scores.end() -
                            std::lower_bound(member_scores.begin(), member_scores.end(), gamma)) /
        nm;
    const double spec =
        static_cast<double>(std::lower_bound(nonmember_scores.begin(), nonmember_scores.end(),
                                             gamma) -
                            nonmember_scores.begin()) /
        nn;
    return sens + spec - 1.0;
  };

  const auto steps = static_cast<std::size_t>(std::llround(1.0 / grid_step));
  double integral = 0.0;
  double prev = j_at(0.0);
  for (std::size_t i = 1; i <= steps; ++i) {
    const double gamma = static_cast<double>(i) / static_cast<double>(steps);
    const double cur = j_at(gamma);
    integral += (prev + cur) * 0.5 / static_cast<double>(steps);
    prev = cur;
  }
  return integral;
}

/// The advantage identity: the J-statistic integral equals the difference of
/// expected scores under the two hypotheses.
struct AdvantageReport {
  double quadrature = 0.0;
  double mean_difference = 0.0;
  double gap = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  int n_samples = 0;
  double grid_step = 0.0;
};

using ScoreSampler = std::function<double(Rng&)>;

inline AdvantageReport verify_lemma1(const ScoreSampler& member_sampler,
                                     const ScoreSampler& nonmember_sampler, int n_samples,
                                     double grid_step, double tolerance, std::uint64_t seed) {
  if (n_samples < 1) throw Error(Errc::bad_param, "verify_lemma1: n_samples must be >= 1");
  Rng rng_m(stream_seed(seed, "lemma1_member"));
  Rng rng_n(stream_seed(seed, "lemma1_nonmember"));
  std::vector<double> members(n_samples), nonmembers(n_samples);
  double mean_m = 0.0, mean_n = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    members[i] = member_sampler(rng_m);
    nonmembers[i] = nonmember_sampler(rng_n);
    mean_m += members[i];
    mean_n += nonmembers[i];
  }
  mean_m /= n_samples;
  mean_n /= n_samples;

  AdvantageReport report;
  report.quadrature = youden_integral(members, nonmembers, grid_step);
  report.mean_difference = mean_m - mean_n;
  report.gap = std::abs(report.quadrature - report.mean_difference);
  report.tolerance = tolerance;
  report.passed = report.gap <= tolerance;
  report.n_samples = n_samples;
  report.grid_step = grid_step;
  return report;
}

namespace detail {

/// Trains the two union datasets with identical seeds and returns their
/// squashed scores at x_t: (score with `a` inserted, score with `b` inserted).
inline std::pair<double, double> paired_scores(const Sequence& x_t, const Dataset& base,
                                               const std::vector<Sequence>& a,
                                               const std::vector<Sequence>& b, TestKind test,
                                               const ModelConfig& train_cfg,
                                               const ScoreEnv& env) {
  Dataset with_a = base;
  for (const Sequence& s : a) with_a.add(s, Provenance::poison_non_neighbor);
  Dataset with_b = base;
  for (const Sequence& s : b) with_b.add(s, Provenance::background);
  const ModelParams ma = train(init_model(train_cfg), with_a);
  const ModelParams mb = train(init_model(train_cfg), with_b);
  return {squashed_score(test, ma, x_t, env), squashed_score(test, mb, x_t, env)};
}

}  // namespace detail

/// The mapping error of one poison set: trains theta on D ∪ poisons and on
/// D ∪ sampled from identical seeds and returns the absolute difference of the
/// squashed test scores at x_t.
inline double measure_delta(const Sequence& x_t, const Dataset& base,
                            const std::vector<Sequence>& sampled,
                            const std::vector<Sequence>& poisons, TestKind test,
                            const ModelConfig& train_cfg, const ScoreEnv& env) {
  if (sampled.size() != poisons.size()) {
    throw Error(Errc::size_mismatch, "measure_delta: |sampled| != |poisons|");
  }
  const auto [with_poisons, with_sampled] =
      detail::paired_scores(x_t, base, poisons, sampled, test, train_cfg, env);
  return std::abs(with_poisons - with_sampled);
}

/// The accuracy/robustness trade-off estimate. Trials are fully paired: one
/// background part per trial yields the four datasets
///   D_I = B ∪ {x_t},   D_O = B ∪ {s},
///   D_I^p = B ∪ {inward poison built from s},   D_O^p = B ∪ {outward poison},
/// trained from identical seeds, so each trial's score differences are exactly
/// the Eq. (4) mapping errors and the inequality holds per sample up to
/// quadrature error.
struct TradeoffReport {
  double clean_advantage = 0.0;
  double robust_advantage = 0.0;
  double delta_neighbor_term = 0.0;      // E |T(D_I^p) - T(D_O)|, poisoned neighbors
  double delta_non_neighbor_term = 0.0;  // E |T(D_O^p) - T(D_I)|, poisoned non-neighbors
  double delta_star = 0.0;
  double slack = 0.0;  // delta_star - (clean + robust)
  double tolerance = 0.0;
  bool passed = false;
  int n_trials = 0;
  int skipped_trials = 0;
  double ci_half_width_neighbor = 0.0;
  double ci_half_width_non_neighbor = 0.0;
  // fixed-b2 extension (reported, not asserted)
  int extension_b2 = 0;
  double extension_robust_advantage = 0.0;
  double extension_delta_non_neighbor_term = 0.0;
  double extension_slack = 0.0;
};

struct TradeoffOptions {
  int n_trials = 50;
  double grid_step = 1e-3;
  int fixed_b2 = 10;  // 0 disables the extension
};

inline TradeoffReport verify_theorem1(const Sequence& x_t, const NeighborhoodSpec& spec,
                                      TestKind test, const TradeoffOptions& opts,
                                      std::uint64_t seed, const GameEnv& env) {
  if (opts.n_trials < 2) throw Error(Errc::bad_param, "verify_theorem1: need >= 2 trials");
  if (spec.kind == NeighborhoodKind::exact_match) {
    throw Error(Errc::unsupported,
                "verify_theorem1: the neighbor-poison term needs a nonzero radius");
  }

  const ScoreEnv score_env = env.score_env();
  std::vector<double> t_in, t_out, t_in_p, t_out_p, t_out_p_ext;
  int skipped = 0;

  for (int trial = 0; trial < opts.n_trials; ++trial) {
    const std::uint64_t trial_seed = stream_seed(seed, "tradeoff_trial", trial);
    try {
      const Dataset base =
          detail::challenger_sample(*env.background_pool, x_t, spec, env.dataset_size - 1,
                                    stream_seed(trial_seed, "base"));

      // sampled aux non-neighbor s
      Rng pick(stream_seed(trial_seed, "aux_pick"));
      const Sequence* s = nullptr;
      for (int attempt = 0; attempt < 64; ++attempt) {
        const Sequence& cand = env.aux->points[pick.below(env.aux->size())];
        if (!is_neighbor(cand, x_t, spec)) {
          s = &cand;
          break;
        }
      }
      if (s == nullptr) {
        throw Error(Errc::generation_failed, "verify_theorem1: no aux non-neighbor found");
      }

      // inward poison built from exactly s (single-point aux)
      Dataset aux_only_s;
      aux_only_s.add(*s, Provenance::background);
      PoisonConfig in_cfg;
      in_cfg.seed = stream_seed(trial_seed, "inward");
      const PoisonRecord p1 = poisonm(x_t, spec, env.attack_surrogate,
                                      AttackDirection::make_member_look_non_member, aux_only_s,
                                      in_cfg);

      PoisonConfig out_cfg;
      out_cfg.seed = stream_seed(trial_seed, "outward");
      const PoisonRecord p2 = poisonm(x_t, spec, env.attack_surrogate,
                                      AttackDirection::make_non_member_look_member, *env.aux,
                                      out_cfg);

      ModelConfig mc = env.model_config;
      mc.seed = stream_seed(trial_seed, "model");

      // delta pairs; by determinism these trainings double as the clean and
      // poisoned trial models
      const auto [in_p_score, out_score] =
          detail::paired_scores(x_t, base, {p1.poison}, {*s}, test, mc, score_env);
      const auto [out_p_score, in_score] =
          detail::paired_scores(x_t, base, {p2.poison}, {x_t}, test, mc, score_env);

      t_in.push_back(in_score);
      t_out.push_back(out_score);
      t_in_p.push_back(in_p_score);
      t_out_p.push_back(out_p_score);

      if (opts.fixed_b2 > 0) {
        std::vector<Sequence> poisons_ext, samples_ext;
        for (int b = 0; b < opts.fixed_b2; ++b) {
          PoisonConfig ext_cfg;
          ext_cfg.seed = stream_seed(trial_seed, "outward_ext", b);
          poisons_ext.push_back(poisonm(x_t, spec, env.attack_surrogate,
                                        AttackDirection::make_non_member_look_member, *env.aux,
                                        ext_cfg)
                                    .poison);
          samples_ext.push_back(x_t);
        }
        const auto [ext_p_score, ext_base_score] =
            detail::paired_scores(x_t, base, poisons_ext, samples_ext, test, mc, score_env);
        (void)ext_base_score;
        t_out_p_ext.push_back(ext_p_score);
      }
    } catch (const Error& e) {
      if (e.code() == Errc::attack_failed || e.code() == Errc::budget_infeasible ||
          e.code() == Errc::generation_failed) {
        ++skipped;
        continue;
      }
      throw;
    }
  }

  if (t_in.size() < 2) {
    throw Error(Errc::insufficient_data, "verify_theorem1: too many skipped trials");
  }

  const auto mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double e : v) s += e;
    return s / static_cast<double>(v.size());
  };
  const auto half_width = [&](const std::vector<double>& v) {
    const double mu = mean_of(v);
    double var = 0.0;
    for (double e : v) var += (e - mu) * (e - mu);
    var /= static_cast<double>(v.size() - 1);
    return 1.96 * std::sqrt(var / static_cast<double>(v.size()));
  };

  std::vector<double> d1(t_in.size()), d2(t_in.size());
  for (std::size_t i = 0; i < t_in.size(); ++i) {
    d1[i] = std::abs(t_in_p[i] - t_out[i]);
    d2[i] = std::abs(t_out_p[i] - t_in[i]);
  }

  TradeoffReport report;
  report.n_trials = static_cast<int>(t_in.size());
  report.skipped_trials = skipped;
  report.clean_advantage = youden_integral(t_in, t_out, opts.grid_step);
  report.robust_advantage = youden_integral(t_in_p, t_out_p, opts.grid_step);
  report.delta_neighbor_term = mean_of(d1);
  report.delta_non_neighbor_term = mean_of(d2);
  report.delta_star = report.delta_neighbor_term + report.delta_non_neighbor_term;
  report.slack = report.delta_star - (report.clean_advantage + report.robust_advantage);
  report.ci_half_width_neighbor = half_width(d1);
  report.ci_half_width_non_neighbor = half_width(d2);
  const double combined = std::sqrt(report.ci_half_width_neighbor * report.ci_half_width_neighbor +
                                    report.ci_half_width_non_neighbor *
                                        report.ci_half_width_non_neighbor);
  // trapezoid error bound: each advantage integrand has total variation <= 2,
  // so the two quadratures together are exact to within 2 * grid_step
  report.tolerance = 2.0 * combined + 2.0 * opts.grid_step;
  report.passed = report.slack >= -report.tolerance;

  if (opts.fixed_b2 > 0 && !t_out_p_ext.empty()) {
    report.extension_b2 = opts.fixed_b2;
    report.extension_robust_advantage = youden_integral(t_in_p, t_out_p_ext, opts.grid_step);
    std::vector<double> d2e(t_out_p_ext.size());
    for (std::size_t i = 0; i < t_out_p_ext.size(); ++i) {
      d2e[i] = std::abs(t_out_p_ext[i] - t_in[i]);
    }
    report.extension_delta_non_neighbor_term = mean_of(d2e);
    report.extension_slack = report.delta_neighbor_term +
                             report.extension_delta_non_neighbor_term -
                             (report.clean_advantage + report.extension_robust_advantage);
  }
  return report;
}

}  // namespace mipl
