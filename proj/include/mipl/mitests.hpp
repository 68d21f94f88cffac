#pragma once

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "mipl/corpus.hpp"
#include "mipl/errors.hpp"
#include "mipl/model.hpp"
#include "mipl/parallel.hpp"
#include "mipl/rng.hpp"
#include "mipl/sequence.hpp"

namespace mipl {

enum class TestKind { loss, mink, zlib, perturb, reference };

inline std::string test_name(TestKind t) {
  switch (t) {
    case TestKind::loss: return "loss";
    case TestKind::mink: return "mink";
    case TestKind::zlib: return "zlib";
    case TestKind::perturb: return "perturb";
    case TestKind::reference: return "reference";
  }
  return "?";
}

inline const std::vector<TestKind>& all_tests() {
  static const std::vector<TestKind> kAll = {TestKind::loss, TestKind::mink, TestKind::zlib,
                                             TestKind::perturb, TestKind::reference};
  return kAll;
}

/// Every score is oriented "higher = more member-like".
struct MiScore {
  TestKind test = TestKind::loss;
  double value = 0.0;
  std::uint64_t params_hash = 0;
};

inline std::uint64_t model_identity_hash(const ModelParams& p) {
  std::uint64_t h = fnv1a64("model");
  h = mix_seed(h, static_cast<std::uint64_t>(p.config.vocab));
  h = mix_seed(h, static_cast<std::uint64_t>(p.config.context));
  h = mix_seed(h, static_cast<std::uint64_t>(p.config.embed_dim));
  h = mix_seed(h, p.config.seed);
  h = mix_seed(h, p.train_steps);
  return h;
}

inline MiScore score_loss(const ModelParams& params, const Sequence& x) {
  return {TestKind::loss, -seq_loss(params, x), model_identity_hash(params)};
}

/// Min-K%: negated mean of the ceil(K*|x|) largest token losses.
inline MiScore score_mink(const ModelParams& params, const Sequence& x, double k_fraction) {
  if (!(k_fraction > 0.0) || k_fraction > 1.0) {
    throw Error(Errc::bad_param, "score_mink: K must be in (0,1]");
  }
  std::vector<double> losses = token_losses(params, x);
  const auto take = static_cast<std::size_t>(
      std::ceil(k_fraction * static_cast<double>(losses.size())));
  std::partial_sort(losses.begin(), losses.begin() + take, losses.end(), std::greater<>());
  double sum = 0.0;
  for (std::size_t i = 0; i < take; ++i) sum += losses[i];
  return {TestKind::mink, -sum / static_cast<double>(take), model_identity_hash(params)};
}

/// DEFLATE length of the detokenized bytes at a pinned effort level.
inline std::size_t compressed_length(const Sequence& x, int level = 6) {
  const std::string bytes = detokenize(x);
  uLongf bound = compressBound(static_cast<uLong>(bytes.size()));
  std::vector<Bytef> buf(bound);
  const int rc = compress2(buf.data(), &bound, reinterpret_cast<const Bytef*>(bytes.data()),
                           static_cast<uLong>(bytes.size()), level);
  if (rc != Z_OK) throw Error(Errc::degenerate_input, "compressed_length: compress2 failed");
  return static_cast<std::size_t>(bound);
}

/// zlib test: -(total loss) / (8 * compressed byte length).
inline MiScore score_zlib(const ModelParams& params, const Sequence& x, int level = 6) {
  const std::vector<double> losses = token_losses(params, x);
  double total = 0.0;
  for (double l : losses) total += l;
  const std::size_t clen = compressed_length(x, level);
  if (clen == 0) throw Error(Errc::degenerate_input, "score_zlib: zero compressed length");
  return {TestKind::zlib, -total / (8.0 * static_cast<double>(clen)),
          model_identity_hash(params)};
}

struct PerturbConfig {
  double flip_prob = 0.1;  // per-letter case-flip probability
  int n_perturb = 10;
};

inline Sequence case_flip_copy(const Sequence& x, double p, Rng& rng) {
  Sequence out = x;
  for (Token& t : out) {
    const bool lower = t >= 'a' && t <= 'z';
    const bool upper = t >= 'A' && t <= 'Z';
    if ((lower || upper) && rng.next_unit() < p) {
      t = lower ? t - 32 : t + 32;
    }
  }
  return out;
}

/// Perturbation test: mean loss increase over seeded case-flipped copies.
/// Memorized inputs sit in sharp loss basins, so the increase is larger for
/// members.
inline MiScore score_perturb(const ModelParams& params, const Sequence& x,
                             const PerturbConfig& cfg, std::uint64_t seed) {
  if (cfg.n_perturb < 1) throw Error(Errc::bad_param, "score_perturb: n_perturb must be >= 1");
  const double base = seq_loss(params, x);
  Rng rng(stream_seed(seed, "perturb", sequence_content_hash(x)));
  double acc = 0.0;
  for (int i = 0; i < cfg.n_perturb; ++i) {
    acc += seq_loss(params, case_flip_copy(x, cfg.flip_prob, rng)) - base;
  }
  return {TestKind::perturb, acc / cfg.n_perturb, model_identity_hash(params)};
}

inline MiScore score_reference(const ModelParams& params, const ModelParams& ref_params,
                               const Sequence& x) {
  return {TestKind::reference, seq_loss(ref_params, x) - seq_loss(params, x),
          mix_seed(model_identity_hash(params), model_identity_hash(ref_params))};
}

/// Logistic squash used wherever Def. 2 needs a nonnegative bounded score.
inline double squash(double s) { return 1.0 / (1.0 + std::exp(-s)); }

inline bool threshold(const MiScore& score, double gamma) {
  return squash(score.value) >= gamma;
}

// ---------------------------------------------------------------- ScoreTable

struct ScoreRow {
  std::string point_id;
  bool label = false;
  double loss = 0.0;
  double mink = 0.0;
  double zlib = 0.0;
  double perturb = 0.0;
  double reference = 0.0;

  double get(TestKind t) const {
    switch (t) {
      case TestKind::loss: return loss;
      case TestKind::mink: return mink;
      case TestKind::zlib: return zlib;
      case TestKind::perturb: return perturb;
      case TestKind::reference: return reference;
    }
    return 0.0;
  }
  void set(TestKind t, double v) {
    switch (t) {
      case TestKind::loss: loss = v; break;
      case TestKind::mink: mink = v; break;
      case TestKind::zlib: zlib = v; break;
      case TestKind::perturb: perturb = v; break;
      case TestKind::reference: reference = v; break;
    }
  }
};

struct ScoreTable {
  std::vector<ScoreRow> rows;
};

struct ScoreConfig {
  double mink_k = 0.2;
  int zlib_level = 6;
  PerturbConfig perturb{};
  std::uint64_t seed = 0;
};

/// Scores every labeled point under all five tests. Rows are computed into
/// preassigned slots, so the result is identical for any job count.
inline ScoreTable score_all(const ModelParams& params, const ModelParams& ref_params,
                            const LabeledEvalSet& eval, const ScoreConfig& cfg, int jobs = 1) {
  ScoreTable table;
  table.rows.resize(eval.points.size());
  parallel_for(eval.points.size(), jobs, [&](std::size_t i) {
    const Sequence& x = eval.points[i];
    ScoreRow& row = table.rows[i];
    row.point_id = "p" + std::to_string(i);
    row.label = eval.member[i] != 0;
    row.loss = score_loss(params, x).value;
    row.mink = score_mink(params, x, cfg.mink_k).value;
    row.zlib = score_zlib(params, x, cfg.zlib_level).value;
    row.perturb = score_perturb(params, x, cfg.perturb, cfg.seed).value;
    row.reference = score_reference(params, ref_params, x).value;
  });
  return table;
}

// ------------------------------------------------------------------- ROC/AUC

enum class TieMode { group_ties };

/// Empirical ROC curve; tied scores are grouped so the trapezoid area equals
/// the Mann-Whitney statistic with half-counted ties.
struct RocCurve {
  std::vector<double> thresholds;  // score threshold entering each point
  std::vector<double> fpr;
  std::vector<double> tpr;
  TieMode tie_mode = TieMode::group_ties;
};

inline RocCurve roc_from_scores(const std::vector<double>& scores,
                                const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size()) {
    throw Error(Errc::size_mismatch, "roc: scores/labels size mismatch");
  }
  std::size_t n_pos = 0;
  for (std::uint8_t l : labels) n_pos += l ? 1 : 0;
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw Error(Errc::degenerate_labels, "roc: needs both classes");
  }

  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });

  RocCurve curve;
  curve.thresholds.push_back(std::numeric_limits<double>::infinity());
  curve.fpr.push_back(0.0);
  curve.tpr.push_back(0.0);
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == s) {
      if (labels[order[j]]) ++tp; else ++fp;
      ++j;
    }
    curve.thresholds.push_back(s);
    curve.fpr.push_back(static_cast<double>(fp) / static_cast<double>(n_neg));
    curve.tpr.push_back(static_cast<double>(tp) / static_cast<double>(n_pos));
    i = j;
  }
  return curve;
}

inline RocCurve roc(const ScoreTable& table, TestKind test) {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  scores.reserve(table.rows.size());
  labels.reserve(table.rows.size());
  for (const ScoreRow& row : table.rows) {
    scores.push_back(row.get(test));
    labels.push_back(row.label ? 1 : 0);
  }
  return roc_from_scores(scores, labels);
}

/// Trapezoid area; equals the Mann-Whitney statistic with ties counted 1/2.
inline double auc(const RocCurve& curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.fpr.size(); ++i) {
    area += (curve.fpr[i] - curve.fpr[i - 1]) * (curve.tpr[i] + curve.tpr[i - 1]) * 0.5;
  }
  return area;
}

/// Conservative step interpolation: the largest observed TPR with FPR <= f.
inline double tpr_at_fpr(const RocCurve& curve, double f) {
  if (f < 0.0 || f > 1.0) throw Error(Errc::bad_param, "tpr_at_fpr: f outside [0,1]");
  double best = 0.0;
  for (std::size_t i = 0; i < curve.fpr.size(); ++i) {
    if (curve.fpr[i] <= f) best = std::max(best, curve.tpr[i]);
  }
  return best;
}

// --------------------------------------------------------------------- I/O

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

/// CSV schema: point_id,label,loss,mink,zlib,perturb,reference.
inline void save_score_table(const std::string& path, const ScoreTable& table,
                             const std::string& header_comment = {}) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_error, "save_score_table: cannot open " + path);
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  out << "point_id,label,loss,mink,zlib,perturb,reference\n";
  for (const ScoreRow& r : table.rows) {
    out << r.point_id << ',' << (r.label ? 1 : 0) << ',' << format_double(r.loss) << ','
        << format_double(r.mink) << ',' << format_double(r.zlib) << ','
        << format_double(r.perturb) << ',' << format_double(r.reference) << '\n';
  }
  if (!out) throw Error(Errc::io_error, "save_score_table: write failed for " + path);
}

inline ScoreTable load_score_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "load_score_table: cannot open " + path);
  ScoreTable table;
  std::string line;
  bool saw_header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!saw_header) {
      if (line.rfind("point_id,", 0) != 0) {
        throw Error(Errc::corrupt_file, "load_score_table: missing column header");
      }
      saw_header = true;
      continue;
    }
    std::istringstream is(line);
    ScoreRow row;
    std::string field;
    std::getline(is, row.point_id, ',');
    std::getline(is, field, ',');
    row.label = field == "1";
    const auto next = [&](double& v) {
      if (!std::getline(is, field, ',')) {
        throw Error(Errc::corrupt_file, "load_score_table: short row");
      }
      v = std::stod(field);
    };
    next(row.loss);
    next(row.mink);
    next(row.zlib);
    next(row.perturb);
    next(row.reference);
    table.rows.push_back(std::move(row));
  }
  return table;
}

/// CSV schema: fpr,tpr (the plotted artifact format).
inline void save_roc(const std::string& path, const RocCurve& curve,
                     const std::string& header_comment = {}) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_error, "save_roc: cannot open " + path);
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  out << "fpr,tpr\n";
  for (std::size_t i = 0; i < curve.fpr.size(); ++i) {
    out << format_double(curve.fpr[i]) << ',' << format_double(curve.tpr[i]) << '\n';
  }
  if (!out) throw Error(Errc::io_error, "save_roc: write failed for " + path);
}

}  // namespace mipl
