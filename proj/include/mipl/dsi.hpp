#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mipl/errors.hpp"
#include "mipl/mitests.hpp"
#include "mipl/stats.hpp"

namespace mipl {

/// Linear ensemble over the five MI scores, fitted by OLS of the 0/1 label on
/// z-normalized columns. The normalization constants ride along so the
/// aggregate is applied consistently to held-out tables.
struct EnsembleWeights {
  std::vector<double> weights;  // one per test, order of all_tests()
  double intercept = 0.0;
  std::vector<double> col_mean, col_std;
  bool fallback_univariate = false;  // rank-deficient design detected
  std::string fitting_split;
};

namespace detail {

/// Gaussian elimination with partial pivoting; returns false when the system
/// is numerically singular.
inline bool solve_linear(std::vector<std::vector<double>> a, std::vector<double> b,
                         std::vector<double>& out) {
  const std::size_t n = a.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    }
    if (std::abs(a[pivot][col]) < 1e-9) return false;
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = b[i] / a[i][i];
  return true;
}

}  // namespace detail

inline EnsembleWeights fit_ensemble(const ScoreTable& train_table,
                                    const std::string& fitting_split = "fit") {
  const std::size_t n = train_table.rows.size();
  const std::vector<TestKind>& tests = all_tests();
  const std::size_t k = tests.size();
  bool has0 = false, has1 = false;
  for (const ScoreRow& r : train_table.rows) (r.label ? has1 : has0) = true;
  if (!has0 || !has1) {
    throw Error(Errc::degenerate_labels, "fit_ensemble: both labels must be present");
  }

  EnsembleWeights w;
  w.fitting_split = fitting_split;
  w.col_mean.assign(k, 0.0);
  w.col_std.assign(k, 1.0);
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = train_table.rows[i].get(tests[j]);
    const SampleStats s = sample_stats(col);
    w.col_mean[j] = s.mean;
    w.col_std[j] = s.var > 1e-18 ? std::sqrt(s.var) : 1.0;
  }

  // z-normalized design with intercept; normal equations (X^T X) beta = X^T y
  const std::size_t dim = k + 1;
  std::vector<std::vector<double>> xtx(dim, std::vector<double>(dim, 0.0));
  std::vector<double> xty(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(dim, 1.0);  // row[k] = intercept column
    for (std::size_t j = 0; j < k; ++j) {
      row[j] = (train_table.rows[i].get(tests[j]) - w.col_mean[j]) / w.col_std[j];
    }
    const double y = train_table.rows[i].label ? 1.0 : 0.0;
    for (std::size_t a = 0; a < dim; ++a) {
      for (std::size_t b = 0; b < dim; ++b) xtx[a][b] += row[a] * row[b];
      xty[a] += row[a] * y;
    }
  }

  std::vector<double> beta;
  if (detail::solve_linear(xtx, xty, beta)) {
    w.weights.assign(beta.begin(), beta.begin() + k);
    w.intercept = beta[k];
    return w;
  }

  // rank-deficient design: per-column univariate slopes, flagged
  w.fallback_univariate = true;
  w.weights.assign(k, 0.0);
  double label_mean = 0.0;
  for (const ScoreRow& r : train_table.rows) label_mean += r.label ? 1.0 : 0.0;
  label_mean /= static_cast<double>(n);
  for (std::size_t j = 0; j < k; ++j) {
    double cov = 0.0, var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = (train_table.rows[i].get(tests[j]) - w.col_mean[j]) / w.col_std[j];
      const double y = (train_table.rows[i].label ? 1.0 : 0.0) - label_mean;
      cov += z * y;
      var += z * z;
    }
    w.weights[j] = var > 1e-18 ? cov / var : 0.0;
  }
  w.intercept = label_mean;
  return w;
}

inline double ensemble_aggregate(const EnsembleWeights& w, const ScoreRow& row) {
  const std::vector<TestKind>& tests = all_tests();
  double acc = w.intercept;
  for (std::size_t j = 0; j < tests.size(); ++j) {
    acc += w.weights[j] * (row.get(tests[j]) - w.col_mean[j]) / w.col_std[j];
  }
  return acc;
}

/// Dataset-inference verdict: Welch one-sided t-test of the suspect set's
/// aggregates against a reference set of known non-members.
struct DsiResult {
  double suspect_mean = 0.0;
  double reference_mean = 0.0;
  double t_statistic = 0.0;
  double p_value = 0.0;  // one-sided, "suspects score higher" direction
  std::size_t n_suspect = 0;
  std::size_t n_reference = 0;
};

inline DsiResult dsi_test(const EnsembleWeights& weights, const ScoreTable& suspect,
                          const ScoreTable& reference) {
  if (suspect.rows.size() < 2 || reference.rows.size() < 2) {
    throw Error(Errc::insufficient_data, "dsi_test: need at least 2 points per side");
  }
  std::vector<double> s, r;
  s.reserve(suspect.rows.size());
  r.reserve(reference.rows.size());
  for (const ScoreRow& row : suspect.rows) s.push_back(ensemble_aggregate(weights, row));
  for (const ScoreRow& row : reference.rows) r.push_back(ensemble_aggregate(weights, row));

  const WelchResult w = welch_t_test(s, r);
  DsiResult out;
  out.suspect_mean = sample_stats(s).mean;
  out.reference_mean = sample_stats(r).mean;
  out.t_statistic = w.t;
  out.p_value = w.p_one_sided;
  out.n_suspect = s.size();
  out.n_reference = r.size();
  return out;
}

/// Point-id disjointness audit between the fitting split and an evaluated set.
inline void check_disjoint(const ScoreTable& fit, const ScoreTable& eval_set) {
  for (const ScoreRow& a : fit.rows) {
    for (const ScoreRow& b : eval_set.rows) {
      if (a.point_id == b.point_id) {
        throw Error(Errc::protocol_violation,
                    "dsi: fitting split overlaps the evaluated set at " + a.point_id);
      }
    }
  }
}

}  // namespace mipl
