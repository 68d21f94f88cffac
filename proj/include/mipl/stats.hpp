#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mipl/errors.hpp"

namespace mipl {

namespace detail {

/// Continued-fraction evaluation of the regularized incomplete beta
/// (modified Lentz method).
inline double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-14;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * detail::betacf(a, b, x) / a;
  }
  return 1.0 - front * detail::betacf(b, a, 1.0 - x) / b;
}

/// Student-t survival function P(T_df > t).
inline double student_t_sf(double t, double df) {
  if (df <= 0.0) throw Error(Errc::bad_param, "student_t_sf: df must be positive");
  const double x = df / (df + t * t);
  const double half_tail = 0.5 * incomplete_beta(0.5 * df, 0.5, x);
  return t >= 0.0 ? half_tail : 1.0 - half_tail;
}

struct SampleStats {
  double mean = 0.0;
  double var = 0.0;  // unbiased
  std::size_t n = 0;
};

inline SampleStats sample_stats(const std::vector<double>& v) {
  SampleStats s;
  s.n = v.size();
  if (s.n == 0) return s;
  for (double e : v) s.mean += e;
  s.mean /= static_cast<double>(s.n);
  if (s.n > 1) {
    for (double e : v) s.var += (e - s.mean) * (e - s.mean);
    s.var /= static_cast<double>(s.n - 1);
  }
  return s;
}

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p_one_sided = 0.0;  // P(mean_a > mean_b) direction
};

/// Welch unequal-variance two-sample t statistic with a one-sided p-value for
/// the hypothesis "sample a exceeds sample b".
inline WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) {
    throw Error(Errc::insufficient_data, "welch_t_test: need at least 2 points per side");
  }
  const SampleStats sa = sample_stats(a);
  const SampleStats sb = sample_stats(b);
  const double va = sa.var / static_cast<double>(sa.n);
  const double vb = sb.var / static_cast<double>(sb.n);
  WelchResult r;
  if (va + vb <= 0.0) {
    // identical constant samples: no evidence either way
    r.t = 0.0;
    r.df = static_cast<double>(sa.n + sb.n - 2);
    r.p_one_sided = 0.5;
    return r;
  }
  r.t = (sa.mean - sb.mean) / std::sqrt(va + vb);
  const double num = (va + vb) * (va + vb);
  const double den = va * va / static_cast<double>(sa.n - 1) +
                     vb * vb / static_cast<double>(sb.n - 1);
  r.df = num / den;
  r.p_one_sided = student_t_sf(r.t, r.df);
  return r;
}

}  // namespace mipl
