#ifndef SUPDRIVE_STATS_HPP_
#define SUPDRIVE_STATS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "supdrive/common.hpp"

namespace supdrive::stats {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

inline double mean(const std::vector<double>& x) {
  if (x.empty()) return kNaN;
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

inline double variance(const std::vector<double>& x) {
  if (x.size() < 2) return kNaN;
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

struct TTest {
  double t = 0.0;
  double df = 0.0;
  double p_greater = 1.0;  // H1: mean(a) > mean(b)
  double p_two_sided = 1.0;
};

// Welch's unequal-variance t-test.
inline TTest welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) throw DegenerateInput("t-test needs >= 2 samples per group");
  const double va = variance(a) / a.size();
  const double vb = variance(b) / b.size();
  TTest r;
  const double se = std::sqrt(va + vb);
  const double diff = mean(a) - mean(b);
  if (se == 0.0) {
    r.t = diff > 0 ? INFINITY : (diff < 0 ? -INFINITY : 0.0);
    r.df = static_cast<double>(a.size() + b.size() - 2);
    r.p_greater = diff > 0 ? 0.0 : (diff < 0 ? 1.0 : 0.5);
    r.p_two_sided = diff != 0 ? 0.0 : 1.0;
    return r;
  }
  r.t = diff / se;
  r.df = (va + vb) * (va + vb) /
         (va * va / (a.size() - 1.0) + vb * vb / (b.size() - 1.0));
  boost::math::students_t dist(r.df);
  r.p_greater = boost::math::cdf(boost::math::complement(dist, r.t));
  r.p_two_sided = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

// Paired one-sample t-test on a - b; p for H1: mean(a - b) > 0.
inline TTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw DegenerateInput("paired t-test needs equal-length samples of size >= 2");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  TTest r;
  r.df = static_cast<double>(d.size() - 1);
  const double se = std::sqrt(variance(d) / d.size());
  const double m = mean(d);
  if (se == 0.0) {
    r.t = m > 0 ? INFINITY : (m < 0 ? -INFINITY : 0.0);
    r.p_greater = m > 0 ? 0.0 : (m < 0 ? 1.0 : 0.5);
    r.p_two_sided = m != 0 ? 0.0 : 1.0;
    return r;
  }
  r.t = m / se;
  boost::math::students_t dist(r.df);
  r.p_greater = boost::math::cdf(boost::math::complement(dist, r.t));
  r.p_two_sided = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

struct ChiSquare {
  double statistic = 0.0;
  double df = 0.0;
  double p = 1.0;
};

// Goodness of fit of counts against the uniform distribution.
inline ChiSquare chi_square_uniform(const std::vector<long>& counts) {
  if (counts.size() < 2) throw DegenerateInput("chi-square needs >= 2 categories");
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  if (total <= 0) throw DegenerateInput("chi-square needs a positive total");
  const double expected = total / counts.size();
  ChiSquare r;
  for (long c : counts) r.statistic += (c - expected) * (c - expected) / expected;
  r.df = static_cast<double>(counts.size() - 1);
  r.p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(r.df), r.statistic));
  return r;
}

inline std::vector<double> ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = (i + j) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DegenerateInput("correlation needs paired data");
  const double mx = mean(x), my = mean(y);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return kNaN;
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(ranks(x), ranks(y));
}

// Half-width of the 95% percentile bootstrap interval of the mean.
inline double bootstrap_ci95(const std::vector<double>& x, int resamples, std::uint64_t seed) {
  if (x.empty()) return kNaN;
  if (x.size() == 1) return 0.0;
  Rng rng(seed);
  std::vector<double> means(resamples);
  const int n = static_cast<int>(x.size());
  for (int r = 0; r < resamples; ++r) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += x[rng.uniform_int(0, n - 1)];
    means[r] = s / n;
  }
  std::sort(means.begin(), means.end());
  auto q = [&](double p) {
    const double pos = p * (resamples - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, means.size() - 1);
    return means[lo] + (pos - lo) * (means[hi] - means[lo]);
  };
  return std::max(0.0, (q(0.975) - q(0.025)) / 2.0);
}

struct Fit {
  double r2 = kNaN;  // NaN when the reference has zero variance
  double rmse = 0.0;
  bool r2_defined = false;
};

inline Fit fit(const std::vector<double>& model, const std::vector<double>& reference) {
  if (model.size() != reference.size() || model.size() < 2)
    throw DegenerateInput("fit statistics need equal-length vectors of size >= 2");
  const double m = mean(reference);
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < model.size(); ++i) {
    ss_res += (reference[i] - model[i]) * (reference[i] - model[i]);
    ss_tot += (reference[i] - m) * (reference[i] - m);
  }
  Fit f;
  f.rmse = std::sqrt(ss_res / model.size());
  if (ss_tot > 0) {
    f.r2 = 1.0 - ss_res / ss_tot;
    f.r2_defined = true;
  }
  return f;
}

// Ordinary least-squares slope of y on x.
inline double ols_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DegenerateInput("slope needs paired data");
  const double mx = mean(x), my = mean(y);
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0) throw DegenerateInput("slope with constant x");
  return sxy / sxx;
}

}  // namespace supdrive::stats

#endif  // SUPDRIVE_STATS_HPP_
