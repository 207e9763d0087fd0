// Reductions and statistical tests shared by the estimators.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "pam/rng.hpp"

namespace pam {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// log of the sample mean of exp(log_samples), and the standard error of
/// that mean relative to the mean. Zero samples are encoded as -inf.
struct LogMean {
  double log_mean = kNegInf;
  double rel_std_error = 0.0;
};

inline LogMean log_mean_exp(std::span<const double> log_samples) {
  LogMean out;
  if (log_samples.empty()) return out;
  const double top = *std::max_element(log_samples.begin(), log_samples.end());
  if (top == kNegInf) return out;
  const auto n = static_cast<double>(log_samples.size());
  double sum = 0.0;
  double sum_sq = 0.0;
  for (double l : log_samples) {
    const double w = std::exp(l - top);
    sum += w;
    sum_sq += w * w;
  }
  const double mean = sum / n;
  out.log_mean = top + std::log(mean);
  if (log_samples.size() > 1) {
    const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
    out.rel_std_error = std::sqrt(var / n) / mean;
  }
  return out;
}

struct MeanSe {
  double mean = 0.0;
  double std_error = 0.0;
};

inline MeanSe mean_and_se(std::span<const double> xs) {
  MeanSe out;
  if (xs.empty()) return out;
  const auto n = static_cast<double>(xs.size());
  double sum = 0.0;
  for (double x : xs) sum += x;
  out.mean = sum / n;
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.std_error = std::sqrt(ss / (n - 1.0) / n);
  }
  return out;
}

inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) return std::nan("");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

/// Percentile-bootstrap interval for a statistic of resampled data.
/// `statistic` receives the resampled vector.
template <class Statistic>
std::pair<double, double> bootstrap_interval(std::span<const double> samples,
                                             Statistic&& statistic,
                                             std::size_t resamples,
                                             double level, std::uint64_t seed) {
  if (samples.empty()) return {std::nan(""), std::nan("")};
  RngStream rng(seed, stream_id(0, slot::bootstrap));
  std::vector<double> draw(samples.size());
  std::vector<double> stats;
  stats.reserve(resamples);
  for (std::size_t b = 0; b < resamples; ++b) {
    for (auto& x : draw) x = samples[rng.index(samples.size())];
    stats.push_back(statistic(std::span<const double>(draw)));
  }
  std::sort(stats.begin(), stats.end());
  const double alpha = 0.5 * (1.0 - level);
  return {quantile_sorted(stats, alpha), quantile_sorted(stats, 1.0 - alpha)};
}

inline double chi2_critical(double dof, double level) {
  boost::math::chi_squared dist(dof);
  return boost::math::quantile(boost::math::complement(dist, level));
}

struct Chi2Result {
  double statistic = 0.0;
  double dof = 0.0;
  double critical = 0.0;
  bool passed = false;
};

/// Goodness of fit of integer samples against Poisson(mean). Bins are
/// 0..K-1 plus a tail bin, with K chosen so every expected count is >= 5.
inline Chi2Result chi2_poisson_fit(std::span<const int> samples, double mean,
                                   double level) {
  const auto n = static_cast<double>(samples.size());
  std::vector<double> probs;
  double p = std::exp(-mean);
  double tail = 1.0;
  for (int k = 0;; ++k) {
    if (k > 0) p *= mean / k;
    if (n * p < 5.0 && k > mean) break;
    if (n * (tail - p) < 5.0) break;
    probs.push_back(p);
    tail -= p;
  }
  probs.push_back(tail);
  std::vector<double> counts(probs.size(), 0.0);
  for (int s : samples) {
    const auto bin = std::min<std::size_t>(static_cast<std::size_t>(std::max(s, 0)),
                                           probs.size() - 1);
    counts[bin] += 1.0;
  }
  Chi2Result r;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    const double expected = n * probs[k];
    r.statistic += (counts[k] - expected) * (counts[k] - expected) / expected;
  }
  r.dof = static_cast<double>(probs.size() - 1);
  r.critical = chi2_critical(r.dof, level);
  r.passed = r.statistic <= r.critical;
  return r;
}

/// Two-sample chi-square homogeneity test on paired histograms. Bins where
/// both counts are zero are dropped; sparse bins (combined count < 10) are
/// pooled into one.
inline Chi2Result chi2_two_sample(std::span<const double> a,
                                  std::span<const double> b, double level) {
  if (a.size() != b.size()) throw std::invalid_argument("histogram size mismatch");
  std::vector<std::pair<double, double>> bins;
  std::pair<double, double> pooled{0.0, 0.0};
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] + b[i] == 0.0) continue;
    if (a[i] + b[i] < 10.0) {
      pooled.first += a[i];
      pooled.second += b[i];
    } else {
      bins.emplace_back(a[i], b[i]);
    }
  }
  if (pooled.first + pooled.second > 0.0) bins.push_back(pooled);
  double na = 0.0, nb = 0.0;
  for (auto [x, y] : bins) {
    na += x;
    nb += y;
  }
  Chi2Result r;
  const double n = na + nb;
  for (auto [x, y] : bins) {
    const double col = x + y;
    const double ea = na * col / n;
    const double eb = nb * col / n;
    r.statistic += (x - ea) * (x - ea) / ea + (y - eb) * (y - eb) / eb;
  }
  r.dof = static_cast<double>(bins.size() > 1 ? bins.size() - 1 : 1);
  r.critical = chi2_critical(r.dof, level);
  r.passed = r.statistic <= r.critical;
  return r;
}

}  // namespace pam
