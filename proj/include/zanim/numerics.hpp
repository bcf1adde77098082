#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/polygamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

namespace zanim {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kTiny = 1e-300;

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double log_norm_cdf(double x) {
  if (x > -30.0) return std::log(norm_cdf(x));
  // Asymptotic series for the far lower tail, where erfc underflows.
  const double x2 = x * x;
  return -0.5 * x2 - std::log(-x) - 0.5 * std::log(2.0 * std::numbers::pi) +
         std::log1p(-1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2));
}

inline double norm_quantile(double p) {
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

inline double log_add_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

inline double log_sum_exp(std::span<const double> v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  if (m == std::numeric_limits<double>::infinity()) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline double digamma(double x) { return boost::math::digamma(x); }
inline double trigamma(double x) { return boost::math::trigamma(x); }
inline double tetragamma(double x) { return boost::math::polygamma(2, x); }

// Welford running mean/variance. Identical inputs give the input back exactly.
struct RunningMoments {
  long count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void push(double x) {
    ++count;
    const double delta = x - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (x - mean);
  }
  double variance() const { return count > 1 ? m2 / static_cast<double>(count - 1) : 0.0; }
  double std_error() const {
    return count > 1 ? std::sqrt(variance() / static_cast<double>(count)) : 0.0;
  }
};

// Univariate slice sampler with stepping out and shrinkage.
// `lower`/`upper` bound the support; the target must be finite at x0.
template <class LogDensity, class G>
double slice_sample(double x0, LogDensity&& log_density, double width, G& rng,
                    double lower = -std::numeric_limits<double>::infinity(),
                    double upper = std::numeric_limits<double>::infinity(), int max_steps = 64) {
  auto unif = [&rng] { return (static_cast<double>(rng() >> 12) + 0.5) * 0x1.0p-52; };
  const double log_y = log_density(x0) + std::log(unif());
  double l = x0 - width * unif();
  double r = l + width;
  int j = static_cast<int>(std::floor(max_steps * unif()));
  int k = max_steps - 1 - j;
  while (j-- > 0 && l > lower && log_density(l) > log_y) l -= width;
  while (k-- > 0 && r < upper && log_density(r) > log_y) r += width;
  l = std::max(l, lower);
  r = std::min(r, upper);
  for (int it = 0; it < 10000; ++it) {
    const double x1 = l + (r - l) * unif();
    if (x1 > lower && x1 < upper && log_density(x1) > log_y) return x1;
    if (x1 < x0) l = x1; else r = x1;
  }
  return x0;
}

}  // namespace zanim
