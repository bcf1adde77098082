#pragma once

#include <cmath>
#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

namespace zanim {

using Rng = std::mt19937_64;

constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed of the stream for (block, iteration, index). Streams depend only on these
// coordinates, so results do not depend on how work is spread across threads.
constexpr std::uint64_t stream_seed(std::uint64_t master, std::uint64_t block,
                                    std::uint64_t iteration, std::uint64_t index) {
  std::uint64_t h = mix64(master);
  h = mix64(h ^ (block * 0xd1b54a32d192ed03ULL));
  h = mix64(h ^ iteration);
  return mix64(h ^ (index * 0x8cb92ba72f3d8dd7ULL));
}

inline Rng make_stream(std::uint64_t master, std::uint64_t block, std::uint64_t iteration,
                       std::uint64_t index) {
  return Rng(stream_seed(master, block, iteration, index));
}

// Uniform on the open interval (0, 1).
template <class G>
double uniform01(G& g) {
  return (static_cast<double>(g() >> 12) + 0.5) * 0x1.0p-52;
}

template <class G>
double std_normal(G& g) {
  return std::normal_distribution<double>{}(g);
}

template <class G>
bool bernoulli(G& g, double p) {
  return uniform01(g) < p;
}

template <class G>
double exponential(G& g, double rate) {
  return -std::log(uniform01(g)) / rate;
}

// Gamma(shape, rate) with rate parametrization.
template <class G>
double gamma_rate(G& g, double shape, double rate) {
  return std::gamma_distribution<double>(shape, 1.0)(g) / rate;
}

// log of a Gamma(shape, 1) variate; stays finite for tiny shapes where the
// variate itself underflows.
template <class G>
double log_gamma_variate(G& g, double shape) {
  if (shape >= 1.0) return std::log(std::gamma_distribution<double>(shape, 1.0)(g));
  const double x = std::gamma_distribution<double>(shape + 1.0, 1.0)(g);
  return std::log(x) + std::log(uniform01(g)) / shape;
}

template <class G>
double beta_variate(G& g, double a, double b) {
  const double x = std::gamma_distribution<double>(a, 1.0)(g);
  const double y = std::gamma_distribution<double>(b, 1.0)(g);
  return x / (x + y);
}

template <class G>
std::vector<double> dirichlet(G& g, std::span<const double> conc) {
  // Work in logs so small concentrations do not collapse to exact zeros.
  std::vector<double> lx(conc.size());
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < conc.size(); ++k) {
    lx[k] = log_gamma_variate(g, conc[k]);
    m = std::max(m, lx[k]);
  }
  double s = 0.0;
  for (auto& v : lx) s += (v = std::exp(v - m));
  for (auto& v : lx) v /= s;
  return lx;
}

template <class G>
int binomial(G& g, int n, double p) {
  if (n <= 0 || p <= 0.0) return 0;
  if (p >= 1.0) return n;
  return std::binomial_distribution<int>(n, p)(g);
}

// Sequential-binomial multinomial; `probs` need not be normalized.
template <class G>
std::vector<int> multinomial(G& g, int n, std::span<const double> probs) {
  std::vector<int> out(probs.size(), 0);
  double rest = 0.0;
  for (double p : probs) rest += p;
  int left = n;
  for (std::size_t j = 0; j < probs.size() && left > 0; ++j) {
    if (probs[j] <= 0.0) continue;
    const double p = rest > 0.0 ? probs[j] / rest : 1.0;
    out[j] = (j + 1 == probs.size()) ? left : binomial(g, left, std::min(p, 1.0));
    left -= out[j];
    rest -= probs[j];
  }
  if (left > 0) {
    // Rounding left mass unassigned; give it to the last positive category.
    for (std::size_t j = probs.size(); j-- > 0;)
      if (probs[j] > 0.0) { out[j] += left; break; }
  }
  return out;
}

// Standard normal truncated to [a, inf). Naive rejection when a <= 0, otherwise
// exponential rejection with the optimal rate.
template <class G>
double std_normal_above(G& g, double a) {
  if (a <= 0.0) {
    for (;;) {
      const double x = std_normal(g);
      if (x >= a) return x;
    }
  }
  const double lam = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    const double x = a + exponential(g, lam);
    const double d = x - lam;
    if (uniform01(g) <= std::exp(-0.5 * d * d)) return x;
  }
}

// N(mean, 1) restricted to [0, inf).
template <class G>
double normal_positive(G& g, double mean) {
  return mean + std_normal_above(g, -mean);
}

// N(mean, 1) restricted to (-inf, 0].
template <class G>
double normal_negative(G& g, double mean) {
  return mean - std_normal_above(g, mean);
}

}  // namespace zanim
