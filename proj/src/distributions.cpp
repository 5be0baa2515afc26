#include "nbfa/distributions.hpp"

#include "nbfa/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

namespace nbfa {
namespace {

void require_positive(double value, const char *what) {
  if (!(value > 0.0) || !std::isfinite(value)) {
    throw ParameterError(std::string(what) + " must be positive and finite, got " +
                         std::to_string(value));
  }
}

void require_open_unit(double p, const char *what) {
  if (!(p > 0.0 && p < 1.0)) {
    throw ParameterError(std::string(what) + " must lie in (0, 1), got " + std::to_string(p));
  }
}

double standard_normal(RngStream &rng) { return std::normal_distribution<double>{}(rng); }

// Marsaglia-Tsang, shape >= 1, unit scale.
double gamma_mt(double shape, RngStream &rng) {
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x;
    double v;
    do {
      x = standard_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform_open();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

} // namespace

double sample_log_gamma(double shape, RngStream &rng) {
  require_positive(shape, "gamma shape");
  if (shape >= 1.0) return std::log(gamma_mt(shape, rng));
  const double boosted = gamma_mt(shape + 1.0, rng);
  return std::log(boosted) + std::log(rng.uniform_open()) / shape;
}

double sample_gamma(double shape, double scale, RngStream &rng) {
  require_positive(shape, "gamma shape");
  require_positive(scale, "gamma scale");
  double x;
  if (shape >= 1.0) {
    x = gamma_mt(shape, rng) * scale;
  } else {
    x = std::exp(sample_log_gamma(shape, rng) + std::log(scale));
  }
  return std::max(x, std::numeric_limits<double>::denorm_min());
}

double sample_beta(double a, double b, RngStream &rng) {
  require_positive(a, "beta a");
  require_positive(b, "beta b");
  const double log_x = sample_log_gamma(a, rng);
  const double log_y = sample_log_gamma(b, rng);
  // x / (x + y) = 1 / (1 + exp(log_y - log_x))
  const double diff = log_y - log_x;
  if (diff > 0) {
    const double e = std::exp(-diff);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(diff));
}

long sample_poisson(double mean, RngStream &rng) {
  if (!(mean >= 0.0) || !std::isfinite(mean)) {
    throw ParameterError("poisson mean must be nonnegative and finite, got " +
                         std::to_string(mean));
  }
  if (mean == 0.0) return 0;
  return std::poisson_distribution<long>(mean)(rng);
}

long sample_negative_binomial(double r, double p, RngStream &rng) {
  require_positive(r, "negative binomial r");
  require_open_unit(p, "negative binomial p");
  return sample_poisson(sample_gamma(r, p / (1.0 - p), rng), rng);
}

double nb_log_pmf(long n, double r, double p) {
  require_positive(r, "negative binomial r");
  require_open_unit(p, "negative binomial p");
  if (n < 0) return -std::numeric_limits<double>::infinity();
  const double dn = static_cast<double>(n);
  return std::lgamma(dn + r) - std::lgamma(r) - std::lgamma(dn + 1.0) + dn * std::log(p) +
         r * std::log1p(-p);
}

int sample_crt(int n, double r, RngStream &rng) {
  require_positive(r, "CRT concentration r");
  if (n < 0) throw ParameterError("CRT count n must be nonnegative");
  if (n == 0) return 0;
  int tables = 1;
  for (int i = 1; i < n; ++i) {
    if (rng.uniform() * (r + i) < r) ++tables;
  }
  return tables;
}

double crt_log_pmf(int l, int n, double r, const StirlingTable &table) {
  require_positive(r, "CRT concentration r");
  if (n < 0 || l < 0 || l > n || n > table.max_n()) {
    throw DomainError("crt_log_pmf: need 0 <= l <= n <= max_n, got l=" + std::to_string(l) +
                      ", n=" + std::to_string(n));
  }
  return std::lgamma(r) + l * std::log(r) - std::lgamma(n + r) + table.log_abs(n, l);
}

int sample_logarithmic(double p, RngStream &rng) {
  require_open_unit(p, "logarithmic p");
  const double log_q = std::log1p(-p);
  if (p > 0.95) {
    // Kemp's LK algorithm.
    for (;;) {
      const double v = rng.uniform_open();
      if (v >= p) return 1;
      const double q = -std::expm1(log_q * rng.uniform_open());
      if (v <= q * q) {
        const double k = std::floor(1.0 + std::log(v) / std::log(q));
        if (k < 1.0 || !(k < static_cast<double>(std::numeric_limits<int>::max()))) continue;
        return static_cast<int>(k);
      }
      return v >= q ? 1 : 2;
    }
  }
  // Sequential inversion; restarts if rounding leaves residual mass unclaimed.
  for (;;) {
    double u = rng.uniform();
    double prob = p / -log_q;
    int k = 1;
    while (u > prob && prob > 1e-300) {
      u -= prob;
      prob *= p * k / (k + 1.0);
      ++k;
    }
    if (u <= prob) return k;
  }
}

long sample_sumlog(int l, double p, RngStream &rng) {
  require_open_unit(p, "logarithmic p");
  if (l < 0) throw ParameterError("sumlog count must be nonnegative");
  long total = 0;
  for (int t = 0; t < l; ++t) total += sample_logarithmic(p, rng);
  return total;
}

double sumlog_log_pmf(int n, int l, double p, const StirlingTable &table) {
  require_open_unit(p, "logarithmic p");
  if (l < 0 || n < l || n > table.max_n()) return -std::numeric_limits<double>::infinity();
  return n * std::log(p) + std::lgamma(l + 1.0) + table.log_abs(n, l) - std::lgamma(n + 1.0) -
         l * std::log(-std::log1p(-p));
}

void sample_dirichlet(std::span<const double> concentrations, std::span<double> out,
                      RngStream &rng) {
  if (concentrations.size() != out.size()) {
    throw ParameterError("dirichlet: output size does not match concentration size");
  }
  if (concentrations.empty()) return;
  double max_log = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < concentrations.size(); ++i) {
    require_positive(concentrations[i], "dirichlet concentration");
    out[i] = sample_log_gamma(concentrations[i], rng);
    max_log = std::max(max_log, out[i]);
  }
  double total = 0.0;
  for (double &x : out) {
    x = std::exp(x - max_log);
    total += x;
  }
  for (double &x : out) x /= total;
}

std::vector<double> sample_dirichlet(std::span<const double> concentrations, RngStream &rng) {
  std::vector<double> out(concentrations.size());
  sample_dirichlet(concentrations, out, rng);
  return out;
}

void sample_symmetric_dirichlet(double eta, std::span<double> out, RngStream &rng) {
  require_positive(eta, "dirichlet concentration");
  double max_log = -std::numeric_limits<double>::infinity();
  for (double &x : out) {
    x = sample_log_gamma(eta, rng);
    max_log = std::max(max_log, x);
  }
  double total = 0.0;
  for (double &x : out) {
    x = std::exp(x - max_log);
    total += x;
  }
  for (double &x : out) x /= total;
}

std::vector<int> sample_multinomial(int n, std::span<const double> probs, RngStream &rng) {
  if (n < 0) throw ParameterError("multinomial: n must be nonnegative");
  double sum = 0.0;
  for (double q : probs) {
    if (!(q >= 0.0)) throw ParameterError("multinomial: negative or NaN probability");
    sum += q;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ParameterError("multinomial: probabilities sum to " + std::to_string(sum));
  }
  std::vector<int> counts(probs.size(), 0);
  int remaining = n;
  double mass_left = 1.0;
  for (std::size_t i = 0; i + 1 < probs.size() && remaining > 0; ++i) {
    const double cond = mass_left > 0.0 ? std::clamp(probs[i] / mass_left, 0.0, 1.0) : 0.0;
    int draw = 0;
    if (cond >= 1.0) {
      draw = remaining;
    } else if (cond > 0.0) {
      draw = std::binomial_distribution<int>(remaining, cond)(rng);
    }
    counts[i] = draw;
    remaining -= draw;
    mass_left -= probs[i];
  }
  if (!probs.empty()) counts.back() += remaining;
  return counts;
}

std::size_t sample_categorical(std::span<const double> weights, double total, RngStream &rng) {
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    u -= weights[i];
    if (u < 0.0) return i;
  }
  // Rounding: return the last index with positive weight.
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return i;
  }
  throw ParameterError("categorical: all weights are zero");
}

std::vector<int> sample_crp_partition_counts(int n, double r, RngStream &rng) {
  require_positive(r, "CRP concentration r");
  if (n < 0) throw ParameterError("CRP: n must be nonnegative");
  std::vector<int> tables;
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform() * (r + i);
    if (u < r) {
      tables.push_back(1);
      continue;
    }
    u -= r;
    std::size_t t = 0;
    for (; t + 1 < tables.size(); ++t) {
      u -= tables[t];
      if (u < 0.0) break;
    }
    ++tables[t];
  }
  return tables;
}

} // namespace nbfa
