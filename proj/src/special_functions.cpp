#include "nbfa/special_functions.hpp"

#include "nbfa/errors.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace nbfa {

double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw DomainError("digamma: argument must be positive and finite, got " + std::to_string(x));
  }
  double result = 0.0;
  while (x < 6.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Bernoulli terms B_{2k} / (2k) for k = 1..7
  const double series =
      inv2 * (1.0 / 12 -
              inv2 * (1.0 / 120 -
                      inv2 * (1.0 / 252 -
                              inv2 * (1.0 / 240 -
                                      inv2 * (1.0 / 132 -
                                              inv2 * (691.0 / 32760 - inv2 * (1.0 / 12)))))));
  return result + std::log(x) - 0.5 * inv - series;
}

double log_gamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw DomainError("log_gamma: argument must be positive and finite, got " + std::to_string(x));
  }
  return std::lgamma(x);
}

double log_add_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

StirlingTable::StirlingTable(int max_n) : max_n_(max_n) {
  if (max_n < 0) throw DomainError("StirlingTable: max_n must be nonnegative");
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  entries_.assign(offset(max_n + 1), neg_inf);
  entries_[0] = 0.0; // |s(0,0)| = 1
  for (int n = 0; n < max_n; ++n) {
    const double log_n = n > 0 ? std::log(static_cast<double>(n)) : neg_inf;
    const double *row = &entries_[offset(n)];
    double *next = &entries_[offset(n + 1)];
    for (int l = 0; l <= n + 1; ++l) {
      const double stay = (l <= n && n > 0) ? log_n + row[l] : neg_inf;
      const double grow = l >= 1 ? row[l - 1] : neg_inf;
      next[l] = log_add_exp(stay, grow);
    }
  }
}

double StirlingTable::log_abs(int n, int l) const {
  if (n < 0 || n > max_n_ || l < 0 || l > n) {
    throw DomainError("StirlingTable: (n=" + std::to_string(n) + ", l=" + std::to_string(l) +
                      ") outside table with max_n=" + std::to_string(max_n_));
  }
  return entries_[offset(n) + l];
}

} // namespace nbfa
