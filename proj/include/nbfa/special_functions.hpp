#pragma once

#include <cstddef>
#include <vector>

namespace nbfa {

/// Digamma function psi(x) for x > 0. Shifts x above 6 with the recurrence
/// psi(x) = psi(x + 1) - 1/x, then applies the asymptotic series.
double digamma(double x);

/// log Gamma(x) for x > 0.
double log_gamma(double x);

/// log(exp(a) + exp(b)) without overflow.
double log_add_exp(double a, double b);

/// Triangular table of log |s(n, l)|, unsigned Stirling numbers of the first
/// kind, for 0 <= l <= n <= max_n. Immutable after construction.
class StirlingTable {
public:
  explicit StirlingTable(int max_n);

  int max_n() const { return max_n_; }

  /// log |s(n, l)|; -inf where |s(n, l)| = 0. Throws DomainError outside the table.
  double log_abs(int n, int l) const;

private:
  static std::size_t offset(int n) { return static_cast<std::size_t>(n) * (n + 1) / 2; }

  int max_n_;
  std::vector<double> entries_;
};

} // namespace nbfa
