#pragma once

#include "nbfa/rng.hpp"
#include "nbfa/special_functions.hpp"

#include <span>
#include <vector>

namespace nbfa {

// Samplers are pure functions of (parameters, stream) and are safe to call
// concurrently on distinct streams. Invalid parameters throw ParameterError.

/// Gamma(shape, scale), mean shape * scale. Marsaglia-Tsang; shapes below one
/// use the boost X = Y * U^(1/shape), Y ~ Gamma(shape + 1), evaluated in log
/// space. Never returns exactly 0.
double sample_gamma(double shape, double scale, RngStream &rng);

/// log of a Gamma(shape, 1) draw; finite even when the draw underflows.
double sample_log_gamma(double shape, RngStream &rng);

/// Beta(a, b) via two gamma draws combined in log space.
double sample_beta(double a, double b, RngStream &rng);

/// Poisson(mean); mean 0 gives 0.
long sample_poisson(double mean, RngStream &rng);

/// NB(r, p): Poisson with a Gamma(r, p / (1 - p)) rate. Mean r p / (1 - p).
long sample_negative_binomial(double r, double p, RngStream &rng);

/// log NB(n | r, p) = log Gamma(n + r) - log Gamma(r) - log n! + n log p + r log(1 - p).
double nb_log_pmf(long n, double r, double p);

/// Chinese restaurant table count: sum of Bernoulli(r / (r + i - 1)), i = 1..n.
int sample_crt(int n, double r, RngStream &rng);

/// log f_L(l | n, r) = log Gamma(r) + l log r - log Gamma(n + r) + log |s(n, l)|.
double crt_log_pmf(int l, int n, double r, const StirlingTable &table);

/// Logarithmic(p) on {1, 2, ...}: P(u) = p^u / (u * -ln(1 - p)).
int sample_logarithmic(double p, RngStream &rng);

/// Sum of l independent Logarithmic(p) draws.
long sample_sumlog(int l, double p, RngStream &rng);

/// log f_N(n | l, p) = n log p + log l! + log |s(n, l)| - log n! - l log(-ln(1 - p)).
double sumlog_log_pmf(int n, int l, double p, const StirlingTable &table);

/// Dirichlet draw written into `out` (same length as `concentrations`).
void sample_dirichlet(std::span<const double> concentrations, std::span<double> out,
                      RngStream &rng);
std::vector<double> sample_dirichlet(std::span<const double> concentrations, RngStream &rng);

/// Symmetric Dirichlet(eta, ..., eta) of dimension out.size().
void sample_symmetric_dirichlet(double eta, std::span<double> out, RngStream &rng);

/// Multinomial(n, probs); probs must sum to 1 within 1e-9.
std::vector<int> sample_multinomial(int n, std::span<const double> probs, RngStream &rng);

/// Index drawn with probability weights[i] / total. Weights are unnormalized
/// and nonnegative; `total` is their sum.
std::size_t sample_categorical(std::span<const double> weights, double total, RngStream &rng);

/// Table sizes from seating n customers in a CRP with concentration r.
std::vector<int> sample_crp_partition_counts(int n, double r, RngStream &rng);

} // namespace nbfa
