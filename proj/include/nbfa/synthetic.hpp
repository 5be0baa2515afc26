#pragma once

#include "nbfa/corpus.hpp"
#include "nbfa/rng.hpp"

#include <vector>

namespace nbfa {

/// Generated corpus together with the factors that produced it.
struct SyntheticCorpus {
  SparseCountMatrix counts;
  std::vector<std::vector<double>> phi; ///< [k][v]
};

/// Draws K factors phi_k ~ Dir(factor_eta) over V covariates.
std::vector<std::vector<double>> draw_factors(int V, int K, double factor_eta, RngStream &rng);

/// NBFA ground truth: r_k = 1, c_j = 1, theta_kj ~ Gamma(1, 1) and
/// n_vj ~ NB(sum_k phi_vk theta_kj, p) with p set so that E[n_j] = mean_length.
SyntheticCorpus nbfa_corpus(int V, int J, int K, double mean_length, double factor_eta,
                            RngStream rng);

/// Mixed-membership corpus with n_j ~ Poisson(mean_length) and factor usage
/// pi_j ~ Dir(0.5). Tokens given to factor k are drawn from a sample-specific
/// psi_jk ~ Dir(concentration * V * phi_k), so the mean per-covariate
/// concentration equals `concentration`; small values give bursty samples.
SyntheticCorpus bursty_corpus(int V, int J, int K, double mean_length, double concentration,
                              double factor_eta, RngStream rng);

/// Same construction without the sample-specific layer: tokens are drawn
/// straight from phi_k.
SyntheticCorpus poisson_corpus(int V, int J, int K, double mean_length, double factor_eta,
                               RngStream rng);

/// Dense [j][v] counts to sparse.
SparseCountMatrix from_dense(int V, const std::vector<std::vector<int>> &doc_counts);

} // namespace nbfa
