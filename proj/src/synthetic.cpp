#include "nbfa/synthetic.hpp"

#include "nbfa/distributions.hpp"

#include <algorithm>
#include <numeric>

namespace nbfa {

std::vector<std::vector<double>> draw_factors(int V, int K, double factor_eta, RngStream &rng) {
  std::vector<std::vector<double>> phi(K, std::vector<double>(V));
  for (auto &col : phi) sample_symmetric_dirichlet(factor_eta, col, rng);
  return phi;
}

SparseCountMatrix from_dense(int V, const std::vector<std::vector<int>> &doc_counts) {
  std::vector<std::vector<SparseCountMatrix::Entry>> cols(doc_counts.size());
  for (std::size_t j = 0; j < doc_counts.size(); ++j) {
    for (int v = 0; v < V; ++v) {
      if (doc_counts[j][v] > 0) cols[j].push_back({v, doc_counts[j][v]});
    }
  }
  return SparseCountMatrix(V, cols);
}

SyntheticCorpus nbfa_corpus(int V, int J, int K, double mean_length, double factor_eta,
                            RngStream rng) {
  SyntheticCorpus out;
  out.phi = draw_factors(V, K, factor_eta, rng);
  // E[theta_.j] = K, so p / (1 - p) = mean_length / K.
  const double odds = mean_length / K;
  const double p = odds / (1.0 + odds);
  std::vector<std::vector<int>> docs(J, std::vector<int>(V, 0));
  std::vector<double> theta(K);
  for (int j = 0; j < J; ++j) {
    for (int k = 0; k < K; ++k) theta[k] = sample_gamma(1.0, 1.0, rng);
    for (int v = 0; v < V; ++v) {
      double rate = 0.0;
      for (int k = 0; k < K; ++k) rate += out.phi[k][v] * theta[k];
      if (rate > 0.0) docs[j][v] = static_cast<int>(sample_negative_binomial(rate, p, rng));
    }
  }
  out.counts = from_dense(V, docs);
  return out;
}

namespace {

SyntheticCorpus mixture_corpus(int V, int J, int K, double mean_length, double concentration,
                               double factor_eta, bool bursty, RngStream &rng) {
  SyntheticCorpus out;
  out.phi = draw_factors(V, K, factor_eta, rng);
  std::vector<std::vector<int>> docs(J, std::vector<int>(V, 0));
  std::vector<double> pi(K);
  std::vector<double> conc(V);
  std::vector<double> psi(V);
  for (int j = 0; j < J; ++j) {
    const int n = static_cast<int>(sample_poisson(mean_length, rng));
    sample_symmetric_dirichlet(0.5, pi, rng);
    const auto n_k = sample_multinomial(n, pi, rng);
    for (int k = 0; k < K; ++k) {
      if (n_k[k] == 0) continue;
      if (bursty) {
        for (int v = 0; v < V; ++v) conc[v] = std::max(concentration * V * out.phi[k][v], 1e-300);
        sample_dirichlet(conc, psi, rng);
        const double s = std::accumulate(psi.begin(), psi.end(), 0.0);
        for (double &x : psi) x /= s;
      } else {
        psi = out.phi[k];
        const double s = std::accumulate(psi.begin(), psi.end(), 0.0);
        for (double &x : psi) x /= s;
      }
      const auto words = sample_multinomial(n_k[k], psi, rng);
      for (int v = 0; v < V; ++v) docs[j][v] += words[v];
    }
  }
  out.counts = from_dense(V, docs);
  return out;
}

} // namespace

SyntheticCorpus bursty_corpus(int V, int J, int K, double mean_length, double concentration,
                              double factor_eta, RngStream rng) {
  return mixture_corpus(V, J, K, mean_length, concentration, factor_eta, true, rng);
}

SyntheticCorpus poisson_corpus(int V, int J, int K, double mean_length, double factor_eta,
                               RngStream rng) {
  return mixture_corpus(V, J, K, mean_length, 0.0, factor_eta, false, rng);
}

} // namespace nbfa
