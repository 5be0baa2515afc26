#pragma once

#include "nbfa/corpus.hpp"
#include "nbfa/model.hpp"
#include "nbfa/samplers.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <span>
#include <vector>

namespace nbfa {

/// One posterior sample of factors and scores over K+ + K_star slots
/// (all slots under fixed truncation). Active slots use their count
/// conditionals; reserve slots carry zero counts and the reserve weight
/// gamma0 / K_star (NBFA, DCMLDA) or r_star / K_star (PFA).
PosteriorDraw posterior_draw(const ModelState &state, RngStream &rng);

/// Running sums for heldout perplexity. Numerators are kept per test cell and
/// normalizers per sample; per-sample draws are not stored.
class PerplexityAccumulator {
public:
  PerplexityAccumulator(SparseCountMatrix train, SparseCountMatrix test);

  /// Adds sum_s lambda_vj for every test cell and sum_v lambda_vj for every sample.
  void accumulate(const PosteriorDraw &draw);
  /// Low-level form: rates for the test cells of sample j (in test-matrix cell
  /// order) and that sample's normalizer, for one draw. Call finish_draw() after
  /// all samples of the draw are added.
  void add(int j, std::span<const double> test_rates, double normalizer);
  void finish_draw() { ++draws_; }

  int draws() const { return draws_; }
  const SparseCountMatrix &train() const { return train_; }
  const SparseCountMatrix &test() const { return test_; }
  std::span<const double> numerators() const { return numer_; }
  std::span<const double> normalizers() const { return norm_; }

private:
  SparseCountMatrix train_;
  SparseCountMatrix test_;
  std::vector<int> train_count_; ///< training n_vj aligned with test cells
  std::vector<double> numer_;
  std::vector<double> norm_;
  int draws_ = 0;
};

void accumulate(PerplexityAccumulator &acc, const PosteriorDraw &draw);

/// exp(-(1/m..) sum_vj m_vj ln(sum_s lambda_vj / sum_s sum_v' lambda_v'j)).
/// Throws NumericError for an empty accumulator or a zero normalizer.
double perplexity(const PerplexityAccumulator &acc);

struct TrainResult {
  ChainResult chain;
  /// Present only when a heldout split was made.
  std::optional<double> perplexity;
  int S = 0;
  /// Mean K+ over post-burn-in iterations.
  double K_active_mean = 0.0;
  double wall_minutes = 0.0;
};

/// Splits `counts` when train_fraction < 1, runs the chain on the training
/// part and accumulates heldout perplexity at every collection event.
TrainResult train_and_evaluate(const ChainConfig &config, const SparseCountMatrix &counts,
                               double train_fraction, std::uint64_t split_seed);

/// Posterior-mean usage proportions, one row per sample.
struct FeatureMatrix {
  int K = 0;
  std::vector<std::vector<double>> rows; ///< [j][k]
};

struct FeatureConfig {
  int iterations = 1000;
  int collect_last = 500;
  std::uint64_t seed = 1;
};

/// Freezes r_k and the posterior-mean factors of the active atoms of a trained
/// NBFA or PFA state and runs an independent blocked chain per sample of
/// `docs`, averaging theta_j / theta_.j over the last `collect_last` iterations.
/// Throws CapabilityError for DCMLDA, ConfigError on a vocabulary mismatch.
FeatureMatrix extract_features(const ModelState &trained, const SparseCountMatrix &docs,
                               const FeatureConfig &config);

/// Dense CSV, one row per sample, header f1..fK.
void write_features_csv(const FeatureMatrix &features, std::ostream &out);

struct DiagnosticsReport {
  std::vector<long> iteration;
  std::vector<int> K_active;
  std::vector<double> K_moving_average;
  std::vector<long> assign_ops;
  std::vector<double> wall_ms;
  double K_mean = 0.0;
  double K_variance = 0.0;
  double ops_mean = 0.0;
  double wall_ms_mean = 0.0;
};

/// Summaries of a K+ trace; the moving average uses a trailing window.
DiagnosticsReport diagnostics(const ChainTrace &trace, int window = 50);
void write_diagnostics_csv(const DiagnosticsReport &report, std::ostream &out);

struct LabeledTrace {
  std::string label;
  const ChainTrace *trace;
};

/// Static SVG line plot of K+ against iteration, one series per trace.
void write_k_plot_svg(std::span<const LabeledTrace> traces, std::ostream &out);

} // namespace nbfa
