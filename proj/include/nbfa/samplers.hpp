#pragma once

#include "nbfa/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <vector>

namespace nbfa {

struct StepStats {
  /// Assignment operations: K per token for the regular blocked sweep,
  /// n_vj + l_vj per cell for cp-blocked, option count per token for collapsed.
  long assign_ops = 0;
};

// Conditional updates shared by the samplers. Each draws from the exact full
// (or partially collapsed) conditional given the rest of `state`, so any one
// of them applied repeatedly with everything else frozen leaves that
// conditional invariant.

/// n_j from the training cells.
std::vector<long> doc_lengths(const ModelState &state);

/// NBFA: Beta(a0 + n_j, b0 + theta_.j); PFA and DCMLDA: Beta(a0 + n_j, b0 + G(Omega)).
/// Results are clamped to [1e-12, 1 - 1e-12].
void update_p(ModelState &state, const std::vector<long> &n_j, RngStream &rng);
/// c_j ~ Gamma(e0 + G(Omega), 1 / (f0 + theta_.j)). NBFA only.
void update_c(ModelState &state, RngStream &rng);
/// Second-layer table counts summed over samples: CRT(l_.jk, r_k) (NBFA),
/// CRT(n_jk, r_k) (PFA), l_..k (DCMLDA).
void update_tilde_counts(ModelState &state, RngStream &rng);
/// c0 ~ Gamma(e0 + gamma0, 1 / (f0 + G(Omega))).
void update_c0(ModelState &state, RngStream &rng);
/// gamma0 with the atom weights integrated out: Gamma(a0 + K+, 1 / (b0 + ln(1 + q / c0)))
/// under adaptive truncation; under fixed truncation the K+ count is replaced by
/// CRT(tilde_k, gamma0 / K) auxiliaries.
void update_gamma0(ModelState &state, RngStream &rng);
/// Active r_k ~ Gamma(tilde_k, 1 / (c0 + q)) (shape gets + gamma0 / K under fixed
/// truncation); collapsed adaptive samplers also redraw r_star ~ Gamma(gamma0, ...).
void update_r(ModelState &state, RngStream &rng);
/// phi_k ~ Dir(eta + counts) for active factors (all factors when fixed).
void update_phi(ModelState &state, RngStream &rng);
/// theta_kj ~ Gamma(r_k + l_.jk, 1 / (c_j - ln(1 - p_j))). NBFA blocked modes.
void update_theta(ModelState &state, RngStream &rng);
/// Data-augmented eta update over active factors: q_k ~ Beta(l_..k, V eta),
/// t_vk ~ CRT(l_v.k, eta), eta ~ Gamma(a0 + sum t, 1 / (b0 - V sum ln(1 - q_k))).
/// Draws from the Gamma(a0, 1/b0) prior when no factor is active.
void sample_eta(ModelState &state, RngStream &rng);

/// Regular blocked sweep plus the shared updates and truncation refresh.
StepStats blocked_step(ModelState &state, RngStream &rng);
/// Compound-Poisson blocked sweep: per cell l_vj ~ CRT(n_vj, sum_k phi_vk theta_kj)
/// split multinomially over factors; no token labels are kept.
StepStats cp_blocked_step(ModelState &state, RngStream &rng);
/// Collapsed NBFA sweep with joint (z, b) draws and new-factor stick breaking.
StepStats collapsed_step(ModelState &state, RngStream &rng);
StepStats pfa_collapsed_step(ModelState &state, RngStream &rng);
StepStats dcmlda_collapsed_step(ModelState &state, RngStream &rng);
/// Dispatch on state.model and state.sampler.
StepStats step(ModelState &state, RngStream &rng);

/// Assignment sweep only, with every global quantity frozen. Exposed for tests
/// that check the sweep against its exact target.
StepStats collapsed_sweep(ModelState &state, RngStream &rng);

/// Moves one token of a collapsed state out of its table, or back into a given
/// (factor, table) slot. Table ids stay dense within (cell, factor).
void collapsed_remove_token(ModelState &state, std::size_t cell, long token);
void collapsed_add_token(ModelState &state, std::size_t cell, long token, int k, int table);

/// Diagnostic log-joint surrogate: sum_j log NB(n_j; theta_.j or G(Omega), p_j)
/// plus the Dirichlet-multinomial log marginal of each factor's covariate counts.
double log_joint_surrogate(const ModelState &state);

struct ChainConfig {
  ModelKind model = ModelKind::nbfa;
  SamplerKind sampler = SamplerKind::cp_blocked;
  int iterations = 5000;
  int burn_in = 2500;
  int collect_every = 5;
  int K_init = 400;
  int K_star = 20;
  Truncation truncation = Truncation::adaptive;
  std::uint64_t seed = 1;
  Hyperparams hyper;
  /// Evaluate the log-joint surrogate each iteration (outside the timed region).
  bool trace_log_joint = true;
  /// Write a checkpoint every this many iterations into checkpoint_dir (0: off).
  int checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;

  /// Throws ConfigError for an unsupported model/sampler pair or bad schedule.
  void validate() const;
  /// True when iteration `it` (1-based) is a collection event.
  bool collects(long it) const;
};

struct TraceRecord {
  long iteration = 0;
  int K_active = 0;
  double log_joint = 0.0;
  double wall_ms = 0.0;
  long assign_ops = 0;
};

struct ChainTrace {
  std::vector<TraceRecord> records;
};

/// Called at each collection event with the current state.
using CollectHook = std::function<void(const ModelState &state, long iteration)>;

struct ChainResult {
  ChainTrace trace;
  ModelState state;
  long collected = 0;
};

/// Validates, initializes from the seed and runs the configured schedule.
ChainResult run_chain(const ChainConfig &config, const SparseCountMatrix &train,
                      const CollectHook &collect = {});
/// Continues an existing state up to config.iterations total iterations.
ChainResult resume_chain(const ChainConfig &config, ModelState state,
                         const CollectHook &collect = {});

/// Trace CSV: iteration,K_active,log_joint_surrogate,wall_ms,assign_ops.
void write_trace_csv(const ChainTrace &trace, std::ostream &out);
ChainTrace read_trace_csv(std::istream &in);

} // namespace nbfa
