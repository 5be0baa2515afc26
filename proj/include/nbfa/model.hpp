#pragma once

#include "nbfa/corpus.hpp"
#include "nbfa/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace nbfa {

enum class ModelKind { pfa, dcmlda, nbfa };
enum class SamplerKind { blocked, collapsed, cp_blocked };
enum class Truncation { adaptive, fixed };

std::string to_string(ModelKind kind);
std::string to_string(SamplerKind kind);
std::string to_string(Truncation kind);
/// Parsers accept the CLI spellings ("pfa", "cp", "cp-blocked", ...) and throw ConfigError.
ModelKind parse_model_kind(const std::string &name);
SamplerKind parse_sampler_kind(const std::string &name);
Truncation parse_truncation(const std::string &name);

/// cp-blocked and blocked apply to NBFA and DCMLDA; collapsed applies to all three.
bool is_supported(ModelKind model, SamplerKind sampler);

struct Hyperparams {
  double a0 = 0.01; ///< Beta(a0, b0) on p_j; Gamma(a0, 1/b0) on gamma0 and eta
  double b0 = 0.01;
  double e0 = 1.0; ///< Gamma(e0, 1/f0) on c_j and c0
  double f0 = 1.0;
  double eta = 0.05; ///< Dirichlet smoothing; current value when sampled
  bool eta_sampled = false;

  void validate() const;

  friend bool operator==(const Hyperparams &, const Hyperparams &) = default;
};

/// Gamma process G = sum_k r_k delta_{phi_k} and its hyperparameters.
struct GlobalMeasureState {
  /// Atom weights over the instantiated slots. Empty for collapsed DCMLDA,
  /// where G is marginalized.
  std::vector<double> r;
  /// Collapsed samplers: total weight of atoms with zero count.
  double r_star = 0.0;
  double gamma0 = 1.0;
  double c0 = 1.0;
  int K_active = 0;
  int K_star = 20;

  double G_total() const;

  friend bool operator==(const GlobalMeasureState &, const GlobalMeasureState &) = default;
};

struct FactorState {
  /// phi[k][v]; each column is a point on the V-simplex. Empty in collapsed mode.
  std::vector<std::vector<double>> phi;

  friend bool operator==(const FactorState &, const FactorState &) = default;
};

struct SampleState {
  /// theta[j][k] (NBFA blocked modes). Empty when marginalized.
  std::vector<std::vector<double>> theta;
  /// theta_{.j}; NBFA only.
  std::vector<double> theta_sum;
  std::vector<double> p;
  /// c_j; NBFA only.
  std::vector<double> c;

  friend bool operator==(const SampleState &, const SampleState &) = default;
};

/// Counts attached to one (covariate, sample, factor) triple.
struct CellFactor {
  int k = 0;
  int n = 0; ///< n_vjk (zero in cp-blocked mode, which never forms it)
  int l = 0; ///< l_vjk, the table count
  /// Collapsed NBFA/DCMLDA: customers per table, dense, size l.
  std::vector<int> tables;

  friend bool operator==(const CellFactor &, const CellFactor &) = default;
};

/// Augmentation layer. `cells` is aligned with the nonzero cells of the
/// training matrix (column-major flat index). Tokens of cell c occupy
/// [token_begin[c], token_begin[c + 1]) of `z` and `b`.
///
/// The factor marginals hold table counts (l) for NBFA and DCMLDA and token
/// counts (n) for PFA, the quantity each model's factor and score updates use.
struct LatentCountState {
  std::vector<int> cell_term;  ///< v of each training cell
  std::vector<int> cell_doc;   ///< j of each training cell
  std::vector<int> cell_count; ///< n_vj
  std::vector<std::vector<CellFactor>> cells;
  std::vector<int> cell_tables; ///< l_vj
  std::vector<long> token_begin;
  std::vector<int> z;
  std::vector<int> b;

  std::vector<std::vector<int>> word_factor; ///< [k][v]
  std::vector<std::vector<int>> doc_factor;  ///< [k][j]
  std::vector<long> factor_total;            ///< [k]
  std::vector<long> tilde_total;             ///< sum_j of second-layer CRT counts, [k]

  int num_factors() const { return static_cast<int>(factor_total.size()); }

  friend bool operator==(const LatentCountState &, const LatentCountState &) = default;
};

struct EtaAuxState {
  std::vector<double> q;                           ///< per active factor
  std::vector<std::vector<std::pair<int, int>>> t; ///< per active factor: (v, t_vk > 0)

  friend bool operator==(const EtaAuxState &, const EtaAuxState &) = default;
};

struct ModelState {
  ModelKind model = ModelKind::nbfa;
  SamplerKind sampler = SamplerKind::cp_blocked;
  Truncation truncation = Truncation::adaptive;
  Hyperparams hyper;
  GlobalMeasureState global;
  FactorState factors;
  SampleState samples;
  LatentCountState latent;
  EtaAuxState eta_aux;
  int num_terms = 0;
  int num_docs = 0;
  std::uint64_t corpus_digest = 0;
  long iteration = 0;
  /// Numeric guards that fired (clamped p_j, floored gamma shapes).
  long clamp_events = 0;
  RngStream rng;

  /// Instantiated factor slots (active plus reserve).
  int num_factors() const { return latent.num_factors(); }

  friend bool operator==(const ModelState &, const ModelState &) = default;
};

/// Draws an initial state. Hyperparameters start at their prior means; atom
/// weights, factors, scores and token assignments are drawn given those.
/// K_init = 0 is allowed only for collapsed samplers (throws ConfigError otherwise).
ModelState init_state(ModelKind model, SamplerKind sampler, Truncation truncation, int K_init,
                      int K_star, const Hyperparams &hyper, const SparseCountMatrix &corpus,
                      RngStream rng);

/// -sum_j ln(1 - p~_j) for NBFA, -sum_j ln(1 - p_j) otherwise: the rate the
/// gamma-process posterior adds to c0.
double gamma_process_log_mass(const ModelState &state);

/// End-of-iteration truncation for blocked samplers: active atoms are moved to
/// slots 0..K+ - 1 (order preserved), inactive ones dropped, and K_star fresh
/// atoms appended with r ~ Gamma(gamma0 / K_star, 1 / (c0 + log mass)),
/// phi ~ Dir(eta) and theta drawn from its zero-count conditional.
void relabel_and_truncate(ModelState &state, RngStream &rng);

/// Moves the atoms listed in `keep` (old slot ids) to slots 0..keep.size()-1,
/// dropping the rest, and re-indexes every per-factor table.
void reorder_factors(ModelState &state, const std::vector<int> &keep);

/// Factors, scores and p_j from one collected sample, used for Poisson rates.
struct PosteriorDraw {
  ModelKind model = ModelKind::nbfa;
  std::vector<std::vector<double>> phi;   ///< [k][v]
  std::vector<std::vector<double>> theta; ///< [j][k]; PFA and NBFA
  std::vector<double> r;                  ///< [k]; DCMLDA
  std::vector<double> p;                  ///< [j]

  int num_factors() const { return static_cast<int>(phi.size()); }
};

/// sum_k phi_vk theta_kj (PFA, NBFA) or sum_k phi_vk r_k (DCMLDA).
double factor_rate(const PosteriorDraw &draw, int v, int j);

/// Poisson rate of n_vj given one draw. PFA: sum_k phi_vk theta_kj;
/// DCMLDA: (n_vj + sum_k phi_vk r_k) p_j; NBFA: (n_vj + sum_k phi_vk theta_kj) p_j,
/// where n_vj is the training count.
double estimated_poisson_rate(const PosteriorDraw &draw, int v, int j, int train_count);

/// Recomputes every factor marginal from the cells and compares with the
/// cached ones. Returns an empty string when consistent, else a description.
std::string check_consistency(const ModelState &state);

/// Rebuilds factor marginals and l_vj from the cells.
void recompute_marginals(ModelState &state);

/// Regenerates the per-token arrays from the cell lists: tokens of each cell
/// are laid out factor by factor (and table by table in collapsed modes).
/// Leaves z and b empty in cp-blocked mode.
void rebuild_tokens(ModelState &state);

/// Number of factors with nonzero total latent count.
int count_active(const LatentCountState &latent);

/// JSON checkpoint with a version tag; load(save(s)) == s bit-exactly.
std::string checkpoint_to_json(const ModelState &state);
ModelState checkpoint_from_json(const std::string &text);
void save_checkpoint(const ModelState &state, const std::filesystem::path &path);
ModelState load_checkpoint(const std::filesystem::path &path);

} // namespace nbfa
