#include "nbfa/samplers.hpp"

#include "nbfa/distributions.hpp"
#include "nbfa/errors.hpp"
#include "nbfa/parallel.hpp"
#include "nbfa/special_functions.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

namespace nbfa {
namespace {

constexpr double kPMin = 1e-12;
constexpr double kPMax = 1.0 - 1e-12;
constexpr double kShapeFloor = 1e-300;

// Stream-id offsets inside one iteration.
constexpr std::uint64_t kDocPhase = 0;
constexpr std::uint64_t kThetaPhase = 1ULL << 48;
constexpr std::uint64_t kFactorPhase = 2ULL << 48;
constexpr std::uint64_t kSerialPhase = 3ULL << 48;

double gamma_guarded(double shape, double scale, RngStream &rng, long &events) {
  if (!(shape > kShapeFloor)) {
    ++events;
    shape = kShapeFloor;
  }
  return sample_gamma(shape, scale, rng);
}

double clamp_p(double p, long &events) {
  if (!(p >= kPMin)) {
    ++events;
    return kPMin;
  }
  if (p > kPMax) {
    ++events;
    return kPMax;
  }
  return p;
}

/// -ln(1 - p)
double neg_log1m(double p) { return -std::log1p(-p); }

RngStream iteration_stream(RngStream &rng) { return RngStream(rng.next_u64(), 0x6974ULL); }

/// First cell of each document plus a sentinel.
std::vector<std::size_t> doc_offsets(const ModelState &s) {
  std::vector<std::size_t> off(s.num_docs + 1, 0);
  for (int j : s.latent.cell_doc) ++off[j + 1];
  for (int j = 0; j < s.num_docs; ++j) off[j + 1] += off[j];
  return off;
}

bool is_fixed(const ModelState &s) { return s.truncation == Truncation::fixed; }

bool uses_factor(const ModelState &s, int k) {
  return is_fixed(s) || s.latent.factor_total[k] > 0;
}

CellFactor *find_entry(std::vector<CellFactor> &list, int k) {
  for (auto &e : list) {
    if (e.k == k) return &e;
  }
  return nullptr;
}

CellFactor &entry_for(std::vector<CellFactor> &list, int k) {
  if (CellFactor *e = find_entry(list, k)) return *e;
  CellFactor e;
  e.k = k;
  list.push_back(std::move(e));
  return list.back();
}

void erase_entry(std::vector<CellFactor> &list, const CellFactor *e) {
  const auto idx = static_cast<std::size_t>(e - list.data());
  if (idx + 1 != list.size()) list[idx] = std::move(list.back());
  list.pop_back();
}

void append_factor_slot(ModelState &s, double r) {
  auto &lat = s.latent;
  if (s.model != ModelKind::dcmlda) s.global.r.push_back(r);
  lat.word_factor.emplace_back(s.num_terms, 0);
  lat.doc_factor.emplace_back(s.num_docs, 0);
  lat.factor_total.push_back(0);
  lat.tilde_total.push_back(0);
}

/// Drops factors whose count fell to zero during the sweep, returning their
/// weight to the residual mass.
void collect_empty_factors(ModelState &s) {
  if (is_fixed(s)) return;
  std::vector<int> keep;
  for (int k = 0; k < s.num_factors(); ++k) {
    if (s.latent.factor_total[k] > 0) {
      keep.push_back(k);
    } else if (!s.global.r.empty()) {
      s.global.r_star += s.global.r[k];
    }
  }
  if (static_cast<int>(keep.size()) != s.num_factors()) reorder_factors(s, keep);
}

} // namespace

std::vector<long> doc_lengths(const ModelState &state) {
  std::vector<long> n(state.num_docs, 0);
  const auto &lat = state.latent;
  for (std::size_t c = 0; c < lat.cell_doc.size(); ++c) n[lat.cell_doc[c]] += lat.cell_count[c];
  return n;
}

void update_p(ModelState &s, const std::vector<long> &n_j, RngStream &rng) {
  const auto &h = s.hyper;
  const double G = s.global.G_total();
  for (int j = 0; j < s.num_docs; ++j) {
    const double b = h.b0 + (s.model == ModelKind::nbfa ? s.samples.theta_sum[j] : G);
    s.samples.p[j] = clamp_p(sample_beta(h.a0 + n_j[j], b, rng), s.clamp_events);
  }
}

void update_c(ModelState &s, RngStream &rng) {
  const auto &h = s.hyper;
  const double G = s.global.G_total();
  for (int j = 0; j < s.num_docs; ++j) {
    s.samples.c[j] =
        gamma_guarded(h.e0 + G, 1.0 / (h.f0 + s.samples.theta_sum[j]), rng, s.clamp_events);
  }
}

void update_tilde_counts(ModelState &s, RngStream &rng) {
  auto &lat = s.latent;
  const int K = lat.num_factors();
  if (s.model == ModelKind::dcmlda) {
    lat.tilde_total = lat.factor_total;
    return;
  }
  const RngStream base = iteration_stream(rng);
  parallel_for(K, [&](std::size_t k) {
    RngStream g = base.derive(kFactorPhase + k);
    long total = 0;
    if (lat.factor_total[k] > 0) {
      const double r = std::max(s.global.r[k], std::numeric_limits<double>::denorm_min());
      for (int x : lat.doc_factor[k]) {
        if (x > 0) total += sample_crt(x, r, g);
      }
    }
    lat.tilde_total[k] = total;
  });
}

void update_c0(ModelState &s, RngStream &rng) {
  const auto &h = s.hyper;
  s.global.c0 = gamma_guarded(h.e0 + s.global.gamma0, 1.0 / (h.f0 + s.global.G_total()), rng,
                              s.clamp_events);
}

void update_gamma0(ModelState &s, RngStream &rng) {
  const auto &h = s.hyper;
  auto &g = s.global;
  // -ln(1 - p~~) = ln(1 + q / c0)
  const double rate = h.b0 + std::log1p(gamma_process_log_mass(s) / g.c0);
  double shape = h.a0;
  if (is_fixed(s)) {
    const int K = s.num_factors();
    const double conc = g.gamma0 / K;
    for (int k = 0; k < K; ++k) {
      const long x = s.latent.tilde_total[k];
      if (x > 0) shape += sample_crt(static_cast<int>(x), conc, rng);
    }
  } else {
    shape += count_active(s.latent);
  }
  g.gamma0 = gamma_guarded(shape, 1.0 / rate, rng, s.clamp_events);
}

void update_r(ModelState &s, RngStream &rng) {
  auto &g = s.global;
  if (g.r.empty() && s.num_factors() > 0) return;
  const double scale = 1.0 / (g.c0 + gamma_process_log_mass(s));
  const int K = s.num_factors();
  const double prior = is_fixed(s) ? g.gamma0 / K : 0.0;
  for (int k = 0; k < K; ++k) {
    if (!uses_factor(s, k)) continue;
    g.r[k] = gamma_guarded(prior + s.latent.tilde_total[k], scale, rng, s.clamp_events);
  }
  if (s.sampler == SamplerKind::collapsed && !is_fixed(s)) {
    g.r_star = gamma_guarded(g.gamma0, scale, rng, s.clamp_events);
  }
}

void update_phi(ModelState &s, RngStream &rng) {
  const RngStream base = iteration_stream(rng);
  const int V = s.num_terms;
  const double eta = s.hyper.eta;
  parallel_for(s.num_factors(), [&](std::size_t k) {
    if (!uses_factor(s, static_cast<int>(k))) return;
    RngStream g = base.derive(kFactorPhase + k);
    std::vector<double> conc(V);
    const auto &counts = s.latent.word_factor[k];
    for (int v = 0; v < V; ++v) conc[v] = eta + counts[v];
    sample_dirichlet(conc, s.factors.phi[k], g);
  });
}

void update_theta(ModelState &s, RngStream &rng) {
  const RngStream base = iteration_stream(rng);
  const int K = s.num_factors();
  std::vector<long> events(s.num_docs, 0);
  parallel_for(s.num_docs, [&](std::size_t j) {
    RngStream g = base.derive(kThetaPhase + j);
    const double scale = 1.0 / (s.samples.c[j] + neg_log1m(s.samples.p[j]));
    auto &row = s.samples.theta[j];
    double sum = 0.0;
    for (int k = 0; k < K; ++k) {
      row[k] = gamma_guarded(s.global.r[k] + s.latent.doc_factor[k][j], scale, g, events[j]);
      sum += row[k];
    }
    s.samples.theta_sum[j] = sum;
  });
  for (long e : events) s.clamp_events += e;
}

void sample_eta(ModelState &s, RngStream &rng) {
  auto &h = s.hyper;
  auto &aux = s.eta_aux;
  aux.q.clear();
  aux.t.clear();
  const int V = s.num_terms;
  const double eta = h.eta;
  double shape = h.a0;
  double rate = h.b0;
  for (int k = 0; k < s.num_factors(); ++k) {
    const long total = s.latent.factor_total[k];
    if (total <= 0) continue;
    // log(1 - q) for q ~ Beta(total, V eta), kept in log space.
    const double lx = sample_log_gamma(static_cast<double>(total), rng);
    const double ly = sample_log_gamma(V * eta, rng);
    const double log_1mq = ly - log_add_exp(lx, ly);
    aux.q.push_back(-std::expm1(log_1mq));
    rate -= V * log_1mq;
    std::vector<std::pair<int, int>> t;
    const auto &counts = s.latent.word_factor[k];
    for (int v = 0; v < V; ++v) {
      if (counts[v] > 0) {
        const int tv = sample_crt(counts[v], eta, rng);
        t.emplace_back(v, tv);
        shape += tv;
      }
    }
    aux.t.push_back(std::move(t));
  }
  h.eta = gamma_guarded(shape, 1.0 / rate, rng, s.clamp_events);
}

// Blocked sweeps

namespace {

/// Per-document assignment phase shared by the regular and compound-Poisson
/// blocked samplers. Rewrites the cell lists of document j.
long blocked_assign_doc(ModelState &s, int j, std::size_t c_lo, std::size_t c_hi, bool compound,
                        RngStream &g, long &events) {
  auto &lat = s.latent;
  const int K = s.num_factors();
  const bool nbfa = s.model == ModelKind::nbfa;
  std::vector<double> base(K);
  std::vector<double> w(K);
  std::vector<int> nk(K, 0);
  // Scores of unused atoms decay into subnormals, whose arithmetic is very slow
  // on common hardware; their share of any rate is below 1e-308 anyway.
  std::vector<double> weight(K);
  for (int k = 0; k < K; ++k) {
    const double x = nbfa ? s.samples.theta[j][k] : s.global.r[k];
    weight[k] = x >= std::numeric_limits<double>::min() ? x : 0.0;
  }
  long ops = 0;
  for (std::size_t c = c_lo; c < c_hi; ++c) {
    const int v = lat.cell_term[c];
    const int n = lat.cell_count[c];
    double total_base = 0.0;
    for (int k = 0; k < K; ++k) {
      base[k] = weight[k] > 0.0 ? s.factors.phi[k][v] * weight[k] : 0.0;
      total_base += base[k];
    }
    if (!(total_base > 0.0) || !std::isfinite(total_base)) {
      // Every rate underflowed: fall back to a uniform split.
      ++events;
      std::fill(base.begin(), base.end(), 1.0);
      total_base = K;
    }
    auto &list = lat.cells[c];
    if (!compound) {
      for (const auto &e : list) nk[e.k] = e.n;
      for (long i = lat.token_begin[c]; i < lat.token_begin[c + 1]; ++i) {
        int &z = lat.z[i];
        if (z >= 0) --nk[z];
        double total = 0.0;
        for (int k = 0; k < K; ++k) {
          w[k] = nk[k] + base[k];
          total += w[k];
        }
        z = static_cast<int>(sample_categorical(w, total, g));
        ++nk[z];
      }
      ops += static_cast<long>(n) * K;
      list.clear();
      for (int k = 0; k < K; ++k) {
        if (nk[k] == 0) continue;
        CellFactor e;
        e.k = k;
        e.n = nk[k];
        e.l = sample_crt(nk[k], std::max(base[k], std::numeric_limits<double>::denorm_min()), g);
        list.push_back(std::move(e));
        nk[k] = 0;
      }
    } else {
      const int l = sample_crt(n, total_base, g);
      // Cumulative weights, then one search per table.
      for (int k = 0; k < K; ++k) w[k] = (k ? w[k - 1] : 0.0) + base[k];
      const double top = w[K - 1];
      for (int t = 0; t < l; ++t) {
        const double u = g.uniform() * top;
        auto it = std::upper_bound(w.begin(), w.end(), u);
        int k = static_cast<int>(std::min<std::ptrdiff_t>(it - w.begin(), K - 1));
        while (base[k] <= 0.0 && k > 0) --k;
        ++nk[k];
      }
      ops += n + l;
      list.clear();
      for (int k = 0; k < K; ++k) {
        if (nk[k] == 0) continue;
        CellFactor e;
        e.k = k;
        e.l = nk[k];
        list.push_back(std::move(e));
        nk[k] = 0;
      }
    }
  }
  return ops;
}

StepStats blocked_family_step(ModelState &s, RngStream &rng, bool compound) {
  if (s.sampler == SamplerKind::collapsed) throw ConfigError("state is in collapsed representation");
  if (s.num_factors() == 0) throw ConfigError("blocked samplers need at least one factor slot");
  StepStats stats;
  const RngStream base = iteration_stream(rng);
  const auto off = doc_offsets(s);
  std::vector<long> ops(s.num_docs, 0);
  std::vector<long> events(s.num_docs, 0);
  parallel_for(s.num_docs, [&](std::size_t j) {
    RngStream g = base.derive(kDocPhase + j);
    ops[j] = blocked_assign_doc(s, static_cast<int>(j), off[j], off[j + 1], compound, g, events[j]);
  });
  for (int j = 0; j < s.num_docs; ++j) {
    stats.assign_ops += ops[j];
    s.clamp_events += events[j];
  }
  recompute_marginals(s);

  RngStream g = base.derive(kSerialPhase);
  update_p(s, doc_lengths(s), g);
  if (s.model == ModelKind::nbfa) update_c(s, g);
  update_tilde_counts(s, g);
  update_c0(s, g);
  update_gamma0(s, g);
  if (is_fixed(s)) {
    s.global.K_active = count_active(s.latent);
  } else {
    relabel_and_truncate(s, g);
  }
  update_r(s, g);
  if (s.hyper.eta_sampled) sample_eta(s, g);
  update_phi(s, g);
  if (s.model == ModelKind::nbfa) update_theta(s, g);
  ++s.iteration;
  return stats;
}

} // namespace

StepStats blocked_step(ModelState &state, RngStream &rng) {
  if (state.sampler != SamplerKind::blocked) throw ConfigError("state is not in blocked representation");
  return blocked_family_step(state, rng, false);
}

StepStats cp_blocked_step(ModelState &state, RngStream &rng) {
  if (state.sampler != SamplerKind::cp_blocked) {
    throw ConfigError("state is not in compound-Poisson representation");
  }
  return blocked_family_step(state, rng, true);
}

// Collapsed sweeps

void collapsed_remove_token(ModelState &s, std::size_t c, long i) {
  auto &lat = s.latent;
  const int k = lat.z[i];
  if (k < 0) return;
  const int v = lat.cell_term[c];
  const int j = lat.cell_doc[c];
  auto &list = lat.cells[c];
  CellFactor *e = find_entry(list, k);
  if (e == nullptr) throw NumericError("collapsed_remove_token: token factor missing from cell");
  --e->n;
  if (s.model == ModelKind::pfa) {
    --lat.word_factor[k][v];
    --lat.doc_factor[k][j];
    --lat.factor_total[k];
  } else {
    const int t = lat.b[i];
    if (--e->tables[t] == 0) {
      const int last = e->l - 1;
      if (t != last) {
        e->tables[t] = e->tables[last];
        for (long ii = lat.token_begin[c]; ii < lat.token_begin[c + 1]; ++ii) {
          if (lat.z[ii] == k && lat.b[ii] == last) lat.b[ii] = t;
        }
      }
      e->tables.pop_back();
      --e->l;
      --lat.word_factor[k][v];
      --lat.doc_factor[k][j];
      --lat.factor_total[k];
      --lat.cell_tables[c];
    }
    lat.b[i] = -1;
  }
  if (e->n == 0) erase_entry(list, e);
  lat.z[i] = -1;
}

void collapsed_add_token(ModelState &s, std::size_t c, long i, int k, int table) {
  auto &lat = s.latent;
  const int v = lat.cell_term[c];
  const int j = lat.cell_doc[c];
  CellFactor &e = entry_for(lat.cells[c], k);
  ++e.n;
  lat.z[i] = k;
  if (s.model == ModelKind::pfa) {
    ++lat.word_factor[k][v];
    ++lat.doc_factor[k][j];
    ++lat.factor_total[k];
    return;
  }
  if (table >= e.l) {
    e.tables.push_back(1);
    ++e.l;
    ++lat.word_factor[k][v];
    ++lat.doc_factor[k][j];
    ++lat.factor_total[k];
    ++lat.cell_tables[c];
    lat.b[i] = e.l - 1;
  } else {
    ++e.tables[table];
    lat.b[i] = table;
  }
}

StepStats collapsed_sweep(ModelState &s, RngStream &rng) {
  if (s.sampler != SamplerKind::collapsed) throw ConfigError("state is not in collapsed representation");
  auto &lat = s.latent;
  auto &glob = s.global;
  const int V = s.num_terms;
  const double eta = s.hyper.eta;
  const double Veta = V * eta;
  const bool fixed = is_fixed(s);
  const bool tables = s.model != ModelKind::pfa;
  const auto off = doc_offsets(s);
  // DCMLDA: c0 - sum_j ln(1 - p_j), fixed during the sweep.
  const double dcm_rate = s.model == ModelKind::dcmlda ? glob.c0 + gamma_process_log_mass(s) : 0.0;

  StepStats stats;
  std::vector<double> w;
  std::vector<int> opt_k;
  std::vector<int> opt_t;
  for (int j = 0; j < s.num_docs; ++j) {
    double inv_rate = 0.0;
    if (s.model == ModelKind::nbfa) inv_rate = 1.0 / (s.samples.c[j] + neg_log1m(s.samples.p[j]));
    for (std::size_t c = off[j]; c < off[j + 1]; ++c) {
      const int v = lat.cell_term[c];
      for (long i = lat.token_begin[c]; i < lat.token_begin[c + 1]; ++i) {
        collapsed_remove_token(s, c, i);
        const int K = s.num_factors();
        w.clear();
        opt_k.clear();
        opt_t.clear();
        if (tables) {
          for (const auto &e : lat.cells[c]) {
            for (int t = 0; t < e.l; ++t) {
              w.push_back(e.tables[t]);
              opt_k.push_back(e.k);
              opt_t.push_back(t);
            }
          }
        }
        for (int k = 0; k < K; ++k) {
          const double word = (lat.word_factor[k][v] + eta) / (lat.factor_total[k] + Veta);
          double score = 0.0;
          switch (s.model) {
          case ModelKind::nbfa:
            score = (glob.r[k] + lat.doc_factor[k][j]) * inv_rate;
            break;
          case ModelKind::pfa:
            score = lat.doc_factor[k][j] + glob.r[k];
            break;
          case ModelKind::dcmlda:
            score = (lat.factor_total[k] + (fixed ? glob.gamma0 / K : 0.0)) / dcm_rate;
            break;
          }
          w.push_back(word * score);
          opt_k.push_back(k);
          opt_t.push_back(-1);
        }
        if (!fixed) {
          double fresh = 0.0;
          switch (s.model) {
          case ModelKind::nbfa:
            fresh = glob.r_star / V * inv_rate;
            break;
          case ModelKind::pfa:
            fresh = glob.r_star / V;
            break;
          case ModelKind::dcmlda:
            fresh = glob.gamma0 / (V * dcm_rate);
            break;
          }
          w.push_back(fresh);
          opt_k.push_back(K);
          opt_t.push_back(-1);
        }
        const double total = std::accumulate(w.begin(), w.end(), 0.0);
        if (!(total > 0.0) || !std::isfinite(total)) {
          throw NumericError("collapsed sweep: no option has positive weight");
        }
        const std::size_t pick = sample_categorical(w, total, rng);
        stats.assign_ops += static_cast<long>(w.size());
        int k = opt_k[pick];
        int t = opt_t[pick];
        if (k == K) {
          double r_new = 0.0;
          if (s.model != ModelKind::dcmlda) {
            const double beta = sample_beta(1.0, glob.gamma0, rng);
            r_new = beta * glob.r_star;
            glob.r_star -= r_new;
          }
          append_factor_slot(s, r_new);
        }
        if (t < 0) t = std::numeric_limits<int>::max();
        collapsed_add_token(s, c, i, k, t);
      }
    }
  }
  collect_empty_factors(s);
  glob.K_active = count_active(lat);
  return stats;
}

StepStats collapsed_step(ModelState &s, RngStream &rng) {
  if (s.model != ModelKind::nbfa) throw ConfigError("collapsed_step expects an NBFA state");
  const RngStream base = iteration_stream(rng);
  RngStream sweep_rng = base.derive(kDocPhase);
  StepStats stats = collapsed_sweep(s, sweep_rng);

  RngStream g = base.derive(kSerialPhase);
  const double G = s.global.G_total();
  std::vector<long> l_j(s.num_docs, 0);
  for (std::size_t c = 0; c < s.latent.cells.size(); ++c) l_j[s.latent.cell_doc[c]] += s.latent.cell_tables[c];
  for (int j = 0; j < s.num_docs; ++j) {
    const double scale = 1.0 / (s.samples.c[j] + neg_log1m(s.samples.p[j]));
    s.samples.theta_sum[j] = gamma_guarded(G + l_j[j], scale, g, s.clamp_events);
  }
  update_p(s, doc_lengths(s), g);
  update_c(s, g);
  update_tilde_counts(s, g);
  update_c0(s, g);
  update_gamma0(s, g);
  update_r(s, g);
  if (s.hyper.eta_sampled) sample_eta(s, g);
  s.global.K_active = count_active(s.latent);
  ++s.iteration;
  return stats;
}

StepStats pfa_collapsed_step(ModelState &s, RngStream &rng) {
  if (s.model != ModelKind::pfa) throw ConfigError("pfa_collapsed_step expects a PFA state");
  const RngStream base = iteration_stream(rng);
  RngStream sweep_rng = base.derive(kDocPhase);
  StepStats stats = collapsed_sweep(s, sweep_rng);

  RngStream g = base.derive(kSerialPhase);
  update_p(s, doc_lengths(s), g);
  update_tilde_counts(s, g);
  update_c0(s, g);
  update_gamma0(s, g);
  update_r(s, g);
  if (s.hyper.eta_sampled) sample_eta(s, g);
  s.global.K_active = count_active(s.latent);
  ++s.iteration;
  return stats;
}

StepStats dcmlda_collapsed_step(ModelState &s, RngStream &rng) {
  if (s.model != ModelKind::dcmlda) throw ConfigError("dcmlda_collapsed_step expects a DCMLDA state");
  const RngStream base = iteration_stream(rng);
  RngStream sweep_rng = base.derive(kDocPhase);
  StepStats stats = collapsed_sweep(s, sweep_rng);

  RngStream g = base.derive(kSerialPhase);
  auto &glob = s.global;
  const auto &h = s.hyper;
  s.latent.tilde_total = s.latent.factor_total;
  update_gamma0(s, g);
  // G is drawn only to refresh c0 and p_j, then discarded.
  const int K = s.num_factors();
  const double scale = 1.0 / (glob.c0 + gamma_process_log_mass(s));
  const bool fixed = is_fixed(s);
  double G = 0.0;
  for (int k = 0; k < K; ++k) {
    const double shape = s.latent.factor_total[k] + (fixed ? glob.gamma0 / K : 0.0);
    if (shape > 0.0) G += gamma_guarded(shape, scale, g, s.clamp_events);
  }
  if (!fixed) G += gamma_guarded(glob.gamma0, scale, g, s.clamp_events);
  glob.c0 = gamma_guarded(h.e0 + glob.gamma0, 1.0 / (h.f0 + G), g, s.clamp_events);
  const auto n_j = doc_lengths(s);
  for (int j = 0; j < s.num_docs; ++j) {
    s.samples.p[j] = clamp_p(sample_beta(h.a0 + n_j[j], h.b0 + G, g), s.clamp_events);
  }
  if (s.hyper.eta_sampled) sample_eta(s, g);
  glob.K_active = count_active(s.latent);
  ++s.iteration;
  return stats;
}

StepStats step(ModelState &state, RngStream &rng) {
  switch (state.sampler) {
  case SamplerKind::blocked:
    return blocked_step(state, rng);
  case SamplerKind::cp_blocked:
    return cp_blocked_step(state, rng);
  case SamplerKind::collapsed:
    switch (state.model) {
    case ModelKind::nbfa:
      return collapsed_step(state, rng);
    case ModelKind::pfa:
      return pfa_collapsed_step(state, rng);
    case ModelKind::dcmlda:
      return dcmlda_collapsed_step(state, rng);
    }
  }
  throw ConfigError("unknown sampler");
}

double log_joint_surrogate(const ModelState &s) {
  const auto n_j = doc_lengths(s);
  const auto &glob = s.global;
  double G = glob.G_total();
  if (s.model == ModelKind::dcmlda && glob.r.empty()) {
    // Posterior mean of G(Omega) given the table counts.
    const double rate = glob.c0 + gamma_process_log_mass(s);
    G = (static_cast<double>(std::accumulate(s.latent.factor_total.begin(),
                                             s.latent.factor_total.end(), 0L)) +
         glob.gamma0) /
        rate;
  }
  double lp = 0.0;
  for (int j = 0; j < s.num_docs; ++j) {
    const double shape = s.model == ModelKind::nbfa ? s.samples.theta_sum[j] : G;
    if (shape > 0.0) lp += nb_log_pmf(n_j[j], shape, s.samples.p[j]);
  }
  const int V = s.num_terms;
  const double eta = s.hyper.eta;
  const double lg_eta = std::lgamma(eta);
  for (int k = 0; k < s.num_factors(); ++k) {
    const long N = s.latent.factor_total[k];
    if (N <= 0) continue;
    lp += std::lgamma(V * eta) - std::lgamma(N + V * eta);
    for (int x : s.latent.word_factor[k]) {
      if (x > 0) lp += std::lgamma(x + eta) - lg_eta;
    }
  }
  return lp;
}

// Chains

void ChainConfig::validate() const {
  hyper.validate();
  if (!is_supported(model, sampler)) {
    throw ConfigError("sampler '" + to_string(sampler) + "' does not support model '" +
                      to_string(model) + "'");
  }
  if (iterations < 1) throw ConfigError("iterations must be at least 1");
  if (burn_in < 0 || burn_in >= iterations) throw ConfigError("burn_in must satisfy 0 <= burn_in < iterations");
  if (collect_every < 1) throw ConfigError("collect_every must be at least 1");
  if (K_init < 0 || K_star < 0) throw ConfigError("K_init and K_star must be nonnegative");
  if (K_init == 0 && sampler != SamplerKind::collapsed) {
    throw ConfigError("K_init = 0 is only allowed for the collapsed sampler");
  }
  if (K_init == 0 && truncation == Truncation::fixed) throw ConfigError("fixed truncation needs K_init >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be nonnegative");
}

bool ChainConfig::collects(long it) const {
  return it > burn_in && (it - burn_in) % collect_every == 0;
}

ChainResult run_chain(const ChainConfig &config, const SparseCountMatrix &train,
                      const CollectHook &collect) {
  config.validate();
  ModelState state = init_state(config.model, config.sampler, config.truncation, config.K_init,
                                config.K_star, config.hyper, train, RngStream(config.seed, 0));
  return resume_chain(config, std::move(state), collect);
}

ChainResult resume_chain(const ChainConfig &config, ModelState state, const CollectHook &collect) {
  config.validate();
  if (state.model != config.model || state.sampler != config.sampler) {
    throw ConfigError("checkpoint model/sampler does not match the configuration");
  }
  ChainResult result;
  if (config.checkpoint_every > 0) std::filesystem::create_directories(config.checkpoint_dir);
  while (state.iteration < config.iterations) {
    const auto t0 = std::chrono::steady_clock::now();
    const StepStats stats = step(state, state.rng);
    const auto t1 = std::chrono::steady_clock::now();
    TraceRecord rec;
    rec.iteration = state.iteration;
    rec.K_active = state.global.K_active;
    rec.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    rec.assign_ops = stats.assign_ops;
    if (config.trace_log_joint) rec.log_joint = log_joint_surrogate(state);
    result.trace.records.push_back(rec);
    if (config.collects(state.iteration)) {
      if (collect) collect(state, state.iteration);
      ++result.collected;
    }
    if (config.checkpoint_every > 0 && state.iteration % config.checkpoint_every == 0) {
      save_checkpoint(state, config.checkpoint_dir /
                                 ("checkpoint_" + std::to_string(state.iteration) + ".json"));
    }
  }
  result.state = std::move(state);
  return result;
}

namespace {
constexpr const char *kTraceHeader = "iteration,K_active,log_joint_surrogate,wall_ms,assign_ops";
}

void write_trace_csv(const ChainTrace &trace, std::ostream &out) {
  out << kTraceHeader << '\n';
  for (const auto &r : trace.records) {
    out << r.iteration << ',' << r.K_active << ',' << std::setprecision(17) << r.log_joint << ','
        << std::setprecision(6) << std::fixed << r.wall_ms << std::defaultfloat << ','
        << r.assign_ops << '\n';
  }
}

ChainTrace read_trace_csv(std::istream &in) {
  std::string line;
  long line_no = 1;
  if (!std::getline(in, line)) throw ParseError("empty trace file", 0);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTraceHeader) throw ParseError("trace header mismatch: '" + line + "'", 1);
  ChainTrace trace;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    TraceRecord r;
    std::string extra;
    if (!(fields >> r.iteration >> r.K_active >> r.log_joint >> r.wall_ms >> r.assign_ops) ||
        (fields >> extra)) {
      throw ParseError("malformed trace row", line_no);
    }
    trace.records.push_back(r);
  }
  return trace;
}

} // namespace nbfa
