#include "nbfa/model.hpp"

#include "nbfa/distributions.hpp"
#include "nbfa/errors.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <type_traits>

namespace nbfa {

using nlohmann::json;

std::string to_string(ModelKind kind) {
  switch (kind) {
  case ModelKind::pfa:
    return "pfa";
  case ModelKind::dcmlda:
    return "dcmlda";
  case ModelKind::nbfa:
    return "nbfa";
  }
  throw ConfigError("unknown model kind");
}

std::string to_string(SamplerKind kind) {
  switch (kind) {
  case SamplerKind::blocked:
    return "blocked";
  case SamplerKind::collapsed:
    return "collapsed";
  case SamplerKind::cp_blocked:
    return "cp";
  }
  throw ConfigError("unknown sampler kind");
}

std::string to_string(Truncation kind) {
  return kind == Truncation::adaptive ? "adaptive" : "fixed";
}

ModelKind parse_model_kind(const std::string &name) {
  if (name == "pfa") return ModelKind::pfa;
  if (name == "dcmlda") return ModelKind::dcmlda;
  if (name == "nbfa") return ModelKind::nbfa;
  throw ConfigError("unknown model '" + name + "' (expected pfa, dcmlda or nbfa)");
}

SamplerKind parse_sampler_kind(const std::string &name) {
  if (name == "blocked") return SamplerKind::blocked;
  if (name == "collapsed") return SamplerKind::collapsed;
  if (name == "cp" || name == "cp-blocked" || name == "cp_blocked") return SamplerKind::cp_blocked;
  throw ConfigError("unknown sampler '" + name + "' (expected blocked, collapsed or cp)");
}

Truncation parse_truncation(const std::string &name) {
  if (name == "adaptive") return Truncation::adaptive;
  if (name == "fixed") return Truncation::fixed;
  throw ConfigError("unknown truncation '" + name + "' (expected adaptive or fixed)");
}

bool is_supported(ModelKind model, SamplerKind sampler) {
  if (sampler == SamplerKind::collapsed) return true;
  return model != ModelKind::pfa;
}

void Hyperparams::validate() const {
  for (double x : {a0, b0, e0, f0, eta}) {
    if (!(x > 0.0) || !std::isfinite(x)) {
      throw ConfigError("hyperparameters must be positive and finite");
    }
  }
}

double GlobalMeasureState::G_total() const {
  return r_star + std::accumulate(r.begin(), r.end(), 0.0);
}

int count_active(const LatentCountState &latent) {
  return static_cast<int>(std::count_if(latent.factor_total.begin(), latent.factor_total.end(),
                                        [](long x) { return x > 0; }));
}

double gamma_process_log_mass(const ModelState &state) {
  double q = 0.0;
  const auto &s = state.samples;
  if (state.model == ModelKind::nbfa) {
    // -ln(1 - p~_j) = ln(1 + (-ln(1 - p_j)) / c_j)
    for (int j = 0; j < state.num_docs; ++j) q += std::log1p(-std::log1p(-s.p[j]) / s.c[j]);
  } else {
    for (int j = 0; j < state.num_docs; ++j) q += -std::log1p(-s.p[j]);
  }
  return q;
}

namespace {

bool tracks_tables(const ModelState &s) { return s.model != ModelKind::pfa; }

bool keeps_tokens(const ModelState &s) { return s.sampler != SamplerKind::cp_blocked; }

double score_rate(const ModelState &s, int j) { return s.samples.c[j] - std::log1p(-s.samples.p[j]); }

void draw_theta_column(ModelState &s, int k, RngStream &rng) {
  for (int j = 0; j < s.num_docs; ++j) {
    const double x = sample_gamma(s.global.r[k], 1.0 / score_rate(s, j), rng);
    s.samples.theta[j][k] = x;
  }
}

void refresh_theta_sums(ModelState &s) {
  if (s.samples.theta.empty()) return;
  for (int j = 0; j < s.num_docs; ++j) {
    const auto &row = s.samples.theta[j];
    s.samples.theta_sum[j] = std::accumulate(row.begin(), row.end(), 0.0);
  }
}

} // namespace

void recompute_marginals(ModelState &state) {
  auto &lat = state.latent;
  const std::size_t K = lat.factor_total.size();
  lat.word_factor.assign(K, std::vector<int>(state.num_terms, 0));
  lat.doc_factor.assign(K, std::vector<int>(state.num_docs, 0));
  std::fill(lat.factor_total.begin(), lat.factor_total.end(), 0L);
  lat.cell_tables.assign(lat.cells.size(), 0);
  const bool tables = tracks_tables(state);
  for (std::size_t c = 0; c < lat.cells.size(); ++c) {
    const int v = lat.cell_term[c];
    const int j = lat.cell_doc[c];
    for (const CellFactor &e : lat.cells[c]) {
      const int x = tables ? e.l : e.n;
      lat.word_factor[e.k][v] += x;
      lat.doc_factor[e.k][j] += x;
      lat.factor_total[e.k] += x;
      lat.cell_tables[c] += e.l;
    }
  }
}

void rebuild_tokens(ModelState &state) {
  auto &lat = state.latent;
  const std::size_t cells = lat.cells.size();
  lat.token_begin.assign(cells + 1, 0);
  for (std::size_t c = 0; c < cells; ++c) lat.token_begin[c + 1] = lat.token_begin[c] + lat.cell_count[c];
  lat.z.clear();
  lat.b.clear();
  if (!keeps_tokens(state)) {
    lat.token_begin.clear();
    return;
  }
  const bool seated = state.sampler == SamplerKind::collapsed && tracks_tables(state);
  lat.z.reserve(lat.token_begin.back());
  if (seated) lat.b.reserve(lat.token_begin.back());
  for (std::size_t c = 0; c < cells; ++c) {
    for (const CellFactor &e : lat.cells[c]) {
      if (seated) {
        for (int t = 0; t < static_cast<int>(e.tables.size()); ++t) {
          for (int i = 0; i < e.tables[t]; ++i) {
            lat.z.push_back(e.k);
            lat.b.push_back(t);
          }
        }
      } else {
        lat.z.insert(lat.z.end(), e.n, e.k);
      }
    }
    // Tokens not yet assigned (collapsed start with K = 0) carry label -1.
    const std::size_t want = static_cast<std::size_t>(lat.token_begin[c + 1]);
    if (lat.z.size() < want) {
      if (seated) lat.b.resize(want, -1);
      lat.z.resize(want, -1);
    }
  }
}

ModelState init_state(ModelKind model, SamplerKind sampler, Truncation truncation, int K_init,
                      int K_star, const Hyperparams &hyper, const SparseCountMatrix &corpus,
                      RngStream rng) {
  hyper.validate();
  if (!is_supported(model, sampler)) {
    throw ConfigError("sampler '" + to_string(sampler) + "' does not support model '" +
                      to_string(model) + "'");
  }
  if (K_init < 0) throw ConfigError("K_init must be nonnegative");
  if (K_init == 0 && sampler != SamplerKind::collapsed) {
    throw ConfigError("K_init = 0 is only allowed for the collapsed sampler");
  }
  if (K_init == 0 && truncation == Truncation::fixed) {
    throw ConfigError("fixed truncation needs K_init >= 1");
  }
  if (K_star < 0) throw ConfigError("K_star must be nonnegative");

  ModelState s;
  s.model = model;
  s.sampler = sampler;
  s.truncation = truncation;
  s.hyper = hyper;
  s.num_terms = corpus.num_rows();
  s.num_docs = corpus.num_cols();
  s.corpus_digest = corpus.digest();
  s.rng = rng;
  RngStream g = rng.derive(0x696e6974ULL);

  const int J = s.num_docs;
  const int V = s.num_terms;
  const int K = K_init;
  const bool blocked = sampler != SamplerKind::collapsed;
  auto &glob = s.global;
  glob.K_star = K_star;
  glob.gamma0 = hyper.a0 / hyper.b0;
  glob.c0 = hyper.e0 / hyper.f0;
  s.samples.p.assign(J, std::clamp(hyper.a0 / (hyper.a0 + hyper.b0), 1e-12, 1.0 - 1e-12));
  if (model == ModelKind::nbfa) s.samples.c.assign(J, hyper.e0 / hyper.f0);

  const bool stores_r = !(model == ModelKind::dcmlda && sampler == SamplerKind::collapsed);
  if (stores_r) {
    glob.r.resize(K);
    for (int k = 0; k < K; ++k) glob.r[k] = sample_gamma(glob.gamma0 / K, 1.0 / glob.c0, g);
    if (sampler == SamplerKind::collapsed && truncation == Truncation::adaptive) {
      glob.r_star = sample_gamma(glob.gamma0, 1.0 / glob.c0, g);
    }
  }
  if (blocked) {
    s.factors.phi.assign(K, std::vector<double>(V));
    for (int k = 0; k < K; ++k) sample_symmetric_dirichlet(hyper.eta, s.factors.phi[k], g);
  }
  if (model == ModelKind::nbfa) {
    s.samples.theta_sum.assign(J, 0.0);
    if (blocked) {
      s.samples.theta.assign(J, std::vector<double>(K, 0.0));
      for (int k = 0; k < K; ++k) draw_theta_column(s, k, g);
      refresh_theta_sums(s);
    } else {
      for (int j = 0; j < J; ++j) {
        s.samples.theta_sum[j] = sample_gamma(glob.G_total(), 1.0 / score_rate(s, j), g);
      }
    }
  }

  auto &lat = s.latent;
  const std::size_t nnz = corpus.nnz();
  lat.cell_term.resize(nnz);
  lat.cell_doc.resize(nnz);
  lat.cell_count.resize(nnz);
  lat.cells.assign(nnz, {});
  lat.factor_total.assign(K, 0);
  lat.tilde_total.assign(K, 0);
  const bool tables = model != ModelKind::pfa;
  std::vector<int> per_k(std::max(K, 1));
  for (int j = 0; j < J; ++j) {
    for (std::size_t c = corpus.col_begin(j); c < corpus.col_end(j); ++c) {
      lat.cell_term[c] = corpus.cell_row(c);
      lat.cell_doc[c] = j;
      const int n = corpus.cell_count(c);
      lat.cell_count[c] = n;
      if (K == 0) continue;
      std::fill(per_k.begin(), per_k.end(), 0);
      for (int i = 0; i < n; ++i) ++per_k[g.uniform_index(K)];
      for (int k = 0; k < K; ++k) {
        if (per_k[k] == 0) continue;
        CellFactor e;
        e.k = k;
        // Every token starts at its own table.
        if (sampler != SamplerKind::cp_blocked) e.n = per_k[k];
        if (tables) e.l = per_k[k];
        if (sampler == SamplerKind::collapsed && tables) e.tables.assign(per_k[k], 1);
        lat.cells[c].push_back(std::move(e));
      }
    }
  }
  recompute_marginals(s);
  rebuild_tokens(s);
  glob.K_active = count_active(lat);
  return s;
}

void reorder_factors(ModelState &state, const std::vector<int> &keep) {
  auto &lat = state.latent;
  const int K_old = lat.num_factors();
  std::vector<int> remap(K_old, -1);
  for (std::size_t i = 0; i < keep.size(); ++i) remap[keep[i]] = static_cast<int>(i);

  auto permute = [&](auto &vec) {
    using T = typename std::decay_t<decltype(vec)>::value_type;
    std::vector<T> out;
    out.reserve(keep.size());
    for (int k : keep) out.push_back(std::move(vec[k]));
    vec = std::move(out);
  };
  if (!state.global.r.empty()) permute(state.global.r);
  if (!state.factors.phi.empty()) permute(state.factors.phi);
  for (auto &row : state.samples.theta) permute(row);
  permute(lat.word_factor);
  permute(lat.doc_factor);
  permute(lat.factor_total);
  permute(lat.tilde_total);

  for (auto &list : lat.cells) {
    std::erase_if(list, [&](const CellFactor &e) {
      if (remap[e.k] >= 0) return false;
      if (e.n != 0 || e.l != 0) throw NumericError("reorder_factors: dropping a factor with counts");
      return true;
    });
    for (auto &e : list) e.k = remap[e.k];
  }
  for (int &z : lat.z) {
    if (z >= 0) z = remap[z];
  }
  state.eta_aux = {};
  refresh_theta_sums(state);
}

void relabel_and_truncate(ModelState &state, RngStream &rng) {
  if (state.sampler == SamplerKind::collapsed || state.truncation == Truncation::fixed) return;
  auto &lat = state.latent;
  std::vector<int> keep;
  for (int k = 0; k < lat.num_factors(); ++k) {
    if (lat.factor_total[k] > 0) keep.push_back(k);
  }
  reorder_factors(state, keep);
  auto &glob = state.global;
  glob.K_active = static_cast<int>(keep.size());

  const int K_star = glob.K_star;
  const double rate = glob.c0 + gamma_process_log_mass(state);
  const int V = state.num_terms;
  for (int i = 0; i < K_star; ++i) {
    const int k = lat.num_factors();
    glob.r.push_back(sample_gamma(glob.gamma0 / K_star, 1.0 / rate, rng));
    std::vector<double> phi(V);
    sample_symmetric_dirichlet(state.hyper.eta, phi, rng);
    state.factors.phi.push_back(std::move(phi));
    lat.word_factor.emplace_back(V, 0);
    lat.doc_factor.emplace_back(state.num_docs, 0);
    lat.factor_total.push_back(0);
    lat.tilde_total.push_back(0);
    if (state.model == ModelKind::nbfa) {
      for (auto &row : state.samples.theta) row.push_back(0.0);
      draw_theta_column(state, k, rng);
    }
  }
  refresh_theta_sums(state);
}

double factor_rate(const PosteriorDraw &draw, int v, int j) {
  double s = 0.0;
  const int K = draw.num_factors();
  if (draw.model == ModelKind::dcmlda) {
    for (int k = 0; k < K; ++k) s += draw.phi[k][v] * draw.r[k];
  } else {
    const auto &theta = draw.theta[j];
    for (int k = 0; k < K; ++k) s += draw.phi[k][v] * theta[k];
  }
  return s;
}

double estimated_poisson_rate(const PosteriorDraw &draw, int v, int j, int train_count) {
  const double base = factor_rate(draw, v, j);
  switch (draw.model) {
  case ModelKind::pfa:
    return base;
  case ModelKind::dcmlda:
  case ModelKind::nbfa:
    return (train_count + base) * draw.p[j];
  }
  throw ConfigError("unknown model kind");
}

std::string check_consistency(const ModelState &state) {
  std::ostringstream err;
  const auto &lat = state.latent;
  ModelState copy;
  copy.model = state.model;
  copy.sampler = state.sampler;
  copy.num_terms = state.num_terms;
  copy.num_docs = state.num_docs;
  copy.latent.cell_term = lat.cell_term;
  copy.latent.cell_doc = lat.cell_doc;
  copy.latent.cells = lat.cells;
  copy.latent.factor_total.assign(lat.factor_total.size(), 0);
  recompute_marginals(copy);
  if (copy.latent.word_factor != lat.word_factor) err << "word-factor marginal mismatch; ";
  if (copy.latent.doc_factor != lat.doc_factor) err << "doc-factor marginal mismatch; ";
  if (copy.latent.factor_total != lat.factor_total) err << "factor total mismatch; ";
  if (copy.latent.cell_tables != lat.cell_tables) err << "cell table totals mismatch; ";

  const bool tables = tracks_tables(state);
  const bool counts_n = state.sampler != SamplerKind::cp_blocked;
  const bool seated = state.sampler == SamplerKind::collapsed && tables;
  for (std::size_t c = 0; c < lat.cells.size(); ++c) {
    long n = 0;
    long l = 0;
    for (const auto &e : lat.cells[c]) {
      if (e.k < 0 || e.k >= lat.num_factors()) err << "cell " << c << " bad factor id; ";
      n += e.n;
      l += e.l;
      if (counts_n && e.n <= 0) err << "cell " << c << " empty factor entry; ";
      if (tables && (e.l < 1 || (counts_n && e.l > e.n))) err << "cell " << c << " table count out of range; ";
      if (seated) {
        if (static_cast<int>(e.tables.size()) != e.l) err << "cell " << c << " table list size; ";
        long seated_n = 0;
        for (int t : e.tables) {
          if (t <= 0) err << "cell " << c << " empty table; ";
          seated_n += t;
        }
        if (seated_n != e.n) err << "cell " << c << " table occupancy sum; ";
      }
    }
    const int nvj = lat.cell_count[c];
    if (counts_n && n != nvj && !lat.cells[c].empty()) err << "cell " << c << " token conservation; ";
    if (counts_n && lat.cells[c].empty() && nvj > 0 && state.global.K_active > 0)
      err << "cell " << c << " has no assignment; ";
    if (tables && !lat.cells[c].empty() && (l < 1 || l > nvj)) err << "cell " << c << " l_vj out of range; ";
    if (tables && !lat.cells[c].empty() && nvj == 1 && l != 1) err << "cell " << c << " l_vj != n_vj; ";
  }
  if (keeps_tokens(state) && !lat.token_begin.empty()) {
    for (std::size_t c = 0; c < lat.cells.size(); ++c) {
      for (const auto &e : lat.cells[c]) {
        long zc = 0;
        for (long i = lat.token_begin[c]; i < lat.token_begin[c + 1]; ++i) zc += lat.z[i] == e.k;
        if (zc != e.n) err << "cell " << c << " token labels disagree with counts; ";
        if (seated) {
          for (int t = 0; t < e.l; ++t) {
            long bc = 0;
            for (long i = lat.token_begin[c]; i < lat.token_begin[c + 1]; ++i)
              bc += lat.z[i] == e.k && lat.b[i] == t;
            if (bc != e.tables[t]) err << "cell " << c << " table labels disagree; ";
          }
        }
      }
    }
  }
  if (state.global.K_active != count_active(lat)) err << "K_active mismatch; ";
  for (std::size_t k = 0; k < state.factors.phi.size(); ++k) {
    const auto &col = state.factors.phi[k];
    double sum = 0.0;
    for (double x : col) {
      if (!(x >= 0.0)) err << "phi " << k << " negative; ";
      sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-9) err << "phi " << k << " not on simplex; ";
  }
  const auto &smp = state.samples;
  for (std::size_t j = 0; j < smp.theta.size(); ++j) {
    const double sum = std::accumulate(smp.theta[j].begin(), smp.theta[j].end(), 0.0);
    if (std::abs(sum - smp.theta_sum[j]) > 1e-9 * std::max(1.0, sum)) err << "theta sum " << j << "; ";
  }
  for (double p : smp.p) {
    if (!(p > 0.0 && p < 1.0)) err << "p outside (0, 1); ";
  }
  for (double r : state.global.r) {
    if (!(r > 0.0) || !std::isfinite(r)) err << "nonpositive atom weight; ";
  }
  return err.str();
}

// Checkpoints

namespace {

constexpr const char *kCheckpointVersion = "nbfa-checkpoint/1";

json cells_to_json(const std::vector<std::vector<CellFactor>> &cells) {
  json out = json::array();
  for (const auto &list : cells) {
    json row = json::array();
    for (const auto &e : list) row.push_back(json::array({e.k, e.n, e.l, e.tables}));
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<std::vector<CellFactor>> cells_from_json(const json &in) {
  std::vector<std::vector<CellFactor>> cells;
  cells.reserve(in.size());
  for (const auto &row : in) {
    std::vector<CellFactor> list;
    for (const auto &e : row) {
      CellFactor f;
      f.k = e.at(0).get<int>();
      f.n = e.at(1).get<int>();
      f.l = e.at(2).get<int>();
      f.tables = e.at(3).get<std::vector<int>>();
      list.push_back(std::move(f));
    }
    cells.push_back(std::move(list));
  }
  return cells;
}

} // namespace

std::string checkpoint_to_json(const ModelState &s) {
  json j;
  j["version"] = kCheckpointVersion;
  j["model"] = to_string(s.model);
  j["sampler"] = to_string(s.sampler);
  j["truncation"] = to_string(s.truncation);
  j["hyper"] = {{"a0", s.hyper.a0}, {"b0", s.hyper.b0}, {"e0", s.hyper.e0},
                {"f0", s.hyper.f0}, {"eta", s.hyper.eta}, {"eta_sampled", s.hyper.eta_sampled}};
  const auto &g = s.global;
  j["global"] = {{"r", g.r},           {"r_star", g.r_star},     {"gamma0", g.gamma0},
                 {"c0", g.c0},         {"K_active", g.K_active}, {"K_star", g.K_star}};
  j["phi"] = s.factors.phi;
  j["theta"] = s.samples.theta;
  j["theta_sum"] = s.samples.theta_sum;
  j["p"] = s.samples.p;
  j["c"] = s.samples.c;
  const auto &l = s.latent;
  j["latent"] = {{"cell_term", l.cell_term},     {"cell_doc", l.cell_doc},
                 {"cell_count", l.cell_count},   {"cells", cells_to_json(l.cells)},
                 {"cell_tables", l.cell_tables}, {"token_begin", l.token_begin},
                 {"z", l.z},                     {"b", l.b},
                 {"word_factor", l.word_factor}, {"doc_factor", l.doc_factor},
                 {"factor_total", l.factor_total}, {"tilde_total", l.tilde_total}};
  j["eta_aux"] = {{"q", s.eta_aux.q}, {"t", s.eta_aux.t}};
  j["num_terms"] = s.num_terms;
  j["num_docs"] = s.num_docs;
  j["corpus_digest"] = s.corpus_digest;
  j["iteration"] = s.iteration;
  j["clamp_events"] = s.clamp_events;
  j["rng"] = {{"seed", s.rng.seed()}, {"stream", s.rng.stream_id()}, {"counter", s.rng.counter()}};
  return j.dump();
}

ModelState checkpoint_from_json(const std::string &text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception &e) {
    throw ParseError(std::string("checkpoint is not valid JSON: ") + e.what(), 0);
  }
  if (!j.is_object() || !j.contains("version") || !j["version"].is_string() ||
      j["version"].get<std::string>() != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version", 0);
  }
  try {
    ModelState s;
    s.model = parse_model_kind(j.at("model"));
    s.sampler = parse_sampler_kind(j.at("sampler"));
    s.truncation = parse_truncation(j.at("truncation"));
    const auto &h = j.at("hyper");
    s.hyper.a0 = h.at("a0");
    s.hyper.b0 = h.at("b0");
    s.hyper.e0 = h.at("e0");
    s.hyper.f0 = h.at("f0");
    s.hyper.eta = h.at("eta");
    s.hyper.eta_sampled = h.at("eta_sampled");
    const auto &g = j.at("global");
    s.global.r = g.at("r").get<std::vector<double>>();
    s.global.r_star = g.at("r_star");
    s.global.gamma0 = g.at("gamma0");
    s.global.c0 = g.at("c0");
    s.global.K_active = g.at("K_active");
    s.global.K_star = g.at("K_star");
    s.factors.phi = j.at("phi").get<std::vector<std::vector<double>>>();
    s.samples.theta = j.at("theta").get<std::vector<std::vector<double>>>();
    s.samples.theta_sum = j.at("theta_sum").get<std::vector<double>>();
    s.samples.p = j.at("p").get<std::vector<double>>();
    s.samples.c = j.at("c").get<std::vector<double>>();
    const auto &l = j.at("latent");
    auto &lat = s.latent;
    lat.cell_term = l.at("cell_term").get<std::vector<int>>();
    lat.cell_doc = l.at("cell_doc").get<std::vector<int>>();
    lat.cell_count = l.at("cell_count").get<std::vector<int>>();
    lat.cells = cells_from_json(l.at("cells"));
    lat.cell_tables = l.at("cell_tables").get<std::vector<int>>();
    lat.token_begin = l.at("token_begin").get<std::vector<long>>();
    lat.z = l.at("z").get<std::vector<int>>();
    lat.b = l.at("b").get<std::vector<int>>();
    lat.word_factor = l.at("word_factor").get<std::vector<std::vector<int>>>();
    lat.doc_factor = l.at("doc_factor").get<std::vector<std::vector<int>>>();
    lat.factor_total = l.at("factor_total").get<std::vector<long>>();
    lat.tilde_total = l.at("tilde_total").get<std::vector<long>>();
    s.eta_aux.q = j.at("eta_aux").at("q").get<std::vector<double>>();
    s.eta_aux.t = j.at("eta_aux").at("t").get<std::vector<std::vector<std::pair<int, int>>>>();
    s.num_terms = j.at("num_terms");
    s.num_docs = j.at("num_docs");
    s.corpus_digest = j.at("corpus_digest");
    s.iteration = j.at("iteration");
    s.clamp_events = j.at("clamp_events");
    const auto &r = j.at("rng");
    s.rng = RngStream(r.at("seed").get<std::uint64_t>(), r.at("stream").get<std::uint64_t>());
    s.rng.set_counter(r.at("counter").get<std::uint64_t>());
    return s;
  } catch (const json::exception &e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what(), 0);
  }
}

void save_checkpoint(const ModelState &state, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(state) << '\n';
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_json(buf.str());
}

} // namespace nbfa
