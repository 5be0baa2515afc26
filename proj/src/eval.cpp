#include "nbfa/eval.hpp"

#include "nbfa/distributions.hpp"
#include "nbfa/errors.hpp"
#include "nbfa/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

namespace nbfa {
namespace {

constexpr double kShapeFloor = 1e-300;

double floored(double shape) { return std::max(shape, kShapeFloor); }

std::vector<int> drawn_slots(const ModelState &s) {
  std::vector<int> slots;
  for (int k = 0; k < s.num_factors(); ++k) {
    if (s.truncation == Truncation::fixed || s.latent.factor_total[k] > 0) slots.push_back(k);
  }
  return slots;
}

} // namespace

PosteriorDraw posterior_draw(const ModelState &s, RngStream &rng) {
  const RngStream base(rng.next_u64(), 0x7064ULL);
  const bool fixed = s.truncation == Truncation::fixed;
  const auto slots = drawn_slots(s);
  const int K_act = static_cast<int>(slots.size());
  const int K_res = fixed ? 0 : s.global.K_star;
  const int K = K_act + K_res;
  const int V = s.num_terms;
  const int J = s.num_docs;
  const double eta = s.hyper.eta;
  const auto &lat = s.latent;
  const auto &glob = s.global;

  PosteriorDraw d;
  d.model = s.model;
  d.p = s.samples.p;
  d.phi.assign(K, std::vector<double>(V));
  parallel_for(K, [&](std::size_t i) {
    RngStream g = base.derive(i);
    if (static_cast<int>(i) < K_act) {
      std::vector<double> conc(V);
      const auto &counts = lat.word_factor[slots[i]];
      for (int v = 0; v < V; ++v) conc[v] = eta + counts[v];
      sample_dirichlet(conc, d.phi[i], g);
    } else {
      sample_symmetric_dirichlet(eta, d.phi[i], g);
    }
  });

  // Slot weights: r_k for active slots, the reserve weight otherwise.
  std::vector<double> weight(K);
  for (int i = 0; i < K; ++i) {
    if (i < K_act) {
      weight[i] = glob.r.empty() ? 0.0 : glob.r[slots[i]];
    } else if (s.model == ModelKind::pfa) {
      weight[i] = glob.r_star / K_res;
    } else {
      weight[i] = glob.gamma0 / K_res;
    }
  }

  RngStream g = base.derive(1ULL << 40);
  if (s.model == ModelKind::dcmlda) {
    const double scale = 1.0 / (glob.c0 + gamma_process_log_mass(s));
    d.r.resize(K);
    for (int i = 0; i < K; ++i) {
      double shape;
      if (i < K_act) {
        shape = lat.factor_total[slots[i]] + (fixed ? glob.gamma0 / s.num_factors() : 0.0);
      } else {
        shape = glob.gamma0 / K_res;
      }
      d.r[i] = sample_gamma(floored(shape), scale, g);
    }
    return d;
  }

  d.theta.assign(J, std::vector<double>(K));
  parallel_for(J, [&](std::size_t j) {
    RngStream gj = base.derive((2ULL << 40) + j);
    const double scale = s.model == ModelKind::nbfa
                             ? 1.0 / (s.samples.c[j] - std::log1p(-s.samples.p[j]))
                             : s.samples.p[j];
    for (int i = 0; i < K; ++i) {
      const double count = i < K_act ? lat.doc_factor[slots[i]][j] : 0.0;
      d.theta[j][i] = sample_gamma(floored(weight[i] + count), scale, gj);
    }
  });
  return d;
}

// Perplexity

PerplexityAccumulator::PerplexityAccumulator(SparseCountMatrix train, SparseCountMatrix test)
    : train_(std::move(train)), test_(std::move(test)) {
  if (train_.num_rows() != test_.num_rows() || train_.num_cols() != test_.num_cols()) {
    throw ConfigError("train and test matrices differ in shape");
  }
  train_count_.resize(test_.nnz());
  for (int j = 0; j < test_.num_cols(); ++j) {
    for (std::size_t c = test_.col_begin(j); c < test_.col_end(j); ++c) {
      train_count_[c] = train_.count(test_.cell_row(c), j);
    }
  }
  numer_.assign(test_.nnz(), 0.0);
  norm_.assign(test_.num_cols(), 0.0);
}

void PerplexityAccumulator::add(int j, std::span<const double> test_rates, double normalizer) {
  const std::size_t lo = test_.col_begin(j);
  if (test_rates.size() != test_.col_end(j) - lo) {
    throw std::logic_error("perplexity: rate count does not match test cells");
  }
  for (std::size_t i = 0; i < test_rates.size(); ++i) numer_[lo + i] += test_rates[i];
  norm_[j] += normalizer;
}

void PerplexityAccumulator::accumulate(const PosteriorDraw &d) {
  const int J = test_.num_cols();
  const int K = d.num_factors();
  if (static_cast<int>(d.p.size()) != J ||
      (K > 0 && static_cast<int>(d.phi[0].size()) != test_.num_rows()) ||
      (d.model != ModelKind::dcmlda && static_cast<int>(d.theta.size()) != J)) {
    throw std::logic_error("perplexity: draw dimensions do not match the corpus");
  }
  // Column sums of phi make the full-vocabulary normalizer O(K) per sample:
  // sum_v sum_k phi_vk x_k = sum_k x_k sum_v phi_vk.
  std::vector<double> colsum(K);
  for (int k = 0; k < K; ++k) colsum[k] = std::accumulate(d.phi[k].begin(), d.phi[k].end(), 0.0);
  double global_mass = 0.0;
  if (d.model == ModelKind::dcmlda) {
    for (int k = 0; k < K; ++k) global_mass += colsum[k] * d.r[k];
  }
  parallel_for(J, [&](std::size_t jj) {
    const int j = static_cast<int>(jj);
    double mass = global_mass;
    if (d.model != ModelKind::dcmlda) {
      mass = 0.0;
      for (int k = 0; k < K; ++k) mass += colsum[k] * d.theta[j][k];
    }
    const double norm =
        d.model == ModelKind::pfa ? mass : (train_.col_sum(j) + mass) * d.p[j];
    for (std::size_t c = test_.col_begin(j); c < test_.col_end(j); ++c) {
      numer_[c] += estimated_poisson_rate(d, test_.cell_row(c), j, train_count_[c]);
    }
    norm_[j] += norm;
  });
  ++draws_;
}

void accumulate(PerplexityAccumulator &acc, const PosteriorDraw &draw) { acc.accumulate(draw); }

double perplexity(const PerplexityAccumulator &acc) {
  if (acc.draws() < 1) throw NumericError("perplexity: no collected samples");
  const auto &test = acc.test();
  if (test.total() < 1) throw NumericError("perplexity: no test tokens");
  const auto numer = acc.numerators();
  const auto norm = acc.normalizers();
  double sum = 0.0;
  for (int j = 0; j < test.num_cols(); ++j) {
    if (test.col_begin(j) == test.col_end(j)) continue;
    if (!(norm[j] > 0.0)) throw NumericError("perplexity: zero normalizer for sample " + std::to_string(j));
    const double log_norm = std::log(norm[j]);
    for (std::size_t c = test.col_begin(j); c < test.col_end(j); ++c) {
      if (!(numer[c] > 0.0)) throw NumericError("perplexity: zero predictive rate");
      sum += test.cell_count(c) * (std::log(numer[c]) - log_norm);
    }
  }
  return std::exp(-sum / static_cast<double>(test.total()));
}

TrainResult train_and_evaluate(const ChainConfig &config, const SparseCountMatrix &counts,
                               double train_fraction, std::uint64_t split_seed) {
  config.validate();
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    throw ConfigError("train fraction must lie in (0, 1]");
  }
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult out;
  std::optional<PerplexityAccumulator> acc;
  const SparseCountMatrix *train = &counts;
  HeldoutSplit split;
  if (train_fraction < 1.0) {
    split = split_heldout(counts, train_fraction, RngStream(split_seed, 0x73706c6974ULL));
    acc.emplace(split.train, split.test);
    train = &split.train;
  }
  RngStream draw_rng(config.seed, 0x64726177ULL);
  CollectHook hook;
  if (acc) {
    hook = [&](const ModelState &state, long) { acc->accumulate(posterior_draw(state, draw_rng)); };
  }
  out.chain = run_chain(config, *train, hook);
  out.S = static_cast<int>(out.chain.collected);
  if (acc && acc->test().total() > 0) out.perplexity = perplexity(*acc);
  double sum = 0.0;
  long n = 0;
  for (const auto &r : out.chain.trace.records) {
    if (r.iteration > config.burn_in) {
      sum += r.K_active;
      ++n;
    }
  }
  out.K_active_mean = n ? sum / n : 0.0;
  out.wall_minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  return out;
}

// Features

FeatureMatrix extract_features(const ModelState &trained, const SparseCountMatrix &docs,
                               const FeatureConfig &config) {
  if (trained.model == ModelKind::dcmlda) {
    throw CapabilityError("DCMLDA shares its factor scores across samples and has no "
                          "sample-specific feature vectors");
  }
  if (docs.num_rows() != trained.num_terms) {
    throw ConfigError("corpus has " + std::to_string(docs.num_rows()) +
                      " covariates but the checkpoint was trained on " +
                      std::to_string(trained.num_terms));
  }
  if (config.iterations < 1 || config.collect_last < 1 || config.collect_last > config.iterations) {
    throw ConfigError("features need 1 <= collect_last <= iterations");
  }
  const auto slots = drawn_slots(trained);
  const int K = static_cast<int>(slots.size());
  if (K == 0) throw ConfigError("checkpoint has no active factors");
  const int V = trained.num_terms;
  const double eta = trained.hyper.eta;
  const auto &h = trained.hyper;
  const bool nbfa = trained.model == ModelKind::nbfa;

  // Frozen posterior-mean factors (word-major for per-cell access) and weights.
  std::vector<std::vector<double>> phi_vk(V, std::vector<double>(K));
  std::vector<double> r(K);
  double r_sum = 0.0;
  for (int i = 0; i < K; ++i) {
    const int k = slots[i];
    const double denom = V * eta + trained.latent.factor_total[k];
    for (int v = 0; v < V; ++v) phi_vk[v][i] = (eta + trained.latent.word_factor[k][v]) / denom;
    r[i] = trained.global.r[k];
    r_sum += r[i];
  }

  FeatureMatrix out;
  out.K = K;
  out.rows.assign(docs.num_cols(), std::vector<double>(K, 0.0));
  const RngStream base(config.seed, 0xfea7ULL);
  const int first_collect = config.iterations - config.collect_last + 1;
  parallel_for(docs.num_cols(), [&](std::size_t jj) {
    const int j = static_cast<int>(jj);
    RngStream g = base.derive(jj);
    const auto rows = docs.col_rows(j);
    const auto counts = docs.col_counts(j);
    const long n_j = docs.col_sum(j);
    std::vector<double> theta(K);
    std::vector<double> cum(K);
    std::vector<int> alloc(K);
    double c = h.e0 / h.f0;
    double p = 0.5;
    for (int i = 0; i < K; ++i) theta[i] = r[i] / c;
    auto &acc = out.rows[j];
    for (int it = 1; it <= config.iterations; ++it) {
      std::fill(alloc.begin(), alloc.end(), 0);
      for (std::size_t e = 0; e < rows.size(); ++e) {
        const auto &phi = phi_vk[rows[e]];
        for (int i = 0; i < K; ++i) cum[i] = (i ? cum[i - 1] : 0.0) + phi[i] * theta[i];
        const double total = cum[K - 1];
        // NBFA splits CRT tables, PFA splits tokens.
        const int m = nbfa ? sample_crt(counts[e], std::max(total, 1e-300), g) : counts[e];
        for (int t = 0; t < m; ++t) {
          const double u = g.uniform() * total;
          const auto pos = std::upper_bound(cum.begin(), cum.end(), u) - cum.begin();
          ++alloc[std::min<std::ptrdiff_t>(pos, K - 1)];
        }
      }
      double theta_sum = std::accumulate(theta.begin(), theta.end(), 0.0);
      if (nbfa) {
        p = std::clamp(sample_beta(h.a0 + n_j, h.b0 + theta_sum, g), 1e-12, 1.0 - 1e-12);
        c = sample_gamma(h.e0 + r_sum, 1.0 / (h.f0 + theta_sum), g);
        const double scale = 1.0 / (c - std::log1p(-p));
        for (int i = 0; i < K; ++i) theta[i] = sample_gamma(floored(r[i] + alloc[i]), scale, g);
      } else {
        p = std::clamp(sample_beta(h.a0 + n_j, h.b0 + r_sum, g), 1e-12, 1.0 - 1e-12);
        for (int i = 0; i < K; ++i) theta[i] = sample_gamma(floored(r[i] + alloc[i]), p, g);
      }
      if (it >= first_collect) {
        theta_sum = std::accumulate(theta.begin(), theta.end(), 0.0);
        for (int i = 0; i < K; ++i) acc[i] += theta[i] / theta_sum;
      }
    }
    const double total = std::accumulate(acc.begin(), acc.end(), 0.0);
    for (double &x : acc) x /= total;
  });
  return out;
}

void write_features_csv(const FeatureMatrix &features, std::ostream &out) {
  for (int k = 0; k < features.K; ++k) out << (k ? "," : "") << 'f' << (k + 1);
  out << '\n';
  out << std::setprecision(17);
  for (const auto &row : features.rows) {
    for (std::size_t k = 0; k < row.size(); ++k) out << (k ? "," : "") << row[k];
    out << '\n';
  }
}

// Diagnostics

DiagnosticsReport diagnostics(const ChainTrace &trace, int window) {
  if (window < 1) window = 1;
  DiagnosticsReport rep;
  const auto &recs = trace.records;
  const std::size_t n = recs.size();
  double running = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    rep.iteration.push_back(recs[i].iteration);
    rep.K_active.push_back(recs[i].K_active);
    rep.assign_ops.push_back(recs[i].assign_ops);
    rep.wall_ms.push_back(recs[i].wall_ms);
    running += recs[i].K_active;
    if (i >= static_cast<std::size_t>(window)) running -= recs[i - window].K_active;
    const double len = static_cast<double>(std::min<std::size_t>(i + 1, window));
    rep.K_moving_average.push_back(running / len);
  }
  if (n == 0) return rep;
  for (std::size_t i = 0; i < n; ++i) {
    rep.K_mean += recs[i].K_active;
    rep.ops_mean += static_cast<double>(recs[i].assign_ops);
    rep.wall_ms_mean += recs[i].wall_ms;
  }
  rep.K_mean /= n;
  rep.ops_mean /= n;
  rep.wall_ms_mean /= n;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = recs[i].K_active - rep.K_mean;
    rep.K_variance += d * d;
  }
  rep.K_variance /= n;
  return rep;
}

void write_diagnostics_csv(const DiagnosticsReport &rep, std::ostream &out) {
  out << "iteration,K_active,K_moving_average,assign_ops,wall_ms\n";
  for (std::size_t i = 0; i < rep.iteration.size(); ++i) {
    out << rep.iteration[i] << ',' << rep.K_active[i] << ',' << std::setprecision(10)
        << rep.K_moving_average[i] << ',' << rep.assign_ops[i] << ',' << rep.wall_ms[i] << '\n';
  }
}

void write_k_plot_svg(std::span<const LabeledTrace> traces, std::ostream &out) {
  constexpr double W = 800, H = 480, L = 60, R = 170, T = 30, B = 50;
  static const char *colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                 "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};
  long max_it = 1;
  int max_k = 1;
  for (const auto &lt : traces) {
    for (const auto &r : lt.trace->records) {
      max_it = std::max(max_it, r.iteration);
      max_k = std::max(max_k, r.K_active);
    }
  }
  const double pw = W - L - R;
  const double ph = H - T - B;
  auto x_of = [&](double it) { return L + pw * it / max_it; };
  auto y_of = [&](double k) { return T + ph * (1.0 - k / max_k); };
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << T + ph << "\" x2=\"" << L + pw << "\" y2=\"" << T + ph
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << T + ph
      << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double it = max_it * i / 4.0;
    const double k = max_k * i / 4.0;
    out << "<text x=\"" << x_of(it) << "\" y=\"" << T + ph + 18 << "\" text-anchor=\"middle\">"
        << std::lround(it) << "</text>\n";
    out << "<text x=\"" << L - 8 << "\" y=\"" << y_of(k) + 4 << "\" text-anchor=\"end\">"
        << std::setprecision(3) << k << "</text>\n";
  }
  out << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">iteration</text>\n";
  out << "<text x=\"15\" y=\"" << T + ph / 2 << "\" transform=\"rotate(-90 15 " << T + ph / 2
      << ")\" text-anchor=\"middle\">K+</text>\n";
  for (std::size_t s = 0; s < traces.size(); ++s) {
    const char *color = colors[s % std::size(colors)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.2\" points=\"";
    for (const auto &r : traces[s].trace->records) {
      out << std::setprecision(6) << x_of(r.iteration) << ',' << y_of(r.K_active) << ' ';
    }
    out << "\"/>\n";
    const double ly = T + 16 + 18.0 * s;
    out << "<line x1=\"" << L + pw + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << L + pw + 32
        << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << L + pw + 38 << "\" y=\"" << ly << "\">";
    for (char ch : traces[s].label) {
      if (ch == '<') out << "&lt;";
      else if (ch == '>') out << "&gt;";
      else if (ch == '&') out << "&amp;";
      else out << ch;
    }
    out << "</text>\n";
  }
  out << "</svg>\n";
}

} // namespace nbfa
