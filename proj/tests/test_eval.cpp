#include "doctest.h"
#include "oracles.hpp"

#include "nbfa/errors.hpp"
#include "nbfa/eval.hpp"
#include "nbfa/synthetic.hpp"

#include <sstream>

using namespace nbfa;

namespace {

Hyperparams tame() {
  Hyperparams h;
  h.a0 = h.b0 = 1.0;
  h.eta = 0.5;
  return h;
}

std::vector<double> rates_of(const PerplexityAccumulator &acc, int j, double value) {
  return std::vector<double>(acc.test().col_end(j) - acc.test().col_begin(j), value);
}

} // namespace

TEST_CASE("perplexity hand cases") {
  // lambda = (3, 1) over two terms, one test token on term 1
  SparseCountMatrix train(2, {{}});
  SparseCountMatrix test(2, {{{0, 1}}});
  PerplexityAccumulator acc(train, test);
  acc.add(0, std::vector<double>{3.0}, 4.0);
  acc.finish_draw();
  CHECK(perplexity(acc) == doctest::Approx(4.0 / 3.0).epsilon(1e-15));

  // uniform predictive over V = 100
  std::vector<std::vector<SparseCountMatrix::Entry>> cols(3);
  cols[0] = {{4, 2}, {17, 1}};
  cols[1] = {{99, 5}};
  cols[2] = {{0, 1}, {50, 3}};
  SparseCountMatrix wide(100, cols);
  PerplexityAccumulator uni(SparseCountMatrix(100, std::vector<std::vector<SparseCountMatrix::Entry>>(3)), wide);
  for (int j = 0; j < 3; ++j) uni.add(j, rates_of(uni, j, 1.0), 100.0);
  uni.finish_draw();
  CHECK(perplexity(uni) == doctest::Approx(100.0).epsilon(1e-12));

  // all predictive mass on the single heldout term
  PerplexityAccumulator sure(train, test);
  sure.add(0, std::vector<double>{2.5}, 2.5);
  sure.finish_draw();
  CHECK(perplexity(sure) == doctest::Approx(1.0).epsilon(1e-15));

  PerplexityAccumulator none(train, test);
  CHECK_THROWS_AS(perplexity(none), NumericError);
  none.add(0, std::vector<double>{1.0}, 0.0);
  none.finish_draw();
  CHECK_THROWS_AS(perplexity(none), NumericError);
  CHECK_THROWS_AS(none.add(0, std::vector<double>{1.0, 2.0}, 1.0), std::logic_error);
}

TEST_CASE("accumulating model draws") {
  const auto corpus = nbfa_corpus(15, 6, 3, 40, 0.2, RngStream(1, 0)).counts;
  const auto split = split_heldout(corpus, 0.7, RngStream(2, 0));
  for (auto model : {ModelKind::nbfa, ModelKind::pfa, ModelKind::dcmlda}) {
    CAPTURE(to_string(model));
    const auto sampler = model == ModelKind::pfa ? SamplerKind::collapsed : SamplerKind::cp_blocked;
    auto s = init_state(model, sampler, Truncation::adaptive, model == ModelKind::pfa ? 0 : 4, 5,
                        tame(), split.train, RngStream(3, 0));
    RngStream rng(4, 0);
    for (int it = 0; it < 20; ++it) step(s, rng);
    const auto draw = posterior_draw(s, rng);
    CHECK(draw.num_factors() == s.global.K_active + s.global.K_star);

    PerplexityAccumulator one(split.train, split.test), two(split.train, split.test);
    accumulate(one, draw);
    accumulate(two, draw);
    accumulate(two, draw);
    CHECK(two.draws() == 2);
    for (std::size_t i = 0; i < one.numerators().size(); ++i)
      CHECK(two.numerators()[i] == doctest::Approx(2 * one.numerators()[i]).epsilon(1e-14));
    for (std::size_t j = 0; j < one.normalizers().size(); ++j)
      CHECK(two.normalizers()[j] == doctest::Approx(2 * one.normalizers()[j]).epsilon(1e-14));
    CHECK(perplexity(two) == doctest::Approx(perplexity(one)).epsilon(1e-12));

    // normalizers against a dense pass over the whole vocabulary
    for (int j = 0; j < corpus.num_cols(); ++j) {
      double dense = 0;
      for (int v = 0; v < corpus.num_rows(); ++v)
        dense += estimated_poisson_rate(draw, v, j, split.train.count(v, j));
      CHECK(one.normalizers()[j] == doctest::Approx(dense).epsilon(1e-12));
      std::size_t c = split.test.col_begin(j);
      for (int v : split.test.col_rows(j))
        CHECK(one.numerators()[c++] ==
              doctest::Approx(estimated_poisson_rate(draw, v, j, split.train.count(v, j))).epsilon(1e-14));
    }

    // a per-sample constant cancels
    PerplexityAccumulator scaled(split.train, split.test);
    for (int j = 0; j < corpus.num_cols(); ++j) {
      std::vector<double> r(one.numerators().begin() + split.test.col_begin(j),
                            one.numerators().begin() + split.test.col_end(j));
      const double factor = j == 2 ? 7.3 : 1.0;
      for (double &x : r) x *= factor;
      scaled.add(j, r, one.normalizers()[j] * factor);
    }
    scaled.finish_draw();
    CHECK(perplexity(scaled) == doctest::Approx(perplexity(one)).epsilon(1e-12));
  }
}

TEST_CASE("posterior draws") {
  const auto corpus = nbfa_corpus(10, 4, 2, 30, 0.3, RngStream(5, 0)).counts;
  // PFA scores use p_j as the gamma scale
  auto pfa = init_state(ModelKind::pfa, SamplerKind::collapsed, Truncation::adaptive, 0, 3, tame(),
                        corpus, RngStream(6, 0));
  RngStream rng(7, 0);
  for (int it = 0; it < 10; ++it) step(pfa, rng);
  pfa.samples.p[1] = 0.37;
  const int k0 = 0;
  const double shape = pfa.global.r[k0] + pfa.latent.doc_factor[k0][1];
  std::vector<double> draws(20000), reserve(20000);
  const int K_act = pfa.global.K_active;
  for (std::size_t i = 0; i < draws.size(); ++i) {
    const auto d = posterior_draw(pfa, rng);
    REQUIRE(d.num_factors() == K_act + 3);
    draws[i] = d.theta[1][0];
    reserve[i] = d.theta[1][K_act];
  }
  CHECK(oracle::ks_pvalue(draws, oracle::gamma_cdf(shape, 0.37)) > 0.001);
  CHECK(oracle::ks_pvalue(reserve, oracle::gamma_cdf(pfa.global.r_star / 3, 0.37)) > 0.001);

  // reserve NBFA slots: phi ~ Dir(eta), so one coordinate is Beta(eta, (V - 1) eta)
  auto nb = init_state(ModelKind::nbfa, SamplerKind::cp_blocked, Truncation::adaptive, 3, 4, tame(),
                       corpus, RngStream(8, 0));
  for (int it = 0; it < 10; ++it) step(nb, rng);
  std::vector<double> coord(20000);
  for (auto &x : coord) {
    const auto d = posterior_draw(nb, rng);
    REQUIRE(d.num_factors() == nb.global.K_active + 4);
    x = d.phi.back()[3];
  }
  CHECK(oracle::ks_pvalue(coord, oracle::beta_cdf(0.5, 9 * 0.5)) > 0.001);

  auto fixed = init_state(ModelKind::nbfa, SamplerKind::cp_blocked, Truncation::fixed, 6, 4, tame(),
                          corpus, RngStream(9, 0));
  CHECK(posterior_draw(fixed, rng).num_factors() == 6);
}

TEST_CASE("trained model beats the uniform predictive") {
  const auto corpus = nbfa_corpus(30, 30, 3, 80, 0.1, RngStream(10, 0)).counts;
  ChainConfig cfg;
  cfg.K_init = 5;
  cfg.K_star = 5;
  cfg.hyper = tame();
  cfg.iterations = 300;
  cfg.burn_in = 150;
  cfg.collect_every = 5;
  const auto res = train_and_evaluate(cfg, corpus, 0.8, 3);
  REQUIRE(res.perplexity.has_value());
  CHECK(res.S == 30);
  CHECK(*res.perplexity < 30.0);
  CHECK(res.K_active_mean > 0);
  CHECK_FALSE(train_and_evaluate(cfg, corpus, 1.0, 3).perplexity.has_value());
}

TEST_CASE("feature extraction") {
  const auto corpus = from_dense(4, {{3, 3, 3, 3}, {5, 0, 1, 0}, {0, 0, 0, 0}});
  FeatureConfig fc;
  fc.iterations = 200;
  fc.collect_last = 100;

  auto one = init_state(ModelKind::nbfa, SamplerKind::cp_blocked, Truncation::fixed, 1, 0, tame(),
                        corpus, RngStream(11, 0));
  const auto f1 = extract_features(one, corpus, fc);
  CHECK(f1.K == 1);
  REQUIRE(f1.rows.size() == 3);
  for (const auto &row : f1.rows) CHECK(row == std::vector<double>{1.0});

  auto dcm = init_state(ModelKind::dcmlda, SamplerKind::cp_blocked, Truncation::fixed, 2, 0, tame(),
                        corpus, RngStream(12, 0));
  CHECK_THROWS_AS(extract_features(dcm, corpus, fc), CapabilityError);
  CHECK_THROWS_AS(extract_features(one, from_dense(3, {{1, 1, 1}}), fc), ConfigError);

  // two mirror-image factors and samples that use both halves equally
  const std::vector<std::vector<int>> symmetric(20, {3, 3, 3, 3});
  const auto sym_corpus = from_dense(4, symmetric);
  for (auto model : {ModelKind::nbfa, ModelKind::pfa}) {
    const auto sampler = model == ModelKind::pfa ? SamplerKind::collapsed : SamplerKind::cp_blocked;
    auto s = init_state(model, sampler, Truncation::fixed, 2, 0, tame(), sym_corpus, RngStream(13, 0));
    s.latent.word_factor = {{9, 9, 1, 1}, {1, 1, 9, 9}};
    s.latent.factor_total = {20, 20};
    s.global.r = {1.5, 1.5};
    const auto f = extract_features(s, sym_corpus, fc);
    std::vector<double> first;
    for (const auto &row : f.rows) {
      CHECK(row[0] + row[1] == doctest::Approx(1.0).epsilon(1e-12));
      first.push_back(row[0]);
    }
    const auto m = oracle::moments(first);
    CHECK(std::fabs(m.mean - 0.5) < 3 * m.se + 1e-3);
    std::ostringstream a, b;
    write_features_csv(f, a);
    write_features_csv(extract_features(s, sym_corpus, fc), b);
    CHECK(a.str() == b.str());
    CHECK(a.str().rfind("f1,f2\n", 0) == 0);
  }

  FeatureConfig paper;
  CHECK(paper.iterations == 1000);
  CHECK(paper.collect_last == 500);
}

TEST_CASE("diagnostics") {
  ChainTrace flat;
  for (long i = 1; i <= 30; ++i) flat.records.push_back({i, 7, 0.0, 1.0, 100});
  const auto rep = diagnostics(flat, 10);
  CHECK(rep.iteration.size() == 30);
  CHECK(rep.K_variance == 0.0);
  CHECK(rep.K_mean == 7.0);
  CHECK(rep.K_moving_average.back() == 7.0);
  CHECK(rep.assign_ops == std::vector<long>(30, 100));
  std::ostringstream csv;
  write_diagnostics_csv(rep, csv);
  const auto rows = csv.str();
  CHECK(std::count(rows.begin(), rows.end(), '\n') == 31);

  ChainTrace ramp;
  for (long i = 1; i <= 4; ++i) ramp.records.push_back({i, static_cast<int>(i), 0.0, 0.0, 0});
  const auto r2 = diagnostics(ramp, 2);
  CHECK(r2.K_moving_average == std::vector<double>{1.0, 1.5, 2.5, 3.5});

  const LabeledTrace series[] = {{"blocked", &flat}, {"cp", &ramp}, {"a<b", &flat}};
  std::ostringstream svg;
  write_k_plot_svg(series, svg);
  const auto text = svg.str();
  std::size_t lines = 0;
  for (std::size_t pos = 0; (pos = text.find("<polyline", pos)) != std::string::npos; ++pos) ++lines;
  CHECK(lines == 3);
  CHECK(text.find("a&lt;b") != std::string::npos);
}

TEST_CASE("compound-Poisson work on long samples") {
  const auto corpus = nbfa_corpus(20, 10, 3, 2000, 0.1, RngStream(14, 0)).counts;
  ChainConfig cfg;
  cfg.K_init = 10;
  cfg.truncation = Truncation::fixed;
  cfg.iterations = 6;
  cfg.burn_in = 1;
  cfg.hyper = tame();
  cfg.trace_log_joint = false;
  cfg.sampler = SamplerKind::cp_blocked;
  const auto cp = run_chain(cfg, corpus);
  cfg.sampler = SamplerKind::blocked;
  const auto bl = run_chain(cfg, corpus);
  // token-level work is n K; table-level work is n for the CRT plus one draw per table
  for (const auto &rec : bl.trace.records) CHECK(rec.assign_ops == corpus.total() * 10);
  for (const auto &rec : cp.trace.records) {
    CHECK(rec.assign_ops > corpus.total());
    CHECK(rec.assign_ops <= 2 * corpus.total());
  }
  const double ratio = diagnostics(cp.trace).ops_mean / diagnostics(bl.trace).ops_mean;
  CHECK(ratio < 0.5);
}
