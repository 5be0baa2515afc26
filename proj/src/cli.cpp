#include "nbfa/cli.hpp"

#include "nbfa/corpus.hpp"
#include "nbfa/errors.hpp"
#include "nbfa/eval.hpp"
#include "nbfa/samplers.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <optional>
#include <sstream>

namespace nbfa {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

constexpr const char *kVersion = "0.1.0";

/// Error carrying its exit code through the command handlers.
struct CliError : std::runtime_error {
  CliError(int code, const std::string &what) : std::runtime_error(what), code(code) {}
  int code;
};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

std::string hex64(std::uint64_t x) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << x;
  return s.str();
}

void write_json(const fs::path &path, const json &j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CliError(kExitFailure, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::ofstream open_out(const fs::path &path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CliError(kExitFailure, "cannot write " + path.string());
  return out;
}

Corpus read_corpus(const std::string &path, const std::string &format, const std::string &vocab) {
  if (!fs::exists(path)) throw CliError(kExitUsage, "no such corpus file: " + path);
  std::optional<fs::path> v;
  if (!vocab.empty()) v = vocab;
  try {
    return load_bow(path, parse_corpus_format(format), v);
  } catch (const ParseError &e) {
    throw CliError(kExitUsage, std::string("corpus: ") + e.what());
  }
}

// Settings

json eta_json(const Hyperparams &h) {
  return h.eta_sampled ? json("sample") : json(h.eta);
}

void set_eta(Hyperparams &h, const std::string &text) {
  if (text == "sample") {
    h.eta_sampled = true;
    return;
  }
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception &) {
    used = 0;
  }
  if (used != text.size() || !(v > 0)) throw CliError(kExitUsage, "--eta takes a positive number or 'sample'");
  h.eta = v;
  h.eta_sampled = false;
}

json settings_json(const TrainSettings &s) {
  return json{{"model", to_string(s.model)},
              {"sampler", to_string(s.sampler)},
              {"truncation", to_string(s.truncation)},
              {"iters", s.iterations},
              {"burnin", s.burn_in},
              {"thin", s.thin},
              {"K-init", s.K_init},
              {"K-star", s.K_star},
              {"eta", eta_json(s.hyper)},
              {"a0", s.hyper.a0},
              {"b0", s.hyper.b0},
              {"e0", s.hyper.e0},
              {"f0", s.hyper.f0},
              {"train-fraction", s.train_fraction},
              {"seed", s.seed},
              {"checkpoint-every", s.checkpoint_every},
              {"chains", s.chains}};
}

/// Applies a config file object; keys use the flag spellings.
void apply_config(TrainSettings &s, const json &cfg) {
  if (!cfg.is_object()) throw CliError(kExitUsage, "config file must hold a JSON object");
  try {
    for (const auto &[key, value] : cfg.items()) {
      if (key == "model") s.model = parse_model_kind(value.get<std::string>());
      else if (key == "sampler") s.sampler = parse_sampler_kind(value.get<std::string>());
      else if (key == "truncation") s.truncation = parse_truncation(value.get<std::string>());
      else if (key == "iters") s.iterations = value.get<int>();
      else if (key == "burnin") s.burn_in = value.get<int>();
      else if (key == "thin") s.thin = value.get<int>();
      else if (key == "K-init") s.K_init = value.get<int>();
      else if (key == "K-star") s.K_star = value.get<int>();
      else if (key == "eta") set_eta(s.hyper, value.is_string() ? value.get<std::string>() : value.dump());
      else if (key == "a0") s.hyper.a0 = value.get<double>();
      else if (key == "b0") s.hyper.b0 = value.get<double>();
      else if (key == "e0") s.hyper.e0 = value.get<double>();
      else if (key == "f0") s.hyper.f0 = value.get<double>();
      else if (key == "train-fraction") s.train_fraction = value.get<double>();
      else if (key == "seed") s.seed = value.get<std::uint64_t>();
      else if (key == "checkpoint-every") s.checkpoint_every = value.get<int>();
      else if (key == "chains") s.chains = value.get<int>();
      else throw CliError(kExitUsage, "unknown config key '" + key + "'");
    }
  } catch (const json::exception &e) {
    throw CliError(kExitUsage, std::string("config file: ") + e.what());
  } catch (const ConfigError &e) {
    throw CliError(kExitUsage, std::string("config file: ") + e.what());
  }
}

struct TrainFlags {
  std::optional<std::string> model, sampler, truncation, eta;
  std::optional<int> iters, burnin, thin, K_init, K_star, checkpoint_every, chains;
  std::optional<double> a0, b0, e0, f0, train_fraction;
  std::optional<std::uint64_t> seed;
};

TrainSettings resolve(const TrainFlags &f, const std::string &config_path) {
  TrainSettings s;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw CliError(kExitUsage, "cannot read config file " + config_path);
    json cfg;
    try {
      cfg = json::parse(in);
    } catch (const json::exception &e) {
      throw CliError(kExitUsage, std::string("config file: ") + e.what());
    }
    apply_config(s, cfg);
  }
  if (f.model) s.model = parse_model_kind(*f.model);
  if (f.sampler) s.sampler = parse_sampler_kind(*f.sampler);
  if (f.truncation) s.truncation = parse_truncation(*f.truncation);
  if (f.eta) set_eta(s.hyper, *f.eta);
  if (f.iters) s.iterations = *f.iters;
  if (f.burnin) s.burn_in = *f.burnin;
  if (f.thin) s.thin = *f.thin;
  if (f.K_init) s.K_init = *f.K_init;
  if (f.K_star) s.K_star = *f.K_star;
  if (f.checkpoint_every) s.checkpoint_every = *f.checkpoint_every;
  if (f.chains) s.chains = *f.chains;
  if (f.a0) s.hyper.a0 = *f.a0;
  if (f.b0) s.hyper.b0 = *f.b0;
  if (f.e0) s.hyper.e0 = *f.e0;
  if (f.f0) s.hyper.f0 = *f.f0;
  if (f.train_fraction) s.train_fraction = *f.train_fraction;
  if (f.seed) s.seed = *f.seed;
  return s;
}

ChainConfig chain_config(const TrainSettings &s, std::uint64_t seed, const fs::path &dir) {
  ChainConfig c;
  c.model = s.model;
  c.sampler = s.sampler;
  c.truncation = s.truncation;
  c.iterations = s.iterations;
  c.burn_in = s.burn_in;
  c.collect_every = s.thin;
  c.K_init = s.K_init;
  c.K_star = s.K_star;
  c.hyper = s.hyper;
  c.seed = seed;
  c.trace_log_joint = true;
  c.checkpoint_every = s.checkpoint_every;
  c.checkpoint_dir = dir / "checkpoints";
  return c;
}

/// Chain 0 keeps the given seed; further chains take child streams of it.
std::uint64_t chain_seed(std::uint64_t seed, int i) {
  if (i == 0) return seed;
  return RngStream(seed, 0x6368ULL).derive(static_cast<std::uint64_t>(i)).next_u64();
}

json run_report(const TrainSettings &s, std::uint64_t seed, const TrainResult &r) {
  json rep{{"model", to_string(s.model)},
           {"sampler", to_string(s.sampler)},
           {"eta", eta_json(s.hyper)},
           {"train_fraction", s.train_fraction},
           {"seed", seed},
           {"S", r.S}};
  if (r.perplexity) rep["perplexity"] = *r.perplexity;
  rep["K_active_mean"] = r.K_active_mean;
  rep["wall_minutes"] = r.wall_minutes;
  return rep;
}

// Commands

int cmd_ingest(const std::string &input, const std::string &format, const std::string &vocab,
               int min_doc_freq, const std::string &out_dir, std::ostream &out) {
  const auto corpus = read_corpus(input, format, vocab);
  Corpus pruned;
  try {
    pruned = prune_vocabulary(corpus, min_doc_freq);
  } catch (const std::invalid_argument &e) {
    throw CliError(kExitConfig, e.what());
  }
  fs::create_directories(out_dir);
  write_uci_bow(pruned.counts, fs::path(out_dir) / "corpus.txt");
  write_vocabulary(pruned.vocab, fs::path(out_dir) / "vocab.txt");
  out << "ingested " << pruned.counts.num_cols() << " samples, " << pruned.vocab.size() << " of "
      << corpus.vocab.size() << " covariates kept (min_doc_freq " << min_doc_freq << ")\n";
  return kExitOk;
}

int cmd_train(const std::string &input, const std::string &format, const std::string &vocab,
              const TrainSettings &s, const std::string &out_dir, std::ostream &out) {
  if (!is_supported(s.model, s.sampler)) {
    throw CliError(kExitConfig, "model " + to_string(s.model) + " has no " + to_string(s.sampler) +
                                    " sampler; PFA supports collapsed only");
  }
  if (s.chains < 1) throw CliError(kExitConfig, "--chains must be at least 1");
  if (!(s.train_fraction > 0 && s.train_fraction <= 1)) {
    throw CliError(kExitConfig, "--train-fraction must lie in (0, 1]");
  }
  try {
    s.hyper.validate();
    chain_config(s, s.seed, out_dir).validate();
  } catch (const std::invalid_argument &e) {
    throw CliError(kExitConfig, e.what());
  }
  const auto corpus = read_corpus(input, format, vocab);
  const fs::path root(out_dir);
  fs::create_directories(root);

  json manifest{{"software", "nbfa"},
                {"version", kVersion},
                {"command", "train"},
                {"corpus", {{"path", input},
                            {"format", format},
                            {"digest", hex64(corpus.counts.digest())},
                            {"V", corpus.counts.num_rows()},
                            {"J", corpus.counts.num_cols()}}},
                {"config", settings_json(s)},
                {"seed", s.seed},
                {"started_at", utc_now()}};

  const auto run_one = [&](int i) {
    const fs::path dir = s.chains == 1 ? root : root / ("chain_" + std::to_string(i + 1));
    fs::create_directories(dir);
    const auto seed = chain_seed(s.seed, i);
    const auto res = train_and_evaluate(chain_config(s, seed, dir), corpus.counts, s.train_fraction, seed);
    auto trace = open_out(dir / "trace.csv");
    write_trace_csv(res.chain.trace, trace);
    save_checkpoint(res.chain.state, dir / "state.json");
    const auto rep = run_report(s, seed, res);
    write_json(dir / "report.json", rep);
    return std::make_pair(dir, rep);
  };

  std::vector<std::pair<fs::path, json>> runs;
  if (s.chains == 1) {
    runs.push_back(run_one(0));
  } else {
    std::vector<std::future<std::pair<fs::path, json>>> jobs;
    for (int i = 0; i < s.chains; ++i) jobs.push_back(std::async(std::launch::async, run_one, i));
    for (auto &job : jobs) runs.push_back(job.get());
  }

  json outputs = json::array();
  for (const auto &[dir, rep] : runs) {
    outputs.push_back({{"trace", (dir / "trace.csv").string()},
                       {"state", (dir / "state.json").string()},
                       {"report", (dir / "report.json").string()},
                       {"seed", rep["seed"]}});
  }
  if (s.chains > 1) {
    // Per-run numbers plus their arithmetic means.
    json summary{{"model", to_string(s.model)},
                 {"sampler", to_string(s.sampler)},
                 {"eta", eta_json(s.hyper)},
                 {"train_fraction", s.train_fraction},
                 {"seed", s.seed}};
    double ppl = 0, K = 0, minutes = 0;
    long S = 0;
    json per = json::array();
    for (const auto &[dir, rep] : runs) {
      if (rep.contains("perplexity")) ppl += rep["perplexity"].get<double>();
      K += rep["K_active_mean"].get<double>();
      minutes += rep["wall_minutes"].get<double>();
      S += rep["S"].get<long>();
      per.push_back(rep);
    }
    summary["S"] = S;
    if (runs.front().second.contains("perplexity")) summary["perplexity"] = ppl / s.chains;
    summary["K_active_mean"] = K / s.chains;
    summary["wall_minutes"] = minutes;
    summary["chains"] = per;
    write_json(root / "report.json", summary);
  }
  manifest["finished_at"] = utc_now();
  manifest["outputs"] = outputs;
  write_json(root / "manifest.json", manifest);

  for (const auto &[dir, rep] : runs) {
    out << dir.string() << ": K+ mean " << rep["K_active_mean"].get<double>();
    if (rep.contains("perplexity")) out << ", perplexity " << rep["perplexity"].get<double>();
    out << '\n';
  }
  return kExitOk;
}

int cmd_features(const std::string &input, const std::string &format, const std::string &vocab,
                 const std::string &checkpoint, const FeatureConfig &fc, const std::string &out_path,
                 std::ostream &out) {
  if (!fs::exists(checkpoint)) throw CliError(kExitUsage, "no such checkpoint: " + checkpoint);
  ModelState state;
  try {
    state = load_checkpoint(checkpoint);
  } catch (const ParseError &e) {
    throw CliError(kExitSchema, std::string("checkpoint: ") + e.what());
  }
  if (state.model == ModelKind::dcmlda) {
    throw CliError(kExitCapability,
                   "DCMLDA shares its factor scores across samples, so it has no sample-specific "
                   "feature vectors; use a pfa or nbfa checkpoint");
  }
  const auto corpus = read_corpus(input, format, vocab);
  FeatureMatrix f;
  try {
    f = extract_features(state, corpus.counts, fc);
  } catch (const CapabilityError &e) {
    throw CliError(kExitCapability, e.what());
  } catch (const ConfigError &e) {
    throw CliError(kExitConfig, e.what());
  }
  auto csv = open_out(out_path);
  write_features_csv(f, csv);
  out << "wrote " << f.rows.size() << " x " << f.K << " features to " << out_path << '\n';
  return kExitOk;
}

std::string trace_label(const fs::path &p) {
  const auto stem = p.stem().string();
  if (stem == "trace" && p.has_parent_path() && !p.parent_path().filename().empty()) {
    return p.parent_path().filename().string();
  }
  return stem;
}

int cmd_diagnose(const std::vector<std::string> &paths, std::vector<std::string> labels, int window,
                 const std::string &out_dir, std::ostream &out) {
  if (!labels.empty() && labels.size() != paths.size()) {
    throw CliError(kExitUsage, "--labels needs one label per trace");
  }
  std::vector<ChainTrace> traces;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    std::ifstream in(paths[i]);
    if (!in) throw CliError(kExitUsage, "cannot read trace " + paths[i]);
    try {
      traces.push_back(read_trace_csv(in));
    } catch (const ParseError &e) {
      throw CliError(kExitSchema, paths[i] + ": " + e.what());
    }
    if (labels.size() < paths.size()) labels.push_back(trace_label(paths[i]));
  }
  const fs::path root(out_dir);
  fs::create_directories(root);

  auto merged = open_out(root / "diagnostics.csv");
  json summary = json::array();
  std::vector<LabeledTrace> series;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto rep = diagnostics(traces[i], window);
    std::ostringstream body;
    write_diagnostics_csv(rep, body);
    std::istringstream lines(body.str());
    std::string line;
    std::getline(lines, line);
    if (i == 0) merged << "trace," << line << '\n';
    while (std::getline(lines, line)) merged << labels[i] << ',' << line << '\n';
    summary.push_back({{"trace", labels[i]},
                       {"path", paths[i]},
                       {"iterations", rep.iteration.size()},
                       {"K_mean", rep.K_mean},
                       {"K_variance", rep.K_variance},
                       {"assign_ops_mean", rep.ops_mean},
                       {"wall_ms_mean", rep.wall_ms_mean}});
    series.push_back({labels[i], &traces[i]});
  }
  write_json(root / "summary.json", summary);
  auto svg = open_out(root / "k_active.svg");
  write_k_plot_svg(series, svg);
  out << "compared " << traces.size() << " trace(s) in " << root.string() << '\n';
  return kExitOk;
}

} // namespace

int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
  CLI::App app{"Negative binomial factor analysis: training, evaluation and features", "nbfa"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  const std::vector<std::string> formats{"uci-bow", "term-doc-triples"};

  std::string input, format = "uci-bow", vocab, out_dir;
  int min_doc_freq = 5;
  auto *ingest = app.add_subcommand("ingest", "Prune rare covariates and write a canonical corpus");
  ingest->add_option("input", input, "Bag-of-words file")->required();
  ingest->add_option("--format", format, "Input format")->check(CLI::IsMember(formats));
  ingest->add_option("--vocab", vocab, "One-term-per-line vocabulary sidecar");
  ingest->add_option("--min-doc-freq", min_doc_freq, "Keep covariates seen in this many samples")
      ->check(CLI::PositiveNumber);
  ingest->add_option("--out", out_dir, "Output directory (corpus.txt, vocab.txt)")->required();

  TrainFlags tf;
  std::string config_path;
  auto *train = app.add_subcommand("train", "Run a Gibbs chain and report heldout perplexity");
  train->add_option("corpus", input, "Canonical corpus file")->required();
  train->add_option("--format", format, "Corpus format")->check(CLI::IsMember(formats));
  train->add_option("--vocab", vocab, "Vocabulary sidecar");
  train->add_option("--config", config_path, "JSON file of defaults; flags take precedence");
  train->add_option("--model", tf.model, "pfa, dcmlda or nbfa [nbfa]")
      ->check(CLI::IsMember({"pfa", "dcmlda", "nbfa"}));
  train->add_option("--sampler", tf.sampler, "blocked, collapsed or cp [cp]")
      ->check(CLI::IsMember({"blocked", "collapsed", "cp", "cp-blocked"}));
  train->add_option("--truncation", tf.truncation, "adaptive or fixed [adaptive]")
      ->check(CLI::IsMember({"adaptive", "fixed"}));
  train->add_option("--iters", tf.iters, "Gibbs iterations [5000]");
  train->add_option("--burnin", tf.burnin, "Burn-in iterations [2500]");
  train->add_option("--thin", tf.thin, "Collect every this many iterations [5]");
  train->add_option("--K-init", tf.K_init, "Initial number of factors [400]");
  train->add_option("--K-star", tf.K_star, "Reserve factors kept after relabeling [20]");
  train->add_option("--eta", tf.eta, "Dirichlet smoothing value, or 'sample' [0.05]");
  train->add_option("--a0", tf.a0, "[0.01]");
  train->add_option("--b0", tf.b0, "[0.01]");
  train->add_option("--e0", tf.e0, "[1]");
  train->add_option("--f0", tf.f0, "[1]");
  train->add_option("--train-fraction", tf.train_fraction, "Fraction of tokens for training [0.8]");
  train->add_option("--seed", tf.seed, "Random seed [1]");
  train->add_option("--checkpoint-every", tf.checkpoint_every, "Checkpoint interval, 0 disables [500]");
  train->add_option("--chains", tf.chains, "Independent chains with derived seeds [1]");
  train->add_option("--out", out_dir, "Output directory")->required();

  std::string checkpoint;
  FeatureConfig fc;
  auto *features = app.add_subcommand("features", "Extract per-sample factor proportions");
  features->add_option("corpus", input, "Corpus file")->required();
  features->add_option("--format", format, "Corpus format")->check(CLI::IsMember(formats));
  features->add_option("--vocab", vocab, "Vocabulary sidecar");
  features->add_option("--checkpoint", checkpoint, "Trained state (state.json)")->required();
  features->add_option("--post-iters", fc.iterations, "Blocked iterations per sample [1000]");
  features->add_option("--post-collect", fc.collect_last, "Iterations averaged at the end [500]");
  features->add_option("--seed", fc.seed, "Random seed [1]");
  features->add_option("--out", out_dir, "Output CSV")->required();

  std::vector<std::string> traces, labels;
  int window = 50;
  auto *diagnose = app.add_subcommand("diagnose", "Compare K+ traces, operation counts and timing");
  diagnose->add_option("traces", traces, "trace.csv files")->required();
  diagnose->add_option("--labels", labels, "Series labels")->delimiter(',');
  diagnose->add_option("--window", window, "Moving-average window [50]")->check(CLI::PositiveNumber);
  diagnose->add_option("--out", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion &) {
    out << kVersion << '\n';
    return kExitOk;
  } catch (const CLI::ParseError &e) {
    err << "error: " << e.what() << "\n\n";
    const auto parsed = app.get_subcommands();
    err << (parsed.empty() ? app.help() : parsed.front()->help());
    return kExitUsage;
  }

  try {
    if (*ingest) return cmd_ingest(input, format, vocab, min_doc_freq, out_dir, out);
    if (*train) {
      TrainSettings s;
      try {
        s = resolve(tf, config_path);
      } catch (const ConfigError &e) {
        throw CliError(kExitUsage, e.what());
      }
      return cmd_train(input, format, vocab, s, out_dir, out);
    }
    if (*features) return cmd_features(input, format, vocab, checkpoint, fc, out_dir, out);
    if (*diagnose) return cmd_diagnose(traces, labels, window, out_dir, out);
  } catch (const CliError &e) {
    err << "error: " << e.what() << '\n';
    return e.code;
  } catch (const ConfigError &e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const CapabilityError &e) {
    err << "error: " << e.what() << '\n';
    return kExitCapability;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

} // namespace nbfa
