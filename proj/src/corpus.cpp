#include "nbfa/corpus.hpp"

#include "nbfa/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

namespace nbfa {

Vocabulary Vocabulary::numbered(int size) {
  Vocabulary vocab;
  vocab.terms.reserve(size);
  for (int v = 1; v <= size; ++v) vocab.terms.push_back("term_" + std::to_string(v));
  return vocab;
}

SparseCountMatrix::SparseCountMatrix(int num_rows, const std::vector<std::vector<Entry>> &columns)
    : num_rows_(num_rows) {
  if (num_rows < 0) throw ParameterError("SparseCountMatrix: negative row count");
  col_sum_.reserve(columns.size());
  std::vector<Entry> scratch;
  for (const auto &column : columns) {
    scratch = column;
    std::sort(scratch.begin(), scratch.end(),
              [](const Entry &a, const Entry &b) { return a.row < b.row; });
    long sum = 0;
    for (std::size_t i = 0; i < scratch.size();) {
      const int row = scratch[i].row;
      if (row < 0 || row >= num_rows) {
        throw ParameterError("SparseCountMatrix: row index " + std::to_string(row) +
                             " outside [0, " + std::to_string(num_rows) + ")");
      }
      long merged = 0;
      for (; i < scratch.size() && scratch[i].row == row; ++i) {
        if (scratch[i].count < 0) throw ParameterError("SparseCountMatrix: negative count");
        merged += scratch[i].count;
      }
      if (merged > 0) {
        rows_.push_back(row);
        counts_.push_back(static_cast<int>(merged));
        sum += merged;
      }
    }
    col_ptr_.push_back(rows_.size());
    col_sum_.push_back(sum);
    total_ += sum;
  }
}

std::span<const int> SparseCountMatrix::col_rows(int j) const {
  return {rows_.data() + col_ptr_[j], col_ptr_[j + 1] - col_ptr_[j]};
}

std::span<const int> SparseCountMatrix::col_counts(int j) const {
  return {counts_.data() + col_ptr_[j], col_ptr_[j + 1] - col_ptr_[j]};
}

int SparseCountMatrix::count(int v, int j) const {
  const auto rows = col_rows(j);
  const auto it = std::lower_bound(rows.begin(), rows.end(), v);
  if (it == rows.end() || *it != v) return 0;
  return counts_[col_ptr_[j] + static_cast<std::size_t>(it - rows.begin())];
}

std::vector<int> SparseCountMatrix::doc_frequencies() const {
  std::vector<int> df(num_rows_, 0);
  for (int v : rows_) ++df[v];
  return df;
}

std::uint64_t SparseCountMatrix::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::uint64_t x) {
    for (int b = 0; b < 8; ++b) {
      h ^= (x >> (8 * b)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  feed(static_cast<std::uint64_t>(num_rows_));
  feed(static_cast<std::uint64_t>(num_cols()));
  for (int j = 0; j < num_cols(); ++j) {
    feed(static_cast<std::uint64_t>(j));
    for (std::size_t c = col_begin(j); c < col_end(j); ++c) {
      feed(static_cast<std::uint64_t>(rows_[c]));
      feed(static_cast<std::uint64_t>(counts_[c]));
    }
  }
  return h;
}

CorpusFormat parse_corpus_format(const std::string &name) {
  if (name == "uci-bow") return CorpusFormat::uci_bow;
  if (name == "term-doc-triples") return CorpusFormat::term_doc_triples;
  throw std::invalid_argument("unknown corpus format '" + name +
                              "' (expected uci-bow or term-doc-triples)");
}

namespace {

long parse_long(std::string_view token, long line, const char *field) {
  long value = 0;
  const auto *first = token.data();
  const auto *last = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw ParseError(std::string("expected integer ") + field + ", got '" + std::string(token) + "'",
                     line);
  }
  return value;
}

std::vector<std::string_view> split_fields(std::string_view line, bool comma) {
  std::vector<std::string_view> fields;
  auto is_sep = [comma](char ch) {
    return ch == ' ' || ch == '\t' || ch == '\r' || (comma && ch == ',');
  };
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_sep(line[i])) ++i;
    std::size_t j = i;
    while (j < line.size() && !is_sep(line[j])) ++j;
    if (j > i) fields.push_back(line.substr(i, j - i));
    i = j;
  }
  return fields;
}

bool blank(std::string_view line) {
  return std::all_of(line.begin(), line.end(),
                     [](char ch) { return ch == ' ' || ch == '\t' || ch == '\r'; });
}

struct TripleSink {
  std::map<std::pair<int, int>, long> cells; // (doc, term) -> count
  long duplicates = 0;

  void add(int doc, int term, long count, long line) {
    if (count < 0) throw ParseError("negative count", line);
    auto [it, inserted] = cells.try_emplace({doc, term}, count);
    if (!inserted) {
      it->second += count;
      ++duplicates;
    }
  }

  SparseCountMatrix build(int num_rows, int num_cols, const std::filesystem::path &path) const {
    if (duplicates > 0) {
      std::cerr << "warning: " << path.string() << ": merged " << duplicates
                << " duplicate (term, doc) entries\n";
    }
    std::vector<std::vector<SparseCountMatrix::Entry>> columns(num_cols);
    for (const auto &[key, count] : cells) {
      if (count > 0) columns[key.first].push_back({key.second, static_cast<int>(count)});
    }
    return SparseCountMatrix(num_rows, columns);
  }
};

Corpus load_uci(const std::filesystem::path &path, std::optional<Vocabulary> vocab) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  std::string line;
  long line_no = 0;
  long header[3] = {0, 0, 0};
  int have = 0;
  while (have < 3 && std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    const auto fields = split_fields(line, false);
    if (fields.size() != 1) throw ParseError("expected a single header integer", line_no);
    header[have++] = parse_long(fields[0], line_no, "header value");
  }
  if (have < 3) throw ParseError("truncated header (need J, V, NNZ)", line_no);
  const long num_docs = header[0];
  const long num_terms = header[1];
  const long nnz = header[2];
  if (num_docs < 0 || num_terms < 0 || nnz < 0) throw ParseError("negative header value", line_no);
  if (vocab && vocab->size() != num_terms) {
    throw ParseError("vocabulary sidecar has " + std::to_string(vocab->size()) +
                         " terms but header declares " + std::to_string(num_terms),
                     0);
  }
  TripleSink sink;
  long seen = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    const auto fields = split_fields(line, false);
    if (fields.size() != 3) throw ParseError("expected 'doc term count'", line_no);
    const long doc = parse_long(fields[0], line_no, "doc id");
    const long term = parse_long(fields[1], line_no, "term id");
    const long count = parse_long(fields[2], line_no, "count");
    if (doc < 1 || doc > num_docs) throw ParseError("doc id out of range", line_no);
    if (term < 1 || term > num_terms) throw ParseError("term id out of range", line_no);
    sink.add(static_cast<int>(doc - 1), static_cast<int>(term - 1), count, line_no);
    ++seen;
  }
  if (seen != nnz) {
    std::cerr << "warning: " << path.string() << ": header declares " << nnz << " entries, read "
              << seen << "\n";
  }
  Corpus corpus;
  corpus.counts = sink.build(static_cast<int>(num_terms), static_cast<int>(num_docs), path);
  corpus.vocab = vocab ? std::move(*vocab) : Vocabulary::numbered(static_cast<int>(num_terms));
  return corpus;
}

Corpus load_triples(const std::filesystem::path &path, std::optional<Vocabulary> vocab) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  std::string line;
  long line_no = 0;
  TripleSink sink;
  long max_term = 0;
  long max_doc = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    const auto fields = split_fields(line, true);
    if (first) {
      first = false;
      if (!fields.empty() && fields[0] == "term") continue; // header row
    }
    if (fields.size() != 3) throw ParseError("expected 'term,doc,count'", line_no);
    const long term = parse_long(fields[0], line_no, "term id");
    const long doc = parse_long(fields[1], line_no, "doc id");
    const long count = parse_long(fields[2], line_no, "count");
    if (term < 1) throw ParseError("term id must be >= 1", line_no);
    if (doc < 1) throw ParseError("doc id must be >= 1", line_no);
    if (vocab && term > vocab->size()) throw ParseError("term id beyond vocabulary", line_no);
    max_term = std::max(max_term, term);
    max_doc = std::max(max_doc, doc);
    sink.add(static_cast<int>(doc - 1), static_cast<int>(term - 1), count, line_no);
  }
  const int num_terms = vocab ? vocab->size() : static_cast<int>(max_term);
  Corpus corpus;
  corpus.counts = sink.build(num_terms, static_cast<int>(max_doc), path);
  corpus.vocab = vocab ? std::move(*vocab) : Vocabulary::numbered(num_terms);
  return corpus;
}

} // namespace

Vocabulary read_vocabulary(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open vocabulary " + path.string(), 0);
  Vocabulary vocab;
  std::string line;
  long line_no = 0;
  std::map<std::string, long> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!seen.emplace(line, line_no).second) {
      throw ParseError("duplicate vocabulary term '" + line + "'", line_no);
    }
    vocab.terms.push_back(line);
  }
  return vocab;
}

Corpus load_bow(const std::filesystem::path &path, CorpusFormat format,
                const std::optional<std::filesystem::path> &vocab_path) {
  std::optional<Vocabulary> vocab;
  if (vocab_path) vocab = read_vocabulary(*vocab_path);
  return format == CorpusFormat::uci_bow ? load_uci(path, std::move(vocab))
                                         : load_triples(path, std::move(vocab));
}

void write_uci_bow(const SparseCountMatrix &counts, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << counts.num_cols() << '\n' << counts.num_rows() << '\n' << counts.nnz() << '\n';
  for (int j = 0; j < counts.num_cols(); ++j) {
    const auto rows = counts.col_rows(j);
    const auto vals = counts.col_counts(j);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out << (j + 1) << ' ' << (rows[i] + 1) << ' ' << vals[i] << '\n';
    }
  }
}

void write_vocabulary(const Vocabulary &vocab, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto &term : vocab.terms) out << term << '\n';
}

Corpus prune_vocabulary(const Corpus &corpus, int min_doc_freq) {
  if (min_doc_freq < 1) throw ParameterError("min_doc_freq must be >= 1");
  const auto df = corpus.counts.doc_frequencies();
  std::vector<int> remap(df.size(), -1);
  Vocabulary vocab;
  for (std::size_t v = 0; v < df.size(); ++v) {
    if (df[v] >= min_doc_freq) {
      remap[v] = vocab.size();
      vocab.terms.push_back(v < corpus.vocab.terms.size() ? corpus.vocab.terms[v]
                                                          : "term_" + std::to_string(v + 1));
    }
  }
  if (vocab.size() == 0) {
    throw ParameterError("prune_vocabulary: every covariate occurs in fewer than " +
                         std::to_string(min_doc_freq) + " samples");
  }
  const auto &m = corpus.counts;
  std::vector<std::vector<SparseCountMatrix::Entry>> columns(m.num_cols());
  for (int j = 0; j < m.num_cols(); ++j) {
    const auto rows = m.col_rows(j);
    const auto vals = m.col_counts(j);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (remap[rows[i]] >= 0) columns[j].push_back({remap[rows[i]], vals[i]});
    }
  }
  SparseCountMatrix pruned(vocab.size(), columns);
  return Corpus{std::move(vocab), std::move(pruned)};
}

HeldoutSplit split_heldout(const SparseCountMatrix &counts, double fraction, const RngStream &rng) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ParameterError("split_heldout: fraction must lie in (0, 1), got " +
                         std::to_string(fraction));
  }
  const int num_docs = counts.num_cols();
  std::vector<std::vector<SparseCountMatrix::Entry>> train(num_docs);
  std::vector<std::vector<SparseCountMatrix::Entry>> test(num_docs);
  HeldoutSplit split;
  split.fraction = fraction;
  split.seed = rng.seed();
  std::vector<int> tokens;
  std::vector<int> train_count;
  for (int j = 0; j < num_docs; ++j) {
    const auto rows = counts.col_rows(j);
    const auto vals = counts.col_counts(j);
    const long n_j = counts.col_sum(j);
    if (n_j == 0) {
      split.degenerate.push_back(j);
      continue;
    }
    tokens.clear();
    for (std::size_t i = 0; i < rows.size(); ++i) tokens.insert(tokens.end(), vals[i], static_cast<int>(i));
    const long keep = std::max(1L, std::lround(fraction * static_cast<double>(n_j)));
    RngStream doc_rng = rng.derive(static_cast<std::uint64_t>(j));
    // Partial Fisher-Yates: the first `keep` positions are the training draw.
    for (long t = 0; t < keep; ++t) {
      const auto pick = t + static_cast<long>(doc_rng.uniform_index(static_cast<std::uint64_t>(n_j - t)));
      std::swap(tokens[t], tokens[pick]);
    }
    train_count.assign(rows.size(), 0);
    for (long t = 0; t < keep; ++t) ++train_count[tokens[t]];
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (train_count[i] > 0) train[j].push_back({rows[i], train_count[i]});
      if (vals[i] - train_count[i] > 0) test[j].push_back({rows[i], vals[i] - train_count[i]});
    }
  }
  split.train = SparseCountMatrix(counts.num_rows(), train);
  split.test = SparseCountMatrix(counts.num_rows(), test);
  return split;
}

} // namespace nbfa
