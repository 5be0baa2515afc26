#pragma once

#include "nbfa/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nbfa {

/// Covariate identifiers; the dense index space is 0..size()-1.
struct Vocabulary {
  std::vector<std::string> terms;

  int size() const { return static_cast<int>(terms.size()); }

  /// Placeholder identifiers "term_1".."term_V" for corpora without a sidecar.
  static Vocabulary numbered(int size);

  friend bool operator==(const Vocabulary &, const Vocabulary &) = default;
};

/// V x J covariate-sample count matrix stored column-sparse. Every stored
/// count is strictly positive and rows are sorted within each column. Cells
/// are addressed by a flat index in column-major order.
class SparseCountMatrix {
public:
  struct Entry {
    int row;
    int count;
  };

  SparseCountMatrix() = default;

  /// Builds from per-column entry lists. Duplicate rows within a column are
  /// summed and zero counts dropped.
  SparseCountMatrix(int num_rows, const std::vector<std::vector<Entry>> &columns);

  int num_rows() const { return num_rows_; }
  int num_cols() const { return static_cast<int>(col_sum_.size()); }
  std::size_t nnz() const { return rows_.size(); }

  std::size_t col_begin(int j) const { return col_ptr_[j]; }
  std::size_t col_end(int j) const { return col_ptr_[j + 1]; }
  std::span<const int> col_rows(int j) const;
  std::span<const int> col_counts(int j) const;

  int cell_row(std::size_t cell) const { return rows_[cell]; }
  int cell_count(std::size_t cell) const { return counts_[cell]; }

  long col_sum(int j) const { return col_sum_[j]; }
  long total() const { return total_; }

  /// n_vj, zero when the cell is not stored.
  int count(int v, int j) const;

  /// Number of distinct columns in which each row occurs.
  std::vector<int> doc_frequencies() const;

  /// FNV-1a digest of dimensions and cells.
  std::uint64_t digest() const;

  friend bool operator==(const SparseCountMatrix &, const SparseCountMatrix &) = default;

private:
  int num_rows_ = 0;
  std::vector<std::size_t> col_ptr_{0};
  std::vector<int> rows_;
  std::vector<int> counts_;
  std::vector<long> col_sum_;
  long total_ = 0;
};

struct Corpus {
  Vocabulary vocab;
  SparseCountMatrix counts;
};

enum class CorpusFormat { uci_bow, term_doc_triples };

/// Parses "uci-bow" or "term-doc-triples"; throws std::invalid_argument otherwise.
CorpusFormat parse_corpus_format(const std::string &name);

/// Loads a bag-of-words corpus. `vocab_path` is the one-term-per-line sidecar;
/// without it identifiers are numbered. Duplicate (term, doc) pairs are merged
/// with a warning on stderr; malformed lines throw ParseError.
Corpus load_bow(const std::filesystem::path &path, CorpusFormat format,
                const std::optional<std::filesystem::path> &vocab_path = std::nullopt);

/// Canonical UCI bag-of-words: "J\nV\nNNZ\n" then "doc term count" sorted by
/// doc then term, 1-based.
void write_uci_bow(const SparseCountMatrix &counts, const std::filesystem::path &path);
void write_vocabulary(const Vocabulary &vocab, const std::filesystem::path &path);
Vocabulary read_vocabulary(const std::filesystem::path &path);

/// Keeps covariates present in at least `min_doc_freq` samples, re-densifying
/// indices in their original order. Throws std::invalid_argument when nothing survives.
Corpus prune_vocabulary(const Corpus &corpus, int min_doc_freq);

struct HeldoutSplit {
  SparseCountMatrix train;
  SparseCountMatrix test;
  double fraction = 0.0;
  std::uint64_t seed = 0;
  /// Samples left with no training tokens (only possible when n_j = 0).
  std::vector<int> degenerate;
};

/// Per sample, round(fraction * n_j) token instances (at least one when
/// n_j >= 1) go to training, chosen without replacement; the rest are test.
HeldoutSplit split_heldout(const SparseCountMatrix &counts, double fraction, const RngStream &rng);

} // namespace nbfa
