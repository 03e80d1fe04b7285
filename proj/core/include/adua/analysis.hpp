#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "adua/corpus.hpp"
#include "adua/model.hpp"

namespace adua {

// ---- Domain vocabulary similarity ----------------------------------------

// Overlap of the two domains' top-k frequency-ranked word lists, normalized
// by the effective k (min of k and both list lengths). Symmetric, in [0, 1].
double domain_similarity(const RawCorpus& a, const RawCorpus& b, std::size_t k = 10000);

struct SimilarityMatrix {
  std::vector<std::string> domains;
  std::vector<double> scores;  // row-major, domains.size() squared

  double at(std::size_t i, std::size_t j) const { return scores[i * domains.size() + j]; }
};

SimilarityMatrix similarity_matrix(const std::vector<const RawCorpus*>& corpora,
                                   std::size_t k = 10000);

void write_similarity_csv(const SimilarityMatrix& m, const std::filesystem::path& file);
void write_similarity_json(const SimilarityMatrix& m, const std::filesystem::path& file);

// ---- Two-sample Welch t-test ----------------------------------------------

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
  // Set when both samples are constant with unequal means: the statistic is
  // unbounded and p collapses to zero by convention.
  bool degenerate = false;
};

// Unequal-variance t-test with Welch-Satterthwaite degrees of freedom and a
// two-tailed p-value from the Student-t CDF. Needs at least two observations
// per sample.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

// Building blocks, exposed because they are verified against independent
// oracles in the test suite.
double regularized_incomplete_beta(double x, double a, double b);
double student_t_two_tailed_p(double t, double df);

// ---- PCA projection ---------------------------------------------------------

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct Pca2d {
  Matrix points;  // rows x 2 projection onto the top two principal axes
  std::array<double, 2> eigenvalues{0.0, 0.0};
};

// Mean-centers, then finds the top two principal components by power
// iteration with deflation (tolerance 1e-9, at most 10000 iterations per
// component, deterministic start vector, sign fixed by the largest-magnitude
// coordinate). Identical points cannot be projected.
Pca2d pca_project_2d(const Matrix& x);

// Binary hidden-state matrix: two u64 little-endian dims, then row-major
// little-endian f32 values.
void write_hidden_matrix(const Matrix& m, const std::filesystem::path& file);
Matrix read_hidden_matrix(const std::filesystem::path& file);

void write_projection_csv(const std::vector<std::string>& row_domains, const Pca2d& pca,
                          const std::filesystem::path& file);

// ---- Result aggregation -----------------------------------------------------

struct RunAccuracy {
  std::string scheme;   // "source->target"
  std::string variant;  // display name, e.g. "Ada-TSA"
  std::uint64_t seed = 0;
  double accuracy = 0.0;
};

struct ResultCell {
  std::string scheme;
  std::string variant;
  double mean = 0.0;
  double stddev = 0.0;          // sample standard deviation (n-1), 0 when n < 2
  std::vector<double> per_seed;  // parallel to ResultTable::seeds, NaN = missing
  std::size_t n = 0;
};

struct ResultTable {
  std::vector<std::uint64_t> seeds;    // sorted union of run seeds
  std::vector<std::string> schemes;    // sorted, then "Avg." appended last
  std::vector<std::string> variants;   // canonical method order
  std::vector<ResultCell> cells;

  const ResultCell* find(const std::string& scheme, const std::string& variant) const;
};

// Groups per-run accuracies into (scheme, variant) cells with mean and
// sample standard deviation, and appends per-variant "Avg." macro rows.
ResultTable aggregate_results(const std::vector<RunAccuracy>& runs);

struct PairwiseTest {
  std::string scheme;
  std::string variant;  // baseline compared against the reference
  WelchResult test;
};

// Welch t-test of every non-reference variant against the reference, per
// scheme row, using per-seed accuracies. Cells with fewer than two common
// seeds are skipped.
std::vector<PairwiseTest> pairwise_vs_reference(const ResultTable& table,
                                                const std::string& reference_variant);

void write_results_csv(const ResultTable& table, const std::filesystem::path& file);
void write_ttest_csv(const std::vector<PairwiseTest>& tests, const std::string& reference,
                     const std::filesystem::path& file);

// Fixed-width text table in the familiar accuracy-percent layout, variants
// as columns, significance daggers on baselines that differ from the
// reference (single: p < 0.05, double: p < 0.01).
std::string render_results_table(const ResultTable& table,
                                 const std::vector<PairwiseTest>& tests,
                                 const std::string& reference_variant);

// ---- Hidden-state extraction ------------------------------------------------

enum class HiddenPooling { kMeanNonPad, kFirstToken };

// Encodes a corpus without recording gradients and pools each document's
// final hidden states into one row.
template <typename S>
Matrix extract_hidden(const ParameterStore<S>& params, const DomainCorpus& corpus,
                      const ModelConfig& cfg, int batch_size,
                      HiddenPooling pooling = HiddenPooling::kMeanNonPad) {
  if (corpus.size() == 0) {
    throw DataError("extract_hidden: corpus \"" + corpus.domain_id + "\" is empty");
  }
  if (batch_size < 1) throw ConfigError("extract_hidden: batch size must be positive");
  const auto h = static_cast<std::size_t>(cfg.hidden_dim);
  Matrix out(corpus.size(), h);
  Tape<S> tape(false);
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(batch_size));
    std::span<const std::size_t> idx(order.data() + at, end - at);
    TokenBatch tb = make_batch(corpus.docs, idx, static_cast<std::size_t>(cfg.max_len));
    Tensor<S> hidden = encode(tape, params, tb.ids, tb.batch, tb.seq_len, cfg);
    const S* ph = hidden.values().data();
    for (std::size_t row = 0; row < tb.batch; ++row) {
      double* dst = out.data.data() + idx[row] * h;
      if (pooling == HiddenPooling::kFirstToken) {
        const S* src = ph + row * tb.seq_len * h;
        for (std::size_t j = 0; j < h; ++j) dst[j] = static_cast<double>(src[j]);
      } else {
        std::size_t used = 0;
        for (std::size_t t = 0; t < tb.seq_len; ++t) {
          if (tb.at(row, t) == kPadId) continue;
          const S* src = ph + (row * tb.seq_len + t) * h;
          for (std::size_t j = 0; j < h; ++j) dst[j] += static_cast<double>(src[j]);
          ++used;
        }
        for (std::size_t j = 0; j < h; ++j) dst[j] /= static_cast<double>(used);
      }
    }
  }
  return out;
}

}  // namespace adua
