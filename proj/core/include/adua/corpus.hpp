#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "adua/common.hpp"

namespace adua {

// Text corpus as loaded from disk. `labels` is empty for unlabeled corpora
// and parallel to `docs` otherwise.
struct RawCorpus {
  std::string domain_id;
  std::vector<std::string> docs;
  std::vector<int> labels;

  bool labeled() const { return !labels.empty(); }
  std::size_t size() const { return docs.size(); }
  void validate() const;
};

// Token-id view of a corpus after vocabulary lookup.
struct DomainCorpus {
  std::string domain_id;
  std::vector<std::vector<TokenId>> docs;
  std::vector<int> labels;

  bool labeled() const { return !labels.empty(); }
  std::size_t size() const { return docs.size(); }
  void validate() const;
  DomainCorpus without_labels() const {
    return DomainCorpus{domain_id, docs, {}};
  }
};

// Lowercased whitespace tokenization. The only normalization applied
// anywhere, so encode/decode round-trips on already-normalized text.
std::vector<std::string> tokenize(std::string_view text);

// One document per line.
RawCorpus load_unlabeled(const std::filesystem::path& file, std::string domain_id);
void save_unlabeled(const RawCorpus& corpus, const std::filesystem::path& file);

// label<TAB>text, one document per line, integer labels.
RawCorpus load_labeled_tsv(const std::filesystem::path& file, std::string domain_id);
void save_labeled_tsv(const RawCorpus& corpus, const std::filesystem::path& file);

// Deterministic train/dev partition. With labels present the split is
// stratified: each class contributes floor(fraction * class_size) documents
// (epsilon-nudged) to train, so both splits stay within one document of
// exact proportionality per class.
std::pair<RawCorpus, RawCorpus> split_train_dev(const RawCorpus& corpus,
                                                double train_fraction,
                                                std::uint64_t seed);
std::pair<DomainCorpus, DomainCorpus> split_train_dev(const DomainCorpus& corpus,
                                                      double train_fraction,
                                                      std::uint64_t seed);

// Pools source and target documents into one shuffled unlabeled corpus for
// the domain-fusion phase. Labels never survive the mix.
DomainCorpus mix_domains(const DomainCorpus& source,
                         const std::vector<const DomainCorpus*>& targets,
                         std::uint64_t seed);

// Dense [batch, seq_len] id matrix: leading marker token, then the document
// (truncated to fit), then padding.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<TokenId> ids;

  TokenId at(std::size_t row, std::size_t col) const {
    return ids[row * seq_len + col];
  }
};

TokenBatch make_batch(const std::vector<std::vector<TokenId>>& docs,
                      std::span<const std::size_t> indices, std::size_t max_len);

// Masked-token training view of a batch. `input_ids` carries the corrupted
// stream, `target_ids` the originals, `loss_mask` the positions that count.
struct MlmBatch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<TokenId> input_ids;
  std::vector<TokenId> target_ids;
  std::vector<std::uint8_t> loss_mask;
};

// Selects non-PAD positions with probability mask_prob, then corrupts each
// selected position: 80% mask token, 10% random word, 10% left as is.
// `vocab_size` bounds the random replacements (real word ids only).
MlmBatch mask_for_mlm(const TokenBatch& batch, double mask_prob,
                      std::uint64_t seed, int vocab_size);

}  // namespace adua
