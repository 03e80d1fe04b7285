#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "adua/corpus.hpp"
#include "adua/jsonutil.hpp"

namespace adua {

// Frequency-ranked word list with four fixed reserved ids below the first
// real word. Word order (and therefore every id) is deterministic: frequency
// descending, ties by lexicographic word order.
class Vocab {
 public:
  static constexpr std::array<std::string_view, 4> kReservedWords = {
      "<pad>", "<unk>", "<mask>", "<bos>"};

  Vocab() = default;

  // Counts words across the given corpora and keeps the top max_words.
  static Vocab build(const std::vector<const RawCorpus*>& corpora, std::size_t max_words);

  // Reserved ids plus learned words.
  std::size_t size() const { return kReservedWords.size() + words_.size(); }
  std::size_t word_count() const { return words_.size(); }

  TokenId id_of(std::string_view word) const;
  const std::string& word_at(TokenId id) const;
  std::uint64_t freq_at(TokenId id) const;

  std::vector<TokenId> encode_doc(std::string_view text) const;
  DomainCorpus encode_corpus(const RawCorpus& corpus) const;
  std::string decode(std::span<const TokenId> ids) const;

  Json to_json() const;
  static Vocab from_json(const Json& j);

  bool operator==(const Vocab& other) const {
    return words_ == other.words_ && freqs_ == other.freqs_;
  }

 private:
  std::vector<std::string> words_;
  std::vector<std::uint64_t> freqs_;
  std::unordered_map<std::string, TokenId> index_;

  void rebuild_index();
};

}  // namespace adua
