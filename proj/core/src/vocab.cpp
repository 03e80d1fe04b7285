#include "adua/vocab.hpp"

#include <algorithm>
#include <map>

namespace adua {

namespace {

bool is_reserved_word(std::string_view word) {
  for (std::string_view r : Vocab::kReservedWords) {
    if (word == r) return true;
  }
  return false;
}

}  // namespace

Vocab Vocab::build(const std::vector<const RawCorpus*>& corpora, std::size_t max_words) {
  if (max_words == 0) throw ConfigError("vocab: max_words must be positive");
  // std::map so that equal-frequency words already sit in lexicographic order.
  std::map<std::string, std::uint64_t> counts;
  for (const RawCorpus* corpus : corpora) {
    if (corpus == nullptr) throw ContractError("vocab: null corpus");
    for (const std::string& doc : corpus->docs) {
      for (std::string& word : tokenize(doc)) {
        if (is_reserved_word(word)) continue;
        ++counts[std::move(word)];
      }
    }
  }
  if (counts.empty()) {
    throw DataError("vocab: no words found in the given corpora");
  }

  std::vector<std::pair<std::string, std::uint64_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > max_words) ranked.resize(max_words);

  Vocab v;
  v.words_.reserve(ranked.size());
  v.freqs_.reserve(ranked.size());
  for (auto& [word, freq] : ranked) {
    v.words_.push_back(std::move(word));
    v.freqs_.push_back(freq);
  }
  v.rebuild_index();
  return v;
}

void Vocab::rebuild_index() {
  index_.clear();
  index_.reserve(words_.size());
  for (std::size_t i = 0; i < words_.size(); ++i) {
    index_.emplace(words_[i], static_cast<TokenId>(kFirstWordId + i));
  }
}

TokenId Vocab::id_of(std::string_view word) const {
  for (std::size_t i = 0; i < kReservedWords.size(); ++i) {
    if (word == kReservedWords[i]) return static_cast<TokenId>(i);
  }
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocab::word_at(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= size()) {
    throw DataError("vocab: id " + std::to_string(id) + " out of range [0, " +
                    std::to_string(size()) + ")");
  }
  if (id < kFirstWordId) {
    static const std::array<std::string, 4> reserved = {"<pad>", "<unk>", "<mask>", "<bos>"};
    return reserved[static_cast<std::size_t>(id)];
  }
  return words_[static_cast<std::size_t>(id - kFirstWordId)];
}

std::uint64_t Vocab::freq_at(TokenId id) const {
  if (id < kFirstWordId || static_cast<std::size_t>(id) >= size()) {
    throw DataError("vocab: no frequency for id " + std::to_string(id));
  }
  return freqs_[static_cast<std::size_t>(id - kFirstWordId)];
}

std::vector<TokenId> Vocab::encode_doc(std::string_view text) const {
  std::vector<TokenId> out;
  for (const std::string& word : tokenize(text)) {
    out.push_back(id_of(word));
  }
  return out;
}

DomainCorpus Vocab::encode_corpus(const RawCorpus& corpus) const {
  corpus.validate();
  DomainCorpus out;
  out.domain_id = corpus.domain_id;
  out.labels = corpus.labels;
  out.docs.reserve(corpus.docs.size());
  for (const std::string& doc : corpus.docs) {
    out.docs.push_back(encode_doc(doc));
  }
  return out;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += word_at(ids[i]);
  }
  return out;
}

Json Vocab::to_json() const {
  Json words = Json::array();
  Json freqs = Json::array();
  for (const std::string& w : words_) words.push_back(w);
  for (std::uint64_t f : freqs_) freqs.push_back(f);
  return Json{{"words", std::move(words)}, {"freqs", std::move(freqs)}};
}

Vocab Vocab::from_json(const Json& j) {
  reject_unknown_keys(j, "vocab", {"words", "freqs"});
  Vocab v;
  v.words_ = json_get<std::vector<std::string>>(j, "vocab", "words");
  v.freqs_ = json_get<std::vector<std::uint64_t>>(j, "vocab", "freqs");
  if (v.words_.size() != v.freqs_.size()) {
    throw ConfigError("vocab: words/freqs length mismatch");
  }
  for (const std::string& w : v.words_) {
    if (is_reserved_word(w)) {
      throw ConfigError("vocab: reserved word \"" + w + "\" in word list");
    }
  }
  v.rebuild_index();
  if (v.index_.size() != v.words_.size()) {
    throw ConfigError("vocab: duplicate words in word list");
  }
  return v;
}

}  // namespace adua
