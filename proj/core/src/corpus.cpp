#include "adua/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

namespace adua {

void RawCorpus::validate() const {
  if (labeled() && labels.size() != docs.size()) {
    throw DataError("corpus \"" + domain_id + "\": " + std::to_string(labels.size()) +
                    " labels for " + std::to_string(docs.size()) + " documents");
  }
}

void DomainCorpus::validate() const {
  if (labeled() && labels.size() != docs.size()) {
    throw DataError("corpus \"" + domain_id + "\": " + std::to_string(labels.size()) +
                    " labels for " + std::to_string(docs.size()) + " documents");
  }
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!word.empty()) {
        out.push_back(std::move(word));
        word.clear();
      }
    } else {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!word.empty()) out.push_back(std::move(word));
  return out;
}

namespace {

std::ifstream open_input(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open \"" + file.string() + "\" for reading");
  return in;
}

std::ofstream open_output(const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot open \"" + file.string() + "\" for writing");
  return out;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

RawCorpus load_unlabeled(const std::filesystem::path& file, std::string domain_id) {
  auto in = open_input(file);
  RawCorpus corpus;
  corpus.domain_id = std::move(domain_id);
  std::string line;
  while (std::getline(in, line)) {
    strip_cr(line);
    if (line.empty()) continue;
    corpus.docs.push_back(line);
  }
  return corpus;
}

void save_unlabeled(const RawCorpus& corpus, const std::filesystem::path& file) {
  corpus.validate();
  auto out = open_output(file);
  for (const std::string& doc : corpus.docs) {
    if (doc.find('\n') != std::string::npos) {
      throw DataError("corpus \"" + corpus.domain_id + "\": document contains a newline");
    }
    out << doc << '\n';
  }
  if (!out) throw IoError("write failed for \"" + file.string() + "\"");
}

RawCorpus load_labeled_tsv(const std::filesystem::path& file, std::string domain_id) {
  auto in = open_input(file);
  RawCorpus corpus;
  corpus.domain_id = std::move(domain_id);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError("\"" + file.string() + "\" line " + std::to_string(line_no) +
                      ": expected label<TAB>text");
    }
    const std::string label_str = line.substr(0, tab);
    int label = 0;
    try {
      std::size_t used = 0;
      label = std::stoi(label_str, &used);
      if (used != label_str.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DataError("\"" + file.string() + "\" line " + std::to_string(line_no) +
                      ": label \"" + label_str + "\" is not an integer");
    }
    if (label < 0) {
      throw DataError("\"" + file.string() + "\" line " + std::to_string(line_no) +
                      ": negative label " + std::to_string(label));
    }
    corpus.labels.push_back(label);
    corpus.docs.push_back(line.substr(tab + 1));
  }
  return corpus;
}

void save_labeled_tsv(const RawCorpus& corpus, const std::filesystem::path& file) {
  corpus.validate();
  if (!corpus.labeled() && !corpus.docs.empty()) {
    throw DataError("corpus \"" + corpus.domain_id + "\" has no labels to save as TSV");
  }
  auto out = open_output(file);
  for (std::size_t i = 0; i < corpus.docs.size(); ++i) {
    const std::string& doc = corpus.docs[i];
    if (doc.find('\t') != std::string::npos || doc.find('\n') != std::string::npos) {
      throw DataError("corpus \"" + corpus.domain_id +
                      "\": document contains a tab or newline, cannot serialize as TSV");
    }
    out << corpus.labels[i] << '\t' << doc << '\n';
  }
  if (!out) throw IoError("write failed for \"" + file.string() + "\"");
}

namespace {

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> dev;
};

SplitIndices split_indices(std::size_t n, const std::vector<int>& labels,
                           double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("split: train fraction must lie in (0, 1), got " +
                      std::to_string(train_fraction));
  }
  if (n == 0) throw DataError("split: corpus is empty");

  // Group document indices by class (single group when unlabeled).
  std::map<int, std::vector<std::size_t>> groups;
  if (labels.empty()) {
    auto& g = groups[0];
    g.resize(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = i;
  } else {
    for (std::size_t i = 0; i < n; ++i) groups[labels[i]].push_back(i);
  }

  SplitIndices out;
  for (auto& [label, idx] : groups) {
    std::mt19937_64 rng(derive_seed(seed, "split/" + std::to_string(label)));
    std::shuffle(idx.begin(), idx.end(), rng);
    // Epsilon guards against 0.7*10 == 6.999... style representation error.
    const auto n_train = static_cast<std::size_t>(
        std::floor(train_fraction * static_cast<double>(idx.size()) + 1e-9));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      (i < n_train ? out.train : out.dev).push_back(idx[i]);
    }
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.dev.begin(), out.dev.end());
  return out;
}

template <typename C>
std::pair<C, C> split_impl(const C& corpus, double train_fraction, std::uint64_t seed) {
  corpus.validate();
  const SplitIndices idx = split_indices(corpus.size(), corpus.labels, train_fraction, seed);
  C train;
  C dev;
  train.domain_id = corpus.domain_id;
  dev.domain_id = corpus.domain_id;
  auto emit = [&corpus](C& dst, const std::vector<std::size_t>& which) {
    dst.docs.reserve(which.size());
    if (corpus.labeled()) dst.labels.reserve(which.size());
    for (std::size_t i : which) {
      dst.docs.push_back(corpus.docs[i]);
      if (corpus.labeled()) dst.labels.push_back(corpus.labels[i]);
    }
  };
  emit(train, idx.train);
  emit(dev, idx.dev);
  return {std::move(train), std::move(dev)};
}

}  // namespace

std::pair<RawCorpus, RawCorpus> split_train_dev(const RawCorpus& corpus,
                                                double train_fraction,
                                                std::uint64_t seed) {
  return split_impl(corpus, train_fraction, seed);
}

std::pair<DomainCorpus, DomainCorpus> split_train_dev(const DomainCorpus& corpus,
                                                      double train_fraction,
                                                      std::uint64_t seed) {
  return split_impl(corpus, train_fraction, seed);
}

DomainCorpus mix_domains(const DomainCorpus& source,
                         const std::vector<const DomainCorpus*>& targets,
                         std::uint64_t seed) {
  source.validate();
  DomainCorpus mixed;
  mixed.domain_id = "mixed";
  mixed.docs = source.docs;
  for (const DomainCorpus* t : targets) {
    t->validate();
    mixed.docs.insert(mixed.docs.end(), t->docs.begin(), t->docs.end());
  }
  if (mixed.docs.empty()) throw DataError("mix_domains: no documents to mix");
  std::mt19937_64 rng(derive_seed(seed, "mix"));
  std::shuffle(mixed.docs.begin(), mixed.docs.end(), rng);
  return mixed;
}

TokenBatch make_batch(const std::vector<std::vector<TokenId>>& docs,
                      std::span<const std::size_t> indices, std::size_t max_len) {
  if (indices.empty()) throw ContractError("make_batch: empty index list");
  if (max_len < 2) throw ContractError("make_batch: max_len must be at least 2");
  std::size_t longest = 0;
  for (std::size_t i : indices) {
    if (i >= docs.size()) {
      throw ContractError("make_batch: index " + std::to_string(i) + " out of range");
    }
    longest = std::max(longest, docs[i].size());
  }
  TokenBatch out;
  out.batch = indices.size();
  out.seq_len = std::min(longest + 1, max_len);  // +1 for the leading marker
  out.ids.assign(out.batch * out.seq_len, kPadId);
  for (std::size_t row = 0; row < out.batch; ++row) {
    const auto& doc = docs[indices[row]];
    TokenId* dst = out.ids.data() + row * out.seq_len;
    dst[0] = kBosId;
    const std::size_t copy = std::min(doc.size(), out.seq_len - 1);
    std::copy_n(doc.begin(), copy, dst + 1);
  }
  return out;
}

MlmBatch mask_for_mlm(const TokenBatch& batch, double mask_prob,
                      std::uint64_t seed, int vocab_size) {
  if (!(mask_prob >= 0.0 && mask_prob <= 1.0)) {
    throw ConfigError("mask_for_mlm: mask probability must lie in [0, 1], got " +
                      std::to_string(mask_prob));
  }
  if (vocab_size <= kFirstWordId) {
    throw ConfigError("mask_for_mlm: vocabulary of size " + std::to_string(vocab_size) +
                      " has no real words to sample replacements from");
  }
  MlmBatch out;
  out.batch = batch.batch;
  out.seq_len = batch.seq_len;
  out.input_ids = batch.ids;
  out.target_ids = batch.ids;
  out.loss_mask.assign(batch.ids.size(), 0);

  std::mt19937_64 rng(derive_seed(seed, "mlm"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<TokenId> random_word(kFirstWordId, vocab_size - 1);
  for (std::size_t p = 0; p < batch.ids.size(); ++p) {
    if (batch.ids[p] == kPadId) continue;
    if (unit(rng) >= mask_prob) continue;
    out.loss_mask[p] = 1;
    const double u = unit(rng);
    if (u < 0.8) {
      out.input_ids[p] = kMaskId;
    } else if (u < 0.9) {
      out.input_ids[p] = random_word(rng);
    }
    // Remaining 10%: input keeps the original token.
  }
  return out;
}

}  // namespace adua
