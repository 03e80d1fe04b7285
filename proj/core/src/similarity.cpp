#include "adua/analysis.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <unordered_set>

#include "adua/jsonutil.hpp"

namespace adua {

namespace {

// Frequency-ranked words, most frequent first, ties broken lexicographically
// (the same ordering the vocabulary builder uses).
std::vector<std::string> ranked_words(const RawCorpus& corpus) {
  std::map<std::string, std::uint64_t> counts;
  for (const std::string& doc : corpus.docs) {
    for (std::string& word : tokenize(doc)) ++counts[std::move(word)];
  }
  std::vector<std::pair<std::string, std::uint64_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  out.reserve(ranked.size());
  for (auto& [word, freq] : ranked) out.push_back(std::move(word));
  return out;
}

}  // namespace

double domain_similarity(const RawCorpus& a, const RawCorpus& b, std::size_t k) {
  if (k == 0) throw ConfigError("domain_similarity: k must be positive");
  const std::vector<std::string> wa = ranked_words(a);
  const std::vector<std::string> wb = ranked_words(b);
  if (wa.empty() || wb.empty()) {
    throw DataError("domain_similarity: corpus \"" + (wa.empty() ? a : b).domain_id +
                    "\" has no words");
  }
  const std::size_t keff = std::min({k, wa.size(), wb.size()});
  std::unordered_set<std::string_view> top_a;
  top_a.reserve(keff);
  for (std::size_t i = 0; i < keff; ++i) top_a.insert(wa[i]);
  std::size_t overlap = 0;
  for (std::size_t i = 0; i < keff; ++i) {
    if (top_a.count(wb[i])) ++overlap;
  }
  return static_cast<double>(overlap) / static_cast<double>(keff);
}

SimilarityMatrix similarity_matrix(const std::vector<const RawCorpus*>& corpora,
                                   std::size_t k) {
  if (corpora.size() < 2) {
    throw ContractError("similarity_matrix: need at least two domains");
  }
  SimilarityMatrix m;
  const std::size_t n = corpora.size();
  m.domains.reserve(n);
  for (const RawCorpus* c : corpora) {
    if (c == nullptr) throw ContractError("similarity_matrix: null corpus");
    m.domains.push_back(c->domain_id);
  }
  m.scores.assign(n * n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = domain_similarity(*corpora[i], *corpora[j], k);
      m.scores[i * n + j] = s;
      m.scores[j * n + i] = s;
    }
  }
  return m;
}

void write_similarity_csv(const SimilarityMatrix& m, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot write \"" + file.string() + "\"");
  out << "domain";
  for (const std::string& d : m.domains) out << ',' << d;
  out << '\n';
  for (std::size_t i = 0; i < m.domains.size(); ++i) {
    out << m.domains[i];
    for (std::size_t j = 0; j < m.domains.size(); ++j) {
      out << ',' << format_double(m.at(i, j));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for \"" + file.string() + "\"");
}

void write_similarity_json(const SimilarityMatrix& m, const std::filesystem::path& file) {
  Json rows = Json::object();
  for (std::size_t i = 0; i < m.domains.size(); ++i) {
    Json row = Json::object();
    for (std::size_t j = 0; j < m.domains.size(); ++j) {
      row[m.domains[j]] = m.at(i, j);
    }
    rows[m.domains[i]] = std::move(row);
  }
  const Json doc{{"domains", m.domains}, {"scores", std::move(rows)}};
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot write \"" + file.string() + "\"");
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("write failed for \"" + file.string() + "\"");
}

}  // namespace adua
