#include "adua/synthetic.hpp"

#include <algorithm>
#include <fstream>
#include <random>

namespace adua {

void SynthSpec::validate() const {
  if (!(shared_fraction >= 0.0 && shared_fraction <= 1.0)) {
    throw ConfigError("synth spec: \"shared_fraction\" must lie in [0, 1], got " +
                      std::to_string(shared_fraction));
  }
  auto positive = [](int v, const char* field) {
    if (v <= 0) {
      throw ConfigError("synth spec: \"" + std::string(field) +
                        "\" must be positive, got " + std::to_string(v));
    }
  };
  positive(n_domains, "n_domains");
  positive(docs_per_domain, "docs_per_domain");
  positive(test_docs_per_domain, "test_docs_per_domain");
  positive(doc_len_min, "doc_len_min");
  positive(doc_len_max, "doc_len_max");
  positive(shared_pool, "shared_pool");
  positive(domain_pool, "domain_pool");
  positive(cue_words_per_class, "cue_words_per_class");
  positive(cues_per_doc, "cues_per_doc");
  if (doc_len_min > doc_len_max) {
    throw ConfigError("synth spec: \"doc_len_min\" exceeds \"doc_len_max\"");
  }
  if (doc_len_min <= cues_per_doc) {
    throw ConfigError("synth spec: \"doc_len_min\" must exceed \"cues_per_doc\" so documents have content words");
  }
  if (!(label_noise >= 0.0 && label_noise < 0.5)) {
    throw ConfigError("synth spec: \"label_noise\" must lie in [0, 0.5), got " +
                      std::to_string(label_noise));
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("synth spec: \"train_fraction\" must lie in (0, 1), got " +
                      std::to_string(train_fraction));
  }
  if (docs_per_domain < 10) {
    throw ConfigError("synth spec: \"docs_per_domain\" must be at least 10 to survive a split");
  }
}

Json SynthSpec::to_json() const {
  return Json{{"n_domains", n_domains},
              {"docs_per_domain", docs_per_domain},
              {"test_docs_per_domain", test_docs_per_domain},
              {"doc_len_min", doc_len_min},
              {"doc_len_max", doc_len_max},
              {"shared_pool", shared_pool},
              {"domain_pool", domain_pool},
              {"shared_fraction", shared_fraction},
              {"cue_words_per_class", cue_words_per_class},
              {"cues_per_doc", cues_per_doc},
              {"label_noise", label_noise},
              {"train_fraction", train_fraction},
              {"seed", seed}};
}

SynthSpec SynthSpec::from_json(const Json& j) {
  reject_unknown_keys(j, "synth spec",
                      {"n_domains", "docs_per_domain", "test_docs_per_domain",
                       "doc_len_min", "doc_len_max", "shared_pool", "domain_pool",
                       "shared_fraction", "cue_words_per_class", "cues_per_doc",
                       "label_noise", "train_fraction", "seed"});
  SynthSpec s;
  s.n_domains = json_get_or(j, "synth spec", "n_domains", s.n_domains);
  s.docs_per_domain = json_get_or(j, "synth spec", "docs_per_domain", s.docs_per_domain);
  s.test_docs_per_domain =
      json_get_or(j, "synth spec", "test_docs_per_domain", s.test_docs_per_domain);
  s.doc_len_min = json_get_or(j, "synth spec", "doc_len_min", s.doc_len_min);
  s.doc_len_max = json_get_or(j, "synth spec", "doc_len_max", s.doc_len_max);
  s.shared_pool = json_get_or(j, "synth spec", "shared_pool", s.shared_pool);
  s.domain_pool = json_get_or(j, "synth spec", "domain_pool", s.domain_pool);
  s.shared_fraction = json_get_or(j, "synth spec", "shared_fraction", s.shared_fraction);
  s.cue_words_per_class =
      json_get_or(j, "synth spec", "cue_words_per_class", s.cue_words_per_class);
  s.cues_per_doc = json_get_or(j, "synth spec", "cues_per_doc", s.cues_per_doc);
  s.label_noise = json_get_or(j, "synth spec", "label_noise", s.label_noise);
  s.train_fraction = json_get_or(j, "synth spec", "train_fraction", s.train_fraction);
  s.seed = json_get_or(j, "synth spec", "seed", s.seed);
  s.validate();
  return s;
}

namespace {

// One document: cues_per_doc polarity cues (majority = intended label) mixed
// into content words drawn from the shared or the domain-private pool.
std::string make_doc(const SynthSpec& spec, int domain, int intended_label,
                     std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len_dist(spec.doc_len_min, spec.doc_len_max);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> shared_word(0, spec.shared_pool - 1);
  std::uniform_int_distribution<int> domain_word(0, spec.domain_pool - 1);
  std::uniform_int_distribution<int> cue_word(0, spec.cue_words_per_class - 1);

  const int len = len_dist(rng);
  const int cues = spec.cues_per_doc;
  // Majority count in [floor(cues/2)+1, cues]: the intended polarity wins.
  std::uniform_int_distribution<int> majority_dist(cues / 2 + 1, cues);
  const int majority = majority_dist(rng);

  std::vector<std::string> words;
  words.reserve(static_cast<std::size_t>(len));
  for (int i = 0; i < cues; ++i) {
    const bool with_label = i < majority;
    const int polarity = with_label ? intended_label : 1 - intended_label;
    const char* prefix = polarity == 1 ? "cpos" : "cneg";
    words.push_back(prefix + std::to_string(cue_word(rng)));
  }
  for (int i = cues; i < len; ++i) {
    if (unit(rng) < spec.shared_fraction) {
      words.push_back("s" + std::to_string(shared_word(rng)));
    } else {
      words.push_back("d" + std::to_string(domain) + "w" + std::to_string(domain_word(rng)));
    }
  }
  std::shuffle(words.begin(), words.end(), rng);

  std::string doc;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) doc.push_back(' ');
    doc += words[i];
  }
  return doc;
}

RawCorpus make_corpus(const SynthSpec& spec, int domain, const std::string& domain_id,
                      int n_docs, std::uint64_t stream_seed) {
  RawCorpus corpus;
  corpus.domain_id = domain_id;
  corpus.docs.reserve(static_cast<std::size_t>(n_docs));
  corpus.labels.reserve(static_cast<std::size_t>(n_docs));
  std::mt19937_64 rng(stream_seed);
  for (int j = 0; j < n_docs; ++j) {
    const int intended = j % 2;  // alternate for exact class balance
    corpus.docs.push_back(make_doc(spec, domain, intended, rng));
    corpus.labels.push_back(intended);
  }
  return corpus;
}

}  // namespace

std::vector<SynthDomain> gen_synthetic(const SynthSpec& spec) {
  spec.validate();
  std::vector<SynthDomain> out;
  out.reserve(static_cast<std::size_t>(spec.n_domains));
  for (int d = 0; d < spec.n_domains; ++d) {
    SynthDomain domain;
    domain.id = "d" + std::to_string(d);

    RawCorpus pool = make_corpus(spec, d, domain.id, spec.docs_per_domain,
                                 derive_seed(spec.seed, "pool/" + domain.id));
    domain.test = make_corpus(spec, d, domain.id, spec.test_docs_per_domain,
                              derive_seed(spec.seed, "test/" + domain.id));

    // Label noise applies to the train/dev pool only; test stays clean.
    if (spec.label_noise > 0.0) {
      std::mt19937_64 rng(derive_seed(spec.seed, "noise/" + domain.id));
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      for (int& label : pool.labels) {
        if (unit(rng) < spec.label_noise) label = 1 - label;
      }
    }

    auto [train, dev] =
        split_train_dev(pool, spec.train_fraction, derive_seed(spec.seed, "split/" + domain.id));
    domain.train = std::move(train);
    domain.dev = std::move(dev);
    out.push_back(std::move(domain));
  }
  return out;
}

void write_dataset_tree(const std::vector<SynthDomain>& domains, const SynthSpec& spec,
                        const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create \"" + out_dir.string() + "\": " + ec.message());
  for (const SynthDomain& d : domains) {
    const auto dir = out_dir / d.id;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create \"" + dir.string() + "\": " + ec.message());
    save_labeled_tsv(d.train, dir / "train.tsv");
    save_labeled_tsv(d.dev, dir / "dev.tsv");
    save_labeled_tsv(d.test, dir / "test.tsv");
  }
  std::ofstream spec_out(out_dir / "spec.json", std::ios::trunc);
  if (!spec_out) throw IoError("cannot write \"" + (out_dir / "spec.json").string() + "\"");
  spec_out << spec.to_json().dump(2) << '\n';
}

LoadedDataset load_dataset_tree(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw IoError("dataset directory \"" + dir.string() + "\" does not exist");
  }
  LoadedDataset out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_directory()) continue;
    out.domain_ids.push_back(entry.path().filename().string());
  }
  std::sort(out.domain_ids.begin(), out.domain_ids.end());
  if (out.domain_ids.empty()) {
    throw DataError("dataset directory \"" + dir.string() + "\" contains no domain subdirectories");
  }
  for (const std::string& id : out.domain_ids) {
    const auto base = dir / id;
    out.train.emplace(id, load_labeled_tsv(base / "train.tsv", id));
    out.dev.emplace(id, load_labeled_tsv(base / "dev.tsv", id));
    out.test.emplace(id, load_labeled_tsv(base / "test.tsv", id));
  }
  return out;
}

}  // namespace adua
