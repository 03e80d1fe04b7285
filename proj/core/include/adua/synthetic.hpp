#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "adua/corpus.hpp"
#include "adua/jsonutil.hpp"

namespace adua {

// Knobs for the synthetic review-style corpus family. Each domain draws its
// content words from a pool shared across domains (with probability
// shared_fraction) or from its own private pool, so shared_fraction directly
// controls how similar two domains' vocabularies are. Labels are carried by
// sentiment cue words: every document contains cues_per_doc cue tokens and
// the label is the majority cue polarity. label_noise flips a fraction of
// train/dev labels; test labels stay clean.
struct SynthSpec {
  int n_domains = 3;
  int docs_per_domain = 600;  // train+dev pool, split below
  int test_docs_per_domain = 200;
  int doc_len_min = 12;
  int doc_len_max = 24;
  int shared_pool = 600;
  int domain_pool = 500;
  double shared_fraction = 0.9;
  int cue_words_per_class = 12;
  int cues_per_doc = 5;
  double label_noise = 0.0;
  double train_fraction = 0.8;
  std::uint64_t seed = 1234;

  void validate() const;
  Json to_json() const;
  static SynthSpec from_json(const Json& j);
};

struct SynthDomain {
  std::string id;
  RawCorpus train;
  RawCorpus dev;
  RawCorpus test;
};

std::vector<SynthDomain> gen_synthetic(const SynthSpec& spec);

// Writes <out>/<domain>/{train,dev,test}.tsv plus <out>/spec.json.
void write_dataset_tree(const std::vector<SynthDomain>& domains, const SynthSpec& spec,
                        const std::filesystem::path& out_dir);

struct LoadedDataset {
  std::vector<std::string> domain_ids;
  std::map<std::string, RawCorpus> train;
  std::map<std::string, RawCorpus> dev;
  std::map<std::string, RawCorpus> test;
};

// Discovers domain subdirectories (sorted by name) and loads their splits.
LoadedDataset load_dataset_tree(const std::filesystem::path& dir);

}  // namespace adua
