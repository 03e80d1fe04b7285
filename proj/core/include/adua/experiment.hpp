#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "adua/analysis.hpp"
#include "adua/synthetic.hpp"
#include "adua/training.hpp"
#include "adua/vocab.hpp"

namespace adua {

// One adaptation direction: labeled data from `source`, unlabeled text from
// every domain in `targets`, evaluation on the targets' test sets.
struct AdaptationScheme {
  std::string source;
  std::vector<std::string> targets;

  // Stable directory name, e.g. "books__dvd+electronics".
  std::string dir_token() const;
};

// Full description of an experiment grid: the dataset (generated or on
// disk), which schemes, method variants and seeds to cross, and the shared
// training hyperparameters. Parsed strictly from JSON; unknown keys are
// rejected so a typo cannot silently fall back to a default.
struct ExperimentConfig {
  ModelConfig model;
  std::optional<SynthSpec> synthetic;
  std::string data_dir;                   // exactly one of synthetic / data_dir
  std::vector<AdaptationScheme> schemes;  // empty: every domain vs the rest
  std::vector<MethodVariant> variants;
  std::vector<std::uint64_t> seeds;

  int batch_size = 16;
  int fusion_epochs = 10;
  int task_epochs = 10;
  double lr_full = 2e-5;
  double lr_ada = 5e-5;
  std::int64_t warmup_steps = 1000;
  double mask_prob = 0.15;
  double grad_clip = 1.0;
  double fusion_dev_fraction = 0.1;

  void validate() const;
  Json to_json() const;
  static ExperimentConfig from_json(const Json& j);
  static ExperimentConfig load(const std::filesystem::path& file);
};

// Outcome of a single (scheme, variant, seed) run within an experiment.
struct RunRecord {
  std::string scheme;  // dir_token of the scheme
  std::string source;
  std::vector<std::string> targets;
  std::string variant;  // token form, e.g. "ada_tsa"
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::vector<TargetEval> evals;
  std::string dir;  // run directory, relative to the experiment root
};

struct ExperimentOutput {
  std::filesystem::path out_dir;
  ResultTable table;
  std::vector<PairwiseTest> tests;
  std::vector<RunRecord> runs;
  std::size_t failed = 0;
};

// Generates the synthetic corpus or loads the dataset tree the config names.
// A generated dataset is echoed to echo_dir (when non-null) as a TSV tree so
// the experiment output is self-contained.
LoadedDataset materialize_dataset(const ExperimentConfig& config,
                                  const std::filesystem::path* echo_dir);

// One vocabulary over every domain's training split, sized to fit the
// model's embedding table. All runs of an experiment share it.
Vocab build_shared_vocab(const LoadedDataset& data, const ModelConfig& model);

// The training plan used for one (scheme, variant, seed) cell of the grid.
RunPlan make_run_plan(const ExperimentConfig& config, const AdaptationScheme& scheme,
                      MethodVariant variant, std::uint64_t seed, int active_vocab);

// Executes the whole grid with up to `jobs` runs in flight, then aggregates:
// results.csv / results.txt / ttest.csv at the root, per-run histories and
// checkpoints under runs/, and manifest.json describing every run. Progress
// goes to `log` one line per epoch. Individual run failures are recorded in
// the manifest and the remaining runs continue.
ExperimentOutput run_experiment(const ExperimentConfig& config,
                                const std::filesystem::path& out_dir, int jobs,
                                Precision precision, std::ostream& log);

}  // namespace adua
