#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "adua/experiment.hpp"
#include "adua/persistence.hpp"

namespace adua {
namespace {

Json load_json_file(const std::filesystem::path& file) {
  std::ifstream f(file);
  if (!f) throw IoError("cannot open \"" + file.string() + "\"");
  try {
    return Json::parse(f);
  } catch (const Json::parse_error& e) {
    throw ConfigError("\"" + file.string() + "\" is not valid JSON: " + e.what());
  }
}

Precision precision_from(const std::string& s) {
  return s == "double" ? Precision::kDouble : Precision::kSingle;
}

const char* dtype_of(Precision p) { return p == Precision::kSingle ? "f32" : "f64"; }

// Picks the scalar width for a checkpoint-driven command: the checkpoint
// decides, and an explicit --precision flag must agree with it.
Precision checkpoint_precision(const CheckpointPeek& peek, bool flag_given,
                               Precision flag_value, const std::string& path) {
  const Precision stored = peek.dtype == "f64" ? Precision::kDouble : Precision::kSingle;
  if (flag_given && flag_value != stored) {
    throw ConfigError("checkpoint \"" + path + "\" stores " + peek.dtype +
                      " tensors but --precision " + to_string(flag_value) + " (" +
                      dtype_of(flag_value) + ") was requested");
  }
  return stored;
}

// Config for the single-run commands: one scheme, one variant, one seed.
// Internally rewritten into an experiment config so both surfaces share the
// same parsing, defaults, and validation.
struct SingleRun {
  ExperimentConfig config;
  AdaptationScheme scheme;
  MethodVariant variant = MethodVariant::kAdaTsa;
  std::uint64_t seed = 1;
};

SingleRun parse_single_run(const Json& j, bool seed_given, std::uint64_t seed_flag) {
  reject_unknown_keys(j, "run config",
                      {"model", "synthetic", "data_dir", "source", "targets", "variant",
                       "training", "seed"});
  Json e = Json::object();
  for (const char* key : {"model", "synthetic", "data_dir", "training"}) {
    if (j.contains(key)) e[key] = j.at(key);
  }
  e["schemes"] = Json::array(
      {Json{{"source", json_get<std::string>(j, "run config", "source")},
            {"targets", json_get<std::vector<std::string>>(j, "run config", "targets")}}});
  e["variants"] = Json::array(
      {json_get_or<std::string>(j, "run config", "variant", std::string("ada_tsa"))});
  const std::uint64_t seed =
      seed_given ? seed_flag
                 : json_get_or<std::uint64_t>(j, "run config", "seed", std::uint64_t{1});
  e["seeds"] = Json::array({seed});

  SingleRun run;
  run.config = ExperimentConfig::from_json(e);
  run.config.validate();
  run.scheme = run.config.schemes.at(0);
  run.variant = run.config.variants.at(0);
  run.seed = seed;
  return run;
}

void require_domains(const LoadedDataset& dataset, const AdaptationScheme& scheme) {
  if (!dataset.train.count(scheme.source)) {
    throw ConfigError("source domain \"" + scheme.source + "\" is not in the dataset");
  }
  for (const std::string& t : scheme.targets) {
    if (!dataset.train.count(t)) {
      throw ConfigError("target domain \"" + t + "\" is not in the dataset");
    }
  }
}

ProgressFn stderr_progress(std::string tag) {
  return [tag = std::move(tag)](const EpochRecord& r) {
    std::cerr << "[" << tag << "] " << r.phase << " epoch " << r.epoch << " step " << r.step
              << " lr " << format_double(r.lr) << " loss " << format_double(r.train_loss)
              << " dev " << format_double(r.dev_metric) << "\n";
  };
}

int cmd_gen_data(const std::string& config_path, const std::filesystem::path& out) {
  const SynthSpec spec = SynthSpec::from_json(load_json_file(config_path));
  write_dataset_tree(gen_synthetic(spec), spec, out);
  std::cout << out.string() << "\n";
  return 0;
}

template <typename S>
int fusion_impl(const SingleRun& run, const std::filesystem::path& out) {
  const LoadedDataset dataset = materialize_dataset(run.config, nullptr);
  require_domains(dataset, run.scheme);
  const Vocab vocab = build_shared_vocab(dataset, run.config.model);

  RunPlan plan = make_run_plan(run.config, run.scheme, run.variant, run.seed,
                               static_cast<int>(vocab.size()));
  plan.model.adapters_enabled = uses_adapters(run.variant);
  ParameterStore<S> params = init_model<S>(plan.model, derive_seed(run.seed, "init"));

  const DomainCorpus source = vocab.encode_corpus(dataset.train.at(run.scheme.source));
  std::vector<DomainCorpus> target_store;
  std::vector<const DomainCorpus*> targets;
  for (const std::string& t : run.scheme.targets) {
    target_store.push_back(vocab.encode_corpus(dataset.train.at(t)).without_labels());
  }
  for (const DomainCorpus& t : target_store) targets.push_back(&t);
  const DomainCorpus mixed = mix_domains(source, targets, derive_seed(run.seed, "mix"));

  const std::string tag = run.scheme.dir_token() + " " + variant_token(run.variant) + " seed" +
                          std::to_string(run.seed);
  const History history = train_domain_fusion(params, mixed, plan, stderr_progress(tag));

  std::filesystem::create_directories(out);
  write_history_csv(history, out / "history.csv");
  const std::filesystem::path ckpt = out / "fusion.adua";
  save_checkpoint(params, plan.model, &vocab, CheckpointScope::kFull, ckpt);
  std::cout << ckpt.string() << "\n";
  return 0;
}

template <typename S>
int finetune_impl(const SingleRun& run, const std::filesystem::path& out,
                  const std::string& init_path) {
  const LoadedDataset dataset = materialize_dataset(run.config, nullptr);
  require_domains(dataset, run.scheme);

  ParameterStore<S> params;
  Vocab vocab;
  ModelConfig model;
  if (!init_path.empty()) {
    LoadedCheckpoint<S> ckpt = load_checkpoint<S>(init_path);
    if (ckpt.scope != CheckpointScope::kFull) {
      throw SchemaError("\"" + init_path +
                        "\" is an adapter bundle; fine-tuning starts from a full checkpoint");
    }
    if (!ckpt.vocab) {
      throw SchemaError("checkpoint \"" + init_path + "\" carries no vocabulary");
    }
    if (uses_adapters(run.variant) != ckpt.model.adapters_enabled) {
      throw ConfigError(std::string("variant \"") + variant_token(run.variant) +
                        "\" does not match the checkpoint (adapters " +
                        (ckpt.model.adapters_enabled ? "enabled" : "disabled") + ")");
    }
    params = std::move(ckpt.params);
    vocab = std::move(*ckpt.vocab);
    model = ckpt.model;
  } else {
    vocab = build_shared_vocab(dataset, run.config.model);
    model = run.config.model;
    model.adapters_enabled = uses_adapters(run.variant);
    params = init_model<S>(model, derive_seed(run.seed, "init"));
  }

  RunPlan plan = make_run_plan(run.config, run.scheme, run.variant, run.seed,
                               static_cast<int>(vocab.size()));
  plan.model = model;

  const DomainCorpus train = vocab.encode_corpus(dataset.train.at(run.scheme.source));
  const DomainCorpus dev = vocab.encode_corpus(dataset.dev.at(run.scheme.source));
  const std::string tag = run.scheme.dir_token() + " " + variant_token(run.variant) + " seed" +
                          std::to_string(run.seed);
  const History history = train_task(params, train, dev, plan, stderr_progress(tag));

  std::filesystem::create_directories(out);
  write_history_csv(history, out / "history.csv");
  const std::filesystem::path ckpt_path = out / "model.adua";
  save_checkpoint(params, model, &vocab, CheckpointScope::kFull, ckpt_path);
  if (uses_adapters(run.variant)) {
    save_checkpoint(params, model, &vocab, CheckpointScope::kAdapterOnly, out / "adapter.adua");
  }
  std::cout << ckpt_path.string() << "\n";
  return 0;
}

template <typename S>
int evaluate_impl(const std::string& ckpt_path, const std::string& adapter_path,
                  const std::vector<std::string>& data_files, const std::filesystem::path& out,
                  int batch_size) {
  LoadedCheckpoint<S> ckpt = load_checkpoint<S>(ckpt_path);
  if (ckpt.scope != CheckpointScope::kFull) {
    throw SchemaError("\"" + ckpt_path +
                      "\" is an adapter bundle; evaluation needs a full checkpoint (pass the "
                      "bundle via --adapter)");
  }
  if (!ckpt.vocab) throw SchemaError("checkpoint \"" + ckpt_path + "\" carries no vocabulary");
  ParameterStore<S> params = std::move(ckpt.params);
  if (!adapter_path.empty()) {
    params = load_adapter_bundle<S>(params, ckpt.model, adapter_path);
  }

  std::filesystem::create_directories(out);
  const std::filesystem::path csv = out / "eval.csv";
  std::ofstream f(csv, std::ios::trunc);
  if (!f) throw IoError("cannot write \"" + csv.string() + "\"");
  f << "corpus,accuracy,n_docs\n";
  for (const std::string& file : data_files) {
    const RawCorpus raw =
        load_labeled_tsv(file, std::filesystem::path(file).stem().string());
    const DomainCorpus corpus = ckpt.vocab->encode_corpus(raw);
    const double acc = evaluate_accuracy(params, corpus, ckpt.model, batch_size);
    f << raw.domain_id << ',' << format_double(acc) << ',' << corpus.size() << "\n";
  }
  if (!f) throw IoError("write failed for \"" + csv.string() + "\"");
  std::cout << csv.string() << "\n";
  return 0;
}

int cmd_similarity(const std::string& data_dir, const std::filesystem::path& out,
                   std::size_t top_k) {
  const LoadedDataset dataset = load_dataset_tree(data_dir);
  std::vector<const RawCorpus*> corpora;
  for (const std::string& d : dataset.domain_ids) corpora.push_back(&dataset.train.at(d));
  const SimilarityMatrix m = similarity_matrix(corpora, top_k);
  std::filesystem::create_directories(out);
  const std::filesystem::path csv = out / "similarity.csv";
  const std::filesystem::path json = out / "similarity.json";
  write_similarity_csv(m, csv);
  write_similarity_json(m, json);
  std::cout << csv.string() << "\n" << json.string() << "\n";
  return 0;
}

template <typename S>
int project_hidden_impl(const std::string& ckpt_path, const std::string& adapter_path,
                        const std::string& data_dir, const std::string& split,
                        const std::filesystem::path& out, int batch_size,
                        HiddenPooling pooling) {
  LoadedCheckpoint<S> ckpt = load_checkpoint<S>(ckpt_path);
  if (ckpt.scope != CheckpointScope::kFull) {
    throw SchemaError("\"" + ckpt_path + "\" is an adapter bundle, not a full checkpoint");
  }
  if (!ckpt.vocab) throw SchemaError("checkpoint \"" + ckpt_path + "\" carries no vocabulary");
  ParameterStore<S> params = std::move(ckpt.params);
  if (!adapter_path.empty()) {
    params = load_adapter_bundle<S>(params, ckpt.model, adapter_path);
  }

  const LoadedDataset dataset = load_dataset_tree(data_dir);
  const std::map<std::string, RawCorpus>& chosen =
      split == "train" ? dataset.train : (split == "dev" ? dataset.dev : dataset.test);

  std::filesystem::create_directories(out);
  std::vector<Matrix> mats;
  std::vector<std::string> row_domains;
  const auto h = static_cast<std::size_t>(ckpt.model.hidden_dim);
  std::size_t total_rows = 0;
  for (const std::string& d : dataset.domain_ids) {
    const DomainCorpus corpus = ckpt.vocab->encode_corpus(chosen.at(d));
    Matrix m = extract_hidden<S>(params, corpus, ckpt.model, batch_size, pooling);
    const std::filesystem::path bin = out / ("hidden_" + d + ".bin");
    write_hidden_matrix(m, bin);
    std::cout << bin.string() << "\n";
    total_rows += m.rows;
    for (std::size_t r = 0; r < m.rows; ++r) row_domains.push_back(d);
    mats.push_back(std::move(m));
  }

  Matrix all(total_rows, h);
  std::size_t at = 0;
  for (const Matrix& m : mats) {
    std::copy(m.data.begin(), m.data.end(), all.data.begin() + static_cast<std::ptrdiff_t>(at));
    at += m.data.size();
  }
  const Pca2d pca = pca_project_2d(all);
  const std::filesystem::path csv = out / "projection.csv";
  write_projection_csv(row_domains, pca, csv);
  std::cout << csv.string() << "\n";
  return 0;
}

int cmd_experiment(const std::string& config_path, const std::filesystem::path& out, int jobs,
                   Precision precision) {
  const ExperimentConfig config = ExperimentConfig::load(config_path);
  const ExperimentOutput result = run_experiment(config, out, jobs, precision, std::cerr);
  std::cout << out.string() << "\n";
  if (result.failed == 0) return 0;
  std::cerr << result.failed << " of " << result.runs.size() << " runs failed\n";
  return result.failed == result.runs.size() ? 2 : 3;
}

int guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace
}  // namespace adua

int main(int argc, char** argv) {
  using namespace adua;

  CLI::App app{"adapter-based unsupervised domain adaptation toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  std::string checkpoint_path;
  std::string adapter_path;
  std::string init_path;
  std::string data_dir;
  std::string split = "test";
  std::string pooling = "mean";
  std::string precision_str = "single";
  std::vector<std::string> data_files;
  std::uint64_t seed = 1;
  std::size_t top_k = 10000;
  int jobs = 1;
  int batch_size = 32;

  auto add_precision = [&](CLI::App* sub) {
    return sub->add_option("--precision", precision_str, "Scalar width: single or double")
        ->check(CLI::IsMember({"single", "double"}));
  };

  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic multi-domain dataset");
  gen->add_option("--config", config_path, "Generator spec JSON")->required();
  gen->add_option("--out", out_dir, "Output dataset directory")->required();

  CLI::App* fusion =
      app.add_subcommand("pretrain-fusion", "Masked-LM training on mixed domain text");
  fusion->add_option("--config", config_path, "Run config JSON")->required();
  fusion->add_option("--out", out_dir, "Output directory")->required();
  CLI::Option* fusion_seed = fusion->add_option("--seed", seed, "Run seed");
  CLI::Option* fusion_precision = add_precision(fusion);

  CLI::App* finetune = app.add_subcommand("finetune", "Task fine-tuning on labeled source data");
  finetune->add_option("--config", config_path, "Run config JSON")->required();
  finetune->add_option("--out", out_dir, "Output directory")->required();
  CLI::Option* finetune_seed = finetune->add_option("--seed", seed, "Run seed");
  finetune->add_option("--init", init_path, "Checkpoint to start from (e.g. a fusion phase)");
  CLI::Option* finetune_precision = add_precision(finetune);

  CLI::App* evaluate = app.add_subcommand("evaluate", "Accuracy of a checkpoint on labeled TSVs");
  evaluate->add_option("--checkpoint", checkpoint_path, "Full model checkpoint")->required();
  evaluate->add_option("--data", data_files, "Labeled TSV file (repeatable)")->required();
  evaluate->add_option("--adapter", adapter_path, "Adapter bundle to graft before evaluating");
  evaluate->add_option("--out", out_dir, "Output directory");
  evaluate->add_option("--batch", batch_size, "Evaluation batch size");
  CLI::Option* evaluate_precision = add_precision(evaluate);

  CLI::App* similarity =
      app.add_subcommand("similarity", "Vocabulary-overlap similarity between domains");
  similarity->add_option("--data-dir", data_dir, "Dataset directory")->required();
  similarity->add_option("--out", out_dir, "Output directory")->required();
  similarity->add_option("--top-k", top_k, "Ranked word list size");

  CLI::App* project =
      app.add_subcommand("project-hidden", "Export hidden states and their 2-D projection");
  project->add_option("--checkpoint", checkpoint_path, "Full model checkpoint")->required();
  project->add_option("--data-dir", data_dir, "Dataset directory")->required();
  project->add_option("--out", out_dir, "Output directory")->required();
  project->add_option("--split", split, "Which split to encode")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  project->add_option("--adapter", adapter_path, "Adapter bundle to graft before encoding");
  project->add_option("--batch", batch_size, "Encoding batch size");
  project->add_option("--pooling", pooling, "Per-document pooling: mean or first")
      ->check(CLI::IsMember({"mean", "first"}));
  CLI::Option* project_precision = add_precision(project);

  CLI::App* experiment = app.add_subcommand("experiment", "Run the full method x scheme x seed grid");
  experiment->add_option("--config", config_path, "Experiment config JSON")->required();
  experiment->add_option("--out", out_dir, "Output directory")->required();
  experiment->add_option("--jobs", jobs, "Concurrent runs");
  add_precision(experiment);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  const Precision precision = precision_from(precision_str);

  if (gen->parsed()) {
    return guarded([&] { return cmd_gen_data(config_path, out_dir); });
  }
  if (fusion->parsed()) {
    return guarded([&] {
      const SingleRun run =
          parse_single_run(load_json_file(config_path), fusion_seed->count() > 0, seed);
      (void)fusion_precision;
      return precision == Precision::kSingle ? fusion_impl<float>(run, out_dir)
                                             : fusion_impl<double>(run, out_dir);
    });
  }
  if (finetune->parsed()) {
    return guarded([&] {
      const SingleRun run =
          parse_single_run(load_json_file(config_path), finetune_seed->count() > 0, seed);
      Precision p = precision;
      if (!init_path.empty()) {
        p = checkpoint_precision(peek_checkpoint(init_path), finetune_precision->count() > 0,
                                 precision, init_path);
      }
      return p == Precision::kSingle ? finetune_impl<float>(run, out_dir, init_path)
                                     : finetune_impl<double>(run, out_dir, init_path);
    });
  }
  if (evaluate->parsed()) {
    return guarded([&] {
      const Precision p =
          checkpoint_precision(peek_checkpoint(checkpoint_path),
                               evaluate_precision->count() > 0, precision, checkpoint_path);
      return p == Precision::kSingle
                 ? evaluate_impl<float>(checkpoint_path, adapter_path, data_files, out_dir,
                                        batch_size)
                 : evaluate_impl<double>(checkpoint_path, adapter_path, data_files, out_dir,
                                         batch_size);
    });
  }
  if (similarity->parsed()) {
    return guarded([&] { return cmd_similarity(data_dir, out_dir, top_k); });
  }
  if (project->parsed()) {
    return guarded([&] {
      const Precision p =
          checkpoint_precision(peek_checkpoint(checkpoint_path),
                               project_precision->count() > 0, precision, checkpoint_path);
      const HiddenPooling pool =
          pooling == "first" ? HiddenPooling::kFirstToken : HiddenPooling::kMeanNonPad;
      return p == Precision::kSingle
                 ? project_hidden_impl<float>(checkpoint_path, adapter_path, data_dir, split,
                                              out_dir, batch_size, pool)
                 : project_hidden_impl<double>(checkpoint_path, adapter_path, data_dir, split,
                                               out_dir, batch_size, pool);
    });
  }
  if (experiment->parsed()) {
    return guarded([&] { return cmd_experiment(config_path, out_dir, jobs, precision); });
  }
  return 1;
}
