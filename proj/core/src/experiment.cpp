#include "adua/experiment.hpp"

#include <atomic>
#include <mutex>
#include <set>
#include <thread>

#include "adua/persistence.hpp"

namespace adua {

std::string AdaptationScheme::dir_token() const {
  std::string token = source + "__";
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (i) token += '+';
    token += targets[i];
  }
  return token;
}

void ExperimentConfig::validate() const {
  model.validate();
  if (synthetic.has_value() == !data_dir.empty()) {
    throw ConfigError("experiment config: provide exactly one of \"synthetic\" and \"data_dir\"");
  }
  if (synthetic) synthetic->validate();
  if (seeds.empty()) throw ConfigError("experiment config: \"seeds\" must be nonempty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("experiment config: duplicate seed");
  }
  if (variants.empty()) throw ConfigError("experiment config: \"variants\" must be nonempty");
  {
    std::set<MethodVariant> seen;
    for (MethodVariant v : variants) {
      if (!seen.insert(v).second) {
        throw ConfigError(std::string("experiment config: variant \"") + variant_token(v) +
                          "\" listed twice");
      }
    }
  }
  for (const AdaptationScheme& s : schemes) {
    if (s.source.empty()) throw ConfigError("experiment config: scheme with empty source");
    if (s.targets.empty()) {
      throw ConfigError("experiment config: scheme \"" + s.source + "\" has no targets");
    }
    std::set<std::string> seen;
    for (const std::string& t : s.targets) {
      if (t == s.source) {
        throw ConfigError("experiment config: scheme \"" + s.source +
                          "\" lists its source as a target");
      }
      if (!seen.insert(t).second) {
        throw ConfigError("experiment config: scheme \"" + s.source + "\" lists target \"" + t +
                          "\" twice");
      }
    }
  }
  // Hyperparameter ranges are enforced once, by the per-run plan.
  RunPlan probe;
  probe.model = model;
  probe.batch_size = batch_size;
  probe.fusion_epochs = fusion_epochs;
  probe.task_epochs = task_epochs;
  probe.lr_full = lr_full;
  probe.lr_ada = lr_ada;
  probe.warmup_steps = warmup_steps;
  probe.mask_prob = mask_prob;
  probe.grad_clip = grad_clip;
  probe.fusion_dev_fraction = fusion_dev_fraction;
  probe.validate();
}

Json ExperimentConfig::to_json() const {
  Json j{{"model", model.to_json()},
         {"seeds", seeds},
         {"training",
          Json{{"batch_size", batch_size},
               {"fusion_epochs", fusion_epochs},
               {"task_epochs", task_epochs},
               {"lr_full", lr_full},
               {"lr_ada", lr_ada},
               {"warmup_steps", warmup_steps},
               {"mask_prob", mask_prob},
               {"grad_clip", grad_clip},
               {"fusion_dev_fraction", fusion_dev_fraction}}}};
  if (synthetic) {
    j["synthetic"] = synthetic->to_json();
  } else {
    j["data_dir"] = data_dir;
  }
  Json js = Json::array();
  for (const AdaptationScheme& s : schemes) {
    js.push_back(Json{{"source", s.source}, {"targets", s.targets}});
  }
  j["schemes"] = js;
  Json jv = Json::array();
  for (MethodVariant v : variants) jv.push_back(variant_token(v));
  j["variants"] = jv;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const Json& j) {
  reject_unknown_keys(j, "experiment config",
                      {"model", "synthetic", "data_dir", "schemes", "variants", "seeds",
                       "training"});
  ExperimentConfig cfg;
  if (j.contains("model")) cfg.model = ModelConfig::from_json(j.at("model"));
  if (j.contains("synthetic")) cfg.synthetic = SynthSpec::from_json(j.at("synthetic"));
  if (j.contains("data_dir")) {
    cfg.data_dir = json_get<std::string>(j, "experiment config", "data_dir");
  }
  if (j.contains("schemes")) {
    const Json& js = j.at("schemes");
    if (!js.is_array()) throw ConfigError("experiment config: \"schemes\" must be an array");
    for (const Json& s : js) {
      reject_unknown_keys(s, "scheme", {"source", "targets"});
      AdaptationScheme scheme;
      scheme.source = json_get<std::string>(s, "scheme", "source");
      scheme.targets = json_get<std::vector<std::string>>(s, "scheme", "targets");
      cfg.schemes.push_back(std::move(scheme));
    }
  }
  if (j.contains("variants")) {
    for (const std::string& token :
         json_get<std::vector<std::string>>(j, "experiment config", "variants")) {
      cfg.variants.push_back(variant_from_token(token));
    }
  } else {
    cfg.variants = {MethodVariant::kFullFt, MethodVariant::kFullTsa, MethodVariant::kAdaFt,
                    MethodVariant::kAdaTsa};
  }
  cfg.seeds = json_get<std::vector<std::uint64_t>>(j, "experiment config", "seeds");
  if (j.contains("training")) {
    const Json& t = j.at("training");
    reject_unknown_keys(t, "training config",
                        {"batch_size", "fusion_epochs", "task_epochs", "lr_full", "lr_ada",
                         "warmup_steps", "mask_prob", "grad_clip", "fusion_dev_fraction"});
    cfg.batch_size = json_get_or<int>(t, "training config", "batch_size", cfg.batch_size);
    cfg.fusion_epochs =
        json_get_or<int>(t, "training config", "fusion_epochs", cfg.fusion_epochs);
    cfg.task_epochs = json_get_or<int>(t, "training config", "task_epochs", cfg.task_epochs);
    cfg.lr_full = json_get_or<double>(t, "training config", "lr_full", cfg.lr_full);
    cfg.lr_ada = json_get_or<double>(t, "training config", "lr_ada", cfg.lr_ada);
    cfg.warmup_steps =
        json_get_or<std::int64_t>(t, "training config", "warmup_steps", cfg.warmup_steps);
    cfg.mask_prob = json_get_or<double>(t, "training config", "mask_prob", cfg.mask_prob);
    cfg.grad_clip = json_get_or<double>(t, "training config", "grad_clip", cfg.grad_clip);
    cfg.fusion_dev_fraction = json_get_or<double>(t, "training config", "fusion_dev_fraction",
                                                  cfg.fusion_dev_fraction);
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& file) {
  std::ifstream f(file);
  if (!f) throw IoError("cannot open \"" + file.string() + "\"");
  Json j;
  try {
    j = Json::parse(f);
  } catch (const Json::parse_error& e) {
    throw ConfigError("\"" + file.string() + "\" is not valid JSON: " + e.what());
  }
  return from_json(j);
}

LoadedDataset materialize_dataset(const ExperimentConfig& config,
                                  const std::filesystem::path* echo_dir) {
  if (config.synthetic) {
    std::vector<SynthDomain> domains = gen_synthetic(*config.synthetic);
    if (echo_dir) write_dataset_tree(domains, *config.synthetic, *echo_dir);
    LoadedDataset out;
    for (SynthDomain& d : domains) {
      out.domain_ids.push_back(d.id);
      out.train.emplace(d.id, std::move(d.train));
      out.dev.emplace(d.id, std::move(d.dev));
      out.test.emplace(d.id, std::move(d.test));
    }
    return out;
  }
  return load_dataset_tree(config.data_dir);
}

Vocab build_shared_vocab(const LoadedDataset& data, const ModelConfig& model) {
  std::vector<const RawCorpus*> sources;
  sources.reserve(data.domain_ids.size());
  for (const std::string& d : data.domain_ids) sources.push_back(&data.train.at(d));
  const auto max_words =
      static_cast<std::size_t>(model.vocab_size) - Vocab::kReservedWords.size();
  return Vocab::build(sources, max_words);
}

RunPlan make_run_plan(const ExperimentConfig& config, const AdaptationScheme& scheme,
                      MethodVariant variant, std::uint64_t seed, int active_vocab) {
  RunPlan plan;
  plan.variant = variant;
  plan.source = scheme.source;
  plan.targets = scheme.targets;
  plan.seed = seed;
  plan.batch_size = config.batch_size;
  plan.fusion_epochs = config.fusion_epochs;
  plan.task_epochs = config.task_epochs;
  plan.lr_full = config.lr_full;
  plan.lr_ada = config.lr_ada;
  plan.warmup_steps = config.warmup_steps;
  plan.mask_prob = config.mask_prob;
  plan.grad_clip = config.grad_clip;
  plan.fusion_dev_fraction = config.fusion_dev_fraction;
  plan.active_vocab = active_vocab;
  plan.model = config.model;
  return plan;
}

namespace {

// All corpora for one domain, already token-encoded under the shared vocab.
struct EncodedDomain {
  DomainCorpus train;            // labeled
  DomainCorpus train_unlabeled;  // same text, labels stripped
  DomainCorpus dev;
  DomainCorpus test;
};

struct RunTask {
  std::size_t scheme_idx = 0;
  MethodVariant variant = MethodVariant::kAdaTsa;
  std::uint64_t seed = 0;
  std::filesystem::path dir;   // absolute run directory
  std::string rel_dir;         // the same, relative to the experiment root
};

template <typename S>
std::vector<TargetEval> execute_run(const RunPlan& plan, const AdaptationScheme& scheme,
                                    const std::map<std::string, EncodedDomain>& encoded,
                                    const Vocab& vocab, const RunTask& task,
                                    const ProgressFn& progress) {
  DatasetBundle data;
  data.source_train = encoded.at(scheme.source).train;
  data.source_dev = encoded.at(scheme.source).dev;
  for (const std::string& t : scheme.targets) {
    data.target_train.push_back(encoded.at(t).train_unlabeled);
    data.target_test.push_back(encoded.at(t).test);
  }

  RunResult<S> result = run_method<S>(plan, data, progress);
  write_history_csv(result.history, task.dir / "history.csv");
  save_checkpoint(result.params, result.model, &vocab, CheckpointScope::kFull,
                  task.dir / "checkpoint.adua");
  if (uses_adapters(plan.variant)) {
    save_checkpoint(result.params, result.model, &vocab, CheckpointScope::kAdapterOnly,
                    task.dir / "adapter.adua");
  }
  return result.target_accuracy;
}

}  // namespace

ExperimentOutput run_experiment(const ExperimentConfig& config,
                                const std::filesystem::path& out_dir, int jobs,
                                Precision precision, std::ostream& log) {
  config.validate();
  if (jobs < 1) throw ConfigError("experiment: \"jobs\" must be positive");

  std::filesystem::create_directories(out_dir);

  // Stand up the dataset (generated trees are echoed to disk so any run can
  // be reproduced from the output directory alone).
  const std::filesystem::path echo_dir = out_dir / "dataset";
  const LoadedDataset dataset = materialize_dataset(config, &echo_dir);
  const std::vector<std::string>& domain_ids = dataset.domain_ids;

  std::vector<AdaptationScheme> schemes = config.schemes;
  if (schemes.empty()) {
    if (domain_ids.size() < 2) {
      throw ConfigError("experiment: default schemes need at least 2 domains, dataset has " +
                        std::to_string(domain_ids.size()));
    }
    for (const std::string& src : domain_ids) {
      AdaptationScheme s;
      s.source = src;
      for (const std::string& d : domain_ids) {
        if (d != src) s.targets.push_back(d);
      }
      schemes.push_back(std::move(s));
    }
  }
  for (const AdaptationScheme& s : schemes) {
    if (!dataset.train.count(s.source)) {
      throw ConfigError("experiment: scheme source \"" + s.source + "\" is not in the dataset");
    }
    for (const std::string& t : s.targets) {
      if (!dataset.train.count(t)) {
        throw ConfigError("experiment: scheme target \"" + t + "\" is not in the dataset");
      }
    }
  }

  const Vocab vocab = build_shared_vocab(dataset, config.model);
  const int active_vocab = static_cast<int>(vocab.size());

  std::map<std::string, EncodedDomain> encoded;
  for (const std::string& d : domain_ids) {
    EncodedDomain e;
    e.train = vocab.encode_corpus(dataset.train.at(d));
    e.train_unlabeled = e.train.without_labels();
    e.dev = vocab.encode_corpus(dataset.dev.at(d));
    e.test = vocab.encode_corpus(dataset.test.at(d));
    encoded.emplace(d, std::move(e));
  }

  // The full grid, in the order the manifest lists it.
  std::vector<RunTask> tasks;
  for (std::size_t si = 0; si < schemes.size(); ++si) {
    for (MethodVariant v : config.variants) {
      for (std::uint64_t seed : config.seeds) {
        RunTask t;
        t.scheme_idx = si;
        t.variant = v;
        t.seed = seed;
        t.rel_dir = "runs/" + schemes[si].dir_token() + "/" + variant_token(v) + "/seed" +
                    std::to_string(seed);
        t.dir = out_dir / t.rel_dir;
        tasks.push_back(std::move(t));
      }
    }
  }
  for (const RunTask& t : tasks) std::filesystem::create_directories(t.dir);

  ExperimentOutput output;
  output.out_dir = out_dir;
  output.runs.resize(tasks.size());

  std::mutex log_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const RunTask& task = tasks[i];
      const AdaptationScheme& scheme = schemes[task.scheme_idx];
      const std::string tag =
          scheme.dir_token() + " " + variant_token(task.variant) + " seed" +
          std::to_string(task.seed);

      RunRecord& record = output.runs[i];
      record.scheme = scheme.dir_token();
      record.source = scheme.source;
      record.targets = scheme.targets;
      record.variant = variant_token(task.variant);
      record.seed = task.seed;
      record.dir = task.rel_dir;

      ProgressFn progress = [&](const EpochRecord& r) {
        std::lock_guard<std::mutex> guard(log_mutex);
        log << "[" << tag << "] " << r.phase << " epoch " << r.epoch << " step " << r.step
            << " lr " << format_double(r.lr) << " loss " << format_double(r.train_loss)
            << " dev " << format_double(r.dev_metric) << "\n";
      };
      try {
        const RunPlan plan =
            make_run_plan(config, scheme, task.variant, task.seed, active_vocab);
        record.evals = precision == Precision::kSingle
                           ? execute_run<float>(plan, scheme, encoded, vocab, task, progress)
                           : execute_run<double>(plan, scheme, encoded, vocab, task, progress);
        record.ok = true;
      } catch (const std::exception& e) {
        record.ok = false;
        record.error = e.what();
        std::lock_guard<std::mutex> guard(log_mutex);
        log << "[" << tag << "] FAILED: " << e.what() << "\n";
      }
    }
  };

  const std::size_t n_workers = std::min<std::size_t>(static_cast<std::size_t>(jobs),
                                                      std::max<std::size_t>(tasks.size(), 1));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  std::vector<RunAccuracy> rows;
  for (const RunRecord& r : output.runs) {
    if (!r.ok) {
      ++output.failed;
      continue;
    }
    for (const TargetEval& e : r.evals) {
      rows.push_back({r.source + "->" + e.domain, variant_display(variant_from_token(r.variant)),
                      r.seed, e.accuracy});
    }
  }

  const std::string reference = variant_display(MethodVariant::kAdaTsa);
  const bool has_reference =
      std::find(config.variants.begin(), config.variants.end(), MethodVariant::kAdaTsa) !=
      config.variants.end();
  if (!rows.empty()) {
    output.table = aggregate_results(rows);
    if (has_reference) {
      output.tests = pairwise_vs_reference(output.table, reference);
    }
    write_results_csv(output.table, out_dir / "results.csv");
    write_ttest_csv(output.tests, reference, out_dir / "ttest.csv");
    std::ofstream txt(out_dir / "results.txt", std::ios::trunc);
    if (!txt) throw IoError("cannot write \"" + (out_dir / "results.txt").string() + "\"");
    txt << render_results_table(output.table, output.tests, reference);
  }

  Json manifest{
      {"config", config.to_json()},
      {"config_crc64",
       fingerprint_hex(crc64(config.to_json().dump().data(), config.to_json().dump().size()))},
      {"precision", to_string(precision)},
      {"dataset",
       Json{{"origin", config.synthetic ? "synthetic" : "directory"},
            {"path", config.synthetic ? "dataset" : config.data_dir},
            {"domains", domain_ids},
            {"vocab_size", vocab.size()}}},
      {"outputs", Json{{"results_csv", "results.csv"},
                       {"results_txt", "results.txt"},
                       {"ttest_csv", "ttest.csv"}}}};
  Json jruns = Json::array();
  for (const RunRecord& r : output.runs) {
    Json jr{{"scheme", r.scheme}, {"source", r.source},   {"targets", r.targets},
            {"variant", r.variant}, {"seed", r.seed},       {"dir", r.dir},
            {"status", r.ok ? "ok" : "failed"}};
    if (r.ok) {
      Json acc;
      for (const TargetEval& e : r.evals) acc[e.domain] = e.accuracy;
      jr["accuracy"] = acc;
    } else {
      jr["error"] = r.error;
    }
    jruns.push_back(std::move(jr));
  }
  manifest["runs"] = std::move(jruns);
  {
    std::ofstream f(out_dir / "manifest.json", std::ios::trunc);
    if (!f) throw IoError("cannot write \"" + (out_dir / "manifest.json").string() + "\"");
    f << manifest.dump(2) << "\n";
  }
  return output;
}

}  // namespace adua
