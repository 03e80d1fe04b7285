#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"

#include "adua/experiment.hpp"
#include "adua/persistence.hpp"

using namespace adua;

namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("adua_tests_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp_text(const fs::path& file) {
  std::ifstream in(file);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

SynthSpec mini_spec() {
  SynthSpec spec;
  spec.n_domains = 3;
  spec.docs_per_domain = 30;
  spec.test_docs_per_domain = 10;
  spec.doc_len_min = 8;
  spec.doc_len_max = 12;
  spec.shared_pool = 40;
  spec.domain_pool = 20;
  spec.cue_words_per_class = 4;
  spec.cues_per_doc = 3;
  spec.seed = 77;
  return spec;
}

ModelConfig mini_model() {
  ModelConfig cfg;
  cfg.layers = 1;
  cfg.hidden_dim = 8;
  cfg.num_heads = 2;
  cfg.ffn_dim = 16;
  cfg.adapter_dim = 4;
  cfg.vocab_size = 160;
  cfg.max_len = 16;
  cfg.num_classes = 2;
  return cfg;
}

ExperimentConfig mini_config() {
  ExperimentConfig cfg;
  cfg.model = mini_model();
  cfg.synthetic = mini_spec();
  cfg.schemes = {{"d0", {"d1"}}};
  cfg.variants = {MethodVariant::kFullFt, MethodVariant::kAdaTsa};
  cfg.seeds = {1, 2};
  cfg.batch_size = 8;
  cfg.fusion_epochs = 1;
  cfg.task_epochs = 1;
  cfg.lr_full = 1e-3;
  cfg.lr_ada = 2e-3;
  return cfg;
}

}  // namespace

TEST_CASE("scheme directory token") {
  AdaptationScheme one{"books", {"dvd"}};
  CHECK(one.dir_token() == "books__dvd");
  AdaptationScheme many{"books", {"dvd", "electronics"}};
  CHECK(many.dir_token() == "books__dvd+electronics");
}

TEST_CASE("experiment config validation") {
  ExperimentConfig good = mini_config();
  CHECK_NOTHROW(good.validate());

  ExperimentConfig both = good;
  both.data_dir = "/somewhere";
  CHECK_THROWS_AS(both.validate(), ConfigError);
  ExperimentConfig neither = good;
  neither.synthetic.reset();
  CHECK_THROWS_AS(neither.validate(), ConfigError);

  ExperimentConfig dup_seed = good;
  dup_seed.seeds = {1, 2, 1};
  CHECK_THROWS_AS(dup_seed.validate(), ConfigError);
  ExperimentConfig no_seed = good;
  no_seed.seeds.clear();
  CHECK_THROWS_AS(no_seed.validate(), ConfigError);

  ExperimentConfig dup_variant = good;
  dup_variant.variants = {MethodVariant::kAdaTsa, MethodVariant::kAdaTsa};
  CHECK_THROWS_AS(dup_variant.validate(), ConfigError);
  ExperimentConfig no_variant = good;
  no_variant.variants.clear();
  CHECK_THROWS_AS(no_variant.validate(), ConfigError);

  ExperimentConfig self_target = good;
  self_target.schemes = {{"d0", {"d0"}}};
  CHECK_THROWS_AS(self_target.validate(), ConfigError);
  ExperimentConfig dup_target = good;
  dup_target.schemes = {{"d0", {"d1", "d1"}}};
  CHECK_THROWS_AS(dup_target.validate(), ConfigError);
  ExperimentConfig no_target = good;
  no_target.schemes = {{"d0", {}}};
  CHECK_THROWS_AS(no_target.validate(), ConfigError);
  ExperimentConfig no_source = good;
  no_source.schemes = {{"", {"d1"}}};
  CHECK_THROWS_AS(no_source.validate(), ConfigError);

  // Hyperparameters run through the same gate as a single training plan.
  ExperimentConfig bad_batch = good;
  bad_batch.batch_size = 0;
  CHECK_THROWS_AS(bad_batch.validate(), ConfigError);
  ExperimentConfig bad_lr = good;
  bad_lr.lr_ada = 0.0;
  CHECK_THROWS_AS(bad_lr.validate(), ConfigError);
}

TEST_CASE("experiment config json round trip and strictness") {
  ExperimentConfig cfg = mini_config();
  const Json j = cfg.to_json();
  ExperimentConfig back = ExperimentConfig::from_json(j);
  CHECK(back.to_json() == j);
  CHECK(back.schemes.size() == 1);
  CHECK(back.schemes[0].source == "d0");
  CHECK(back.variants == cfg.variants);
  CHECK(back.seeds == cfg.seeds);
  CHECK(back.batch_size == 8);
  CHECK(back.lr_ada == 2e-3);

  // Omitted variants default to the full method grid.
  Json bare{{"seeds", Json::array({1})}, {"data_dir", "x"}};
  ExperimentConfig defaults = ExperimentConfig::from_json(bare);
  CHECK(defaults.variants ==
        std::vector<MethodVariant>{MethodVariant::kFullFt, MethodVariant::kFullTsa,
                                   MethodVariant::kAdaFt, MethodVariant::kAdaTsa});
  CHECK(defaults.batch_size == 16);

  Json typo = j;
  typo["seedz"] = Json::array({1});
  CHECK_THROWS_AS(ExperimentConfig::from_json(typo), ConfigError);
  Json bad_training = j;
  bad_training["training"]["learning_rate"] = 1.0;
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad_training), ConfigError);
  Json bad_scheme = j;
  bad_scheme["schemes"][0]["src"] = "d0";
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad_scheme), ConfigError);
  Json bad_variant = j;
  bad_variant["variants"] = Json::array({"ada_tsa", "nope"});
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad_variant), ConfigError);
}

TEST_CASE("run plan inherits the experiment hyperparameters") {
  ExperimentConfig cfg = mini_config();
  cfg.warmup_steps = 123;
  cfg.mask_prob = 0.2;
  RunPlan plan = make_run_plan(cfg, cfg.schemes[0], MethodVariant::kAdaFt, 42, 90);
  CHECK(plan.variant == MethodVariant::kAdaFt);
  CHECK(plan.source == "d0");
  CHECK(plan.targets == std::vector<std::string>{"d1"});
  CHECK(plan.seed == 42);
  CHECK(plan.batch_size == 8);
  CHECK(plan.warmup_steps == 123);
  CHECK(plan.mask_prob == 0.2);
  CHECK(plan.active_vocab == 90);
  CHECK(plan.model.to_json() == cfg.model.to_json());
}

TEST_CASE("shared vocabulary fits the embedding table") {
  ExperimentConfig cfg = mini_config();
  LoadedDataset data = materialize_dataset(cfg, nullptr);
  CHECK(data.domain_ids == std::vector<std::string>{"d0", "d1", "d2"});
  const Vocab vocab = build_shared_vocab(data, cfg.model);
  CHECK(vocab.size() <= static_cast<std::size_t>(cfg.model.vocab_size));
  CHECK(vocab.size() > Vocab::kReservedWords.size());
  // Shared content words appear in every domain, so they must be present.
  CHECK(vocab.id_of("s0") >= kFirstWordId);

  ModelConfig tight = cfg.model;
  tight.vocab_size = 12;
  const Vocab small = build_shared_vocab(data, tight);
  CHECK(small.size() == 12);
}

TEST_CASE("experiment grid runs, aggregates, and reproduces bit for bit") {
  const ExperimentConfig cfg = mini_config();
  const fs::path dir_a = fresh_dir("exp_a");
  std::ostringstream log_a;
  ExperimentOutput out = run_experiment(cfg, dir_a, 1, Precision::kDouble, log_a);

  REQUIRE(out.runs.size() == 4);  // 1 scheme x 2 variants x 2 seeds
  CHECK(out.failed == 0);
  for (const RunRecord& r : out.runs) {
    CHECK(r.ok);
    CHECK(r.scheme == "d0__d1");
    REQUIRE(r.evals.size() == 1);
    CHECK(r.evals[0].domain == "d1");
    CHECK(r.evals[0].accuracy >= 0.0);
    CHECK(r.evals[0].accuracy <= 1.0);
    CHECK(fs::exists(dir_a / r.dir / "history.csv"));
    CHECK(fs::exists(dir_a / r.dir / "checkpoint.adua"));
    CHECK(fs::exists(dir_a / r.dir / "adapter.adua") == (r.variant == "ada_tsa"));
  }
  CHECK(out.table.schemes == std::vector<std::string>{"d0->d1", "Avg."});
  CHECK(out.table.variants == std::vector<std::string>{"Full-FT", "Ada-TSA"});
  CHECK(out.table.find("d0->d1", "Ada-TSA")->n == 2);

  CHECK(fs::exists(dir_a / "results.csv"));
  CHECK(fs::exists(dir_a / "ttest.csv"));
  CHECK(fs::exists(dir_a / "results.txt"));
  CHECK(fs::exists(dir_a / "manifest.json"));
  for (const char* d : {"d0", "d1", "d2"}) {
    CHECK(fs::exists(dir_a / "dataset" / d / "train.tsv"));
    CHECK(fs::exists(dir_a / "dataset" / d / "test.tsv"));
  }
  CHECK(slurp_text(dir_a / "results.txt").find("Full-FT") != std::string::npos);
  CHECK(log_a.str().find("task epoch 1") != std::string::npos);

  // Manifest describes the grid and checksums the config echo.
  std::ifstream mf(dir_a / "manifest.json");
  const Json manifest = Json::parse(mf);
  CHECK(manifest.at("runs").size() == 4);
  CHECK(manifest.at("precision") == "double");
  CHECK(manifest.at("dataset").at("domains") == Json::array({"d0", "d1", "d2"}));
  const std::string echo = manifest.at("config").dump();
  CHECK(manifest.at("config_crc64") == fingerprint_hex(crc64(echo.data(), echo.size())));
  for (const Json& jr : manifest.at("runs")) {
    CHECK(jr.at("status") == "ok");
    CHECK(jr.at("accuracy").contains("d1"));
  }

  // The full checkpoint can be stood back up; the adapter bundle grafts onto
  // a backbone rebuilt from the same initialization.
  const fs::path ada_dir = dir_a / "runs/d0__d1/ada_tsa/seed1";
  LoadedCheckpoint<double> ckpt = load_checkpoint<double>(ada_dir / "checkpoint.adua");
  REQUIRE(ckpt.vocab.has_value());
  ParameterStore<double> backbone =
      init_model<double>(ckpt.model, derive_seed(1, "init"));
  ParameterStore<double> merged =
      load_adapter_bundle(backbone, ckpt.model, ada_dir / "adapter.adua");
  // Bundles exclude the fusion-only MLM head, so the graft reproduces the
  // trained model everywhere the classifier can see.
  for (const std::string& name : merged.names()) {
    if (merged.group_of(name) == ParamGroup::kMlmHead) continue;
    const auto got = merged.at(name).values();
    const auto want = ckpt.params.at(name).values();
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == want[i]);
  }

  // Same config, fresh directory: identical artifacts.
  const fs::path dir_b = fresh_dir("exp_b");
  std::ostringstream log_b;
  run_experiment(cfg, dir_b, 1, Precision::kDouble, log_b);
  CHECK(slurp_text(dir_b / "results.csv") == slurp_text(dir_a / "results.csv"));
  CHECK(slurp_text(dir_b / "ttest.csv") == slurp_text(dir_a / "ttest.csv"));
  CHECK(slurp_text(dir_b / "manifest.json") == slurp_text(dir_a / "manifest.json"));

  // Parallel dispatch must not change any result.
  const fs::path dir_c = fresh_dir("exp_c");
  std::ostringstream log_c;
  ExperimentOutput par = run_experiment(cfg, dir_c, 2, Precision::kDouble, log_c);
  CHECK(par.failed == 0);
  CHECK(slurp_text(dir_c / "results.csv") == slurp_text(dir_a / "results.csv"));
  CHECK(slurp_text(dir_c / "manifest.json") == slurp_text(dir_a / "manifest.json"));
}

TEST_CASE("experiment records run failures and keeps going") {
  // A dataset tree where one domain's test labels are out of range: training
  // still succeeds, evaluation on that target cannot.
  const fs::path data = fresh_dir("exp_baddata");
  auto write_tsv = [](const fs::path& file, bool bad_label) {
    std::ofstream out(file);
    for (int i = 0; i < 12; ++i) {
      const int label = (bad_label && i == 3) ? 7 : i % 2;
      out << label << '\t' << (i % 2 ? "good fine nice" : "bad poor awful")
          << " filler" << i % 4 << "\n";
    }
  };
  for (const char* d : {"d0", "d1", "d2"}) {
    fs::create_directories(data / d);
    write_tsv(data / d / "train.tsv", false);
    write_tsv(data / d / "dev.tsv", false);
    write_tsv(data / d / "test.tsv", std::string(d) == "d1");
  }

  ExperimentConfig cfg;
  cfg.model = mini_model();
  cfg.data_dir = data.string();
  cfg.schemes = {{"d0", {"d1"}}, {"d0", {"d2"}}};
  cfg.variants = {MethodVariant::kFullFt};
  cfg.seeds = {1};
  cfg.batch_size = 6;
  cfg.fusion_epochs = 1;
  cfg.task_epochs = 1;

  const fs::path out_dir = fresh_dir("exp_fail");
  std::ostringstream log;
  ExperimentOutput out = run_experiment(cfg, out_dir, 1, Precision::kDouble, log);
  REQUIRE(out.runs.size() == 2);
  CHECK(out.failed == 1);
  CHECK_FALSE(out.runs[0].ok);
  CHECK(out.runs[0].error.find("label") != std::string::npos);
  CHECK(out.runs[1].ok);
  CHECK(log.str().find("FAILED") != std::string::npos);

  // The good run still reaches the aggregate outputs and the manifest keeps
  // the failed one with its error.
  CHECK(fs::exists(out_dir / "results.csv"));
  std::ifstream mf(out_dir / "manifest.json");
  const Json manifest = Json::parse(mf);
  CHECK(manifest.at("runs")[0].at("status") == "failed");
  CHECK(manifest.at("runs")[0].contains("error"));
  CHECK(manifest.at("runs")[1].at("status") == "ok");

  // Unknown scheme domains are rejected before any training starts.
  ExperimentConfig bad = cfg;
  bad.schemes = {{"d0", {"nope"}}};
  const fs::path nowhere = fresh_dir("exp_nowhere");
  CHECK_THROWS_AS(run_experiment(bad, nowhere, 1, Precision::kDouble, log), ConfigError);
  CHECK_THROWS_AS(run_experiment(cfg, nowhere, 0, Precision::kDouble, log), ConfigError);
}
