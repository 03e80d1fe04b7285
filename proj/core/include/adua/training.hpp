#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "adua/corpus.hpp"
#include "adua/model.hpp"

namespace adua {

// Linear warmup to peak_lr over warmup_steps, then linear decay to zero at
// total_steps. Steps are 1-based; lr_at(warmup_steps) is exactly peak_lr and
// lr_at(total_steps) is exactly zero.
struct Schedule {
  double peak_lr = 5e-5;
  std::int64_t warmup_steps = 1;
  std::int64_t total_steps = 1;

  void validate() const {
    if (peak_lr <= 0.0) {
      throw ConfigError("schedule: peak learning rate must be positive");
    }
    if (warmup_steps < 1 || warmup_steps > total_steps) {
      throw ConfigError("schedule: need 0 < warmup_steps <= total_steps, got warmup " +
                        std::to_string(warmup_steps) + " of " + std::to_string(total_steps));
    }
  }
};

inline double lr_at(const Schedule& s, std::int64_t step) {
  s.validate();
  if (step < 0 || step > s.total_steps) {
    throw ContractError("lr_at: step " + std::to_string(step) + " outside [0, " +
                        std::to_string(s.total_steps) + "]");
  }
  if (step <= s.warmup_steps) {
    return s.peak_lr * (static_cast<double>(step) / static_cast<double>(s.warmup_steps));
  }
  return s.peak_lr * (static_cast<double>(s.total_steps - step) /
                      static_cast<double>(s.total_steps - s.warmup_steps));
}

// Desk-scale phases can be far shorter than the nominal 1000-step warmup; in
// that case warm up over the first tenth of the phase instead.
inline Schedule make_phase_schedule(double peak_lr, std::int64_t warmup_steps,
                                    std::int64_t total_steps) {
  if (total_steps < 1) throw ContractError("schedule: phase has no steps");
  if (total_steps < 1000) warmup_steps = std::max<std::int64_t>(1, total_steps / 10);
  warmup_steps = std::min(warmup_steps, total_steps);
  Schedule s{peak_lr, warmup_steps, total_steps};
  s.validate();
  return s;
}

// Adam (bias-corrected, epsilon outside the square root). Moments are kept
// in double regardless of the parameter scalar type and exist only for
// parameters that actually received gradients.
template <typename S>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;

  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  std::map<std::string, Moments> moments;
};

// One optimizer step over every trainable parameter with a gradient. A grad
// buffer on a non-trainable parameter means the freeze contract was broken
// somewhere upstream, and that is a hard error rather than a silent skip.
template <typename S>
void adam_step(ParameterStore<S>& params, AdamState<S>& state, double lr) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (const std::string& name : params.names()) {
    Tensor<S>& p = params.at(name);
    if (!p.requires_grad()) {
      if (p.has_grad()) {
        throw FreezingViolation("parameter \"" + name +
                                "\" is outside the trainable set but received a gradient");
      }
      continue;
    }
    if (!p.has_grad()) continue;
    auto& mo = state.moments[name];
    if (mo.m.empty()) {
      mo.m.assign(p.size(), 0.0);
      mo.v.assign(p.size(), 0.0);
    }
    auto vals = p.values_mut();
    auto grads = p.grad_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double g = static_cast<double>(grads[i]);
      mo.m[i] = state.beta1 * mo.m[i] + (1.0 - state.beta1) * g;
      mo.v[i] = state.beta2 * mo.v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = mo.m[i] / bc1;
      const double vhat = mo.v[i] / bc2;
      vals[i] -= static_cast<S>(lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

// Scales all trainable gradients so their global L2 norm is at most
// max_norm. Returns the pre-clip norm.
template <typename S>
double clip_global_norm(ParameterStore<S>& params, double max_norm) {
  double sq = 0.0;
  for (const std::string& name : params.trainable_names()) {
    const Tensor<S>& p = params.at(name);
    if (!p.has_grad()) continue;
    for (S g : p.grad()) {
      sq += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (const std::string& name : params.trainable_names()) {
      Tensor<S>& p = params.at(name);
      if (!p.has_grad()) continue;
      for (S& g : p.grad_mut()) g = static_cast<S>(static_cast<double>(g) * factor);
    }
  }
  return norm;
}

enum class MethodVariant { kFullFt, kFullTsa, kAdaFt, kAdaTsa };

inline const char* variant_token(MethodVariant v) {
  switch (v) {
    case MethodVariant::kFullFt: return "full_ft";
    case MethodVariant::kFullTsa: return "full_tsa";
    case MethodVariant::kAdaFt: return "ada_ft";
    case MethodVariant::kAdaTsa: return "ada_tsa";
  }
  return "?";
}

inline const char* variant_display(MethodVariant v) {
  switch (v) {
    case MethodVariant::kFullFt: return "Full-FT";
    case MethodVariant::kFullTsa: return "Full-TSA";
    case MethodVariant::kAdaFt: return "Ada-FT";
    case MethodVariant::kAdaTsa: return "Ada-TSA";
  }
  return "?";
}

inline MethodVariant variant_from_token(const std::string& token) {
  for (MethodVariant v : {MethodVariant::kFullFt, MethodVariant::kFullTsa,
                          MethodVariant::kAdaFt, MethodVariant::kAdaTsa}) {
    if (token == variant_token(v)) return v;
  }
  throw ConfigError("unknown method variant \"" + token +
                    "\" (expected full_ft, full_tsa, ada_ft, or ada_tsa)");
}

// Adapter variants train adapters instead of the backbone; TSA variants run
// the domain-fusion phase before task fine-tuning.
inline bool uses_adapters(MethodVariant v) {
  return v == MethodVariant::kAdaFt || v == MethodVariant::kAdaTsa;
}

inline bool uses_fusion(MethodVariant v) {
  return v == MethodVariant::kFullTsa || v == MethodVariant::kAdaTsa;
}

enum class TrainPhase { kFusion, kTask };

inline const char* phase_name(TrainPhase p) {
  return p == TrainPhase::kFusion ? "fusion" : "task";
}

// The trainable parameter groups for a (variant, phase) pair. The backbone
// label is kFrozen either way; full fine-tuning simply includes that group.
inline std::set<ParamGroup> trainable_groups(MethodVariant v, TrainPhase p) {
  std::set<ParamGroup> groups;
  groups.insert(uses_adapters(v) ? ParamGroup::kAdapter : ParamGroup::kFrozen);
  groups.insert(p == TrainPhase::kFusion ? ParamGroup::kMlmHead : ParamGroup::kTaskHead);
  return groups;
}

// Everything one training run needs besides the data itself.
struct RunPlan {
  MethodVariant variant = MethodVariant::kAdaTsa;
  std::string source;
  std::vector<std::string> targets;
  std::uint64_t seed = 1;
  int batch_size = 16;
  int fusion_epochs = 10;
  int task_epochs = 10;
  double lr_full = 2e-5;
  double lr_ada = 5e-5;
  std::int64_t warmup_steps = 1000;
  double mask_prob = 0.15;
  double grad_clip = 1.0;
  double fusion_dev_fraction = 0.1;
  // Number of usable ids in the active vocabulary (<= model.vocab_size);
  // random MLM replacements must be drawn from real words only.
  int active_vocab = 0;
  bool debug_checks = false;
  ModelConfig model;

  double peak_lr() const { return uses_adapters(variant) ? lr_ada : lr_full; }

  void validate() const {
    model.validate();
    if (batch_size < 1) throw ConfigError("run plan: \"batch_size\" must be positive");
    if (fusion_epochs < 1 || task_epochs < 1) {
      throw ConfigError("run plan: epoch counts must be positive");
    }
    if (lr_full <= 0.0 || lr_ada <= 0.0) {
      throw ConfigError("run plan: learning rates must be positive");
    }
    if (warmup_steps < 1) throw ConfigError("run plan: \"warmup_steps\" must be positive");
    if (!(mask_prob >= 0.0 && mask_prob <= 1.0)) {
      throw ConfigError("run plan: \"mask_prob\" must lie in [0, 1]");
    }
    if (grad_clip <= 0.0) throw ConfigError("run plan: \"grad_clip\" must be positive");
    if (!(fusion_dev_fraction > 0.0 && fusion_dev_fraction < 1.0)) {
      throw ConfigError("run plan: \"fusion_dev_fraction\" must lie in (0, 1)");
    }
    const int vocab = active_vocab == 0 ? model.vocab_size : active_vocab;
    if (vocab <= kFirstWordId || vocab > model.vocab_size) {
      throw ConfigError("run plan: \"active_vocab\" must lie in (" +
                        std::to_string(kFirstWordId) + ", vocab_size]");
    }
  }

  int effective_vocab() const { return active_vocab == 0 ? model.vocab_size : active_vocab; }
};

struct EpochRecord {
  std::string phase;
  int epoch = 0;          // 1-based within the phase
  std::int64_t step = 0;  // cumulative optimizer steps at epoch end
  double lr = 0.0;        // learning rate at the last step of the epoch
  double train_loss = 0.0;
  double dev_metric = 0.0;  // fusion: dev MLM loss; task: source dev accuracy
};

using History = std::vector<EpochRecord>;
using ProgressFn = std::function<void(const EpochRecord&)>;

inline void write_history_csv(const History& history, const std::filesystem::path& file) {
  std::ofstream f(file, std::ios::trunc);
  if (!f) throw IoError("cannot write \"" + file.string() + "\"");
  f << "phase,epoch,step,lr,train_loss,dev_metric\n";
  for (const EpochRecord& r : history) {
    f << r.phase << ',' << r.epoch << ',' << r.step << ',' << format_double(r.lr) << ','
      << format_double(r.train_loss) << ',' << format_double(r.dev_metric) << '\n';
  }
  if (!f) throw IoError("write failed for \"" + file.string() + "\"");
}

namespace detail {

inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size,
                                                           std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t at = 0; at < n; at += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(n, at + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

// Masking that always selects at least one position: retries with fresh
// derived seeds, then falls back to masking the first non-PAD token. Tiny
// batches would otherwise occasionally yield an undefined empty loss.
inline MlmBatch mask_nonempty(const TokenBatch& tb, double mask_prob, std::uint64_t seed,
                              int vocab_size) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    MlmBatch mb = mask_for_mlm(tb, mask_prob, derive_seed(seed, "attempt/" + std::to_string(attempt)),
                               vocab_size);
    for (std::uint8_t m : mb.loss_mask) {
      if (m) return mb;
    }
    if (mask_prob <= 0.0) break;
  }
  MlmBatch mb = mask_for_mlm(tb, 0.0, seed, vocab_size);
  for (std::size_t p = 0; p < tb.ids.size(); ++p) {
    if (tb.ids[p] != kPadId) {
      mb.loss_mask[p] = 1;
      mb.input_ids[p] = kMaskId;
      break;
    }
  }
  return mb;
}

template <typename S>
std::map<std::string, std::vector<S>> snapshot_trainable(const ParameterStore<S>& params) {
  std::map<std::string, std::vector<S>> out;
  for (const std::string& name : params.trainable_names()) {
    auto vals = params.at(name).values();
    out.emplace(name, std::vector<S>(vals.begin(), vals.end()));
  }
  return out;
}

template <typename S>
void restore_snapshot(ParameterStore<S>& params, const std::map<std::string, std::vector<S>>& snap) {
  for (const auto& [name, vals] : snap) {
    auto dst = params.at(name).values_mut();
    std::copy(vals.begin(), vals.end(), dst.begin());
  }
}

template <typename S>
Tensor<S> mlm_batch_loss(Tape<S>& tape, const ParameterStore<S>& params,
                         const MlmBatch& mb, const ModelConfig& cfg) {
  Tensor<S> hidden = encode(tape, params, mb.input_ids, mb.batch, mb.seq_len, cfg);
  Tensor<S> logits = mlm_logits(tape, params, hidden);
  logits = reshape(tape, logits, {mb.batch * mb.seq_len, static_cast<std::size_t>(cfg.vocab_size)});
  return cross_entropy<S>(tape, logits, mb.target_ids, mb.loss_mask);
}

template <typename S>
Tensor<S> task_batch_loss(Tape<S>& tape, const ParameterStore<S>& params,
                          const TokenBatch& tb, std::span<const TokenId> labels,
                          const ModelConfig& cfg) {
  Tensor<S> hidden = encode(tape, params, tb.ids, tb.batch, tb.seq_len, cfg);
  Tensor<S> logits = cls_logits(tape, params, hidden);
  return cross_entropy<S>(tape, logits, labels);
}

template <typename S>
void debug_check_finite(const ParameterStore<S>& params, const char* where) {
  for (const std::string& name : params.trainable_names()) {
    const Tensor<S>& p = params.at(name);
    for (S v : p.values()) {
      if (!std::isfinite(static_cast<double>(v))) {
        throw TrainingError(std::string(where) + ": non-finite value in \"" + name + "\"");
      }
    }
    if (p.has_grad()) {
      for (S g : p.grad()) {
        if (!std::isfinite(static_cast<double>(g))) {
          throw TrainingError(std::string(where) + ": non-finite gradient in \"" + name + "\"");
        }
      }
    }
  }
}

}  // namespace detail

// Domain-fusion pretraining: masked-token reconstruction on the shuffled mix
// of source and target documents. A held-out slice of the mix (masked once,
// with a fixed seed) scores each epoch; the parameters returned are those of
// the epoch with the best dev loss.
template <typename S>
History train_domain_fusion(ParameterStore<S>& params, const DomainCorpus& mixed,
                            const RunPlan& plan, const ProgressFn& progress = {}) {
  plan.validate();
  if (mixed.labeled()) {
    throw ContractError("domain fusion input must be unlabeled");
  }
  if (mixed.size() < 2) {
    throw DataError("domain fusion needs at least 2 documents, got " +
                    std::to_string(mixed.size()));
  }
  const ModelConfig& cfg = plan.model;
  const int vocab = plan.effective_vocab();

  auto [train, dev] = split_train_dev(mixed, 1.0 - plan.fusion_dev_fraction,
                                      derive_seed(plan.seed, "fusion_split"));
  if (train.size() == 0 || dev.size() == 0) {
    throw DataError("domain fusion split left an empty train or dev side");
  }

  params.set_trainable(trainable_groups(plan.variant, TrainPhase::kFusion));
  params.clear_grads();

  // Dev batches are masked once so epoch-to-epoch dev losses are comparable.
  std::vector<MlmBatch> dev_batches;
  {
    std::vector<std::size_t> order(dev.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(plan.batch_size)) {
      const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(plan.batch_size));
      std::span<const std::size_t> idx(order.data() + at, end - at);
      TokenBatch tb = make_batch(dev.docs, idx, static_cast<std::size_t>(cfg.max_len));
      dev_batches.push_back(detail::mask_nonempty(
          tb, plan.mask_prob, derive_seed(plan.seed, "fusion_dev_mask/" + std::to_string(at)),
          vocab));
    }
  }
  auto eval_dev = [&]() {
    Tape<S> tape(false);
    double ce_sum = 0.0;
    std::size_t count = 0;
    for (const MlmBatch& mb : dev_batches) {
      std::size_t selected = 0;
      for (std::uint8_t m : mb.loss_mask) selected += m;
      ce_sum += static_cast<double>(detail::mlm_batch_loss(tape, params, mb, cfg).item()) *
                static_cast<double>(selected);
      count += selected;
    }
    return ce_sum / static_cast<double>(count);
  };

  const std::size_t steps_per_epoch =
      (train.size() + static_cast<std::size_t>(plan.batch_size) - 1) /
      static_cast<std::size_t>(plan.batch_size);
  const Schedule sched = make_phase_schedule(
      plan.peak_lr(), plan.warmup_steps,
      static_cast<std::int64_t>(steps_per_epoch) * plan.fusion_epochs);

  std::mt19937_64 shuffle_rng(derive_seed(plan.seed, "fusion_shuffle"));
  AdamState<S> adam;
  History history;
  std::int64_t step = 0;
  double last_lr = 0.0;
  double best_dev = std::numeric_limits<double>::infinity();
  std::map<std::string, std::vector<S>> best;

  for (int epoch = 1; epoch <= plan.fusion_epochs; ++epoch) {
    const auto batches = detail::epoch_batches(train.size(), plan.batch_size, shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      ++step;
      last_lr = lr_at(sched, step);
      Tape<S> tape;
      TokenBatch tb = make_batch(train.docs, batches[bi], static_cast<std::size_t>(cfg.max_len));
      const MlmBatch mb = detail::mask_nonempty(
          tb, plan.mask_prob,
          derive_seed(plan.seed, "fusion_mask/" + std::to_string(epoch) + "/" + std::to_string(bi)),
          vocab);
      Tensor<S> loss = detail::mlm_batch_loss(tape, params, mb, cfg);
      loss_sum += static_cast<double>(loss.item());
      tape.backward(loss);
      if (plan.debug_checks) detail::debug_check_finite(params, "fusion backward");
      clip_global_norm(params, plan.grad_clip);
      adam_step(params, adam, last_lr);
      if (plan.debug_checks) detail::debug_check_finite(params, "fusion step");
      params.zero_grads();
    }
    const double train_loss = loss_sum / static_cast<double>(batches.size());
    const double dev_loss = eval_dev();
    history.push_back({phase_name(TrainPhase::kFusion), epoch, step, last_lr, train_loss, dev_loss});
    if (progress) progress(history.back());
    if (dev_loss < best_dev) {
      best_dev = dev_loss;
      best = detail::snapshot_trainable(params);
    }
  }
  detail::restore_snapshot(params, best);
  params.clear_grads();
  return history;
}

// Classification accuracy under a frozen model. Argmax ties break toward
// the smaller class index.
template <typename S>
double evaluate_accuracy(const ParameterStore<S>& params, const DomainCorpus& corpus,
                         const ModelConfig& cfg, int batch_size) {
  if (!corpus.labeled()) {
    throw ContractError("evaluate_accuracy: corpus \"" + corpus.domain_id + "\" has no labels");
  }
  corpus.validate();
  if (corpus.size() == 0) {
    throw DataError("evaluate_accuracy: corpus \"" + corpus.domain_id + "\" is empty");
  }
  if (batch_size < 1) throw ConfigError("evaluate_accuracy: batch size must be positive");

  Tape<S> tape(false);
  std::size_t correct = 0;
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(batch_size));
    std::span<const std::size_t> idx(order.data() + at, end - at);
    TokenBatch tb = make_batch(corpus.docs, idx, static_cast<std::size_t>(cfg.max_len));
    Tensor<S> hidden = encode(tape, params, tb.ids, tb.batch, tb.seq_len, cfg);
    Tensor<S> logits = cls_logits(tape, params, hidden);
    const auto c = static_cast<std::size_t>(cfg.num_classes);
    for (std::size_t row = 0; row < tb.batch; ++row) {
      const S* lrow = logits.values().data() + row * c;
      std::size_t arg = 0;
      for (std::size_t j = 1; j < c; ++j) {
        if (lrow[j] > lrow[arg]) arg = j;
      }
      const int label = corpus.labels[idx[row]];
      if (label < 0 || static_cast<std::size_t>(label) >= c) {
        throw DataError("evaluate_accuracy: label " + std::to_string(label) +
                        " out of range for " + std::to_string(cfg.num_classes) + " classes");
      }
      if (arg == static_cast<std::size_t>(label)) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(corpus.size());
}

// Task fine-tuning on labeled source data. Epoch selection mirrors the
// fusion phase but optimizes for source dev accuracy (ties keep the earlier
// epoch).
template <typename S>
History train_task(ParameterStore<S>& params, const DomainCorpus& train,
                   const DomainCorpus& dev, const RunPlan& plan,
                   const ProgressFn& progress = {}) {
  plan.validate();
  if (!train.labeled() || !dev.labeled()) {
    throw ContractError("task fine-tuning needs labeled train and dev corpora");
  }
  train.validate();
  dev.validate();
  if (train.size() == 0 || dev.size() == 0) {
    throw DataError("task fine-tuning got an empty train or dev corpus");
  }
  const ModelConfig& cfg = plan.model;

  params.set_trainable(trainable_groups(plan.variant, TrainPhase::kTask));
  params.clear_grads();

  const std::size_t steps_per_epoch =
      (train.size() + static_cast<std::size_t>(plan.batch_size) - 1) /
      static_cast<std::size_t>(plan.batch_size);
  const Schedule sched = make_phase_schedule(
      plan.peak_lr(), plan.warmup_steps,
      static_cast<std::int64_t>(steps_per_epoch) * plan.task_epochs);

  std::mt19937_64 shuffle_rng(derive_seed(plan.seed, "task_shuffle"));
  AdamState<S> adam;
  History history;
  std::int64_t step = 0;
  double last_lr = 0.0;
  double best_acc = -1.0;
  std::map<std::string, std::vector<S>> best;

  for (int epoch = 1; epoch <= plan.task_epochs; ++epoch) {
    const auto batches = detail::epoch_batches(train.size(), plan.batch_size, shuffle_rng);
    double loss_sum = 0.0;
    for (const auto& idx : batches) {
      ++step;
      last_lr = lr_at(sched, step);
      Tape<S> tape;
      TokenBatch tb = make_batch(train.docs, idx, static_cast<std::size_t>(cfg.max_len));
      std::vector<TokenId> labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        labels[i] = static_cast<TokenId>(train.labels[idx[i]]);
      }
      Tensor<S> loss = detail::task_batch_loss(tape, params, tb, labels, cfg);
      loss_sum += static_cast<double>(loss.item());
      tape.backward(loss);
      if (plan.debug_checks) detail::debug_check_finite(params, "task backward");
      clip_global_norm(params, plan.grad_clip);
      adam_step(params, adam, last_lr);
      if (plan.debug_checks) detail::debug_check_finite(params, "task step");
      params.zero_grads();
    }
    const double train_loss = loss_sum / static_cast<double>(batches.size());
    const double dev_acc = evaluate_accuracy(params, dev, cfg, plan.batch_size);
    history.push_back({phase_name(TrainPhase::kTask), epoch, step, last_lr, train_loss, dev_acc});
    if (progress) progress(history.back());
    if (dev_acc > best_acc) {
      best_acc = dev_acc;
      best = detail::snapshot_trainable(params);
    }
  }
  detail::restore_snapshot(params, best);
  params.clear_grads();
  return history;
}

// Labeled source splits plus unlabeled target training text and labeled
// target test sets. The training path never sees target labels; that is
// enforced, not assumed.
struct DatasetBundle {
  DomainCorpus source_train;
  DomainCorpus source_dev;
  std::vector<DomainCorpus> target_train;
  std::vector<DomainCorpus> target_test;

  void validate() const {
    if (!source_train.labeled() || !source_dev.labeled()) {
      throw ContractError("dataset bundle: source train/dev must be labeled");
    }
    source_train.validate();
    source_dev.validate();
    for (const DomainCorpus& t : target_train) {
      if (t.labeled()) {
        throw ContractError("dataset bundle: target training corpus \"" + t.domain_id +
                            "\" carries labels; the adaptation path must not see them");
      }
    }
    for (const DomainCorpus& t : target_test) {
      if (!t.labeled()) {
        throw ContractError("dataset bundle: target test corpus \"" + t.domain_id +
                            "\" has no labels to evaluate against");
      }
      t.validate();
    }
  }
};

struct TargetEval {
  std::string domain;
  double accuracy = 0.0;
  std::size_t n_docs = 0;
};

template <typename S>
struct RunResult {
  ParameterStore<S> params;
  ModelConfig model;
  History history;
  std::vector<TargetEval> target_accuracy;
};

// One complete run of a method variant: fresh model, optional domain-fusion
// phase, task fine-tuning, then accuracy on every target test set.
template <typename S>
RunResult<S> run_method(const RunPlan& plan, const DatasetBundle& data,
                        const ProgressFn& progress = {}) {
  plan.validate();
  data.validate();

  RunPlan local = plan;
  local.model.adapters_enabled = uses_adapters(plan.variant);

  RunResult<S> result;
  result.model = local.model;
  result.params = init_model<S>(local.model, derive_seed(local.seed, "init"));

  if (uses_fusion(local.variant)) {
    std::vector<const DomainCorpus*> targets;
    targets.reserve(data.target_train.size());
    for (const DomainCorpus& t : data.target_train) targets.push_back(&t);
    const DomainCorpus mixed =
        mix_domains(data.source_train, targets, derive_seed(local.seed, "mix"));
    History fusion = train_domain_fusion(result.params, mixed, local, progress);
    result.history.insert(result.history.end(), fusion.begin(), fusion.end());
  }

  History task = train_task(result.params, data.source_train, data.source_dev, local, progress);
  result.history.insert(result.history.end(), task.begin(), task.end());

  for (const DomainCorpus& t : data.target_test) {
    result.target_accuracy.push_back(
        {t.domain_id, evaluate_accuracy(result.params, t, local.model, local.batch_size),
         t.size()});
  }
  return result;
}

}  // namespace adua
