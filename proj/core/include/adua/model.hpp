#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "adua/jsonutil.hpp"
#include "adua/ops.hpp"

namespace adua {

// Every parameter belongs to exactly one group. FROZEN marks the backbone;
// whether it actually trains depends on the method variant, not the label.
enum class ParamGroup : std::uint8_t {
  kFrozen = 0,
  kAdapter = 1,
  kMlmHead = 2,
  kTaskHead = 3,
};

inline const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::kFrozen: return "frozen";
    case ParamGroup::kAdapter: return "adapter";
    case ParamGroup::kMlmHead: return "mlm_head";
    case ParamGroup::kTaskHead: return "task_head";
  }
  return "?";
}

struct ModelConfig {
  int layers = 2;
  int hidden_dim = 64;
  int num_heads = 4;
  int ffn_dim = 128;
  int adapter_dim = 16;
  int vocab_size = 2048;
  int max_len = 32;
  int num_classes = 2;
  bool adapters_enabled = true;

  int head_dim() const { return hidden_dim / num_heads; }

  void validate() const {
    auto positive = [](int v, const char* field) {
      if (v <= 0) {
        throw ConfigError("model config: \"" + std::string(field) +
                          "\" must be positive, got " + std::to_string(v));
      }
    };
    positive(layers, "layers");
    positive(hidden_dim, "hidden_dim");
    positive(num_heads, "num_heads");
    positive(ffn_dim, "ffn_dim");
    positive(adapter_dim, "adapter_dim");
    positive(max_len, "max_len");
    if (hidden_dim % num_heads != 0) {
      throw ConfigError("model config: \"hidden_dim\" (" + std::to_string(hidden_dim) +
                        ") must be divisible by \"num_heads\" (" +
                        std::to_string(num_heads) + ")");
    }
    if (hidden_dim < 2) {
      throw ConfigError("model config: \"hidden_dim\" must be at least 2");
    }
    if (adapter_dim >= hidden_dim) {
      throw ConfigError("model config: \"adapter_dim\" (" + std::to_string(adapter_dim) +
                        ") must be a bottleneck smaller than \"hidden_dim\" (" +
                        std::to_string(hidden_dim) + ")");
    }
    if (vocab_size <= kFirstWordId) {
      throw ConfigError("model config: \"vocab_size\" must exceed the " +
                        std::to_string(kFirstWordId) + " reserved ids");
    }
    if (max_len < 2) {
      throw ConfigError("model config: \"max_len\" must be at least 2 (leading marker plus one token)");
    }
    if (num_classes < 2) {
      throw ConfigError("model config: \"num_classes\" must be at least 2");
    }
  }

  Json to_json() const {
    return Json{{"layers", layers},
                {"hidden_dim", hidden_dim},
                {"num_heads", num_heads},
                {"ffn_dim", ffn_dim},
                {"adapter_dim", adapter_dim},
                {"vocab_size", vocab_size},
                {"max_len", max_len},
                {"num_classes", num_classes},
                {"adapters_enabled", adapters_enabled}};
  }

  static ModelConfig from_json(const Json& j) {
    reject_unknown_keys(j, "model config",
                        {"layers", "hidden_dim", "num_heads", "ffn_dim", "adapter_dim",
                         "vocab_size", "max_len", "num_classes", "adapters_enabled"});
    ModelConfig c;
    c.layers = json_get_or(j, "model config", "layers", c.layers);
    c.hidden_dim = json_get_or(j, "model config", "hidden_dim", c.hidden_dim);
    c.num_heads = json_get_or(j, "model config", "num_heads", c.num_heads);
    c.ffn_dim = json_get_or(j, "model config", "ffn_dim", c.ffn_dim);
    c.adapter_dim = json_get_or(j, "model config", "adapter_dim", c.adapter_dim);
    c.vocab_size = json_get_or(j, "model config", "vocab_size", c.vocab_size);
    c.max_len = json_get_or(j, "model config", "max_len", c.max_len);
    c.num_classes = json_get_or(j, "model config", "num_classes", c.num_classes);
    c.adapters_enabled = json_get_or(j, "model config", "adapters_enabled", c.adapters_enabled);
    c.validate();
    return c;
  }
};

// Named parameter registry. std::map keeps iteration in name order, which is
// what makes checkpoints, fingerprints, and optimizer sweeps deterministic.
template <typename S>
class ParameterStore {
 public:
  struct Entry {
    Tensor<S> tensor;
    ParamGroup group;
  };

  void add(const std::string& name, Tensor<S> tensor, ParamGroup group) {
    auto [it, inserted] = entries_.emplace(name, Entry{std::move(tensor), group});
    if (!inserted) {
      throw ContractError("parameter \"" + name + "\" registered twice");
    }
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  Tensor<S>& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("no parameter named \"" + name + "\"");
    return it->second.tensor;
  }

  const Tensor<S>& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("no parameter named \"" + name + "\"");
    return it->second.tensor;
  }

  ParamGroup group_of(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("no parameter named \"" + name + "\"");
    return it->second.group;
  }

  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::size_t count() const { return entries_.size(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, entry] : entries_) out.push_back(name);
    return out;
  }

  std::vector<std::string> names_in_group(ParamGroup g) const {
    std::vector<std::string> out;
    for (const auto& [name, entry] : entries_) {
      if (entry.group == g) out.push_back(name);
    }
    return out;
  }

  // Marks exactly these groups trainable; everything else stops requiring
  // gradients. Leftover grad buffers are dropped so a later freeze check can
  // treat any grad on a non-trainable parameter as a violation.
  void set_trainable(const std::set<ParamGroup>& groups) {
    for (auto& [name, entry] : entries_) {
      const bool trainable = groups.count(entry.group) != 0;
      entry.tensor.set_requires_grad(trainable);
      if (!trainable) entry.tensor.clear_grad();
    }
  }

  std::vector<std::string> trainable_names() const {
    std::vector<std::string> out;
    for (const auto& [name, entry] : entries_) {
      if (entry.tensor.requires_grad()) out.push_back(name);
    }
    return out;
  }

  void zero_grads() {
    for (auto& [name, entry] : entries_) entry.tensor.zero_grad();
  }

  void clear_grads() {
    for (auto& [name, entry] : entries_) entry.tensor.clear_grad();
  }

  ParameterStore deep_copy() const {
    ParameterStore out;
    for (const auto& [name, entry] : entries_) {
      out.add(name, entry.tensor.clone(), entry.group);
    }
    return out;
  }

 private:
  std::map<std::string, Entry> entries_;
};

struct ParamCounts {
  std::int64_t frozen = 0;
  std::int64_t adapter = 0;
  std::int64_t mlm_head = 0;
  std::int64_t task_head = 0;
  std::int64_t total = 0;

  std::int64_t& by_group(ParamGroup g) {
    switch (g) {
      case ParamGroup::kFrozen: return frozen;
      case ParamGroup::kAdapter: return adapter;
      case ParamGroup::kMlmHead: return mlm_head;
      case ParamGroup::kTaskHead: return task_head;
    }
    return total;
  }
};

namespace detail {

enum class InitKind { kNormal, kZeros, kOnes };

struct ParamPlanEntry {
  std::string name;
  Shape shape;
  ParamGroup group;
  InitKind init;
};

inline std::string layer_prefix(int i) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "layer%02d.", i);
  return buf;
}

// Single source of truth for what parameters exist: initialization, counting
// and checkpoint validation all walk this plan.
inline std::vector<ParamPlanEntry> param_plan(const ModelConfig& cfg) {
  cfg.validate();
  const auto v = static_cast<std::size_t>(cfg.vocab_size);
  const auto h = static_cast<std::size_t>(cfg.hidden_dim);
  const auto f = static_cast<std::size_t>(cfg.ffn_dim);
  const auto m = static_cast<std::size_t>(cfg.adapter_dim);
  const auto t = static_cast<std::size_t>(cfg.max_len);
  const auto c = static_cast<std::size_t>(cfg.num_classes);

  std::vector<ParamPlanEntry> plan;
  auto put = [&plan](std::string name, Shape shape, ParamGroup g, InitKind init) {
    plan.push_back({std::move(name), std::move(shape), g, init});
  };

  put("embed.token", {v, h}, ParamGroup::kFrozen, InitKind::kNormal);
  put("embed.position", {t, h}, ParamGroup::kFrozen, InitKind::kNormal);
  for (int i = 0; i < cfg.layers; ++i) {
    const std::string p = layer_prefix(i);
    put(p + "attn.wq", {h, h}, ParamGroup::kFrozen, InitKind::kNormal);
    put(p + "attn.bq", {h}, ParamGroup::kFrozen, InitKind::kZeros);
    put(p + "attn.wk", {h, h}, ParamGroup::kFrozen, InitKind::kNormal);
    put(p + "attn.bk", {h}, ParamGroup::kFrozen, InitKind::kZeros);
    put(p + "attn.wv", {h, h}, ParamGroup::kFrozen, InitKind::kNormal);
    put(p + "attn.bv", {h}, ParamGroup::kFrozen, InitKind::kZeros);
    put(p + "attn.wo", {h, h}, ParamGroup::kFrozen, InitKind::kNormal);
    put(p + "attn.bo", {h}, ParamGroup::kFrozen, InitKind::kZeros);
    put(p + "norm1.gain", {h}, ParamGroup::kFrozen, InitKind::kOnes);
    put(p + "norm1.bias", {h}, ParamGroup::kFrozen, InitKind::kZeros);
    put(p + "ffn.w1", {h, f}, ParamGroup::kFrozen, InitKind::kNormal);
    put(p + "ffn.b1", {f}, ParamGroup::kFrozen, InitKind::kZeros);
    put(p + "ffn.w2", {f, h}, ParamGroup::kFrozen, InitKind::kNormal);
    put(p + "ffn.b2", {h}, ParamGroup::kFrozen, InitKind::kZeros);
    put(p + "norm2.gain", {h}, ParamGroup::kFrozen, InitKind::kOnes);
    put(p + "norm2.bias", {h}, ParamGroup::kFrozen, InitKind::kZeros);
    if (cfg.adapters_enabled) {
      // Up-projection starts at zero so a fresh adapter is exactly the
      // identity: the block contributes x + 0 until training moves it.
      put(p + "adapter.w_down", {h, m}, ParamGroup::kAdapter, InitKind::kNormal);
      put(p + "adapter.b_down", {m}, ParamGroup::kAdapter, InitKind::kZeros);
      put(p + "adapter.w_up", {m, h}, ParamGroup::kAdapter, InitKind::kZeros);
      put(p + "adapter.b_up", {h}, ParamGroup::kAdapter, InitKind::kZeros);
    }
  }
  put("mlm_head.dense.w", {h, h}, ParamGroup::kMlmHead, InitKind::kNormal);
  put("mlm_head.dense.b", {h}, ParamGroup::kMlmHead, InitKind::kZeros);
  put("mlm_head.norm.gain", {h}, ParamGroup::kMlmHead, InitKind::kOnes);
  put("mlm_head.norm.bias", {h}, ParamGroup::kMlmHead, InitKind::kZeros);
  put("mlm_head.out.w", {h, v}, ParamGroup::kMlmHead, InitKind::kNormal);
  put("mlm_head.out.b", {v}, ParamGroup::kMlmHead, InitKind::kZeros);
  put("task_head.pooler.w", {h, h}, ParamGroup::kTaskHead, InitKind::kNormal);
  put("task_head.pooler.b", {h}, ParamGroup::kTaskHead, InitKind::kZeros);
  put("task_head.out.w", {h, c}, ParamGroup::kTaskHead, InitKind::kNormal);
  put("task_head.out.b", {c}, ParamGroup::kTaskHead, InitKind::kZeros);
  return plan;
}

}  // namespace detail

inline constexpr double kInitStdDev = 0.02;

// Builds a freshly initialized parameter set. Each tensor draws from its own
// RNG stream seeded by (seed, name), so the backbone comes out identical
// whether or not adapters exist and regardless of construction order.
template <typename S>
ParameterStore<S> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  ParameterStore<S> store;
  for (const auto& spec : detail::param_plan(cfg)) {
    Tensor<S> t;
    switch (spec.init) {
      case detail::InitKind::kZeros:
        t = Tensor<S>::zeros(spec.shape);
        break;
      case detail::InitKind::kOnes:
        t = Tensor<S>::full(spec.shape, S{1});
        break;
      case detail::InitKind::kNormal: {
        t = Tensor<S>::zeros(spec.shape);
        std::mt19937_64 eng(derive_seed(seed, spec.name));
        std::normal_distribution<double> dist(0.0, kInitStdDev);
        for (S& v : t.values_mut()) v = static_cast<S>(dist(eng));
        break;
      }
    }
    store.add(spec.name, std::move(t), spec.group);
  }
  return store;
}

template <typename S>
ParamCounts count_params(const ParameterStore<S>& store) {
  ParamCounts counts;
  for (const auto& [name, entry] : store.entries()) {
    const auto n = static_cast<std::int64_t>(entry.tensor.size());
    counts.by_group(entry.group) += n;
    counts.total += n;
  }
  return counts;
}

// Same accounting without materializing any tensor (handy for large configs).
inline ParamCounts count_params(const ModelConfig& cfg) {
  ParamCounts counts;
  for (const auto& spec : detail::param_plan(cfg)) {
    const auto n = static_cast<std::int64_t>(numel(spec.shape));
    counts.by_group(spec.group) += n;
    counts.total += n;
  }
  return counts;
}

// Bottleneck adapter: x + W_up(gelu(W_down x + b_down)) + b_up, the residual
// refinement inserted after each block's FFN sublayer.
template <typename S>
Tensor<S> adapter_forward(Tape<S>& tape, const Tensor<S>& x,
                          const ParameterStore<S>& params, int layer) {
  const std::string p = detail::layer_prefix(layer);
  Tensor<S> h = gelu(tape, add(tape, matmul(tape, x, params.at(p + "adapter.w_down")),
                               params.at(p + "adapter.b_down")));
  Tensor<S> delta = add(tape, matmul(tape, h, params.at(p + "adapter.w_up")),
                        params.at(p + "adapter.b_up"));
  return add(tape, x, delta);
}

// Full encoder pass: embeddings, then per layer multi-head self-attention
// and FFN, each followed by a residual add and layer norm (post-LN), with
// the adapter applied at the end of the block when enabled. PAD key
// positions are excluded from attention via a large negative score bias.
template <typename S>
Tensor<S> encode(Tape<S>& tape, const ParameterStore<S>& params,
                 std::span<const TokenId> ids, std::size_t batch,
                 std::size_t seq_len, const ModelConfig& cfg) {
  if (batch == 0 || seq_len == 0) {
    throw ContractError("encode: empty batch");
  }
  if (ids.size() != batch * seq_len) {
    throw ShapeError("encode: " + std::to_string(ids.size()) + " ids for batch " +
                     std::to_string(batch) + " x " + std::to_string(seq_len));
  }
  if (seq_len > static_cast<std::size_t>(cfg.max_len)) {
    throw ContractError("encode: sequence length " + std::to_string(seq_len) +
                        " exceeds max_len " + std::to_string(cfg.max_len));
  }
  const auto h = static_cast<std::size_t>(cfg.hidden_dim);
  const auto a = static_cast<std::size_t>(cfg.num_heads);
  const std::size_t dh = h / a;

  std::vector<TokenId> pos_ids(seq_len);
  for (std::size_t i = 0; i < seq_len; ++i) pos_ids[i] = static_cast<TokenId>(i);

  Tensor<S> x = add(tape, embedding(tape, params.at("embed.token"), ids, {batch, seq_len}),
                    embedding(tape, params.at("embed.position"), pos_ids, {seq_len}));

  // Additive attention bias, broadcast over heads and query positions.
  Tensor<S> bias = Tensor<S>::zeros({batch, 1, 1, seq_len});
  {
    S* pb = bias.values_mut().data();
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t t = 0; t < seq_len; ++t) {
        if (ids[i * seq_len + t] == kPadId) pb[i * seq_len + t] = static_cast<S>(-1e9);
      }
    }
  }

  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int layer = 0; layer < cfg.layers; ++layer) {
    const std::string p = detail::layer_prefix(layer);
    auto proj = [&](const char* w, const char* b) {
      Tensor<S> y = add(tape, matmul(tape, x, params.at(p + w)), params.at(p + b));
      y = reshape(tape, y, {batch, seq_len, a, dh});
      return permute(tape, y, {0, 2, 1, 3});  // [B,A,T,dh]
    };
    Tensor<S> q = proj("attn.wq", "attn.bq");
    Tensor<S> k = proj("attn.wk", "attn.bk");
    Tensor<S> v = proj("attn.wv", "attn.bv");
    Tensor<S> kt = permute(tape, k, {0, 1, 3, 2});  // [B,A,dh,T]
    Tensor<S> scores = add(tape, scale(tape, matmul(tape, q, kt), inv_sqrt_dh), bias);
    Tensor<S> attn = softmax(tape, scores, -1);
    Tensor<S> ctx = permute(tape, matmul(tape, attn, v), {0, 2, 1, 3});
    ctx = reshape(tape, ctx, {batch, seq_len, h});
    Tensor<S> attn_out = add(tape, matmul(tape, ctx, params.at(p + "attn.wo")),
                             params.at(p + "attn.bo"));
    x = layer_norm(tape, add(tape, x, attn_out), params.at(p + "norm1.gain"),
                   params.at(p + "norm1.bias"));
    Tensor<S> inner = gelu(tape, add(tape, matmul(tape, x, params.at(p + "ffn.w1")),
                                     params.at(p + "ffn.b1")));
    Tensor<S> ffn_out = add(tape, matmul(tape, inner, params.at(p + "ffn.w2")),
                            params.at(p + "ffn.b2"));
    x = layer_norm(tape, add(tape, x, ffn_out), params.at(p + "norm2.gain"),
                   params.at(p + "norm2.bias"));
    if (cfg.adapters_enabled) {
      x = adapter_forward(tape, x, params, layer);
    }
  }
  return x;
}

// Masked-token reconstruction head: dense + gelu + layer norm, then a
// projection back onto the vocabulary.
template <typename S>
Tensor<S> mlm_logits(Tape<S>& tape, const ParameterStore<S>& params, const Tensor<S>& hidden) {
  Tensor<S> h = gelu(tape, add(tape, matmul(tape, hidden, params.at("mlm_head.dense.w")),
                               params.at("mlm_head.dense.b")));
  h = layer_norm(tape, h, params.at("mlm_head.norm.gain"), params.at("mlm_head.norm.bias"));
  return add(tape, matmul(tape, h, params.at("mlm_head.out.w")), params.at("mlm_head.out.b"));
}

// Sequence classification head over the leading marker token: pooled tanh
// projection, then class logits.
template <typename S>
Tensor<S> cls_logits(Tape<S>& tape, const ParameterStore<S>& params, const Tensor<S>& hidden) {
  Tensor<S> pooled = take_token(tape, hidden, 0);
  pooled = tanh_op(tape, add(tape, matmul(tape, pooled, params.at("task_head.pooler.w")),
                             params.at("task_head.pooler.b")));
  return add(tape, matmul(tape, pooled, params.at("task_head.out.w")),
             params.at("task_head.out.b"));
}

}  // namespace adua
