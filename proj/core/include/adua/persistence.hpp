#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "adua/crc64.hpp"
#include "adua/model.hpp"
#include "adua/vocab.hpp"

namespace adua {

// Checkpoint container: magic, version, a JSON config blob (scope, dtype,
// backbone fingerprint, model config, optional vocabulary), the tensor table
// in name order, and a trailing CRC-64 over everything before it. The CRC is
// validated before any tensor is materialized.
inline constexpr char kCheckpointMagic[4] = {'A', 'D', 'U', 'A'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

enum class CheckpointScope : std::uint8_t { kFull = 0, kAdapterOnly = 1 };

inline const char* to_string(CheckpointScope s) {
  return s == CheckpointScope::kFull ? "full" : "adapter_only";
}

template <typename S>
constexpr std::uint8_t dtype_code();
template <>
constexpr std::uint8_t dtype_code<float>() { return 1; }
template <>
constexpr std::uint8_t dtype_code<double>() { return 2; }

inline const char* dtype_name(std::uint8_t code) {
  switch (code) {
    case 1: return "f32";
    case 2: return "f64";
  }
  return "?";
}

inline std::string fingerprint_hex(std::uint64_t fp) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fp));
  return buf;
}

namespace detail {

inline void put_bytes(std::vector<unsigned char>& out, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  out.insert(out.end(), p, p + n);
}

inline void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

template <typename S>
void put_scalar(std::vector<unsigned char>& out, S v) {
  if constexpr (sizeof(S) == 4) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
  } else {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
  }
}

// Bounds-checked reader over a loaded checkpoint image.
struct Cursor {
  const std::vector<unsigned char>* bytes = nullptr;
  std::size_t at = 0;
  std::string origin;

  void need(std::size_t n) const {
    if (at + n > bytes->size()) {
      throw SchemaError("checkpoint \"" + origin + "\": truncated at offset " +
                        std::to_string(at));
    }
  }
  const unsigned char* take(std::size_t n) {
    need(n);
    const unsigned char* p = bytes->data() + at;
    at += n;
    return p;
  }
  std::uint16_t u16() {
    const unsigned char* p = take(2);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32() {
    const unsigned char* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const unsigned char* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
  std::uint8_t u8() { return *take(1); }

  template <typename S>
  S scalar() {
    if constexpr (sizeof(S) == 4) {
      const std::uint32_t bits = u32();
      S v;
      std::memcpy(&v, &bits, 4);
      return v;
    } else {
      const std::uint64_t bits = u64();
      S v;
      std::memcpy(&v, &bits, 8);
      return v;
    }
  }
};

struct CheckpointRaw {
  std::vector<unsigned char> bytes;
  Json config;
  std::size_t body_at = 0;  // offset of the tensor count
};

// Reads the file, verifies magic, version, and the trailing CRC, and parses
// the config blob. Declared here, defined once in persistence.cpp.
CheckpointRaw read_checkpoint_raw(const std::filesystem::path& file);

}  // namespace detail

// Hash of the backbone: every kFrozen tensor's name and raw bytes in name
// order, then the canonical model config JSON. Identifies "same frozen
// weights under the same architecture" for bundle compatibility checks.
template <typename S>
std::uint64_t backbone_fingerprint(const ParameterStore<S>& params, const ModelConfig& cfg) {
  Crc64 crc;
  for (const auto& [name, entry] : params.entries()) {
    if (entry.group != ParamGroup::kFrozen) continue;
    crc.update(name.data(), name.size());
    std::vector<unsigned char> payload;
    payload.reserve(entry.tensor.size() * sizeof(S));
    for (S v : entry.tensor.values()) detail::put_scalar<S>(payload, v);
    crc.update(payload.data(), payload.size());
  }
  const std::string cfg_json = cfg.to_json().dump();
  crc.update(cfg_json.data(), cfg_json.size());
  return crc.value();
}

namespace detail {

inline bool in_scope(ParamGroup g, CheckpointScope scope) {
  if (scope == CheckpointScope::kFull) return true;
  return g == ParamGroup::kAdapter || g == ParamGroup::kTaskHead;
}

}  // namespace detail

// Serializes the parameter set (or, for kAdapterOnly, just the adapters and
// the task head) together with everything needed to stand the model back up.
template <typename S>
void save_checkpoint(const ParameterStore<S>& params, const ModelConfig& cfg,
                     const Vocab* vocab, CheckpointScope scope,
                     const std::filesystem::path& file) {
  cfg.validate();
  if (scope == CheckpointScope::kAdapterOnly) {
    if (!cfg.adapters_enabled || params.names_in_group(ParamGroup::kAdapter).empty()) {
      throw ContractError("adapter-only checkpoint of a model without adapter parameters");
    }
  }

  Json config{{"scope", to_string(scope)},
              {"dtype", dtype_name(dtype_code<S>())},
              {"backbone_fingerprint", fingerprint_hex(backbone_fingerprint(params, cfg))},
              {"model", cfg.to_json()},
              {"vocab", vocab ? vocab->to_json() : Json(nullptr)}};
  const std::string config_str = config.dump();

  std::vector<unsigned char> out;
  detail::put_bytes(out, kCheckpointMagic, 4);
  detail::put_u16(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(config_str.size()));
  detail::put_bytes(out, config_str.data(), config_str.size());

  std::uint32_t count = 0;
  for (const auto& [name, entry] : params.entries()) {
    if (detail::in_scope(entry.group, scope)) ++count;
  }
  detail::put_u32(out, count);
  for (const auto& [name, entry] : params.entries()) {
    if (!detail::in_scope(entry.group, scope)) continue;
    detail::put_u16(out, static_cast<std::uint16_t>(name.size()));
    detail::put_bytes(out, name.data(), name.size());
    out.push_back(static_cast<unsigned char>(entry.group));
    out.push_back(dtype_code<S>());
    const Shape& shape = entry.tensor.shape();
    out.push_back(static_cast<unsigned char>(shape.size()));
    for (std::size_t d : shape) detail::put_u64(out, d);
    for (S v : entry.tensor.values()) detail::put_scalar<S>(out, v);
  }
  detail::put_u64(out, crc64(out.data(), out.size()));

  std::ofstream f(file, std::ios::trunc | std::ios::binary);
  if (!f) throw IoError("cannot write \"" + file.string() + "\"");
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for \"" + file.string() + "\"");
}

template <typename S>
struct LoadedCheckpoint {
  ParameterStore<S> params;
  ModelConfig model;
  std::optional<Vocab> vocab;
  CheckpointScope scope = CheckpointScope::kFull;
  std::uint64_t backbone_fp = 0;
};

// Summary of a checkpoint without materializing tensors (the CRC is still
// verified). Lets callers pick the right scalar type before loading.
struct CheckpointPeek {
  CheckpointScope scope = CheckpointScope::kFull;
  std::string dtype;
  ModelConfig model;
  bool has_vocab = false;
  std::uint64_t backbone_fp = 0;
};

CheckpointPeek peek_checkpoint(const std::filesystem::path& file);

namespace detail {

inline CheckpointScope scope_from_string(const std::string& s, const std::string& origin) {
  if (s == "full") return CheckpointScope::kFull;
  if (s == "adapter_only") return CheckpointScope::kAdapterOnly;
  throw SchemaError("checkpoint \"" + origin + "\": unknown scope \"" + s + "\"");
}

inline std::uint64_t fingerprint_from_hex(const std::string& hex, const std::string& origin) {
  if (hex.size() != 16) {
    throw SchemaError("checkpoint \"" + origin + "\": malformed fingerprint \"" + hex + "\"");
  }
  std::uint64_t v = 0;
  for (char c : hex) {
    v <<= 4;
    if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
    else throw SchemaError("checkpoint \"" + origin + "\": malformed fingerprint \"" + hex + "\"");
  }
  return v;
}

}  // namespace detail

template <typename S>
LoadedCheckpoint<S> load_checkpoint(const std::filesystem::path& file) {
  detail::CheckpointRaw raw = detail::read_checkpoint_raw(file);
  const std::string origin = file.string();

  LoadedCheckpoint<S> out;
  reject_unknown_keys(raw.config, "checkpoint config",
                      {"scope", "dtype", "backbone_fingerprint", "model", "vocab"});
  out.scope = detail::scope_from_string(
      json_get<std::string>(raw.config, "checkpoint config", "scope"), origin);
  out.model = ModelConfig::from_json(raw.config.at("model"));
  out.backbone_fp = detail::fingerprint_from_hex(
      json_get<std::string>(raw.config, "checkpoint config", "backbone_fingerprint"), origin);
  const std::string dtype = json_get<std::string>(raw.config, "checkpoint config", "dtype");
  if (dtype != dtype_name(dtype_code<S>())) {
    throw SchemaError("checkpoint \"" + origin + "\" stores " + dtype +
                      " tensors but the loader was instantiated for " +
                      dtype_name(dtype_code<S>()));
  }
  if (!raw.config.at("vocab").is_null()) {
    out.vocab = Vocab::from_json(raw.config.at("vocab"));
  }

  // What must be present, given the declared scope.
  std::map<std::string, std::pair<Shape, ParamGroup>> expected;
  for (const auto& spec : detail::param_plan(out.model)) {
    if (detail::in_scope(spec.group, out.scope)) {
      expected.emplace(spec.name, std::make_pair(spec.shape, spec.group));
    }
  }
  if (out.scope == CheckpointScope::kAdapterOnly && !out.model.adapters_enabled) {
    throw SchemaError("checkpoint \"" + origin +
                      "\": adapter-only scope with adapters disabled in the model config");
  }

  detail::Cursor cur{&raw.bytes, raw.body_at, origin};
  const std::uint32_t count = cur.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = cur.u16();
    const unsigned char* name_p = cur.take(name_len);
    const std::string name(reinterpret_cast<const char*>(name_p), name_len);
    const auto group_byte = cur.u8();
    const auto dtype_byte = cur.u8();
    const auto ndim = cur.u8();
    Shape shape(ndim);
    for (std::uint8_t d = 0; d < ndim; ++d) shape[d] = cur.u64();

    auto it = expected.find(name);
    if (it == expected.end()) {
      throw SchemaError("checkpoint \"" + origin + "\": unexpected tensor \"" + name + "\"");
    }
    if (it->second.first != shape) {
      throw SchemaError("checkpoint \"" + origin + "\": tensor \"" + name + "\" has shape " +
                        shape_str(shape) + ", expected " + shape_str(it->second.first));
    }
    if (group_byte != static_cast<std::uint8_t>(it->second.second)) {
      throw SchemaError("checkpoint \"" + origin + "\": tensor \"" + name +
                        "\" has the wrong parameter group");
    }
    if (dtype_byte != dtype_code<S>()) {
      throw SchemaError("checkpoint \"" + origin + "\": tensor \"" + name + "\" is " +
                        dtype_name(dtype_byte) + ", loader expects " +
                        dtype_name(dtype_code<S>()));
    }
    const std::size_t n = numel(shape);
    cur.need(n * sizeof(S));
    Tensor<S> t = Tensor<S>::zeros(shape);
    auto vals = t.values_mut();
    for (std::size_t j = 0; j < n; ++j) vals[j] = cur.template scalar<S>();
    out.params.add(name, std::move(t), it->second.second);
    expected.erase(it);
  }
  if (!expected.empty()) {
    throw SchemaError("checkpoint \"" + origin + "\": missing tensor \"" +
                      expected.begin()->first + "\"");
  }
  // Tensor table should end exactly at the CRC trailer.
  if (cur.at != raw.bytes.size() - 8) {
    throw SchemaError("checkpoint \"" + origin + "\": trailing bytes after tensor table");
  }
  return out;
}

// Grafts an adapter-only bundle onto a compatible backbone, returning the
// merged parameter set. The backbone fingerprint must match the one the
// bundle was trained against; loading the same bundle twice is a no-op.
template <typename S>
ParameterStore<S> load_adapter_bundle(const ParameterStore<S>& backbone,
                                      const ModelConfig& cfg,
                                      const std::filesystem::path& file) {
  LoadedCheckpoint<S> bundle = load_checkpoint<S>(file);
  if (bundle.scope != CheckpointScope::kAdapterOnly) {
    throw SchemaError("\"" + file.string() + "\" is a full checkpoint, not an adapter bundle");
  }
  if (bundle.model.to_json() != cfg.to_json()) {
    throw SchemaError("adapter bundle \"" + file.string() +
                      "\" was built for a different model configuration");
  }
  const std::uint64_t have = backbone_fingerprint(backbone, cfg);
  if (have != bundle.backbone_fp) {
    throw SchemaError("adapter bundle \"" + file.string() + "\" fingerprint " +
                      fingerprint_hex(bundle.backbone_fp) +
                      " does not match this backbone's fingerprint " + fingerprint_hex(have));
  }
  ParameterStore<S> merged = backbone.deep_copy();
  for (const auto& [name, entry] : bundle.params.entries()) {
    if (!merged.contains(name)) {
      throw SchemaError("adapter bundle \"" + file.string() + "\": tensor \"" + name +
                        "\" does not exist in the backbone");
    }
    Tensor<S>& dst = merged.at(name);
    if (dst.shape() != entry.tensor.shape()) {
      throw SchemaError("adapter bundle \"" + file.string() + "\": tensor \"" + name +
                        "\" shape mismatch");
    }
    auto d = dst.values_mut();
    auto s = entry.tensor.values();
    std::copy(s.begin(), s.end(), d.begin());
  }
  return merged;
}

}  // namespace adua
