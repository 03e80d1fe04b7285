#include "adua/persistence.hpp"

namespace adua {
namespace detail {

CheckpointRaw read_checkpoint_raw(const std::filesystem::path& file) {
  const std::string origin = file.string();
  std::ifstream f(file, std::ios::binary);
  if (!f) throw IoError("cannot open \"" + origin + "\"");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  if (f.bad()) throw IoError("read failed for \"" + origin + "\"");

  // magic + version + config length + tensor count + trailing CRC
  if (bytes.size() < 4 + 2 + 4 + 4 + 8) {
    throw SchemaError("checkpoint \"" + origin + "\": file too small");
  }
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw SchemaError("checkpoint \"" + origin + "\": bad magic");
  }

  Cursor crc_cur{&bytes, bytes.size() - 8, origin};
  const std::uint64_t stored = crc_cur.u64();
  const std::uint64_t actual = crc64(bytes.data(), bytes.size() - 8);
  if (stored != actual) {
    throw SchemaError("checkpoint \"" + origin + "\": CRC mismatch, stored " +
                      fingerprint_hex(stored) + ", computed " + fingerprint_hex(actual));
  }

  Cursor cur{&bytes, 4, origin};
  const std::uint16_t version = cur.u16();
  if (version != kCheckpointVersion) {
    throw SchemaError("checkpoint \"" + origin + "\": unsupported version " +
                      std::to_string(version));
  }
  const std::uint32_t config_len = cur.u32();
  const unsigned char* config_p = cur.take(config_len);

  CheckpointRaw raw;
  try {
    raw.config = Json::parse(config_p, config_p + config_len);
  } catch (const Json::parse_error& e) {
    throw SchemaError("checkpoint \"" + origin + "\": config blob is not valid JSON (" +
                      std::string(e.what()) + ")");
  }
  raw.body_at = cur.at;
  raw.bytes = std::move(bytes);
  return raw;
}

}  // namespace detail

CheckpointPeek peek_checkpoint(const std::filesystem::path& file) {
  detail::CheckpointRaw raw = detail::read_checkpoint_raw(file);
  const std::string origin = file.string();
  reject_unknown_keys(raw.config, "checkpoint config",
                      {"scope", "dtype", "backbone_fingerprint", "model", "vocab"});
  CheckpointPeek peek;
  peek.scope = detail::scope_from_string(
      json_get<std::string>(raw.config, "checkpoint config", "scope"), origin);
  peek.dtype = json_get<std::string>(raw.config, "checkpoint config", "dtype");
  if (peek.dtype != "f32" && peek.dtype != "f64") {
    throw SchemaError("checkpoint \"" + origin + "\": unknown dtype \"" + peek.dtype + "\"");
  }
  peek.model = ModelConfig::from_json(raw.config.at("model"));
  peek.has_vocab = !raw.config.at("vocab").is_null();
  peek.backbone_fp = detail::fingerprint_from_hex(
      json_get<std::string>(raw.config, "checkpoint config", "backbone_fingerprint"), origin);
  return peek;
}

}  // namespace adua
