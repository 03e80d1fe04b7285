#include "adua/crc64.hpp"

#include <array>

namespace adua {

namespace {

constexpr std::uint64_t kPolyReflected = 0xC96C5795D7870F42ULL;

std::array<std::uint64_t, 256> build_table() {
  std::array<std::uint64_t, 256> table{};
  for (std::uint64_t i = 0; i < 256; ++i) {
    std::uint64_t r = i;
    for (int bit = 0; bit < 8; ++bit) {
      r = (r >> 1) ^ (kPolyReflected & (~((r & 1) - 1)));
    }
    table[i] = r;
  }
  return table;
}

const std::array<std::uint64_t, 256>& table() {
  static const std::array<std::uint64_t, 256> t = build_table();
  return t;
}

}  // namespace

void Crc64::update(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  const auto& t = table();
  std::uint64_t s = state_;
  for (std::size_t i = 0; i < n; ++i) {
    s = t[(s ^ p[i]) & 0xFF] ^ (s >> 8);
  }
  state_ = s;
}

std::uint64_t crc64(const void* data, std::size_t n) {
  Crc64 c;
  c.update(data, n);
  return c.value();
}

}  // namespace adua
