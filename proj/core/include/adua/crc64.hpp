#pragma once

#include <cstddef>
#include <cstdint>

namespace adua {

// CRC-64/XZ (reflected ECMA-182 polynomial, init and xorout all-ones).
// Check value: crc64("123456789") == 0x995DC9BBDF1939FA.
class Crc64 {
 public:
  void update(const void* data, std::size_t n);
  std::uint64_t value() const { return ~state_; }

 private:
  std::uint64_t state_ = ~0ULL;
};

std::uint64_t crc64(const void* data, std::size_t n);

}  // namespace adua
