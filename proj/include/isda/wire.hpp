#pragma once

// Little-endian byte packing shared by the tracker snapshot and the
// trainer checkpoint formats.

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>

namespace isda::wire {

inline void put_u8(std::string& buf, uint8_t v) { buf.push_back(static_cast<char>(v)); }

inline void put_u16(std::string& buf, uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xFF));
  buf.push_back(static_cast<char>((v >> 8) & 0xFF));
}

inline void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& buf, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(buf, bits);
}

struct Reader {
  const unsigned char* p = nullptr;
  size_t left = 0;

  Reader(const std::string& buf, size_t offset = 0)
      : p(reinterpret_cast<const unsigned char*>(buf.data()) + offset),
        left(buf.size() - offset) {}

  void need(size_t n) const {
    if (left < n) throw std::runtime_error("binary payload: truncated");
  }
  uint8_t u8() {
    need(1);
    const uint8_t v = p[0];
    p += 1; left -= 1;
    return v;
  }
  uint16_t u16() {
    need(2);
    const uint16_t v = static_cast<uint16_t>(p[0] | (p[1] << 8));
    p += 2; left -= 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    p += 4; left -= 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    p += 8; left -= 8;
    return v;
  }
  double f64() {
    const uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
};

void write_file(const std::string& path, const std::string& buf);
std::string read_file(const std::string& path);

}  // namespace isda::wire
