#pragma once

// Little-endian primitive encoding shared by the PFV1 and CVP1 formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "ctxvec/error.hpp"

namespace ctxvec::binio {

template <typename UInt>
void write_le(std::ostream& os, UInt v) {
  std::array<char, sizeof(UInt)> buf{};
  for (std::size_t i = 0; i < sizeof(UInt); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf.data(), buf.size());
}

inline void write_f32(std::ostream& os, float v) { write_le(os, std::bit_cast<std::uint32_t>(v)); }

inline void write_bytes(std::ostream& os, const std::string& s) {
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename UInt>
UInt read_le(std::istream& is, const char* what) {
  std::array<unsigned char, sizeof(UInt)> buf{};
  if (!is.read(reinterpret_cast<char*>(buf.data()), buf.size()))
    throw FormatError(std::string("truncated file while reading ") + what);
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(buf[i]) << (8 * i);
  return v;
}

inline float read_f32(std::istream& is, const char* what) {
  return std::bit_cast<float>(read_le<std::uint32_t>(is, what));
}

inline std::string read_bytes(std::istream& is, std::size_t n, const char* what) {
  std::string s(n, '\0');
  if (n > 0 && !is.read(s.data(), static_cast<std::streamsize>(n)))
    throw FormatError(std::string("truncated file while reading ") + what);
  return s;
}

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
  char buf[4];
  if (!is.read(buf, 4) || std::memcmp(buf, magic, 4) != 0)
    throw FormatError(std::string("bad magic, expected ") + magic);
}

inline bool at_eof(std::istream& is) {
  return is.peek() == std::char_traits<char>::eof();
}

}  // namespace ctxvec::binio
