#pragma once

// Little-endian fixed-width readers/writers shared by the checkpoint and
// dataset containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "fairdet/errors.hpp"

namespace fairdet::io {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

template <typename T>
void put(std::ostream& os, T v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline void put_f64(std::ostream& os, double v) { put(os, std::bit_cast<std::uint64_t>(v)); }

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("unexpected end of binary stream");
  return to_little(v);
}

inline double get_f64(std::istream& is) { return std::bit_cast<double>(get<std::uint64_t>(is)); }

inline void put_magic(std::ostream& os, const char (&magic)[9]) { os.write(magic, 8); }

inline void expect_magic(std::istream& is, const char (&magic)[9]) {
  char buf[8];
  is.read(buf, 8);
  if (!is || std::memcmp(buf, magic, 8) != 0) throw DataError(std::string("bad magic, expected ") + magic);
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw DataError("unexpected end of binary stream");
  return s;
}

}  // namespace fairdet::io
