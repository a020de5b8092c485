#pragma once

// Little-endian scalar IO for the grid and prior blobs.

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

#include "slf/error.hpp"

namespace slf::io {

static_assert(std::endian::native == std::endian::little, "blob IO assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.write(buf, sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  char buf[sizeof(T)];
  if (!in.read(buf, sizeof(T))) throw Error(ErrorCode::IoError, "unexpected end of file");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline void expect_magic(std::istream& in, const char (&magic)[5]) {
  char buf[4];
  if (!in.read(buf, 4) || std::memcmp(buf, magic, 4) != 0)
    throw Error(ErrorCode::BadMagic, std::string("expected magic ") + magic);
}

}  // namespace slf::io
