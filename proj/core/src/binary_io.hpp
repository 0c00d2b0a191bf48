#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include "iqt/error.hpp"

namespace iqt::detail {

inline std::uint32_t byteswap32(std::uint32_t v) {
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

inline void write_f32_le(std::ostream& out, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (float f : values) {
      const std::uint32_t s = byteswap32(std::bit_cast<std::uint32_t>(f));
      out.write(reinterpret_cast<const char*>(&s), sizeof(s));
    }
  }
}

/// Reads exactly `out.size()` floats or throws TruncationError.
inline void read_f32_le(std::istream& in, std::span<float> out, const char* what) {
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size_bytes()));
  if (static_cast<std::size_t>(in.gcount()) != out.size_bytes()) {
    throw TruncationError(std::string(what) + ": payload shorter than declared");
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (float& f : out) f = std::bit_cast<float>(byteswap32(std::bit_cast<std::uint32_t>(f)));
  }
}

}  // namespace iqt::detail
