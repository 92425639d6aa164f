#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "dms/errors.hpp"

namespace dms::detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                     static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  os.write(b, 4);
}

inline void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<std::uint32_t>(v)); }

class Reader {
 public:
  Reader(std::istream& is, std::string source) : is_(is), source_(std::move(source)) {}

  std::uint32_t u32(std::string_view what) {
    unsigned char b[4];
    read(b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  float f32(std::string_view what) { return std::bit_cast<float>(u32(what)); }

  void magic(std::string_view expected) {
    char b[4];
    read(b, 4, "magic");
    if (std::string_view(b, 4) != expected) {
      throw DataError(source_ + ": bad magic at offset 0, expected '" + std::string(expected) + "'");
    }
  }

  void read(void* dst, std::size_t len, std::string_view what) {
    const auto offset = static_cast<long long>(is_.tellg());
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(len));
    if (!is_) {
      throw DataError(source_ + ": truncated while reading " + std::string(what) + " at offset " +
                      std::to_string(offset));
    }
  }

  long long offset() { return static_cast<long long>(is_.tellg()); }

  void expect_end() {
    const auto at = offset();
    if (is_.peek() != std::char_traits<char>::eof()) {
      throw DataError(source_ + ": trailing bytes after offset " + std::to_string(at));
    }
  }

 private:
  std::istream& is_;
  std::string source_;
};

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path.string() + "'");
  return is;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write '" + path.string() + "'");
  return os;
}

}  // namespace dms::detail
