#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "udaforge/common.hpp"

// Little-endian binary IO. Values are byte-packed explicitly so files are
// identical on any host.
namespace udaforge::binio {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
inline void put(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

struct Reader {
  std::string data;
  std::size_t pos = 0;
  std::string ctx;

  Reader(std::string d, std::string c) : data(std::move(d)), ctx(std::move(c)) {}

  template <typename T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    check(pos + sizeof(T) <= data.size(), "format", ctx + ": truncated file");
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, data.data() + pos, sizeof(T));
    pos += sizeof(T);
    if constexpr (std::endian::native == std::endian::big) {
      for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
  }

  std::string get_bytes(std::size_t n) {
    check(pos + n <= data.size(), "format", ctx + ": truncated file");
    std::string s = data.substr(pos, n);
    pos += n;
    return s;
  }

  void expect_end() {
    check(pos == data.size(), "format",
          ctx + ": " + std::to_string(data.size() - pos) + " unexpected trailing bytes");
  }
};

inline std::string slurp(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  check(static_cast<bool>(in), "io", std::string(what) + ": cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  check(!in.bad(), "io", std::string(what) + ": read failed for " + path);
  return data;
}

inline void spew(const std::string& path, const std::string& data, const char* what) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(static_cast<bool>(out), "io", std::string(what) + ": cannot open " + path + " for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  out.flush();
  check(!out.bad(), "io", std::string(what) + ": write failed for " + path);
}

}  // namespace udaforge::binio
