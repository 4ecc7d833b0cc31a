#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace udaforge {

// Every failure surfaced by the library carries a short machine-readable code
// ("shape", "config", "format", "io", "data", "usage", "state") plus a message.
// The CLI prints these as "error[<code>]: <message>".
struct Error : std::runtime_error {
  Error(std::string c, const std::string& msg) : std::runtime_error(msg), code(std::move(c)) {}
  std::string code;
};

[[noreturn]] inline void fail(const char* code, const std::string& msg) {
  throw Error(code, msg);
}

inline void check(bool ok, const char* code, const std::string& msg) {
  if (!ok) fail(code, msg);
}

}  // namespace udaforge
