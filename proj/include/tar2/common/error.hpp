#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace tar2 {

enum class Errc {
  invalid_argument,
  shape_mismatch,
  non_finite,
  config,
  io,
  state,
  runtime,
  verification,
};

// Single exception type for the library. The C boundary maps `code()` onto
// tar2_status values.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what, std::optional<std::size_t> index = std::nullopt)
      : std::runtime_error(what), code_(code), index_(index) {}

  Errc code() const noexcept { return code_; }

  // Flat index of the offending entry, when the error refers to one.
  std::optional<std::size_t> index() const noexcept { return index_; }

 private:
  Errc code_;
  std::optional<std::size_t> index_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace tar2
