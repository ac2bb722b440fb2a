#pragma once

#include <stdexcept>
#include <string>

namespace ternlm {

enum class Errc {
  dimension,
  validation,
  corrupt_data,
  bad_magic,
  unsupported_version,
  truncated,
  duplicate_tensor,
  overflow,
  io,
};

const char* to_string(Errc code);

// All library failures surface as this exception; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace ternlm
