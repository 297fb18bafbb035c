#pragma once

#include <exception>
#include <string>

#include <forge/forge.h>

namespace forge {

// Library-wide exception. Carries a forge_status code so the C API boundary
// can translate failures without string matching.
class Error : public std::exception {
 public:
  Error(forge_status code, std::string message)
      : code_(code), message_(std::move(message)) {}

  forge_status code() const noexcept { return code_; }
  const char* what() const noexcept override { return message_.c_str(); }

 private:
  forge_status code_;
  std::string message_;
};

[[noreturn]] inline void raise(forge_status code, std::string message) {
  throw Error(code, std::move(message));
}

// Short stable name for a status code, used in validation reports.
const char* status_name(forge_status code);

}  // namespace forge
