#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace dp3d {

// Library-wide error carrying a stable machine-parsable code next to the
// human-readable message. The CLI prints "error[<code>]: <message>".
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

}  // namespace dp3d
