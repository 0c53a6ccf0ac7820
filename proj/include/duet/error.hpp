#pragma once

#include <stdexcept>
#include <string>

namespace duet {

// Every failure surfaced by the library carries a short kebab-case code
// ("not-canonical", "bad-token", ...) that the CLI prints verbatim.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& detail = {})
      : std::runtime_error(detail.empty() ? code : code + ": " + detail),
        code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

}  // namespace duet
