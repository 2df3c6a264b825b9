#pragma once

#include <stdexcept>
#include <string>

namespace headlens {

// Every failure carries the process exit code the CLI maps it to:
//   2 = configuration / contract violation
//   3 = capacity or missing data
//   4 = numeric failure
class Error : public std::runtime_error {
 public:
  Error(int exit_code, const std::string& msg) : std::runtime_error(msg), exit_code_(exit_code) {}
  int exit_code() const { return exit_code_; }

 private:
  int exit_code_;
};

inline Error config_error(const std::string& msg) { return Error(2, "config: " + msg); }
inline Error data_error(const std::string& msg) { return Error(3, "data: " + msg); }
inline Error numeric_error(const std::string& msg) { return Error(4, "numeric: " + msg); }

}  // namespace headlens
