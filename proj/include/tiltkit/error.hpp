#pragma once

#include <stdexcept>
#include <string>

namespace tiltkit {

enum class ErrorCode {
  InvalidInput,
  DivergentIntegral,
  DegenerateWeights,
  NotAbsolutelyContinuous,
  SupportMismatch,
  Infeasible,
  NotStronglyFeasible,
  RootNotBracketed,
  SingularJacobian,
  SingularBlock,
  ConfigError,
};

const char* to_string(ErrorCode c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode c, const std::string& msg) { throw Error(c, msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(ErrorCode::InvalidInput, msg);
}

}  // namespace tiltkit
