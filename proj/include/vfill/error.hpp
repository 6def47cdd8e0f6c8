#pragma once

#include <stdexcept>
#include <string>

namespace vfill {

// Every failure raised by the library derives from Error so callers (the CLI
// in particular) can report a machine-readable category next to the message.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error("dimension", w) {}
};

struct InfeasibleError : Error {
  explicit InfeasibleError(const std::string& w) : Error("infeasible", w) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("config", w) {}
};

struct PreconditionError : Error {
  explicit PreconditionError(const std::string& w) : Error("precondition", w) {}
};

struct SolverError : Error {
  SolverError(const std::string& w, double final_gap)
      : Error("solver", w), final_gap(final_gap) {}
  double final_gap;
};

struct ParseError : Error {
  explicit ParseError(const std::string& w) : Error("parse", w) {}
};

struct OracleTooLargeError : Error {
  explicit OracleTooLargeError(const std::string& w) : Error("oracle-too-large", w) {}
};

struct ProtocolError : Error {
  explicit ProtocolError(const std::string& w) : Error("protocol", w) {}
};

/// A networked session ended abnormally; reason is the Stop reason broadcast to agents.
struct SessionError : Error {
  SessionError(std::string reason, const std::string& w) : Error("session", w), reason(std::move(reason)) {}
  std::string reason;
};

}  // namespace vfill
