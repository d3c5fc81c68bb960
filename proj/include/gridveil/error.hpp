#pragma once

#include <stdexcept>
#include <string>

namespace gridveil {

enum class ErrorKind {
  InvalidConfig,
  InvalidInput,
  Numerical,
  Divergence,
  InsufficientData,
  InvalidQuery,
  StealthViolation,
  InfeasibleObjective,
  InvalidPlan,
  Capability,
  Schema,
  Parse,
  Io,
};

const char* to_string(ErrorKind kind);

/// Single exception type for the library; `kind()` selects the CLI exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised when the plant state stops being finite.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t dg, std::string quantity, double t)
      : Error(ErrorKind::Divergence,
              "non-finite " + quantity + " at DG " + std::to_string(dg + 1) + " (t=" +
                  std::to_string(t) + " s)"),
        dg_(dg),
        quantity_(std::move(quantity)) {}

  std::size_t dg() const noexcept { return dg_; }
  const std::string& quantity() const noexcept { return quantity_; }

 private:
  std::size_t dg_;
  std::string quantity_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidConfig: return "invalid-config";
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::Numerical: return "numerical";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::InsufficientData: return "insufficient-data";
    case ErrorKind::InvalidQuery: return "invalid-query";
    case ErrorKind::StealthViolation: return "stealth-violation";
    case ErrorKind::InfeasibleObjective: return "infeasible-objective";
    case ErrorKind::InvalidPlan: return "invalid-plan";
    case ErrorKind::Capability: return "capability";
    case ErrorKind::Schema: return "schema";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

}  // namespace gridveil
