#pragma once

#include <stdexcept>
#include <string>

namespace dtrgp {

// Thrown when a covariance factorization fails even after jitter escalation.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when hyperparameter optimization produces no usable candidate.
struct FitError : std::runtime_error {
  explicit FitError(const std::string& msg) : std::runtime_error(msg) {}
};

// Normalized IPW is undefined when no patient adheres to the regime.
struct NoAdherentPatients : std::runtime_error {
  explicit NoAdherentPatients(const std::string& msg) : std::runtime_error(msg) {}
};

// Every EI candidate fell within the duplicate-exclusion distance of the design.
struct SaturationError : std::runtime_error {
  explicit SaturationError(const std::string& msg) : std::runtime_error(msg) {}
};

// CSV schema violations (missing column, bad arm codes).
struct SchemaError : std::runtime_error {
  explicit SchemaError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed CSV row (unparseable numeric field); carries the line number in the message.
struct RowError : std::runtime_error {
  explicit RowError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dtrgp
