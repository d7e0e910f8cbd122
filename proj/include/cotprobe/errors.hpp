#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace cotprobe {

/// Bad arguments or configuration supplied by the caller.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent data (trace packs, labels, dimensions).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem failures.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A pack that fails one or more structural invariants.
class ValidationError : public DataError {
 public:
  explicit ValidationError(std::vector<std::string> violations)
      : DataError(summarize(violations)), violations_(std::move(violations)) {}

  const std::vector<std::string>& violations() const { return violations_; }

 private:
  static std::string summarize(const std::vector<std::string>& v) {
    std::string msg = std::to_string(v.size()) + " violation(s)";
    for (const auto& s : v) msg += "; " + s;
    return msg;
  }

  std::vector<std::string> violations_;
};

/// The optimizer ran out of iterations before reaching the gradient tolerance.
class NonConvergence : public std::runtime_error {
 public:
  NonConvergence(double grad_norm, int iterations)
      : std::runtime_error("probe did not converge after " + std::to_string(iterations) +
                           " iterations (gradient inf-norm " + std::to_string(grad_norm) + ")"),
        grad_norm_(grad_norm) {}

  double grad_norm() const { return grad_norm_; }

 private:
  double grad_norm_;
};

/// Probe training data overlaps the pack being evaluated.
class ProvenanceError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace cotprobe
