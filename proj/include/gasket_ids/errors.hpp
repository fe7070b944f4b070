#pragma once

#include <stdexcept>
#include <string>

namespace gasket_ids {

/// Requested mesh exceeds the dense-matrix size cap.
class SizeError : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Invalid subordinator or profile parameters.
class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A precondition on geometric input (lattice, label, membership) failed.
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An identity that must hold by construction was violated numerically.
class ConsistencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operator assembly received mismatched inputs.
class AssemblyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Feature exists spectrally but has no sampler.
class UnsupportedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Requested scale is finer than the mesh resolves.
class ResolutionError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Experiment configuration rejected before any computation.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace gasket_ids
