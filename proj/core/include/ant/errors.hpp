#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace ant {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// A covariance failed the invertibility precondition (min eigenvalue
/// not above 1e-12 times the max eigenvalue).
class SingularCovariance : public Error {
 public:
  using Error::Error;
};

class RankDeficient : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A model threw or produced non-finite output while being evaluated as
/// part of a fusion problem. Carries the id of the offending source.
class ModelEvaluationError : public Error {
 public:
  ModelEvaluationError(std::string source_id, const std::string& what)
      : Error("model '" + source_id + "': " + what), source_id_(std::move(source_id)) {}
  const std::string& source_id() const noexcept { return source_id_; }

 private:
  std::string source_id_;
};

class NonFiniteResidual : public Error {
 public:
  using Error::Error;
};

class SingularNormalEquations : public Error {
 public:
  using Error::Error;
};

/// Total information matrix of a fusion problem is rank deficient. The
/// coordinates that receive no information at all are listed so a badly
/// posed node configuration can be diagnosed.
class SingularInformation : public Error {
 public:
  SingularInformation(const std::string& what, std::vector<std::size_t> uninformed)
      : Error(what), uninformed_(std::move(uninformed)) {}
  explicit SingularInformation(const std::string& what) : Error(what) {}
  const std::vector<std::size_t>& uninformed() const noexcept { return uninformed_; }

 private:
  std::vector<std::size_t> uninformed_;
};

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

class FitIllConditioned : public Error {
 public:
  using Error::Error;
};

// node
class FrozenStep : public Error {
 public:
  using Error::Error;
};
class UnknownNeighbor : public Error {
 public:
  using Error::Error;
};
class GradientOutsidePeriod : public Error {
 public:
  using Error::Error;
};
class MissingFusionResult : public Error {
 public:
  using Error::Error;
};
class UnknownAction : public Error {
 public:
  using Error::Error;
};

/// Wire decoding failure. `offset` is the byte offset into the decoded
/// buffer where the problem was detected.
class MalformedMessage : public Error {
 public:
  MalformedMessage(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace ant
