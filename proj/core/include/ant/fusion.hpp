#pragma once

// Per-time-step data fusion: whitened nonlinear least squares over the
// concatenated state, covariance intersection between information groups,
// posterior covariance and implicit Jacobians of the MAP with respect to
// every source's inhomogeneity vector.

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ant/model.hpp"
#include "ant/mvn.hpp"

namespace ant {

enum class SourceKind { prior, process_model, prediction_model, parameter, sensor, communication };

const char* to_string(SourceKind kind);

struct InformationSource {
  std::string id;
  SourceKind kind = SourceKind::sensor;
  LinearObservation observation;                      // prior, parameter, sensor, communication
  std::shared_ptr<const DifferentiableModel> model;  // process_model, prediction_model

  static InformationSource linear(std::string id, SourceKind kind, LinearObservation obs);
  static InformationSource implicit(std::string id, SourceKind kind,
                                    std::shared_ptr<const DifferentiableModel> model);

  bool is_model() const noexcept {
    return kind == SourceKind::process_model || kind == SourceKind::prediction_model;
  }
  Eigen::Index out_dim() const;
  /// Noise covariance of the source's residual rows.
  const Matrix& cov() const;
  /// Inhomogeneity vector: observation mean, zero for models.
  Vector beta() const;

  // Model inhomogeneity; zero except in perturbed copies.
  Vector model_offset;
};

struct CiWeights {
  double w_local = 1.0;
  std::map<std::string, double> w_comm;  // keyed by communication source id
  double w_pred = 1.0;

  /// Weight applied to the given source.
  double weight_for(const InformationSource& s) const;
  /// All weights equal to one (naive fusion).
  static CiWeights unit(const std::vector<std::string>& comm_ids);
};

class FusionProblem {
 public:
  explicit FusionProblem(Eigen::Index dim);

  /// Validates dimensions and kind rules and precomputes the whitening.
  void add(InformationSource source);

  Eigen::Index dim() const noexcept { return dim_; }
  const std::vector<InformationSource>& sources() const noexcept { return sources_; }
  const Matrix& whitening(std::size_t i) const { return whitening_[i]; }
  Eigen::Index residual_dim() const noexcept { return offsets_.back(); }
  /// Row offsets of each source inside the stacked residual / beta; size
  /// sources().size() + 1.
  const std::vector<Eigen::Index>& offsets() const noexcept { return offsets_; }
  Vector beta() const;
  /// Copy with every source's inhomogeneity replaced by the matching chunk
  /// of `beta` (observation means, or the model offset f(x*) = beta_i).
  FusionProblem with_beta(const Vector& beta) const;
  std::vector<std::string> comm_ids() const;
  std::optional<std::size_t> index_of(const std::string& id) const;

  /// Throws ConfigError unless the problem has exactly one prior.
  void validate() const;

 private:
  Eigen::Index dim_;
  std::vector<InformationSource> sources_;
  std::vector<Matrix> whitening_;
  std::vector<Eigen::Index> offsets_{0};
};

struct Assembled {
  Vector residual;
  Matrix jac_x;
  Matrix jac_beta;  // block diagonal, -sqrt(w) L per source
};

/// Stacks sqrt(w) L (F(x) - beta) over all sources.
Assembled assemble_residual(const FusionProblem& problem, const CiWeights& weights, const Vector& x,
                            bool with_beta_jacobian = true);

struct SolveOptions {
  int max_iterations = 200;
  /// Stop once |grad chi^2|_inf <= gradient_tolerance * max(1, chi^2).
  double gradient_tolerance = 1e-9;
};

/// Damped Gauss-Newton (Levenberg) MAP. Damping starts at zero, grows x2
/// on rejected steps and shrinks /3 on accepted ones.
Vector solve_map(const FusionProblem& problem, const CiWeights& weights, const Vector& x0,
                 const SolveOptions& options = {});

/// (J^T J)^-1 with J the weighted whitened Jacobian at `map`.
Matrix posterior_covariance(const FusionProblem& problem, const CiWeights& weights, const Vector& map);

/// Minimizes log det of the posterior covariance over the weight simplex,
/// with model Jacobians frozen at `map_naive`.
CiWeights ci_optimize_weights(const FusionProblem& problem, const Vector& map_naive);

/// log det Gamma_post(w) with Jacobians at `x`; +inf when degenerate.
double ci_objective(const FusionProblem& problem, const CiWeights& weights, const Vector& x);

/// How d map / d beta is linearized. `gauss_newton` drops the second-order
/// model terms from the Hessian of chi^2; `exact` keeps them (model Hessians
/// contracted with the residual) and falls back to `gauss_newton` when the
/// full Hessian is not positive definite.
enum class JacobianMode { exact, gauss_newton };

/// d map / d beta_i for each source i, each of shape [dim x out_dim_i].
std::vector<Matrix> implicit_jacobian(const FusionProblem& problem, const CiWeights& weights,
                                      const Vector& map, JacobianMode mode = JacobianMode::exact);

struct FusionResult {
  Vector map;
  Matrix post_cov;
  double chi2 = 0.0;
  std::vector<Matrix> jac_chunks;  // aligned with FusionProblem::sources()
  std::vector<std::string> source_ids;
  CiWeights ci_weights;
  int iterations = 0;
  bool exact_jacobian = false;  // second-order terms included

  const Matrix& chunk(const std::string& source_id) const;
  GaussianEstimate estimate() const { return GaussianEstimate::trusted(map, post_cov); }
};

/// Naive fusion, weight optimization, final fusion with those weights.
FusionResult fuse(const FusionProblem& problem, const Vector& x0,
                  JacobianMode mode = JacobianMode::exact);

}  // namespace ant
