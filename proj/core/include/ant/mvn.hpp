#pragma once

// Dense Gaussian primitives shared by the fusion, node and protocol layers.

#include <Eigen/Core>

#include "ant/errors.hpp"

namespace ant {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Multivariate normal estimate (mean, covariance). The covariance is
/// symmetrized on construction and checked for positive semi-definiteness
/// (no eigenvalue below -1e-10 times the largest one).
class GaussianEstimate {
 public:
  GaussianEstimate() = default;
  GaussianEstimate(Vector mean, Matrix cov);

  /// Skips the eigenvalue check. For covariances that are PSD by
  /// construction, e.g. projections of a posterior.
  static GaussianEstimate trusted(Vector mean, Matrix cov);

  const Vector& mean() const noexcept { return mean_; }
  const Matrix& cov() const noexcept { return cov_; }
  Eigen::Index dim() const noexcept { return mean_.size(); }

  /// Marginal standard deviations.
  Vector stddev() const;

  friend bool operator==(const GaussianEstimate& a, const GaussianEstimate& b) {
    return a.mean_.size() == b.mean_.size() && a.mean_ == b.mean_ && a.cov_ == b.cov_;
  }

 private:
  struct Trusted {};
  GaussianEstimate(Vector mean, Matrix cov, Trusted);

  Vector mean_;
  Matrix cov_;
};

/// Linear observation M x = value.mean + eps, eps ~ N(0, value.cov).
/// M must have full row rank.
struct LinearObservation {
  LinearObservation() = default;
  LinearObservation(Matrix matrix, GaussianEstimate value);

  Matrix matrix;
  GaussianEstimate value;
};

/// Returns L with L^T L = cov^-1.
///
/// Convention: with cov = C C^T the lower Cholesky factorization, L = C^-1
/// (lower triangular). The eigenvalue precondition (min > 1e-12 max) is
/// checked first. If the plain factorization still fails numerically a
/// jitter of 1e-10 * trace / n is added to the diagonal; the jittered matrix
/// is never returned or stored.
Matrix whitening_from_cov(const Matrix& cov);

/// KL(p || q) in bits.
double kl_divergence_bits(const GaussianEstimate& p, const GaussianEstimate& q);

/// (M mu, M Gamma M^T).
GaussianEstimate project(const GaussianEstimate& est, const Matrix& m);

/// (A + A^T) / 2
Matrix symmetrized(const Matrix& a);

/// Throws SingularCovariance unless every eigenvalue of `cov` exceeds
/// 1e-12 times the largest one.
void require_invertible(const Matrix& cov, const char* what);

}  // namespace ant
