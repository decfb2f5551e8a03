#include "ant/mvn.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <cmath>
#include <numbers>
#include <string>

namespace ant {

namespace {

constexpr double kPsdTolerance = 1e-10;
constexpr double kInvertibleRatio = 1e-12;
constexpr double kJitter = 1e-10;

bool is_diagonal(const Matrix& a) {
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      if (i != j && a(i, j) != 0.0) return false;
  return true;
}

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// Cholesky of `cov`, falling back to a jittered copy when the plain
// factorization fails for an admissible but near-singular matrix.
Eigen::LLT<Matrix> robust_llt(const Matrix& cov) {
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() == Eigen::Success) return llt;
  const double eps = kJitter * cov.trace() / static_cast<double>(cov.rows());
  Matrix jittered = cov;
  jittered.diagonal().array() += eps;
  llt.compute(jittered);
  if (llt.info() != Eigen::Success) throw SingularCovariance("Cholesky factorization failed");
  return llt;
}

}  // namespace

Matrix symmetrized(const Matrix& a) { return 0.5 * (a + a.transpose()); }

void require_invertible(const Matrix& cov, const char* what) {
  if (cov.rows() != cov.cols())
    throw DimensionMismatch(std::string(what) + ": covariance not square (" + shape(cov) + ")");
  if (cov.rows() == 0) return;
  if (is_diagonal(cov)) {
    const double mx = cov.diagonal().maxCoeff();
    const double mn = cov.diagonal().minCoeff();
    if (!(mx > 0.0) || !(mn > kInvertibleRatio * mx))
      throw SingularCovariance(std::string(what) + ": covariance not invertible");
    return;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov, Eigen::EigenvaluesOnly);
  const double mx = es.eigenvalues().maxCoeff();
  const double mn = es.eigenvalues().minCoeff();
  if (!(mx > 0.0) || !(mn > kInvertibleRatio * mx))
    throw SingularCovariance(std::string(what) + ": covariance not invertible (eigenvalue ratio " +
                             std::to_string(mn / mx) + ")");
}

GaussianEstimate::GaussianEstimate(Vector mean, Matrix cov)
    : GaussianEstimate(std::move(mean), std::move(cov), Trusted{}) {
  if (!mean_.allFinite() || !cov_.allFinite())
    throw DimensionMismatch("Gaussian estimate has non-finite entries");
  if (cov_.rows() == 0) return;
  double largest;
  double smallest;
  if (is_diagonal(cov_)) {
    largest = cov_.diagonal().maxCoeff();
    smallest = cov_.diagonal().minCoeff();
  } else {
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov_, Eigen::EigenvaluesOnly);
    largest = es.eigenvalues().maxCoeff();
    smallest = es.eigenvalues().minCoeff();
  }
  if (smallest < -kPsdTolerance * std::max(largest, 0.0) || largest < 0.0)
    throw SingularCovariance("covariance is not positive semi-definite");
}

GaussianEstimate::GaussianEstimate(Vector mean, Matrix cov, Trusted)
    : mean_(std::move(mean)), cov_(std::move(cov)) {
  if (cov_.rows() != cov_.cols() || cov_.rows() != mean_.size())
    throw DimensionMismatch("mean has " + std::to_string(mean_.size()) + " entries, covariance is " +
                            shape(cov_));
  cov_ = symmetrized(cov_);
}

GaussianEstimate GaussianEstimate::trusted(Vector mean, Matrix cov) {
  return GaussianEstimate(std::move(mean), std::move(cov), Trusted{});
}

Vector GaussianEstimate::stddev() const { return cov_.diagonal().cwiseMax(0.0).cwiseSqrt(); }

LinearObservation::LinearObservation(Matrix m, GaussianEstimate v)
    : matrix(std::move(m)), value(std::move(v)) {
  if (matrix.rows() != value.dim())
    throw DimensionMismatch("observation matrix has " + std::to_string(matrix.rows()) +
                            " rows but value has dimension " + std::to_string(value.dim()));
  if (matrix.rows() > matrix.cols())
    throw RankDeficient("observation matrix " + shape(matrix) + " cannot have full row rank");
  Eigen::ColPivHouseholderQR<Matrix> qr(matrix.transpose());
  if (qr.rank() < matrix.rows())
    throw RankDeficient("observation matrix " + shape(matrix) + " is row rank deficient");
}

Matrix whitening_from_cov(const Matrix& cov) {
  require_invertible(cov, "whitening");
  const auto n = cov.rows();
  if (is_diagonal(cov)) return cov.diagonal().cwiseSqrt().cwiseInverse().asDiagonal();
  const auto llt = robust_llt(cov);
  Matrix l = Matrix::Identity(n, n);
  llt.matrixL().solveInPlace(l);
  return l;
}

double kl_divergence_bits(const GaussianEstimate& p, const GaussianEstimate& q) {
  if (p.dim() != q.dim())
    throw DimensionMismatch("KL divergence between estimates of dimension " + std::to_string(p.dim()) +
                            " and " + std::to_string(q.dim()));
  require_invertible(p.cov(), "KL divergence (p)");
  require_invertible(q.cov(), "KL divergence (q)");
  const auto k = static_cast<double>(p.dim());
  const auto lq = robust_llt(q.cov());
  const auto lp = robust_llt(p.cov());

  // tr(Sq^-1 Sp) = ||Lq^-1 Cp||_F^2 with Sp = Cp Cp^T
  Matrix cp = lp.matrixL();
  lq.matrixL().solveInPlace(cp);
  const double trace_term = cp.squaredNorm();

  Vector diff = q.mean() - p.mean();
  lq.matrixL().solveInPlace(diff);
  const double maha = diff.squaredNorm();

  const double logdet_q = 2.0 * lq.matrixLLT().diagonal().array().log().sum();
  const double logdet_p = 2.0 * lp.matrixLLT().diagonal().array().log().sum();

  const double nats = 0.5 * (trace_term + maha - k + logdet_q - logdet_p);
  return std::max(nats, 0.0) / std::numbers::ln2;
}

GaussianEstimate project(const GaussianEstimate& est, const Matrix& m) {
  if (m.cols() != est.dim())
    throw DimensionMismatch("projection matrix " + shape(m) + " applied to estimate of dimension " +
                            std::to_string(est.dim()));
  return GaussianEstimate::trusted(m * est.mean(), m * est.cov() * m.transpose());
}

}  // namespace ant
