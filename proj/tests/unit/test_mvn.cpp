#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <cmath>
#include <numbers>
#include <random>

#include "ant/mvn.hpp"
#include "support.hpp"

using namespace ant;
using ant::testing::random_matrix;
using ant::testing::random_spd;
using ant::testing::random_vector;

namespace {

// KL via explicit inverse and determinants.
double kl_oracle_bits(const Vector& m0, const Matrix& s0, const Vector& m1, const Matrix& s1) {
  const Matrix s1inv = s1.inverse();
  const Vector d = m1 - m0;
  const double k = static_cast<double>(m0.size());
  const double nats = 0.5 * ((s1inv * s0).trace() + d.dot(s1inv * d) - k +
                             std::log(s1.determinant() / s0.determinant()));
  return nats / std::log(2.0);
}

}  // namespace

TEST(GaussianEstimate, SymmetrizesCovariance) {
  Matrix c(2, 2);
  c << 2.0, 1.0, 0.5, 3.0;
  GaussianEstimate g(Vector::Zero(2), c);
  EXPECT_DOUBLE_EQ(g.cov()(0, 1), 0.75);
  EXPECT_DOUBLE_EQ(g.cov()(1, 0), 0.75);
}

TEST(GaussianEstimate, RejectsMismatchedDimensions) {
  EXPECT_THROW(GaussianEstimate(Vector::Zero(3), Matrix::Identity(2, 2)), DimensionMismatch);
}

TEST(GaussianEstimate, RejectsIndefiniteCovariance) {
  Matrix c(2, 2);
  c << 1.0, 2.0, 2.0, 1.0;
  EXPECT_THROW(GaussianEstimate(Vector::Zero(2), c), SingularCovariance);
}

TEST(GaussianEstimate, AcceptsSemidefiniteCovariance) {
  Matrix c(2, 2);
  c << 1.0, 1.0, 1.0, 1.0;
  EXPECT_NO_THROW(GaussianEstimate(Vector::Zero(2), c));
}

TEST(LinearObservation, RejectsRankDeficientMatrix) {
  Matrix m(2, 3);
  m << 1, 2, 3, 2, 4, 6;
  EXPECT_THROW(LinearObservation(m, GaussianEstimate(Vector::Zero(2), Matrix::Identity(2, 2))),
               RankDeficient);
}

TEST(Whitening, IdentityMapsToIdentity) {
  EXPECT_TRUE(whitening_from_cov(Matrix::Identity(2, 2)).isApprox(Matrix::Identity(2, 2)));
}

TEST(Whitening, DiagonalCase) {
  Matrix c = Vector{{4.0, 9.0}}.asDiagonal();
  Matrix expected = Vector{{0.5, 1.0 / 3.0}}.asDiagonal();
  EXPECT_TRUE(whitening_from_cov(c).isApprox(expected, 1e-15));
}

TEST(Whitening, RandomSpdRoundTrip) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix a = random_spd(rng, 4);
    const Matrix l = whitening_from_cov(a);
    const Matrix prod = l.transpose() * l * a;
    EXPECT_LT((prod - Matrix::Identity(4, 4)).norm(), 1e-8);
    const Matrix back = (l.transpose() * l).inverse();
    EXPECT_LT((back - a).norm() / a.norm(), 1e-8);
  }
}

TEST(Whitening, SingularCovarianceRejected) {
  Matrix c = Vector{{1.0, 1e-14}}.asDiagonal();
  EXPECT_THROW(whitening_from_cov(c), SingularCovariance);
  Matrix d(2, 2);
  d << 1.0, 1.0, 1.0, 1.0;
  EXPECT_THROW(whitening_from_cov(d), SingularCovariance);
}

TEST(KlDivergence, IdenticalIsZero) {
  std::mt19937_64 rng(3);
  GaussianEstimate p(random_vector(rng, 3), random_spd(rng, 3));
  EXPECT_NEAR(kl_divergence_bits(p, p), 0.0, 1e-12);
}

TEST(KlDivergence, ScalarShift) {
  GaussianEstimate p(Vector::Zero(1), Matrix::Identity(1, 1));
  GaussianEstimate q(Vector::Ones(1), Matrix::Identity(1, 1));
  EXPECT_NEAR(kl_divergence_bits(p, q), 0.5 / std::numbers::ln2, 1e-14);
}

TEST(KlDivergence, ScaledIdentityAgainstOracle) {
  GaussianEstimate p(Vector::Zero(2), Matrix::Identity(2, 2));
  GaussianEstimate q(Vector::Zero(2), 2.0 * Matrix::Identity(2, 2));
  const double oracle = kl_oracle_bits(p.mean(), p.cov(), q.mean(), q.cov());
  EXPECT_NEAR(kl_divergence_bits(p, q), oracle, 1e-12);
  // closed form: 0.5 (2 * 0.5 - 2 + 2 ln 2) nats
  EXPECT_NEAR(oracle, (std::log(2.0) - 0.5) / std::log(2.0), 1e-12);
}

TEST(KlDivergence, RandomAgainstOracleAndNonNegative) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 5;
    GaussianEstimate p(random_vector(rng, n), random_spd(rng, n));
    GaussianEstimate q(random_vector(rng, n), random_spd(rng, n));
    const double kl = kl_divergence_bits(p, q);
    EXPECT_GE(kl, 0.0);
    EXPECT_NEAR(kl, kl_oracle_bits(p.mean(), p.cov(), q.mean(), q.cov()), 1e-9 * std::max(1.0, kl));
    if (p.mean() != q.mean()) EXPECT_GT(kl, 0.0);
  }
}

TEST(KlDivergence, DimensionMismatch) {
  GaussianEstimate p(Vector::Zero(1), Matrix::Identity(1, 1));
  GaussianEstimate q(Vector::Zero(2), Matrix::Identity(2, 2));
  EXPECT_THROW(kl_divergence_bits(p, q), DimensionMismatch);
}

TEST(KlDivergence, SingularCovariance) {
  Matrix c(2, 2);
  c << 1.0, 1.0, 1.0, 1.0;
  GaussianEstimate p(Vector::Zero(2), c);
  GaussianEstimate q(Vector::Zero(2), Matrix::Identity(2, 2));
  EXPECT_THROW(kl_divergence_bits(p, q), SingularCovariance);
}

TEST(Project, IdentityUnchanged) {
  std::mt19937_64 rng(7);
  GaussianEstimate g(random_vector(rng, 3), random_spd(rng, 3));
  const auto out = project(g, Matrix::Identity(3, 3));
  EXPECT_EQ(out.mean(), g.mean());
  EXPECT_TRUE(out.cov().isApprox(g.cov(), 0.0));
}

TEST(Project, LeadingBlockIsExact) {
  std::mt19937_64 rng(8);
  GaussianEstimate g(random_vector(rng, 6), random_spd(rng, 6));
  Matrix m = Matrix::Zero(3, 6);
  m.leftCols(3).setIdentity();
  const auto out = project(g, m);
  EXPECT_EQ(out.mean(), g.mean().head(3));
  EXPECT_EQ(out.cov(), Matrix(g.cov().topLeftCorner(3, 3)));
}

TEST(Project, MarginalOfDiagonal) {
  GaussianEstimate g(Vector{{1.0, 2.0, 3.0}}, Matrix(Vector{{4.0, 5.0, 6.0}}.asDiagonal()));
  Matrix sel = Matrix::Zero(1, 3);
  sel(0, 1) = 1.0;
  const auto out = project(g, sel);
  EXPECT_EQ(out.mean()(0), 2.0);
  EXPECT_EQ(out.cov()(0, 0), 5.0);
}

TEST(Project, PreservesPsdForArbitraryMatrices) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    GaussianEstimate g(random_vector(rng, 5), random_spd(rng, 5));
    const Matrix m = random_matrix(rng, 1 + trial % 7, 5);
    const auto out = project(g, m);
    Eigen::SelfAdjointEigenSolver<Matrix> es(out.cov());
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10 * std::max(1.0, es.eigenvalues().maxCoeff()));
  }
}

TEST(Project, DimensionMismatch) {
  GaussianEstimate g(Vector::Zero(2), Matrix::Identity(2, 2));
  EXPECT_THROW(project(g, Matrix::Identity(3, 3)), DimensionMismatch);
}
