#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <cmath>
#include <random>

#include "ant/fusion.hpp"
#include "support.hpp"

using namespace ant;
using namespace ant::testing;

namespace {

GaussianEstimate scalar(double mean, double var) {
  return GaussianEstimate(Vector::Constant(1, mean), Matrix::Constant(1, 1, var));
}

Matrix one() { return Matrix::Identity(1, 1); }

InformationSource obs(const std::string& id, SourceKind kind, const Matrix& m, GaussianEstimate v) {
  return InformationSource::linear(id, kind, LinearObservation(m, std::move(v)));
}

// Generalized least squares via explicit normal equations.
struct Gls {
  Vector mean;
  Matrix cov;
};

Gls gls_oracle(const std::vector<Matrix>& ms, const std::vector<Vector>& bs, const std::vector<Matrix>& covs,
               const std::vector<double>& w) {
  const auto n = ms.front().cols();
  Matrix info = Matrix::Zero(n, n);
  Vector rhs = Vector::Zero(n);
  for (std::size_t i = 0; i < ms.size(); ++i) {
    const Matrix ci = covs[i].inverse();
    info += w[i] * ms[i].transpose() * ci * ms[i];
    rhs += w[i] * ms[i].transpose() * ci * bs[i];
  }
  const Matrix cov = info.inverse();
  return {cov * rhs, cov};
}

}  // namespace

TEST(Assemble, PriorAtMeanHasZeroResidual) {
  FusionProblem p(2);
  p.add(obs("prior", SourceKind::prior, Matrix::Identity(2, 2),
            GaussianEstimate(Vector{{1.0, -2.0}}, Matrix::Identity(2, 2) * 3.0)));
  const auto a = assemble_residual(p, CiWeights{}, Vector{{1.0, -2.0}});
  EXPECT_EQ(a.residual.norm(), 0.0);
}

TEST(Assemble, HandComputedScalarStack) {
  FusionProblem p(1);
  p.add(obs("prior", SourceKind::prior, one(), scalar(1.0, 1.0)));
  p.add(obs("s", SourceKind::sensor, one(), scalar(3.0, 1.0)));
  const auto a = assemble_residual(p, CiWeights{}, Vector::Constant(1, 2.0));
  ASSERT_EQ(a.residual.size(), 2);
  EXPECT_DOUBLE_EQ(a.residual(0), 1.0);
  EXPECT_DOUBLE_EQ(a.residual(1), -1.0);
  EXPECT_DOUBLE_EQ(a.residual.squaredNorm(), 2.0);
}

TEST(Assemble, BetaJacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  FusionProblem p(3);
  p.add(obs("prior", SourceKind::prior, Matrix::Identity(3, 3),
            GaussianEstimate(random_vector(rng, 3), random_spd(rng, 3))));
  p.add(obs("s", SourceKind::sensor, random_matrix(rng, 2, 3),
            GaussianEstimate(random_vector(rng, 2), random_spd(rng, 2))));
  p.add(obs("c", SourceKind::communication, random_matrix(rng, 2, 3),
            GaussianEstimate(random_vector(rng, 2), random_spd(rng, 2))));
  CiWeights w;
  w.w_local = 0.3;
  w.w_comm["c"] = 0.7;
  const Vector x = random_vector(rng, 3);
  const auto a = assemble_residual(p, w, x);
  auto r_of_beta = [&](const Vector& b) { return assemble_residual(p.with_beta(b), w, x, false).residual; };
  const Matrix fd = finite_difference(r_of_beta, p.beta(), 1e-6);
  EXPECT_LT(relative_error(a.jac_beta, fd), 1e-6);
}

TEST(Assemble, ModelErrorCarriesSourceId) {
  FusionProblem p(1);
  p.add(obs("prior", SourceKind::prior, one(), scalar(0.0, 1.0)));
  auto bad = std::make_shared<FunctionModel>(
      1, one(), [](const Vector&) -> Vector { throw std::runtime_error("boom"); },
      [](const Vector&) -> Matrix { return Matrix::Identity(1, 1); });
  p.add(InformationSource::implicit("broken", SourceKind::process_model, bad));
  try {
    assemble_residual(p, CiWeights{}, Vector::Zero(1));
    FAIL() << "expected ModelEvaluationError";
  } catch (const ModelEvaluationError& e) {
    EXPECT_EQ(e.source_id(), "broken");
  }
}

TEST(Problem, KindRules) {
  FusionProblem p(1);
  p.add(obs("prior", SourceKind::prior, one(), scalar(0.0, 1.0)));
  EXPECT_THROW(p.add(obs("prior2", SourceKind::prior, one(), scalar(0.0, 1.0))), ConfigError);
  auto m = std::make_shared<FunctionModel>(
      1, one(), [](const Vector& x) { return x; }, [](const Vector&) { return Matrix::Identity(1, 1); });
  p.add(InformationSource::implicit("pred", SourceKind::prediction_model, m));
  EXPECT_THROW(p.add(InformationSource::implicit("pred2", SourceKind::prediction_model, m)), ConfigError);
  EXPECT_THROW(p.add(obs("prior", SourceKind::sensor, one(), scalar(0.0, 1.0))), ConfigError);
  FusionProblem q(1);
  q.add(obs("s", SourceKind::sensor, one(), scalar(0.0, 1.0)));
  EXPECT_THROW(solve_map(q, CiWeights{}, Vector::Zero(1)), ConfigError);
}

TEST(Problem, BetaOffsetsPartition) {
  std::mt19937_64 rng(4);
  const auto p = random_problem(rng, 3, 2);
  const auto& off = p.offsets();
  ASSERT_EQ(off.size(), p.sources().size() + 1);
  for (std::size_t i = 0; i < p.sources().size(); ++i) EXPECT_EQ(off[i + 1] - off[i], p.sources()[i].out_dim());
  EXPECT_EQ(p.beta().size(), off.back());
}

TEST(SolveMap, LinearMatchesGeneralizedLeastSquares) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + trial % 5;
    FusionProblem p(n);
    std::vector<Matrix> ms;
    std::vector<Vector> bs;
    std::vector<Matrix> covs;
    for (int s = 0; s < 3; ++s) {
      const int rows = s == 0 ? n : 1 + static_cast<int>(rng() % n);
      ms.push_back(s == 0 ? Matrix(Matrix::Identity(n, n)) : random_matrix(rng, rows, n));
      bs.push_back(random_vector(rng, rows));
      covs.push_back(random_spd(rng, rows));
      p.add(obs("s" + std::to_string(s), s == 0 ? SourceKind::prior : SourceKind::sensor, ms.back(),
                GaussianEstimate(bs.back(), covs.back())));
    }
    const Vector x = solve_map(p, CiWeights{}, Vector::Zero(n));
    const Gls g = gls_oracle(ms, bs, covs, {1.0, 1.0, 1.0});
    EXPECT_LT((x - g.mean).norm() / g.mean.norm(), 1e-8);
    const Matrix c = posterior_covariance(p, CiWeights{}, x);
    EXPECT_LT(relative_error(c, g.cov), 1e-8);
  }
}

TEST(SolveMap, PriorOnlyReturnsPriorMeanOnCurrentBlock) {
  FusionProblem p(4);
  Matrix mpr = Matrix::Zero(2, 4);
  mpr.rightCols(2).setIdentity();
  p.add(obs("prior", SourceKind::prior, mpr, GaussianEstimate(Vector{{1.5, -0.5}}, Matrix::Identity(2, 2))));
  const Vector x = solve_map(p, CiWeights{}, Vector::Zero(4));
  EXPECT_NEAR(x(2), 1.5, 1e-12);
  EXPECT_NEAR(x(3), -0.5, 1e-12);
}

TEST(SolveMap, ScalarNonlinearRoot) {
  FusionProblem p(1);
  p.add(obs("prior", SourceKind::prior, one(), scalar(1.9, 100.0)));
  auto m = std::make_shared<FunctionModel>(
      1, Matrix::Constant(1, 1, 1e-8), [](const Vector& x) { return Vector::Constant(1, x(0) * x(0) - 4.0); },
      [](const Vector& x) { return Matrix::Constant(1, 1, 2.0 * x(0)); });
  p.add(InformationSource::implicit("f", SourceKind::process_model, m));
  const Vector x = solve_map(p, CiWeights{}, Vector::Constant(1, 1.0));

  // root oracle by bisection
  double lo = 1.0, hi = 3.0;
  for (int i = 0; i < 100; ++i) {
    const double mid = 0.5 * (lo + hi);
    ((mid * mid - 4.0) < 0.0 ? lo : hi) = mid;
  }
  EXPECT_NEAR(x(0), lo, 1e-4);
}

TEST(SolveMap, NonFiniteInitialPoint) {
  FusionProblem p(1);
  p.add(obs("prior", SourceKind::prior, one(), scalar(0.0, 1.0)));
  EXPECT_THROW(solve_map(p, CiWeights{}, Vector::Constant(1, NAN)), NonFiniteResidual);
}

TEST(Posterior, TwoIndependentSensors) {
  FusionProblem p(1);
  p.add(obs("prior", SourceKind::prior, one(), scalar(0.0, 1.0)));
  p.add(obs("s", SourceKind::sensor, one(), scalar(1.0, 1.0)));
  const Vector x = solve_map(p, CiWeights{}, Vector::Zero(1));
  EXPECT_NEAR(posterior_covariance(p, CiWeights{}, x)(0, 0), 0.5, 1e-14);
}

TEST(Posterior, CovarianceIntersectionOfIdenticalEstimates) {
  FusionProblem p(1);
  p.add(obs("prior", SourceKind::prior, one(), scalar(0.0, 1.0)));
  p.add(obs("n", SourceKind::communication, one(), scalar(0.0, 1.0)));
  for (double w : {0.0, 0.2, 0.5, 0.9, 1.0}) {
    CiWeights cw;
    cw.w_local = w;
    cw.w_comm["n"] = 1.0 - w;
    const Vector x = solve_map(p, cw, Vector::Zero(1));
    EXPECT_NEAR(posterior_covariance(p, cw, x)(0, 0), 1.0, 1e-12);
  }
}

TEST(Posterior, SingularInformationNamesUninformedCoordinates) {
  FusionProblem p(3);
  Matrix m = Matrix::Zero(1, 3);
  m(0, 1) = 1.0;
  p.add(obs("prior", SourceKind::prior, m, scalar(0.0, 1.0)));
  try {
    posterior_covariance(p, CiWeights{}, Vector::Zero(3));
    FAIL();
  } catch (const SingularInformation& e) {
    EXPECT_EQ(e.uninformed(), (std::vector<std::size_t>{0, 2}));
  }
}

TEST(CiWeights, NoCommunicationMeansLocalOnly) {
  FusionProblem p(1);
  p.add(obs("prior", SourceKind::prior, one(), scalar(0.0, 1.0)));
  const auto w = ci_optimize_weights(p, Vector::Zero(1));
  EXPECT_EQ(w.w_local, 1.0);
  EXPECT_TRUE(w.w_comm.empty());
  EXPECT_EQ(w.w_pred, 1.0);
}

TEST(CiWeights, FlatObjectiveTieBreaksToLocal) {
  FusionProblem p(2);
  const Matrix c = Vector{{1.0, 2.0}}.asDiagonal();
  p.add(obs("prior", SourceKind::prior, Matrix::Identity(2, 2), GaussianEstimate(Vector::Zero(2), c)));
  p.add(obs("n", SourceKind::communication, Matrix::Identity(2, 2), GaussianEstimate(Vector::Ones(2), c)));
  const auto w = ci_optimize_weights(p, Vector::Zero(2));
  EXPECT_EQ(w.w_local, 1.0);
  EXPECT_EQ(w.w_comm.at("n"), 0.0);
  double lo = 1e300, hi = -1e300;
  for (double t = 0.0; t <= 1.0; t += 0.05) {
    CiWeights cw;
    cw.w_local = t;
    cw.w_comm["n"] = 1.0 - t;
    const double f = ci_objective(p, cw, Vector::Zero(2));
    lo = std::min(lo, f);
    hi = std::max(hi, f);
  }
  EXPECT_LT(hi - lo, 1e-12);
}

TEST(CiWeights, DominantGroupGetsMostWeight) {
  FusionProblem p(2);
  p.add(obs("prior", SourceKind::prior, Matrix::Identity(2, 2),
            GaussianEstimate(Vector::Zero(2), Matrix::Identity(2, 2))));
  p.add(obs("n", SourceKind::communication, Matrix::Identity(2, 2),
            GaussianEstimate(Vector::Zero(2), Matrix::Identity(2, 2) * 0.01)));
  const auto w = ci_optimize_weights(p, Vector::Zero(2));
  EXPECT_GE(w.w_comm.at("n"), 0.9);
  EXPECT_NEAR(w.w_local + w.w_comm.at("n"), 1.0, 1e-15);
}

TEST(CiWeights, MatchesSimplexGridOracle) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 6; ++trial) {
    const int comm = 1 + trial % 2;
    const auto p = random_problem(rng, 2, comm);
    const auto naive = solve_map(p, CiWeights::unit(p.comm_ids()), Vector::Zero(p.dim()));
    const auto w = ci_optimize_weights(p, naive);
    const double got = ci_objective(p, w, naive);
    double best = std::numeric_limits<double>::infinity();
    const auto ids = p.comm_ids();
    const int steps = comm == 1 ? 1000 : 200;
    for (int a = 0; a <= steps; ++a) {
      for (int b = 0; b <= (comm == 2 ? steps - a : 0); ++b) {
        CiWeights cw;
        cw.w_comm[ids[0]] = a / double(steps);
        if (comm == 2) cw.w_comm[ids[1]] = b / double(steps);
        cw.w_local = 1.0 - (a + b) / double(steps);
        best = std::min(best, ci_objective(p, cw, naive));
      }
    }
    EXPECT_LE(got, best + 1e-4);
    double sum = w.w_local;
    for (const auto& [k, v] : w.w_comm) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-15);
  }
}

TEST(ImplicitJacobian, PriorOnlyScalar) {
  FusionProblem p(1);
  p.add(obs("prior", SourceKind::prior, one(), scalar(2.0, 3.0)));
  const auto r = fuse(p, Vector::Zero(1));
  EXPECT_NEAR(r.chunk("prior")(0, 0), 1.0, 1e-14);
}

TEST(ImplicitJacobian, TwoEqualSensorsAverage) {
  FusionProblem p(1);
  p.add(obs("prior", SourceKind::prior, one(), scalar(0.0, 1.0)));
  p.add(obs("s", SourceKind::sensor, one(), scalar(4.0, 1.0)));
  const auto r = fuse(p, Vector::Zero(1));
  EXPECT_NEAR(r.chunk("prior")(0, 0), 0.5, 1e-14);
  EXPECT_NEAR(r.chunk("s")(0, 0), 0.5, 1e-14);
}

TEST(ImplicitJacobian, RandomNonlinearAgainstFiniteDifferences) {
  std::mt19937_64 rng(51);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = random_problem(rng, 1 + trial % 4, trial % 3);
    const auto r = fuse(p, Vector::Zero(p.dim()));
    EXPECT_LT(implicit_jacobian_fd_error(p, r), 1e-4) << "trial " << trial;
  }
}

TEST(Fuse, LocalOnlyEqualsNaive) {
  std::mt19937_64 rng(61);
  const auto p = random_problem(rng, 3, 0);
  const auto r = fuse(p, Vector::Zero(p.dim()));
  const Vector naive = solve_map(p, CiWeights{}, Vector::Zero(p.dim()));
  EXPECT_EQ(r.map, naive);
  EXPECT_EQ(r.ci_weights.w_local, 1.0);
}

TEST(Fuse, CommunicationMapLiesBetweenLocalAndRemote) {
  for (double remote : {-3.0, 0.5, 7.0}) {
    FusionProblem p(1);
    p.add(obs("prior", SourceKind::prior, one(), scalar(1.0, 2.0)));
    p.add(obs("s", SourceKind::sensor, one(), scalar(2.0, 1.0)));
    p.add(obs("n", SourceKind::communication, one(), scalar(remote, 0.5)));
    const auto r = fuse(p, Vector::Zero(1));
    const double local = (1.0 / 2.0 + 2.0 / 1.0) / (1.0 / 2.0 + 1.0);
    EXPECT_GE(r.map(0), std::min(local, remote) - 1e-12);
    EXPECT_LE(r.map(0), std::max(local, remote) + 1e-12);
  }
}

TEST(Fuse, ResultInvariants) {
  std::mt19937_64 rng(71);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = random_problem(rng, 1 + trial % 5, trial % 3);
    const Vector x0 = Vector::Zero(p.dim());
    const auto r = fuse(p, x0);
    const auto a = assemble_residual(p, r.ci_weights, r.map, false);
    EXPECT_NEAR(r.chi2, a.residual.squaredNorm(), 1e-12 * std::max(1.0, r.chi2));
    EXPECT_LE(r.chi2, assemble_residual(p, r.ci_weights, x0, false).residual.squaredNorm());
    const Vector naive = solve_map(p, CiWeights::unit(p.comm_ids()), x0);
    EXPECT_LE(r.chi2, assemble_residual(p, r.ci_weights, naive, false).residual.squaredNorm() + 1e-12);
    Eigen::SelfAdjointEigenSolver<Matrix> es(r.post_cov);
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
    EXPECT_EQ(r.ci_weights.w_pred, 1.0);
  }
}

TEST(Fuse, CovarianceIntersectionIsConservative) {
  std::mt19937_64 rng(81);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + trial % 3;
    // joint covariance of the two estimation errors
    const Matrix joint = random_spd(rng, 2 * n, 0.05);
    const Matrix p1 = joint.topLeftCorner(n, n), p2 = joint.bottomRightCorner(n, n);
    FusionProblem p(n);
    p.add(obs("prior", SourceKind::prior, Matrix::Identity(n, n), GaussianEstimate(random_vector(rng, n), p1)));
    p.add(obs("n", SourceKind::communication, Matrix::Identity(n, n),
              GaussianEstimate(random_vector(rng, n), p2)));
    const auto r = fuse(p, Vector::Zero(n));
    Matrix k(n, 2 * n);
    k << r.chunk("prior"), r.chunk("n");
    const Matrix true_cov = k * joint * k.transpose();
    Eigen::SelfAdjointEigenSolver<Matrix> es(r.post_cov - true_cov);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-9);
  }
}
