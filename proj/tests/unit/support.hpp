#pragma once

#include <functional>
#include <random>

#include "ant/model.hpp"

namespace ant::testing {

// Model defined by two lambdas, for building ad-hoc fusion problems.
class FunctionModel : public DifferentiableModel {
 public:
  using Fn = std::function<Vector(const Vector&)>;
  using Jac = std::function<Matrix(const Vector&)>;

  FunctionModel(Eigen::Index in, Matrix cov, Fn f, Jac j)
      : in_(in), cov_(std::move(cov)), f_(std::move(f)), j_(std::move(j)) {}

  Eigen::Index in_dim() const override { return in_; }
  Eigen::Index out_dim() const override { return cov_.rows(); }
  const Matrix& noise_cov() const override { return cov_; }
  Vector evaluate(const Vector& x) const override { return f_(x); }
  Matrix jacobian(const Vector& x) const override { return j_(x); }

 private:
  Eigen::Index in_;
  Matrix cov_;
  Fn f_;
  Jac j_;
};

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = n(rng);
  return m;
}

inline Vector random_vector(std::mt19937_64& rng, Eigen::Index n) { return random_matrix(rng, n, 1); }

inline Matrix random_spd(std::mt19937_64& rng, Eigen::Index n, double floor = 0.1) {
  const Matrix a = random_matrix(rng, n, n);
  return a * a.transpose() / static_cast<double>(n) + floor * Matrix::Identity(n, n);
}

// Central differences of f at x, step h.
template <class F>
Matrix finite_difference(F&& f, const Vector& x, double h) {
  const Vector f0 = f(x);
  Matrix j(f0.size(), x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Vector xp = x, xm = x;
    xp(k) += h;
    xm(k) -= h;
    j.col(k) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return j;
}

inline double relative_error(const Matrix& a, const Matrix& ref) {
  const double denom = std::max(ref.norm(), 1e-300);
  return (a - ref).norm() / denom;
}

}  // namespace ant::testing

#include <algorithm>
#include <cmath>
#include <memory>

#include "ant/fusion.hpp"

namespace ant::testing {

// Randomized fusion problem over x* = [x_{t+1}; x_t] with a degenerate prior on
// x_t, a mildly nonlinear prediction model, a nonlinear process model, two
// sensors and `comm` communication sources.
inline FusionProblem random_problem(std::mt19937_64& rng, int nx, int comm, double curvature = 0.1) {
  const Eigen::Index n = 2 * nx;
  std::normal_distribution<double> nd(0.0, 1.0);
  const Vector truth = random_vector(rng, n);
  FusionProblem p(n);

  Matrix mpr = Matrix::Zero(nx, n);
  mpr.rightCols(nx).setIdentity();
  const Matrix prior_cov = random_spd(rng, nx, 0.5);
  p.add(InformationSource::linear(
      "prior", SourceKind::prior,
      LinearObservation(mpr, GaussianEstimate(truth.tail(nx) + 0.3 * random_vector(rng, nx), prior_cov))));

  const double c = curvature;
  Matrix pred_cov = Matrix::Identity(nx, nx) * 0.25;
  auto pred_f = [nx, c](const Vector& x) -> Vector {
    return x.head(nx) - x.tail(nx) - c * x.tail(nx).array().sin().matrix();
  };
  auto pred_j = [nx, n, c](const Vector& x) -> Matrix {
    Matrix j = Matrix::Zero(nx, n);
    j.leftCols(nx).setIdentity();
    j.rightCols(nx) = -Matrix::Identity(nx, nx);
    j.rightCols(nx).diagonal() -= c * x.tail(nx).array().cos().matrix();
    return j;
  };
  p.add(InformationSource::implicit("pred", SourceKind::prediction_model,
                                    std::make_shared<FunctionModel>(n, pred_cov, pred_f, pred_j)));

  const Matrix a = random_matrix(rng, 2, n);
  const Vector f_truth = a * truth + c * Vector{{truth(0) * truth(1 % n), truth(n - 1) * truth(n - 1)}};
  auto proc_f = [a, c, n, f_truth](const Vector& x) -> Vector {
    return a * x + c * Vector{{x(0) * x(1 % n), x(n - 1) * x(n - 1)}} - f_truth;
  };
  auto proc_j = [a, c, n](const Vector& x) -> Matrix {
    Matrix j = a;
    j(0, 0) += c * x(1 % n);
    j(0, 1 % n) += c * x(0);
    j(1, n - 1) += 2.0 * c * x(n - 1);
    return j;
  };
  p.add(InformationSource::implicit("proc", SourceKind::process_model,
                                    std::make_shared<FunctionModel>(n, Matrix::Identity(2, 2) * 0.04,
                                                                    proc_f, proc_j)));

  for (int s = 0; s < 2; ++s) {
    const Matrix m = random_matrix(rng, 2, n);
    const Matrix cov = random_spd(rng, 2, 0.2);
    p.add(InformationSource::linear(
        "sensor" + std::to_string(s), SourceKind::sensor,
        LinearObservation(m, GaussianEstimate(m * truth + 0.2 * random_vector(rng, 2), cov))));
  }
  for (int k = 0; k < comm; ++k) {
    const int rows = 1 + static_cast<int>(rng() % 2);
    const Matrix m = random_matrix(rng, rows, n);
    const Matrix cov = random_spd(rng, rows, 0.2);
    p.add(InformationSource::linear(
        "comm" + std::to_string(k), SourceKind::communication,
        LinearObservation(m, GaussianEstimate(m * truth + 0.2 * random_vector(rng, rows), cov))));
  }
  return p;
}

// Largest chunk-wise error of the implicit Jacobian against central
// differences of the re-solved MAP with the returned weights held fixed,
// relative to the whole Jacobian. A source that CI weights to zero has a
// chunk at solver noise level, where a per-chunk ratio means nothing.
inline double implicit_jacobian_fd_error(const FusionProblem& p, const FusionResult& r, double h = 1e-5) {
  const Vector beta = p.beta();
  // The oracle re-solves far past the default stopping rule so that solver
  // tolerance does not dominate the difference quotient.
  const SolveOptions tight{500, 1e-15};
  double scale = 0.0;
  for (const auto& j : r.jac_chunks) scale += j.squaredNorm();
  scale = std::sqrt(scale);
  double worst = 0.0;
  for (std::size_t i = 0; i < p.sources().size(); ++i) {
    const auto off = p.offsets()[i];
    const auto k = p.sources()[i].out_dim();
    Matrix fd(p.dim(), k);
    for (Eigen::Index c = 0; c < k; ++c) {
      Vector bp = beta, bm = beta;
      bp(off + c) += h;
      bm(off + c) -= h;
      const Vector xp = solve_map(p.with_beta(bp), r.ci_weights, r.map, tight);
      const Vector xm = solve_map(p.with_beta(bm), r.ci_weights, r.map, tight);
      fd.col(c) = (xp - xm) / (2.0 * h);
    }
    worst = std::max(worst, (r.jac_chunks[i] - fd).norm() / std::max({fd.norm(), scale, 1e-300}));
  }
  return worst;
}

}  // namespace ant::testing
