#include "ant/fusion.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>

namespace ant {

namespace {

constexpr double kZBound = 25.0;
constexpr double kGoldenTolerance = 1e-8;

std::string dims(Eigen::Index a, Eigen::Index b) {
  return std::to_string(a) + " vs " + std::to_string(b);
}

bool is_local(SourceKind k) {
  return k == SourceKind::prior || k == SourceKind::process_model || k == SourceKind::parameter ||
         k == SourceKind::sensor;
}

// Evaluates F_i(x) - beta_i for one source.
Vector raw_residual(const InformationSource& s, const Vector& x) {
  if (!s.is_model()) return s.observation.matrix * x - s.observation.value.mean();
  Vector f;
  try {
    f = s.model->evaluate(x);
  } catch (const Error& e) {
    throw ModelEvaluationError(s.id, e.what());
  } catch (const std::exception& e) {
    throw ModelEvaluationError(s.id, e.what());
  }
  if (f.size() != s.model->out_dim()) throw ModelEvaluationError(s.id, "wrong residual length");
  if (!f.allFinite()) throw ModelEvaluationError(s.id, "non-finite residual");
  if (s.model_offset.size() == f.size()) f -= s.model_offset;
  return f;
}

Matrix raw_jacobian(const InformationSource& s, const Vector& x) {
  if (!s.is_model()) return s.observation.matrix;
  Matrix j;
  try {
    j = s.model->jacobian(x);
  } catch (const std::exception& e) {
    throw ModelEvaluationError(s.id, e.what());
  }
  if (j.rows() != s.model->out_dim() || j.cols() != x.size())
    throw ModelEvaluationError(s.id, "wrong Jacobian shape");
  if (!j.allFinite()) throw ModelEvaluationError(s.id, "non-finite Jacobian");
  return j;
}

struct Residual {
  Vector r;
  Matrix j;
};

Residual evaluate(const FusionProblem& p, const CiWeights& w, const Vector& x, bool jac) {
  Residual out;
  out.r.resize(p.residual_dim());
  if (jac) out.j.resize(p.residual_dim(), p.dim());
  const auto& src = p.sources();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double sw = std::sqrt(w.weight_for(src[i]));
    const auto off = p.offsets()[i];
    const auto m = src[i].out_dim();
    out.r.segment(off, m).noalias() = sw * (p.whitening(i) * raw_residual(src[i], x));
    if (jac) out.j.middleRows(off, m).noalias() = sw * (p.whitening(i) * raw_jacobian(src[i], x));
  }
  return out;
}

// Gauss-Newton step minimizing |J dx + r|^2 + lambda |dx|^2. Returns false
// when the undamped system is rank deficient.
bool damped_step(const Matrix& j, const Vector& r, double lambda, Vector& dx) {
  const auto n = j.cols();
  if (lambda == 0.0) {
    Eigen::ColPivHouseholderQR<Matrix> qr(j);
    if (qr.rank() < n) return false;
    dx = qr.solve(-r);
  } else {
    Matrix a(j.rows() + n, n);
    a << j, std::sqrt(lambda) * Matrix::Identity(n, n);
    Vector b = Vector::Zero(j.rows() + n);
    b.head(j.rows()) = -r;
    dx = a.householderQr().solve(b);
  }
  return dx.allFinite();
}

Vector solve_impl(const FusionProblem& p, const CiWeights& w, const Vector& x0, const SolveOptions& opt,
                  int* iterations) {
  p.validate();
  if (x0.size() != p.dim()) throw DimensionMismatch("initial point: " + dims(x0.size(), p.dim()));
  if (!x0.allFinite()) throw NonFiniteResidual("initial point is not finite");

  Vector x = x0;
  Residual cur = evaluate(p, w, x, true);
  if (!cur.r.allFinite()) throw NonFiniteResidual("residual at initial point is not finite");
  double chi2 = cur.r.squaredNorm();
  double lambda = 0.0;
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    const Vector grad = 2.0 * cur.j.transpose() * cur.r;
    if (grad.lpNorm<Eigen::Infinity>() <= opt.gradient_tolerance * std::max(1.0, chi2)) break;
    const double scale = std::max(cur.j.colwise().squaredNorm().maxCoeff(), 1e-300);

    Vector dx;
    Residual next;
    double next_chi2 = chi2;
    bool accepted = false;
    while (!accepted) {
      if (lambda > 1e16 * scale) break;
      if (!damped_step(cur.j, cur.r, lambda, dx)) {
        lambda = lambda == 0.0 ? 1e-9 * scale : 2.0 * lambda;
        continue;
      }
      next = evaluate(p, w, x + dx, true);
      next_chi2 = next.r.squaredNorm();
      // Near the minimum chi^2 differences drown in rounding; there a step
      // is also accepted when it shrinks the gradient.
      if (std::isfinite(next_chi2) &&
          (next_chi2 < chi2 ||
           (next_chi2 <= chi2 * (1.0 + 1e-12) &&
            (next.j.transpose() * next.r).lpNorm<Eigen::Infinity>() < 0.5 * grad.lpNorm<Eigen::Infinity>()))) {
        accepted = true;
      } else {
        lambda = lambda == 0.0 ? 1e-9 * scale : 2.0 * lambda;
      }
    }
    if (!accepted) {
      if (!grad.allFinite()) throw SingularNormalEquations("damping escalation failed");
      break;
    }
    x += dx;
    cur = std::move(next);
    chi2 = next_chi2;
    lambda /= 3.0;
    if (lambda < 1e-12 * scale) lambda = 0.0;
    if (dx.lpNorm<Eigen::Infinity>() <= 1e-15 * (1.0 + x.lpNorm<Eigen::Infinity>())) {
      ++it;
      break;
    }
  }
  if (iterations) *iterations = it;
  return x;
}

// QR of the weighted whitened Jacobian at the MAP, shared by the posterior
// covariance and the implicit Jacobian.
struct Linearization {
  Eigen::ColPivHouseholderQR<Matrix> qr;
  Vector residual;
  Eigen::Index n = 0;
  double chi2 = 0.0;

  Linearization(const FusionProblem& p, const CiWeights& w, const Vector& map) {
    if (map.size() != p.dim()) throw DimensionMismatch("MAP: " + dims(map.size(), p.dim()));
    Residual res = evaluate(p, w, map, true);
    residual = std::move(res.r);
    chi2 = residual.squaredNorm();
    n = p.dim();
    if (res.j.rows() >= n) qr.compute(res.j);
    if (res.j.rows() < n || qr.rank() < n) {
      std::vector<std::size_t> uninformed;
      for (Eigen::Index c = 0; c < n; ++c)
        if (res.j.col(c).squaredNorm() == 0.0) uninformed.push_back(static_cast<std::size_t>(c));
      std::string list;
      for (auto c : uninformed) list += (list.empty() ? "" : ",") + std::to_string(c);
      const auto rank = res.j.rows() < n ? std::min(res.j.rows(), n) : qr.rank();
      throw SingularInformation("information matrix has rank " + std::to_string(rank) + " of " +
                                    std::to_string(n) +
                                    (list.empty() ? "" : "; uninformed coordinates: " + list),
                                std::move(uninformed));
    }
  }

  auto r_factor() const { return qr.matrixQR().topLeftCorner(n, n).triangularView<Eigen::Upper>(); }

  Matrix covariance() const {
    Matrix rinv = Matrix::Identity(n, n);
    r_factor().solveInPlace(rinv);
    Matrix c = rinv * rinv.transpose();
    c = qr.colsPermutation() * c * qr.colsPermutation().transpose();
    return symmetrized(c);
  }

  // Sum over model sources of their Hessians contracted with the whitened
  // residual: the part of the chi^2 / 2 Hessian that Gauss-Newton drops.
  Matrix second_order(const FusionProblem& p, const CiWeights& w, const Vector& map) const {
    Matrix s = Matrix::Zero(n, n);
    for (std::size_t i = 0; i < p.sources().size(); ++i) {
      const auto& src = p.sources()[i];
      if (!src.is_model() || src.model->is_linear()) continue;
      const double sw = std::sqrt(w.weight_for(src));
      if (sw == 0.0) continue;
      const Vector v = sw * (p.whitening(i).transpose() * residual.segment(p.offsets()[i], src.out_dim()));
      try {
        s += src.model->second_order(map, v);
      } catch (const std::exception& e) {
        throw ModelEvaluationError(src.id, e.what());
      }
    }
    return s;
  }

  // H^-1 J^T D with D = blockdiag(sqrt(w) L) and H = J^T J (+ S). With
  // J = Q R P^T this is P R^-1 (I + E)^-1 Q1^T D, E = R^-T P^T S P R^-1.
  std::vector<Matrix> chunks(const FusionProblem& p, const CiWeights& w, const Vector& map,
                             JacobianMode mode, bool* exact) const {
    const auto m = p.residual_dim();
    Matrix d = Matrix::Zero(m, m);
    for (std::size_t i = 0; i < p.sources().size(); ++i) {
      const auto off = p.offsets()[i];
      const auto k = p.sources()[i].out_dim();
      d.block(off, off, k, k) = std::sqrt(w.weight_for(p.sources()[i])) * p.whitening(i);
    }
    Matrix top = (qr.householderQ().transpose() * d).topRows(n);

    bool used_exact = false;
    if (mode == JacobianMode::exact) {
      const Matrix s = second_order(p, w, map);
      if (s.squaredNorm() > 0.0) {
        Matrix e = qr.colsPermutation().transpose() * s * qr.colsPermutation();
        e = qr.matrixQR().topLeftCorner(n, n).transpose().triangularView<Eigen::Lower>().solve(e);
        e.transposeInPlace();
        e = qr.matrixQR().topLeftCorner(n, n).transpose().triangularView<Eigen::Lower>().solve(e);
        Matrix a = Matrix::Identity(n, n) + symmetrized(e);
        Eigen::LLT<Matrix> llt(a);
        if (llt.info() == Eigen::Success && llt.matrixLLT().diagonal().minCoeff() > 1e-6) {
          llt.solveInPlace(top);
          used_exact = true;
        }
      } else {
        used_exact = true;
      }
    }
    if (exact) *exact = used_exact;

    r_factor().solveInPlace(top);
    const Matrix full = qr.colsPermutation() * top;
    std::vector<Matrix> out;
    out.reserve(p.sources().size());
    for (std::size_t i = 0; i < p.sources().size(); ++i)
      out.push_back(full.middleCols(p.offsets()[i], p.sources()[i].out_dim()));
    return out;
  }
};

struct GroupInfo {
  Matrix local;
  Matrix pred;
  std::vector<Matrix> comm;
};

GroupInfo group_information(const FusionProblem& p, const Vector& x,
                            const std::vector<std::string>& comm) {
  GroupInfo g;
  const auto n = p.dim();
  g.local = Matrix::Zero(n, n);
  g.pred = Matrix::Zero(n, n);
  g.comm.assign(comm.size(), Matrix::Zero(n, n));
  for (std::size_t i = 0; i < p.sources().size(); ++i) {
    const auto& s = p.sources()[i];
    const Matrix j = p.whitening(i) * raw_jacobian(s, x);
    Matrix* target = nullptr;
    if (is_local(s.kind)) {
      target = &g.local;
    } else if (s.kind == SourceKind::prediction_model) {
      target = &g.pred;
    } else {
      const auto pos = std::find(comm.begin(), comm.end(), s.id) - comm.begin();
      target = &g.comm[static_cast<std::size_t>(pos)];
    }
    target->selfadjointView<Eigen::Lower>().rankUpdate(j.transpose());
  }
  g.local = g.local.selfadjointView<Eigen::Lower>();
  g.pred = g.pred.selfadjointView<Eigen::Lower>();
  for (auto& c : g.comm) c = c.selfadjointView<Eigen::Lower>();
  return g;
}

// log det Gamma_post = -log det(sum_g w_g H_g).
double log_det_posterior(const GroupInfo& g, double w_local, const std::vector<double>& w_comm) {
  Matrix h = w_local * g.local + g.pred;
  for (std::size_t i = 0; i < w_comm.size(); ++i) h += w_comm[i] * g.comm[i];
  Eigen::LLT<Matrix> llt(h);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  const auto d = llt.matrixLLT().diagonal();
  if (!(d.minCoeff() > 0.0)) return std::numeric_limits<double>::infinity();
  const double v = -2.0 * d.array().log().sum();
  return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
}

std::vector<double> softmax_comm(const std::vector<double>& z, double& w_local) {
  double zmax = 0.0;
  for (double v : z) zmax = std::max(zmax, v);
  double sum = std::exp(-zmax);
  std::vector<double> e(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) sum += e[i] = std::exp(z[i] - zmax);
  double s = 0.0;
  for (auto& v : e) s += v /= sum;
  w_local = std::max(0.0, 1.0 - s);
  return e;
}

template <class F>
double golden_section(F&& f, double lo, double hi, double tol) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return fc <= fd ? c : d;
}

}  // namespace

const char* to_string(SourceKind kind) {
  switch (kind) {
    case SourceKind::prior: return "prior";
    case SourceKind::process_model: return "process_model";
    case SourceKind::prediction_model: return "prediction_model";
    case SourceKind::parameter: return "parameter";
    case SourceKind::sensor: return "sensor";
    case SourceKind::communication: return "communication";
  }
  return "unknown";
}

InformationSource InformationSource::linear(std::string id, SourceKind kind, LinearObservation obs) {
  if (kind == SourceKind::process_model || kind == SourceKind::prediction_model)
    throw ConfigError("source '" + id + "': model kinds need a model");
  InformationSource s;
  s.id = std::move(id);
  s.kind = kind;
  s.observation = std::move(obs);
  return s;
}

InformationSource InformationSource::implicit(std::string id, SourceKind kind,
                                              std::shared_ptr<const DifferentiableModel> model) {
  if (kind != SourceKind::process_model && kind != SourceKind::prediction_model)
    throw ConfigError("source '" + id + "': only model kinds take a model");
  if (!model) throw ConfigError("source '" + id + "': null model");
  InformationSource s;
  s.id = std::move(id);
  s.kind = kind;
  s.model = std::move(model);
  return s;
}

Eigen::Index InformationSource::out_dim() const {
  return is_model() ? model->out_dim() : observation.matrix.rows();
}

const Matrix& InformationSource::cov() const {
  return is_model() ? model->noise_cov() : observation.value.cov();
}

Vector InformationSource::beta() const {
  if (!is_model()) return observation.value.mean();
  if (model_offset.size() == model->out_dim()) return model_offset;
  return Vector::Zero(model->out_dim());
}

double CiWeights::weight_for(const InformationSource& s) const {
  if (is_local(s.kind)) return w_local;
  if (s.kind == SourceKind::prediction_model) return w_pred;
  const auto it = w_comm.find(s.id);
  if (it == w_comm.end()) throw ConfigError("no CI weight for communication source '" + s.id + "'");
  return it->second;
}

CiWeights CiWeights::unit(const std::vector<std::string>& comm_ids) {
  CiWeights w;
  for (const auto& id : comm_ids) w.w_comm[id] = 1.0;
  return w;
}

FusionProblem::FusionProblem(Eigen::Index dim) : dim_(dim) {
  if (dim <= 0) throw DimensionMismatch("fusion problem needs a positive dimension");
}

void FusionProblem::add(InformationSource s) {
  if (s.is_model()) {
    if (s.model->in_dim() != dim_)
      throw DimensionMismatch("model '" + s.id + "' input: " + dims(s.model->in_dim(), dim_));
  } else if (s.observation.matrix.cols() != dim_) {
    throw DimensionMismatch("source '" + s.id + "' columns: " + dims(s.observation.matrix.cols(), dim_));
  }
  for (const auto& o : sources_) {
    if (o.id == s.id) throw ConfigError("duplicate source id '" + s.id + "'");
    if (s.kind == SourceKind::prediction_model && o.kind == SourceKind::prediction_model)
      throw ConfigError("at most one prediction model per problem");
    if (s.kind == SourceKind::prior && o.kind == SourceKind::prior)
      throw ConfigError("exactly one prior per problem");
  }
  whitening_.push_back(whitening_from_cov(s.cov()));
  offsets_.push_back(offsets_.back() + s.out_dim());
  sources_.push_back(std::move(s));
}

Vector FusionProblem::beta() const {
  Vector b(residual_dim());
  for (std::size_t i = 0; i < sources_.size(); ++i)
    b.segment(offsets_[i], sources_[i].out_dim()) = sources_[i].beta();
  return b;
}

FusionProblem FusionProblem::with_beta(const Vector& beta) const {
  if (beta.size() != residual_dim()) throw DimensionMismatch("beta: " + dims(beta.size(), residual_dim()));
  FusionProblem copy = *this;
  for (std::size_t i = 0; i < copy.sources_.size(); ++i) {
    auto& s = copy.sources_[i];
    const Vector chunk = beta.segment(offsets_[i], s.out_dim());
    if (s.is_model())
      s.model_offset = chunk;
    else
      s.observation.value = GaussianEstimate::trusted(chunk, s.observation.value.cov());
  }
  return copy;
}

std::vector<std::string> FusionProblem::comm_ids() const {
  std::vector<std::string> ids;
  for (const auto& s : sources_)
    if (s.kind == SourceKind::communication) ids.push_back(s.id);
  return ids;
}

std::optional<std::size_t> FusionProblem::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < sources_.size(); ++i)
    if (sources_[i].id == id) return i;
  return std::nullopt;
}

void FusionProblem::validate() const {
  const auto priors = std::count_if(sources_.begin(), sources_.end(),
                                    [](const auto& s) { return s.kind == SourceKind::prior; });
  if (priors != 1) throw ConfigError("fusion problem needs exactly one prior");
}

Assembled assemble_residual(const FusionProblem& problem, const CiWeights& weights, const Vector& x,
                            bool with_beta_jacobian) {
  if (x.size() != problem.dim()) throw DimensionMismatch("state: " + dims(x.size(), problem.dim()));
  Residual r = evaluate(problem, weights, x, true);
  Assembled a{std::move(r.r), std::move(r.j), Matrix()};
  if (with_beta_jacobian) {
    const auto m = problem.residual_dim();
    a.jac_beta = Matrix::Zero(m, m);
    for (std::size_t i = 0; i < problem.sources().size(); ++i) {
      const auto off = problem.offsets()[i];
      const auto k = problem.sources()[i].out_dim();
      a.jac_beta.block(off, off, k, k) =
          -std::sqrt(weights.weight_for(problem.sources()[i])) * problem.whitening(i);
    }
  }
  return a;
}

Vector solve_map(const FusionProblem& problem, const CiWeights& weights, const Vector& x0,
                 const SolveOptions& options) {
  return solve_impl(problem, weights, x0, options, nullptr);
}

Matrix posterior_covariance(const FusionProblem& problem, const CiWeights& weights, const Vector& map) {
  return Linearization(problem, weights, map).covariance();
}

std::vector<Matrix> implicit_jacobian(const FusionProblem& problem, const CiWeights& weights,
                                      const Vector& map, JacobianMode mode) {
  return Linearization(problem, weights, map).chunks(problem, weights, map, mode, nullptr);
}

double ci_objective(const FusionProblem& problem, const CiWeights& weights, const Vector& x) {
  const auto comm = problem.comm_ids();
  const GroupInfo g = group_information(problem, x, comm);
  std::vector<double> wc;
  for (const auto& id : comm) wc.push_back(weights.w_comm.at(id));
  return log_det_posterior(g, weights.w_local, wc);
}

CiWeights ci_optimize_weights(const FusionProblem& problem, const Vector& map_naive) {
  const auto comm = problem.comm_ids();
  CiWeights out;
  if (comm.empty()) return out;
  const GroupInfo g = group_information(problem, map_naive, comm);

  std::vector<double> z(comm.size(), 0.0);
  auto objective = [&](const std::vector<double>& zz) {
    double wl;
    const auto wc = softmax_comm(zz, wl);
    return log_det_posterior(g, wl, wc);
  };
  double best = objective(z);
  for (int sweep = 0; sweep < 100; ++sweep) {
    const double before = best;
    for (std::size_t j = 0; j < z.size(); ++j) {
      auto line = [&](double v) {
        auto zz = z;
        zz[j] = v;
        return objective(zz);
      };
      const double cand = golden_section(line, -kZBound, kZBound, kGoldenTolerance);
      const double fc = line(cand);
      if (fc < best) {
        best = fc;
        z[j] = cand;
      }
    }
    if (!(before - best > 1e-13 * std::max(1.0, std::abs(best)))) break;
  }

  double wl;
  std::vector<double> wc = softmax_comm(z, wl);

  // Tie-break: move toward the pure-local vertex while log det stays flat.
  auto along = [&](double t) {
    std::vector<double> c(wc.size());
    for (std::size_t i = 0; i < wc.size(); ++i) c[i] = (1.0 - t) * wc[i];
    return log_det_posterior(g, (1.0 - t) * wl + t, c);
  };
  const double tol = 1e-12 * std::max(1.0, std::abs(best));
  double t = 0.0;
  if (std::isfinite(best)) {
    if (along(1.0) <= best + tol) {
      t = 1.0;
    } else {
      double lo = 0.0, hi = 1.0;
      for (int k = 0; k < 60; ++k) {
        const double mid = 0.5 * (lo + hi);
        (along(mid) <= best + tol ? lo : hi) = mid;
      }
      t = lo;
    }
  }
  double sum_comm = 0.0;
  for (std::size_t i = 0; i < comm.size(); ++i) {
    const double v = t == 1.0 ? 0.0 : (1.0 - t) * wc[i];
    out.w_comm[comm[i]] = v;
    sum_comm += v;
  }
  out.w_local = std::max(0.0, 1.0 - sum_comm);
  out.w_pred = 1.0;
  return out;
}

const Matrix& FusionResult::chunk(const std::string& source_id) const {
  for (std::size_t i = 0; i < source_ids.size(); ++i)
    if (source_ids[i] == source_id) return jac_chunks[i];
  throw ConfigError("no Jacobian chunk for source '" + source_id + "'");
}

FusionResult fuse(const FusionProblem& problem, const Vector& x0, JacobianMode mode) {
  problem.validate();
  const auto comm = problem.comm_ids();
  FusionResult res;
  int it_naive = 0, it_final = 0;
  const CiWeights unit = CiWeights::unit(comm);
  Vector map = solve_impl(problem, unit, x0, SolveOptions{}, &it_naive);
  res.ci_weights = unit;
  if (!comm.empty()) {
    res.ci_weights = ci_optimize_weights(problem, map);
    map = solve_impl(problem, res.ci_weights, map, SolveOptions{}, &it_final);
  }
  const Linearization lin(problem, res.ci_weights, map);
  res.map = map;
  res.post_cov = lin.covariance();
  res.chi2 = lin.chi2;
  res.jac_chunks = lin.chunks(problem, res.ci_weights, res.map, mode, &res.exact_jacobian);
  for (const auto& s : problem.sources()) res.source_ids.push_back(s.id);
  res.iterations = it_naive + it_final;
  return res;
}

}  // namespace ant
