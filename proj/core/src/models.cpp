#include "ant/models.hpp"

#include <Eigen/LU>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <json.hpp>

#include "json_util.hpp"

namespace ant {

namespace {

constexpr double kClampSharpness = 200.0;
constexpr double kRenormBand = 1e-3;

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
double logistic(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

// Smooth version of clamp(u, 0, 1).
double smooth_clamp(double u, double* du) {
  const double k = kClampSharpness;
  if (du) *du = logistic(k * u) - logistic(k * (u - 1.0));
  return (softplus(k * u) - softplus(k * (u - 1.0))) / k;
}

// C1 version of max(1, s), exact below 1: 1 up to s = 1, quadratic up to
// 1 + 2e, then s - e.
double soft_max_one(double s, double* ds) {
  const double e = kRenormBand;
  if (s <= 1.0) {
    if (ds) *ds = 0.0;
    return 1.0;
  }
  if (s >= 1.0 + 2.0 * e) {
    if (ds) *ds = 1.0;
    return s - e;
  }
  const double z = s - 1.0;
  if (ds) *ds = z / (2.0 * e);
  return 1.0 + z * z / (4.0 * e);
}

}  // namespace

LinearModel::LinearModel(Matrix a, Vector noise_std) : a_(std::move(a)) {
  if (noise_std.size() != a_.rows()) throw DimensionMismatch("linear model noise size");
  if ((noise_std.array() <= 0.0).any()) throw ConfigError("linear model noise std must be positive");
  cov_ = noise_std.array().square().matrix().asDiagonal();
}

Vector LinearModel::evaluate(const Vector& x) const {
  if (x.size() != a_.cols()) throw DimensionMismatch("linear model input size");
  return a_ * x;
}

Matrix LinearModel::jacobian(const Vector& x) const {
  if (x.size() != a_.cols()) throw DimensionMismatch("linear model input size");
  return a_;
}

std::shared_ptr<LinearModel> lowpass_prediction(const StateLayout& layout, double std_input, double std_rest,
                                                double std_shift) {
  const auto n = layout.size();
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;  // (x_{t+1} coord, x_t coord)
  std::vector<double> stds;
  for (Eigen::Index i = 0; i < n; ++i) {
    switch (layout.roles[static_cast<std::size_t>(i)]) {
      case CoordRole::parameter: break;
      case CoordRole::history:
        pairs.emplace_back(i, layout.shift_from[static_cast<std::size_t>(i)]);
        stds.push_back(std_shift);
        break;
      case CoordRole::input:
        pairs.emplace_back(i, i);
        stds.push_back(std_input);
        break;
      case CoordRole::output:
        pairs.emplace_back(i, i);
        stds.push_back(std_rest);
        break;
    }
  }
  Matrix a = Matrix::Zero(static_cast<Eigen::Index>(pairs.size()), 2 * n);
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    a(static_cast<Eigen::Index>(r), pairs[r].first) = 1.0;
    a(static_cast<Eigen::Index>(r), n + pairs[r].second) = -1.0;
  }
  return std::make_shared<LinearModel>(std::move(a), Eigen::Map<const Vector>(stds.data(), static_cast<Eigen::Index>(stds.size())));
}

DelayWeights delay_weights(double delay_s, double dt_s, int history_len) {
  if (!(delay_s >= 0.0) || !(dt_s > 0.0)) throw ConfigError("delay and dt must be non-negative / positive");
  const double u = delay_s / dt_s;
  DelayWeights w;
  w.slot = static_cast<int>(std::floor(u));
  w.w1 = u - w.slot;
  w.w0 = 1.0 - w.w1;
  if (w.slot > history_len - 1 || (w.w1 > 0.0 && w.slot + 1 > history_len - 1))
    throw ConfigError("delay of " + std::to_string(delay_s) + " s exceeds the representable history of " +
                      std::to_string((history_len - 1) * dt_s) + " s");
  return w;
}

std::shared_ptr<LinearModel> conveyor_model(const StateLayout& layout, double delay_s, double dt_s,
                                            double std_out) {
  int history_len = 0;
  while (layout.has("in_h" + std::to_string(history_len) + "_S")) ++history_len;
  const DelayWeights dw = delay_weights(delay_s, dt_s, history_len);
  const auto n = layout.size();
  Matrix a = Matrix::Zero(kSizes, 2 * n);
  for (int p = 0; p < kSizes; ++p) {
    const std::string sz = kSizeNames[p];
    a(p, n + layout.index("out_" + sz)) = 1.0;
    a(p, n + layout.index("in_h" + std::to_string(dw.slot) + "_" + sz)) -= dw.w0;
    if (dw.w1 > 0.0) a(p, n + layout.index("in_h" + std::to_string(dw.slot + 1) + "_" + sz)) -= dw.w1;
  }
  return std::make_shared<LinearModel>(std::move(a), Vector::Constant(kSizes, std_out));
}

ResidenceKernel ResidenceKernel::discretize(double dead_time, double tau, int slots, double dt_s) {
  if (!(dead_time >= 0.0) || !(tau >= 0.0) || slots <= 0 || !(dt_s > 0.0))
    throw ConfigError("residence kernel needs dead_time >= 0, tau >= 0, slots > 0, dt > 0");
  ResidenceKernel k{dead_time, tau, std::vector<double>(static_cast<std::size_t>(slots), 0.0)};
  const double d = dead_time / dt_s;
  if (tau < 1e-9) {
    for (int h = 0; h < slots; ++h) k.weights[static_cast<std::size_t>(h)] = std::max(0.0, 1.0 - std::abs(d - h));
  } else {
    const double lam = dt_s / tau;
    // integral over [a, b] of lam exp(-lam (u - d)) (alpha + beta u)
    auto piece = [&](double a, double b, double alpha, double beta) {
      a = std::max(a, d);
      if (b <= a) return 0.0;
      auto f = [&](double u) { return -std::exp(-lam * (u - d)) * (alpha + beta * u + beta / lam); };
      return f(b) - f(a);
    };
    for (int h = 0; h < slots; ++h)
      k.weights[static_cast<std::size_t>(h)] =
          piece(h - 1.0, h, 1.0 - h, 1.0) + piece(h, h + 1.0, 1.0 + h, -1.0);
  }
  double sum = 0.0;
  for (double w : k.weights) sum += w;
  if (!(sum > 1e-9))
    throw ConfigError("residence kernel (dead time " + std::to_string(dead_time) + " s, tau " +
                      std::to_string(tau) + " s) has no mass inside the history");
  for (double& w : k.weights) w /= sum;
  return k;
}

Matrix SplitCoefficients::fractions(double v, Matrix* d_dv) const {
  Matrix s(kSizes, kSizes);
  if (d_dv) d_dv->resize(kSizes, kSizes);
  for (int p = 0; p < kSizes; ++p) {
    double c[kSizes], dc[kSizes], sum = 0.0, dsum = 0.0;
    for (int o = 0; o < kSizes; ++o) {
      c[o] = smooth_clamp(a(p, o) + b(p, o) * v, &dc[o]);
      dc[o] *= b(p, o);
      sum += c[o];
      dsum += dc[o];
    }
    double dd;
    const double den = soft_max_one(sum, &dd);
    for (int o = 0; o < kSizes; ++o) {
      s(p, o) = c[o] / den;
      if (d_dv) (*d_dv)(p, o) = (dc[o] * den - c[o] * dd * dsum) / (den * den);
    }
  }
  return s;
}

std::string siever_params_to_json(const SieverParams& p) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["kind"] = "siever";
  nlohmann::json ks = nlohmann::json::array();
  for (const auto& k : p.kernels) ks.push_back({{"dead_time", k.dead_time}, {"tau", k.tau}});
  j["kernels"] = ks;
  j["split_a"] = json_util::matrix(p.splits.a);
  j["split_b"] = json_util::matrix(p.splits.b);
  j["speed_min"] = p.speed_min;
  j["speed_max"] = p.speed_max;
  j["process_std"] = p.process_std;
  return j.dump(1);
}

SieverParams siever_params_from_json(const std::string& text, int history_len, double dt_s) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format_version").get<int>() != 1) throw ConfigError("unsupported siever format_version");
    SieverParams p;
    const auto& ks = j.at("kernels");
    if (ks.size() != kSizes) throw ConfigError("siever file needs one kernel per outlet");
    for (int o = 0; o < kSizes; ++o)
      p.kernels[static_cast<std::size_t>(o)] = ResidenceKernel::discretize(
          ks[static_cast<std::size_t>(o)].at("dead_time").get<double>(),
          ks[static_cast<std::size_t>(o)].at("tau").get<double>(), history_len, dt_s);
    p.splits.a = json_util::to_matrix(j.at("split_a"));
    p.splits.b = json_util::to_matrix(j.at("split_b"));
    if (p.splits.a.rows() != kSizes || p.splits.a.cols() != kSizes || p.splits.b.rows() != kSizes ||
        p.splits.b.cols() != kSizes)
      throw ConfigError("siever split matrices must be 3x3");
    p.speed_min = j.value("speed_min", p.speed_min);
    p.speed_max = j.value("speed_max", p.speed_max);
    p.process_std = j.value("process_std", p.process_std);
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("siever file: ") + e.what());
  }
}

SieverModel::SieverModel(StateLayout layout, SieverParams params)
    : layout_(std::move(layout)), params_(std::move(params)), n_(layout_.size()) {
  history_len_ = 0;
  while (layout_.has("in_h" + std::to_string(history_len_) + "_S")) ++history_len_;
  for (const auto& k : params_.kernels)
    if (static_cast<int>(k.weights.size()) != history_len_)
      throw ConfigError("siever kernel length differs from the history length");
  if (!(params_.process_std > 0.0)) throw ConfigError("siever process std must be positive");
  cov_ = Matrix::Identity(out_dim(), out_dim()) * params_.process_std * params_.process_std;
}

Vector SieverModel::evaluate(const Vector& x) const {
  if (x.size() != 2 * n_) throw DimensionMismatch("siever model input size");
  const auto xt = x.tail(n_);
  const double v = xt(n_ - 1);
  const Matrix s = params_.splits.fractions(v);
  Vector r(out_dim());
  for (int o = 0; o < kSizes; ++o) {
    const auto& w = params_.kernels[static_cast<std::size_t>(o)].weights;
    for (int p = 0; p < kSizes; ++p) {
      double conv = 0.0;
      for (int h = 0; h < history_len_; ++h) conv += w[static_cast<std::size_t>(h)] * xt(3 * h + p);
      r(3 * o + p) = xt(3 * history_len_ + 3 * o + p) - s(p, o) * conv;
    }
  }
  return r;
}

Matrix SieverModel::jacobian(const Vector& x) const {
  if (x.size() != 2 * n_) throw DimensionMismatch("siever model input size");
  const auto xt = x.tail(n_);
  const double v = xt(n_ - 1);
  Matrix ds;
  const Matrix s = params_.splits.fractions(v, &ds);
  Matrix j = Matrix::Zero(out_dim(), 2 * n_);
  for (int o = 0; o < kSizes; ++o) {
    const auto& w = params_.kernels[static_cast<std::size_t>(o)].weights;
    for (int p = 0; p < kSizes; ++p) {
      const int row = 3 * o + p;
      double conv = 0.0;
      for (int h = 0; h < history_len_; ++h) {
        conv += w[static_cast<std::size_t>(h)] * xt(3 * h + p);
        j(row, n_ + 3 * h + p) = -s(p, o) * w[static_cast<std::size_t>(h)];
      }
      j(row, n_ + 3 * history_len_ + 3 * o + p) = 1.0;
      j(row, 2 * n_ - 1) = -ds(p, o) * conv;
    }
  }
  return j;
}

namespace {

constexpr int kFM = 0;
constexpr int kNFM = 1;
constexpr Eigen::Index in_idx(int m, int p) { return 3 * m + p; }
constexpr Eigen::Index out_idx(int o, int m, int p) { return 6 + 6 * o + 3 * m + p; }
constexpr Eigen::Index kHeight = 18;
constexpr Eigen::Index kMagsorterDim = 19;

}  // namespace

MagsorterModel::MagsorterModel(MlpModel mlp, Matrix mlp_cov, double conservation_var, double independence_var)
    : mlp_(std::move(mlp)), n_(kMagsorterDim) {
  mlp_.validate();
  if (mlp_.in_dim() != 3 || mlp_.out_dim() != 4)
    throw ConfigError("magnetic sorter MLP must map 3 inputs to 4 outputs");
  if (mlp_cov.rows() != 4 || mlp_cov.cols() != 4) throw ConfigError("MLP residual covariance must be 4x4");
  require_invertible(mlp_cov, "MLP residual covariance");
  if (!(conservation_var > 0.0) || !(independence_var > 0.0))
    throw ConfigError("magnetic sorter variances must be positive");
  cov_ = Matrix::Zero(kRows, kRows);
  cov_.topLeftCorner(4, 4) = symmetrized(mlp_cov);
  cov_.block(4, 4, 6, 6).diagonal().setConstant(conservation_var);
  cov_.bottomRightCorner(8, 8).diagonal().setConstant(independence_var);
}

Vector MagsorterModel::evaluate(const Vector& x) const {
  if (x.size() != 2 * n_) throw DimensionMismatch("magnetic sorter model input size");
  const auto s = x.tail(n_);
  Vector r(kRows);
  auto total_in = [&](int m) { return s(in_idx(m, 0)) + s(in_idx(m, 1)) + s(in_idx(m, 2)); };
  auto total_out = [&](int o, int m) { return s(out_idx(o, m, 0)) + s(out_idx(o, m, 1)) + s(out_idx(o, m, 2)); };
  const Vector y = mlp_forward(mlp_, Vector{{total_in(kFM), total_in(kNFM), s(kHeight)}});
  r(0) = total_out(kFM, kFM) - y(0);
  r(1) = total_out(kFM, kNFM) - y(1);
  r(2) = total_out(kNFM, kNFM) - y(2);
  r(3) = total_out(kNFM, kFM) - y(3);
  for (int m = 0; m < kMaterials; ++m)
    for (int p = 0; p < kSizes; ++p)
      r(4 + 3 * m + p) = s(in_idx(m, p)) - s(out_idx(kFM, m, p)) - s(out_idx(kNFM, m, p));
  const double ns = s(in_idx(kNFM, 0)), nm = s(in_idx(kNFM, 1)), nl = s(in_idx(kNFM, 2));
  const double fs = s(in_idx(kFM, 0)), fm = s(in_idx(kFM, 1)), fl = s(in_idx(kFM, 2));
  r(10) = ns * (nm + fm) - nm * (ns + fs);
  r(11) = nm * (nl + fl) - nl * (nm + fm);
  for (int o = 0; o < kMaterials; ++o) {
    const double ft = total_out(o, kFM), nt = total_out(o, kNFM);
    for (int p = 0; p < kSizes; ++p) r(12 + 3 * o + p) = s(out_idx(o, kNFM, p)) * ft - s(out_idx(o, kFM, p)) * nt;
  }
  return r;
}

Matrix MagsorterModel::jacobian(const Vector& x) const {
  if (x.size() != 2 * n_) throw DimensionMismatch("magnetic sorter model input size");
  const auto s = x.tail(n_);
  Matrix j = Matrix::Zero(kRows, 2 * n_);
  const Eigen::Index off = n_;
  auto total_in = [&](int m) { return s(in_idx(m, 0)) + s(in_idx(m, 1)) + s(in_idx(m, 2)); };
  auto total_out = [&](int o, int m) { return s(out_idx(o, m, 0)) + s(out_idx(o, m, 1)) + s(out_idx(o, m, 2)); };

  const Matrix jm = mlp_jacobian(mlp_, Vector{{total_in(kFM), total_in(kNFM), s(kHeight)}});
  const std::pair<int, int> mlp_rows[4] = {{kFM, kFM}, {kFM, kNFM}, {kNFM, kNFM}, {kNFM, kFM}};
  for (int r = 0; r < 4; ++r) {
    for (int p = 0; p < kSizes; ++p) {
      j(r, off + out_idx(mlp_rows[r].first, mlp_rows[r].second, p)) = 1.0;
      j(r, off + in_idx(kFM, p)) = -jm(r, 0);
      j(r, off + in_idx(kNFM, p)) = -jm(r, 1);
    }
    j(r, off + kHeight) = -jm(r, 2);
  }
  for (int m = 0; m < kMaterials; ++m)
    for (int p = 0; p < kSizes; ++p) {
      const int r = 4 + 3 * m + p;
      j(r, off + in_idx(m, p)) = 1.0;
      j(r, off + out_idx(kFM, m, p)) = -1.0;
      j(r, off + out_idx(kNFM, m, p)) = -1.0;
    }
  // r10 = ns (nm + fm) - nm (ns + fs) = ns fm - nm fs
  j(10, off + in_idx(kNFM, 0)) = s(in_idx(kFM, 1));
  j(10, off + in_idx(kFM, 1)) = s(in_idx(kNFM, 0));
  j(10, off + in_idx(kNFM, 1)) = -s(in_idx(kFM, 0));
  j(10, off + in_idx(kFM, 0)) = -s(in_idx(kNFM, 1));
  // r11 = nm (nl + fl) - nl (nm + fm) = nm fl - nl fm
  j(11, off + in_idx(kNFM, 1)) = s(in_idx(kFM, 2));
  j(11, off + in_idx(kFM, 2)) = s(in_idx(kNFM, 1));
  j(11, off + in_idx(kNFM, 2)) = -s(in_idx(kFM, 1));
  j(11, off + in_idx(kFM, 1)) = -s(in_idx(kNFM, 2));
  for (int o = 0; o < kMaterials; ++o) {
    const double ft = total_out(o, kFM), nt = total_out(o, kNFM);
    for (int p = 0; p < kSizes; ++p) {
      const int r = 12 + 3 * o + p;
      const double np = s(out_idx(o, kNFM, p)), fp = s(out_idx(o, kFM, p));
      for (int q = 0; q < kSizes; ++q) {
        j(r, off + out_idx(o, kNFM, q)) += (q == p ? ft : 0.0) - fp;
        j(r, off + out_idx(o, kFM, q)) += np - (q == p ? nt : 0.0);
      }
    }
  }
  return j;
}

ResidenceKernel fit_step_response(const StepRecording& rec, int slots, double dt_s) {
  if (rec.t.size() != rec.y.size()) throw DimensionMismatch("step recording t and y differ in length");
  std::vector<double> ts, zs;
  // initial guess from the leading transient only: late noisy samples near
  // the plateau dominate the log transform otherwise
  for (std::size_t i = 0; i < rec.t.size(); ++i) {
    if (rec.y[i] >= 0.9) break;
    if (rec.y[i] > 0.05) {
      ts.push_back(rec.t[i]);
      zs.push_back(-std::log(1.0 - rec.y[i]));
    }
  }
  const std::set<double> distinct(ts.begin(), ts.end());
  if (distinct.size() < 2) throw FitIllConditioned("step response has fewer than two transient samples");
  Matrix a(static_cast<Eigen::Index>(ts.size()), 2);
  Vector z(static_cast<Eigen::Index>(ts.size()));
  for (std::size_t i = 0; i < ts.size(); ++i) {
    a(static_cast<Eigen::Index>(i), 0) = 1.0;
    a(static_cast<Eigen::Index>(i), 1) = ts[i];
    z(static_cast<Eigen::Index>(i)) = zs[i];
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(a);
  if (qr.rank() < 2) throw FitIllConditioned("step response design matrix is rank deficient");
  const Vector c = qr.solve(z);
  if (!(c(1) > 0.0)) throw FitIllConditioned("step response does not rise");
  double tau = 1.0 / c(1);
  double delta = std::max(0.0, -c(0) / c(1));

  // Gauss-Newton refinement on all samples.
  auto sse = [&](double d, double t) {
    double s = 0.0;
    for (std::size_t i = 0; i < rec.t.size(); ++i) {
      const double m = rec.t[i] < d ? 0.0 : 1.0 - std::exp(-(rec.t[i] - d) / t);
      s += (rec.y[i] - m) * (rec.y[i] - m);
    }
    return s;
  };
  double cur = sse(delta, tau);
  for (int it = 0; it < 100; ++it) {
    Eigen::Matrix2d h = Eigen::Matrix2d::Zero();
    Eigen::Vector2d g = Eigen::Vector2d::Zero();
    for (std::size_t i = 0; i < rec.t.size(); ++i) {
      if (rec.t[i] < delta) continue;
      const double e = std::exp(-(rec.t[i] - delta) / tau);
      const double r = rec.y[i] - (1.0 - e);
      const Eigen::Vector2d jr(-e / tau, -e * (rec.t[i] - delta) / (tau * tau));  // d model / d (delta, tau)
      h += jr * jr.transpose();
      g += jr * r;
    }
    if (h.determinant() <= 0.0) break;
    Eigen::Vector2d step = h.ldlt().solve(g);
    double scale = 1.0;
    bool improved = false;
    for (int k = 0; k < 30; ++k) {
      const double d2 = std::max(0.0, delta + scale * step(0));
      const double t2 = std::max(1e-3, tau + scale * step(1));
      const double s2 = sse(d2, t2);
      if (s2 < cur) {
        improved = cur - s2 > 1e-15 * std::max(cur, 1e-300);
        delta = d2;
        tau = t2;
        cur = s2;
        break;
      }
      scale *= 0.5;
    }
    if (!improved) break;
  }
  return ResidenceKernel::discretize(delta, tau, slots, dt_s);
}

SplitCoefficients fit_splits(const std::vector<SplitSample>& samples) {
  std::map<std::pair<int, int>, std::vector<std::pair<double, double>>> groups;
  for (const auto& s : samples) {
    if (s.size < 0 || s.size >= kSizes || s.outlet < 0 || s.outlet >= kSizes)
      throw ConfigError("split sample size/outlet out of range");
    groups[{s.size, s.outlet}].emplace_back(s.speed, s.fraction);
  }
  SplitCoefficients out;
  for (int p = 0; p < kSizes; ++p)
    for (int o = 0; o < kSizes; ++o) {
      const auto it = groups.find({p, o});
      if (it == groups.end())
        throw FitIllConditioned(std::string("no split samples for size ") + kSizeNames[p] + ", outlet " +
                                kSizeNames[o]);
      const auto& pts = it->second;
      Matrix a(static_cast<Eigen::Index>(pts.size()), 2);
      Vector y(static_cast<Eigen::Index>(pts.size()));
      for (std::size_t i = 0; i < pts.size(); ++i) {
        a(static_cast<Eigen::Index>(i), 0) = 1.0;
        a(static_cast<Eigen::Index>(i), 1) = pts[i].first;
        y(static_cast<Eigen::Index>(i)) = pts[i].second;
      }
      Eigen::ColPivHouseholderQR<Matrix> qr(a);
      if (qr.rank() < 2)
        throw FitIllConditioned(std::string("split fit for size ") + kSizeNames[p] + ", outlet " + kSizeNames[o] +
                                " needs at least two distinct speeds");
      const Vector c = qr.solve(y);
      out.a(p, o) = c(0);
      out.b(p, o) = c(1);
    }
  return out;
}

}  // namespace ant
