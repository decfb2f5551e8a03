#include "ant/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "json_util.hpp"

namespace ant {

namespace {

struct Trace {
  std::vector<Vector> pre;   // pre-activations of hidden layers
  std::vector<Vector> post;  // activations, post[0] is the scaled input
};

Vector run(const MlpModel& m, const Vector& z, Trace* trace) {
  Vector a = z;
  if (trace) trace->post.push_back(a);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    Vector s = m.layers[l].weight * a + m.layers[l].bias;
    if (l + 1 == m.layers.size()) return s;
    if (trace) trace->pre.push_back(s);
    a = s.array().tanh();
    if (trace) trace->post.push_back(a);
  }
  return a;
}

Vector scale_in(const MlpModel& m, const Vector& x) {
  return ((x - m.in_mean).array() / m.in_scale.array()).matrix();
}

}  // namespace

MlpModel MlpModel::random(const std::vector<int>& widths, std::uint64_t seed) {
  if (widths.size() < 2) throw ConfigError("MLP needs at least input and output widths");
  std::mt19937_64 rng(seed);
  MlpModel m;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int in = widths[l], out = widths[l + 1];
    if (in <= 0 || out <= 0) throw ConfigError("MLP widths must be positive");
    const double limit = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> u(-limit, limit);
    MlpLayer layer{Matrix(out, in), Vector::Zero(out)};
    for (int j = 0; j < in; ++j)
      for (int i = 0; i < out; ++i) layer.weight(i, j) = u(rng);
    m.layers.push_back(std::move(layer));
  }
  m.in_mean = Vector::Zero(widths.front());
  m.in_scale = Vector::Ones(widths.front());
  m.out_mean = Vector::Zero(widths.back());
  m.out_scale = Vector::Ones(widths.back());
  return m;
}

void MlpModel::validate() const {
  if (layers.empty()) throw ConfigError("MLP has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].bias.size() != layers[l].weight.rows())
      throw DimensionMismatch("MLP layer " + std::to_string(l) + " bias size");
    if (l > 0 && layers[l].weight.cols() != layers[l - 1].weight.rows())
      throw DimensionMismatch("MLP layer " + std::to_string(l) + " input width");
    if (!layers[l].weight.allFinite() || !layers[l].bias.allFinite())
      throw ConfigError("MLP layer " + std::to_string(l) + " has non-finite parameters");
  }
  if (in_mean.size() != in_dim() || in_scale.size() != in_dim() || out_mean.size() != out_dim() ||
      out_scale.size() != out_dim())
    throw DimensionMismatch("MLP standardization size");
  if ((in_scale.array() <= 0.0).any() || (out_scale.array() <= 0.0).any())
    throw ConfigError("MLP standardization scales must be positive");
}

Vector mlp_forward(const MlpModel& mlp, const Vector& input) {
  if (input.size() != mlp.in_dim()) throw DimensionMismatch("MLP input size");
  const Vector y = run(mlp, scale_in(mlp, input), nullptr);
  return (y.array() * mlp.out_scale.array()).matrix() + mlp.out_mean;
}

Matrix mlp_jacobian(const MlpModel& mlp, const Vector& input) {
  if (input.size() != mlp.in_dim()) throw DimensionMismatch("MLP input size");
  Trace t;
  run(mlp, scale_in(mlp, input), &t);
  // Forward-mode accumulation; widths are tiny.
  Matrix j = mlp.in_scale.cwiseInverse().asDiagonal();
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    j = mlp.layers[l].weight * j;
    if (l + 1 < mlp.layers.size()) {
      const Vector d = 1.0 - t.post[l + 1].array().square();
      j = d.asDiagonal() * j;
    }
  }
  return mlp.out_scale.asDiagonal() * j;
}

MlpTrainResult mlp_train(const Matrix& inputs, const Matrix& targets, std::uint64_t seed,
                         const MlpTrainOptions& opt) {
  const auto n = inputs.rows();
  if (n == 0) throw ConfigError("empty training set");
  if (targets.rows() != n) throw DimensionMismatch("inputs and targets differ in sample count");
  if (!inputs.allFinite() || !targets.allFinite()) throw ConfigError("training data has non-finite values");
  const auto n_val = static_cast<Eigen::Index>(std::floor(opt.validation_fraction * static_cast<double>(n)));
  if (n - n_val < 2 || n_val < 2) throw ConfigError("training set too small for the validation split");

  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::vector<Eigen::Index> val(order.begin(), order.begin() + n_val);
  std::vector<Eigen::Index> train(order.begin() + n_val, order.end());

  std::vector<int> widths{static_cast<int>(inputs.cols())};
  widths.insert(widths.end(), opt.hidden.begin(), opt.hidden.end());
  widths.push_back(static_cast<int>(targets.cols()));
  MlpModel m = MlpModel::random(widths, rng());

  // standardization from the training rows
  Matrix xt(train.size(), inputs.cols()), yt(train.size(), targets.cols());
  for (std::size_t i = 0; i < train.size(); ++i) {
    xt.row(static_cast<Eigen::Index>(i)) = inputs.row(train[i]);
    yt.row(static_cast<Eigen::Index>(i)) = targets.row(train[i]);
  }
  auto stats = [](const Matrix& a, Vector& mean, Vector& scale) {
    mean = a.colwise().mean().transpose();
    scale = ((a.rowwise() - mean.transpose()).colwise().squaredNorm() / static_cast<double>(a.rows()))
                .cwiseSqrt()
                .transpose();
    for (auto& s : scale) s = s > 1e-12 ? s : 1.0;
  };
  stats(xt, m.in_mean, m.in_scale);
  stats(yt, m.out_mean, m.out_scale);
  const Matrix zx = ((xt.rowwise() - m.in_mean.transpose()).array().rowwise() / m.in_scale.transpose().array());
  const Matrix zy = ((yt.rowwise() - m.out_mean.transpose()).array().rowwise() / m.out_scale.transpose().array());

  const std::size_t L = m.layers.size();
  std::vector<MlpLayer> mw(L), vw(L);
  for (std::size_t l = 0; l < L; ++l) {
    mw[l] = {Matrix::Zero(m.layers[l].weight.rows(), m.layers[l].weight.cols()),
             Vector::Zero(m.layers[l].bias.size())};
    vw[l] = mw[l];
  }
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  long step = 0;
  std::vector<Eigen::Index> idx(train.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(opt.batch_size)) {
      const std::size_t end = std::min(idx.size(), start + static_cast<std::size_t>(opt.batch_size));
      std::vector<MlpLayer> g(L);
      for (std::size_t l = 0; l < L; ++l)
        g[l] = {Matrix::Zero(m.layers[l].weight.rows(), m.layers[l].weight.cols()),
                Vector::Zero(m.layers[l].bias.size())};
      for (std::size_t s = start; s < end; ++s) {
        Trace t;
        const Vector out = run(m, zx.row(idx[s]).transpose(), &t);
        Vector delta = 2.0 * (out - zy.row(idx[s]).transpose()) / static_cast<double>(end - start);
        for (std::size_t l = L; l-- > 0;) {
          g[l].weight.noalias() += delta * t.post[l].transpose();
          g[l].bias += delta;
          if (l > 0) {
            delta = (m.layers[l].weight.transpose() * delta).array() * (1.0 - t.post[l].array().square());
          }
        }
      }
      ++step;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
      for (std::size_t l = 0; l < L; ++l) {
        mw[l].weight = b1 * mw[l].weight + (1 - b1) * g[l].weight;
        mw[l].bias = b1 * mw[l].bias + (1 - b1) * g[l].bias;
        vw[l].weight = b2 * vw[l].weight + (1 - b2) * g[l].weight.cwiseAbs2();
        vw[l].bias = b2 * vw[l].bias + (1 - b2) * g[l].bias.cwiseAbs2();
        m.layers[l].weight.array() -= opt.learning_rate * (mw[l].weight.array() / c1) /
                                      ((vw[l].weight.array() / c2).sqrt() + eps);
        m.layers[l].bias.array() -=
            opt.learning_rate * (mw[l].bias.array() / c1) / ((vw[l].bias.array() / c2).sqrt() + eps);
      }
    }
  }

  MlpTrainResult r;
  Matrix err(val.size(), targets.cols());
  for (std::size_t i = 0; i < val.size(); ++i)
    err.row(static_cast<Eigen::Index>(i)) =
        (mlp_forward(m, inputs.row(val[i]).transpose()) - targets.row(val[i]).transpose()).transpose();
  if (!err.allFinite()) throw TrainingDiverged("validation loss is not finite");
  const Matrix centered = err.rowwise() - err.colwise().mean();
  r.residual_cov = symmetrized(centered.transpose() * centered / static_cast<double>(err.rows() - 1));
  r.validation_rmse = std::sqrt(err.squaredNorm() / static_cast<double>(err.size()));
  double tr = 0.0;
  for (auto i : train) tr += (mlp_forward(m, inputs.row(i).transpose()) - targets.row(i).transpose()).squaredNorm();
  r.train_rmse = std::sqrt(tr / static_cast<double>(train.size() * static_cast<std::size_t>(targets.cols())));
  r.model = std::move(m);
  return r;
}

std::string mlp_to_json(const MlpModel& mlp, const Matrix& residual_cov) {
  mlp.validate();
  nlohmann::json j;
  j["format_version"] = 1;
  j["kind"] = "mlp";
  j["activation"] = "tanh";
  std::vector<int> widths{static_cast<int>(mlp.in_dim())};
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : mlp.layers) {
    widths.push_back(static_cast<int>(l.weight.rows()));
    layers.push_back({{"weight", json_util::matrix(l.weight)}, {"bias", json_util::vector(l.bias)}});
  }
  j["widths"] = widths;
  j["layers"] = layers;
  j["input_mean"] = json_util::vector(mlp.in_mean);
  j["input_scale"] = json_util::vector(mlp.in_scale);
  j["output_mean"] = json_util::vector(mlp.out_mean);
  j["output_scale"] = json_util::vector(mlp.out_scale);
  j["residual_cov"] = json_util::matrix(residual_cov);
  return j.dump(1);
}

MlpModel mlp_from_json(const std::string& text, Matrix* residual_cov) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("MLP file: ") + e.what());
  }
  try {
    if (j.at("format_version").get<int>() != 1) throw ConfigError("unsupported MLP format_version");
    MlpModel m;
    const auto widths = j.at("widths").get<std::vector<int>>();
    const auto& layers = j.at("layers");
    if (layers.size() + 1 != widths.size()) throw ConfigError("MLP widths and layers disagree");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      MlpLayer layer{json_util::to_matrix(layers[l].at("weight")), json_util::to_vector(layers[l].at("bias"))};
      if (layer.weight.rows() != widths[l + 1] || layer.weight.cols() != widths[l])
        throw ConfigError("MLP layer " + std::to_string(l) + " shape disagrees with widths");
      m.layers.push_back(std::move(layer));
    }
    m.in_mean = json_util::to_vector(j.at("input_mean"));
    m.in_scale = json_util::to_vector(j.at("input_scale"));
    m.out_mean = json_util::to_vector(j.at("output_mean"));
    m.out_scale = json_util::to_vector(j.at("output_scale"));
    m.validate();
    if (residual_cov) *residual_cov = json_util::to_matrix(j.at("residual_cov"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("MLP file: ") + e.what());
  }
}

}  // namespace ant
