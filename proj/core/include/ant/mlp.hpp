#pragma once

// Small tanh feed-forward network with analytic input Jacobian, used as the
// black-box magnetic sorter model.

#include <cstdint>
#include <string>
#include <vector>

#include "ant/mvn.hpp"

namespace ant {

struct MlpLayer {
  Matrix weight;  // [out x in]
  Vector bias;
};

/// y = unscale(L_k(tanh(... tanh(L_1(scale(x)))))). Inputs and outputs are
/// standardized by stored affine transforms; hidden activations are tanh,
/// the output layer is linear.
struct MlpModel {
  std::vector<MlpLayer> layers;
  Vector in_mean, in_scale;
  Vector out_mean, out_scale;

  Eigen::Index in_dim() const { return layers.front().weight.cols(); }
  Eigen::Index out_dim() const { return layers.back().weight.rows(); }

  /// Random Glorot-uniform initialization with identity standardization.
  static MlpModel random(const std::vector<int>& widths, std::uint64_t seed);
  void validate() const;
};

Vector mlp_forward(const MlpModel& mlp, const Vector& input);
/// d output / d input, [out_dim x in_dim].
Matrix mlp_jacobian(const MlpModel& mlp, const Vector& input);

struct MlpTrainOptions {
  std::vector<int> hidden{16, 16};
  int epochs = 400;
  int batch_size = 32;
  double learning_rate = 3e-3;
  double validation_fraction = 0.2;
};

struct MlpTrainResult {
  MlpModel model;
  Matrix residual_cov;   // empirical covariance of validation errors
  double validation_rmse = 0.0;
  double train_rmse = 0.0;
};

/// Adam on mean squared error of standardized outputs. Rows of `inputs`
/// and `targets` are samples. Deterministic for a given seed and row order.
MlpTrainResult mlp_train(const Matrix& inputs, const Matrix& targets, std::uint64_t seed,
                         const MlpTrainOptions& options = {});

/// JSON document with format_version, widths and row-major weights.
std::string mlp_to_json(const MlpModel& mlp, const Matrix& residual_cov);
MlpModel mlp_from_json(const std::string& text, Matrix* residual_cov = nullptr);

}  // namespace ant
