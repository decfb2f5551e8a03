#pragma once

// Process and prediction models of the three machines. All models act on
// the concatenated state x* = [x_{t+1}; x_t]: prediction models relate the
// two halves, process models constrain the x_t half.

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "ant/layout.hpp"
#include "ant/mlp.hpp"
#include "ant/model.hpp"

namespace ant {

/// f(x*) = A x*; constant Jacobian, diagonal noise.
class LinearModel : public DifferentiableModel {
 public:
  LinearModel(Matrix a, Vector noise_std);

  Eigen::Index in_dim() const override { return a_.cols(); }
  Eigen::Index out_dim() const override { return a_.rows(); }
  const Matrix& noise_cov() const override { return cov_; }
  Vector evaluate(const Vector& x) const override;
  Matrix jacobian(const Vector& x) const override;
  bool is_linear() const override { return true; }

  const Matrix& matrix() const noexcept { return a_; }

 private:
  Matrix a_;
  Matrix cov_;
};

/// Prediction x_{t+1} from x_t. History coordinates follow the shift
/// register (x_{t+1})_{h+1} = (x_t)_h with std `std_shift`; input
/// coordinates are low-passed with std `std_input`, outputs with
/// `std_rest`. Parameter coordinates get no rows.
std::shared_ptr<LinearModel> lowpass_prediction(const StateLayout& layout, double std_input = 1e-2,
                                                double std_rest = 1.0, double std_shift = 1e-4);

/// Conveyor output rows: out_p = (1 - f) hist_k,p + f hist_{k+1},p with
/// delay = (k + f) dt, std `std_out`. The shift-register rows live in the
/// prediction model (lowpass_prediction on the same layout).
std::shared_ptr<LinearModel> conveyor_model(const StateLayout& layout, double delay_s, double dt_s = 30.0,
                                            double std_out = 1e-4);

/// Interpolation weights (slot k, slot k+1) and k for a delay.
struct DelayWeights {
  int slot = 0;
  double w0 = 1.0;
  double w1 = 0.0;
};
DelayWeights delay_weights(double delay_s, double dt_s, int history_len);

/// Shifted-exponential residence time distribution discretized onto
/// history slots of length dt. An input uniformly spread over window k-h
/// and a residence time T land in window k with probability
/// max(0, 1 - |T/dt - h|), so w_h = E[max(0, 1 - |T/dt - h|)].
struct ResidenceKernel {
  double dead_time = 0.0;  // s
  double tau = 0.0;        // s
  std::vector<double> weights;

  /// Throws ConfigError when the mass within the history is negligible.
  static ResidenceKernel discretize(double dead_time, double tau, int slots, double dt_s = 30.0);
};

/// Fraction of size class p leaving through outlet o: a(p,o) + b(p,o) v,
/// passed through a smooth clamp to [0,1] and divided by a C1 version of
/// max(1, sum), so the fractions of one size sum to at most 1 + 1e-3.
struct SplitCoefficients {
  Matrix a = Matrix::Zero(kSizes, kSizes);  // [size x outlet]
  Matrix b = Matrix::Zero(kSizes, kSizes);

  /// Smooth split fractions at speed v, [size x outlet].
  Matrix fractions(double v, Matrix* d_dv = nullptr) const;
  /// Unclamped linear value.
  Matrix linear(double v) const { return a + b * v; }
};

struct SieverParams {
  std::array<ResidenceKernel, kSizes> kernels;  // per outlet
  SplitCoefficients splits;
  double speed_min = 5.0;
  double speed_max = 21.0;
  double process_std = 2e-3;
};

std::string siever_params_to_json(const SieverParams& p);
SieverParams siever_params_from_json(const std::string& text, int history_len = 8, double dt_s = 30.0);

/// out_{o,p} = split_{p,o}(speed) * sum_h w_{o,h} hist_{h,p} on the x_t half.
class SieverModel : public DifferentiableModel {
 public:
  SieverModel(StateLayout layout, SieverParams params);

  Eigen::Index in_dim() const override { return 2 * n_; }
  Eigen::Index out_dim() const override { return kSizes * kSizes; }
  const Matrix& noise_cov() const override { return cov_; }
  Vector evaluate(const Vector& x) const override;
  Matrix jacobian(const Vector& x) const override;

  const SieverParams& params() const noexcept { return params_; }

 private:
  StateLayout layout_;
  SieverParams params_;
  Eigen::Index n_;
  int history_len_;
  Matrix cov_;
};

/// Magnetic sorter process model on the x_t half. Rows: 4 MLP rows
/// (FM outlet FM, FM outlet NFM, NFM outlet NFM, NFM outlet FM totals
/// against mlp(FM in, NFM in, height)), 6 mass conservation rows, 2 input
/// independence rows, 6 output independence rows.
class MagsorterModel : public DifferentiableModel {
 public:
  MagsorterModel(MlpModel mlp, Matrix mlp_cov, double conservation_var = 1e-4,
                 double independence_var = 1e-8);

  static constexpr Eigen::Index kRows = 18;

  Eigen::Index in_dim() const override { return 2 * n_; }
  Eigen::Index out_dim() const override { return kRows; }
  const Matrix& noise_cov() const override { return cov_; }
  Vector evaluate(const Vector& x) const override;
  Matrix jacobian(const Vector& x) const override;

  const MlpModel& mlp() const noexcept { return mlp_; }

 private:
  MlpModel mlp_;
  Eigen::Index n_;
  Matrix cov_;
};

/// One recorded step response of an outlet: times since the input step (s)
/// and the outlet flow normalized by its steady-state value.
struct StepRecording {
  std::vector<double> t;
  std::vector<double> y;
};

/// Fits y = 1 - exp(-(t - dead_time) / tau) for t >= dead_time:
/// log-linear regression on the transient, refined by Gauss-Newton.
ResidenceKernel fit_step_response(const StepRecording& rec, int slots = 8, double dt_s = 30.0);

/// One point of a speed sweep: fraction of size p leaving through outlet o.
struct SplitSample {
  double speed;
  int size;
  int outlet;
  double fraction;
};

/// Per (size, outlet) least-squares line in speed.
SplitCoefficients fit_splits(const std::vector<SplitSample>& samples);

}  // namespace ant
