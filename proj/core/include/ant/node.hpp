#pragma once

// ANT node: a finite horizon of time steps, each fused over [x_{t+1}; x_t],
// information exchange with registered neighbors, gradient backpropagation
// through time and to neighbors, and RProp updates of one machine parameter.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ant/fusion.hpp"
#include "ant/layout.hpp"
#include "ant/message.hpp"
#include "ant/rprop.hpp"

namespace ant {

struct NeighborRegistration {
  std::string name;
  /// M_ci: maps the concatenated state onto the agreed exchange format.
  Matrix obs_matrix;
  /// Receive-only registrations (upstream neighbors) get no information
  /// messages; gradients still flow back to them.
  bool send_information = true;
};

/// A sensor reading a linear combination of x_t coordinates (typically a sum
/// of class flows). Noise std is sqrt((rel_std * value)^2 + floor_std^2).
struct SensorBinding {
  std::string id;
  std::string location;  // facility sensor location
  Matrix selector;       // [rows x n] over x_t
  double rel_std = 0.2;
  double floor_std = 1e-3;

  LinearObservation observation(const Vector& value) const;
};

struct ParameterSpec {
  std::string name;
  double lo = 0.0;
  double hi = 1.0;
  double initial = 0.5;
  double obs_std = 1e-3;
};

struct NodeConfig {
  std::string id;
  StateLayout layout;
  std::vector<std::shared_ptr<const DifferentiableModel>> process_models;
  std::shared_ptr<const DifferentiableModel> prediction_model;
  /// Prior of the first step over the non-parameter coordinates of x_t.
  GaussianEstimate initial_prior;
  std::optional<ParameterSpec> parameter;
  std::vector<NeighborRegistration> neighbors;
  std::vector<SensorBinding> sensors;
  double delta_info = 1e-6;  // bits
  double delta_grad = 1e-6;  // relative
  int horizon = 8;
  int history = 4;  // steps kept before the current one
  RpropOptions rprop;
  JacobianMode jacobian_mode = JacobianMode::exact;
};

enum class Period { information, backpropagation };

struct TimeStepRecord {
  std::int64_t index = 0;
  GaussianEstimate prior;
  double parameter = 0.0;
  std::map<std::string, LinearObservation> sensors;
  std::map<std::string, LinearObservation> comms;  // keyed by neighbor
  std::optional<FusionResult> result;
  bool dirty = true;
  bool stale = false;
  bool frozen = false;
  std::map<std::string, GaussianEstimate> sent_cache;  // keyed by neighbor

  // Gradient storage, zeroed when the backpropagation period starts.
  double parameter_gradient = 0.0;
  std::map<std::string, Vector> source_gradients;  // keyed by fusion source id
  std::map<std::string, Vector> pending;           // not yet sent, keyed by neighbor
  std::map<std::string, double> max_sent;          // largest |g|_inf sent, keyed by neighbor
};

class Node {
 public:
  explicit Node(NodeConfig config);

  const std::string& id() const noexcept { return cfg_.id; }
  const NodeConfig& config() const noexcept { return cfg_; }
  Period period() const noexcept { return period_; }
  std::int64_t current_step() const noexcept { return current_; }
  /// Dimension n of x_t.
  Eigen::Index state_dim() const noexcept { return cfg_.layout.size(); }

  /// Sets the current step, appends steps up to current + horizon and drops
  /// steps older than current - history. Returns the created indices.
  std::vector<std::int64_t> ensure_horizon(std::int64_t current);

  /// Adds or overwrites a sensor source. Throws FrozenStep.
  void ingest_sensor(std::int64_t step, const std::string& sensor_id, LinearObservation obs);
  /// Convenience: builds the observation from the binding.
  void ingest_reading(std::int64_t step, const std::string& sensor_id, const Vector& value);

  void handle(const Message& msg);
  void handle_information(const Message& msg);
  void handle_gradient(const Message& msg);
  void handle_control(const Message& msg);

  /// Fuses one step and hands its prediction to the successor's prior.
  const FusionResult& resolve_step(std::int64_t step);
  /// Resolves every dirty, unfrozen step in ascending order.
  void resolve_dirty();

  /// Information or gradient messages depending on the period.
  std::vector<Message> generate_messages();
  std::vector<Message> generate_info_messages();
  std::vector<Message> generate_gradient_messages();

  /// RProp step on the summed parameter gradient of current and future
  /// steps. Returns the applied delta.
  double apply_update();

  /// Parameter value of current and future steps (the machine setpoint).
  double parameter() const;
  /// Sum of stored parameter gradients over current and future steps.
  double parameter_gradient() const;

  const TimeStepRecord* step(std::int64_t index) const;
  std::vector<std::int64_t> step_indices() const;
  /// Selects the non-parameter coordinates of x_t (prior) and x_{t+1}
  /// (prediction handoff) inside x*.
  const Matrix& prior_selector() const noexcept { return s_prior_; }
  const Matrix& pred_selector() const noexcept { return m_pred_; }
  const NeighborRegistration& neighbor(const std::string& name) const;

 private:
  TimeStepRecord& record(std::int64_t index);
  FusionProblem build_problem(const TimeStepRecord& r) const;
  Vector initial_point(const TimeStepRecord& r) const;
  void backpropagate(std::int64_t step, const Vector& dl_dx);

  NodeConfig cfg_;
  std::map<std::int64_t, TimeStepRecord> steps_;
  std::int64_t current_ = 0;
  bool started_ = false;
  Period period_ = Period::information;
  std::optional<Rprop> rprop_;
  double parameter_ = 0.0;
  Matrix s_prior_;
  Matrix m_pred_;
  Matrix s_param_;
};

}  // namespace ant
