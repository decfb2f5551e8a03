#pragma once

// Offline experiments on the ground-truth facility: datasets for the
// magnetic sorter network, siever step responses and speed sweeps, and
// grid-search optima of the expected loss under stationary flows.

#include <cstdint>
#include <string>
#include <vector>

#include "ant/facility.hpp"
#include "ant/loss.hpp"
#include "ant/mlp.hpp"
#include "ant/models.hpp"

namespace ant {

struct MagsorterDataset {
  /// Columns: FM in, NFM in (kg/s), height (cm).
  Matrix inputs;
  /// Columns: FM outlet FM, FM outlet NFM, NFM outlet NFM, NFM outlet FM.
  Matrix targets;
};

struct SweepOptions {
  std::vector<double> heights;       // default: 8 to 16 cm in 0.5 cm steps
  std::vector<double> flow_scales{0.5, 1.0, 1.5};
  double duration = 1800.0;          // s per grid point and flow mix
};

/// One sample per 30 s window and grid point, over the static and both
/// dynamic flow mixes scaled by `flow_scales`. Deterministic per seed.
MagsorterDataset sweep_magsorter(const FacilitySpec& base, std::uint64_t seed, SweepOptions options = {});
void write_dataset_csv(const MagsorterDataset& d, const std::string& path);
/// Throws ConfigError for missing, malformed or empty files.
MagsorterDataset read_dataset_csv(const std::string& path);

struct SieverFitOptions {
  std::vector<double> speeds{5, 7, 9, 11, 13, 15, 17, 19, 21};
  double sweep_duration = 3600.0;  // s per speed
  double step_phase = 300.0;       // s on / off for the step experiment
  int step_cycles = 8;
  double step_flow_scale = 20.0;   // dense input so short windows are not shot-noise bound
  double step_window = 2.0;        // s, sensor resolution of the step experiment
  double step_speed = 13.0;
};

struct SieverFit {
  SieverParams params;
  std::vector<SplitSample> samples;
  std::vector<StepRecording> steps;  // per outlet
};

/// Step responses per outlet (switching the input on and off) and a speed
/// sweep of the outlet fractions per size class, fitted into model params.
SieverFit fit_siever(const FacilitySpec& base, std::uint64_t seed, const SieverFitOptions& options = {});

struct OraclePoint {
  double speed;
  double height;
  double loss;
};

struct OracleResult {
  OraclePoint best;
  std::vector<OraclePoint> grid;
};

/// Expected loss of the stationary flows for `class_flows`, with loss
/// coordinates read at the loss target's sensor locations.
double expected_loss(const FacilitySpec& spec, const LossSpec& loss, const Vector& class_flows, double speed,
                     double height);

/// Grid search; ties keep the first point in (speed, height) order.
OracleResult oracle_optimum(const FacilitySpec& spec, const LossSpec& loss, const Vector& class_flows,
                            const std::vector<double>& speeds, const std::vector<double>& heights);

/// Evenly spaced grid including both ends.
std::vector<double> linspace_grid(double lo, double hi, double step);

}  // namespace ant
