#pragma once

// Scenario runner: one simulated clock drives the facility, the nodes (in
// process or forked over TCP), the loss node and the period switches.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ant/config.hpp"
#include "ant/transport.hpp"

namespace ant {

/// Where the ground truth of a state coordinate is measured: flow of one
/// (material, size) selection at a sensor location, `lag` windows back.
struct TruthRef {
  std::string location;
  int material = -1;  // -1: any
  int size = -1;
  int lag = 0;
};

/// Ground-truth reference of a flow coordinate; empty for parameters.
std::optional<TruthRef> truth_ref(const std::string& machine, const std::string& coordinate);

struct EstimateRow {
  double time;
  std::int64_t step;
  std::string node;
  std::string coordinate;
  double mean;
  double std;
  double truth;  // NaN when unknown
};

struct SetpointRow {
  double time;
  std::int64_t step;
  std::string node;
  std::string parameter;
  double value;
  double gradient;  // stored parameter gradient at this time
};

struct LossRow {
  double time;
  std::int64_t step;  // the step the loss was evaluated on
  double inferred;
  double measured;  // from the magsorter outlet readings of the latest window, NaN if none
};

struct CascadeRow {
  double time;
  std::string cause;  // sensor | to_information | to_backpropagation | gradient | init
  CascadeStats stats;
};

struct RunResult {
  std::vector<EstimateRow> estimates;
  std::vector<SetpointRow> setpoints;
  std::vector<LossRow> losses;
  std::vector<CascadeRow> cascades;
  std::vector<SensorReading> readings;
  std::map<std::string, double> final_parameters;  // by node id
  int setpoint_warnings = 0;
};

class Runner {
 public:
  explicit Runner(RunConfig config);
  /// Runs the whole scenario. Does not touch the file system.
  RunResult run();

 private:
  RunConfig cfg_;
};

/// CSV header lines, versioned by the leading schema comment.
extern const char* const kEstimatesHeader;
extern const char* const kSetpointsHeader;
extern const char* const kLossHeader;
extern const char* const kMessagesHeader;
/// "window,location,total_flow,flow_<class>...", all in kg/s.
std::string readings_header(const std::vector<ArticleClass>& classes);

/// Writes steps.csv, setpoints.csv, loss.csv, messages.csv, readings.csv and
/// final_parameters.json into `dir` (created if missing).
void write_outputs(const RunResult& result, const RunConfig& config, const std::string& dir);

}  // namespace ant
