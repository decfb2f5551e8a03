#pragma once

// JSON documents describing nodes and runs. Relative paths inside a
// document are resolved against the directory of that document.

#include <cstdint>
#include <string>
#include <vector>

#include "ant/facility.hpp"
#include "ant/loss.hpp"
#include "ant/node.hpp"

namespace ant {

/// Node document fields: id, machine (siever | conveyor | magsorter),
/// history_len, model (siever fit or MLP file), delay (conveyor),
/// parameter {name, lo, hi, initial, obs_std}, prior {mean, std},
/// prediction {std_input, std_rest, std_shift}, neighbors [{name,
/// send_information, coordinates | rows}], sensors [{id, location, rows,
/// rel_std, floor_std}], delta_info, delta_grad, horizon, history,
/// jacobian, rprop {...}. Rows are objects mapping coordinate names of
/// x_t to coefficients.
NodeConfig node_config_from_json(const std::string& text, const std::string& base_dir = ".");
NodeConfig node_config_from_file(const std::string& path);

/// Machine kind of a node, read back from its layout.
std::string machine_of(const NodeConfig& config);

enum class TransportKind { in_memory, tcp };

struct RunConfig {
  FacilitySpec scenario;
  std::vector<NodeConfig> nodes;
  LossSpec loss = LossSpec::magsorter_purity();
  TransportKind transport = TransportKind::in_memory;
  std::uint64_t seed = 7;
  double duration = 2400.0;   // s
  double dt = 30.0;           // ANT step and sensor window, s
  bool optimize = true;
  double activation = 300.0;  // s
  double switch_interval = 15.0;
  std::string out_dir = "out";

  /// Every neighbor name refers to a node or the loss node, and the loss
  /// target exists. Throws ConfigError.
  void validate() const;
};

/// Run document: {scenario (object or path), nodes [paths], loss (object or
/// path), transport, seed, duration, dt, optimize, activation,
/// switch_interval, out}.
RunConfig run_config_from_file(const std::string& path);

}  // namespace ant
