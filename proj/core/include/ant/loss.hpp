#pragma once

// Purity-weighted profit loss evaluated on the exchange format of one target
// node, the loss node that seeds gradients from it, and the period clock.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ant/layout.hpp"
#include "ant/message.hpp"
#include "ant/mvn.hpp"

namespace ant {

/// -(tp / total)^2 * tp for one outlet; indices into the exchange vector.
struct PurityTerm {
  Eigen::Index true_positive = 0;
  std::vector<Eigen::Index> outlet;  // all flows of the outlet, tp included
};

struct LossSpec {
  std::string id = "loss";
  std::string target = "magsorter";
  std::vector<std::string> coordinates;  // exchange format, names in the target layout
  std::vector<PurityTerm> terms;
  /// The loss is evaluated on step current + step_offset of the target.
  int step_offset = 1;
  double eps_flow = 1e-9;  // kg/s, totals at or below give a zero term

  /// Two outlets of the magnetic sorter, medium size class, over the 12
  /// outlet coordinates out_{o}_{m}_{p}.
  static LossSpec magsorter_purity();

  Eigen::Index dim() const noexcept { return static_cast<Eigen::Index>(coordinates.size()); }
  /// Selector of the exchange coordinates on the x_t half of x*.
  /// Throws ConfigError for names missing from the layout.
  Matrix exchange_matrix(const StateLayout& layout) const;
  void validate() const;
};

/// {"target", "step_offset", "eps_flow", "terms": [{"true_positive", "outlet": [...]}]}
/// with coordinate names; missing fields keep the magsorter defaults.
LossSpec loss_spec_from_json(const std::string& text);

double loss_evaluate(const LossSpec& spec, const Vector& exchange);
/// d loss / d exchange.
Vector loss_gradient(const LossSpec& spec, const Vector& exchange);

/// Registered neighbor of the target node: keeps the target's information
/// messages per step and answers seed() with a gradient message.
class LossNode {
 public:
  explicit LossNode(LossSpec spec);

  const std::string& id() const noexcept { return spec_.id; }
  const LossSpec& spec() const noexcept { return spec_; }

  /// Stores information messages from the target; ignores control messages.
  void handle(const Message& msg);
  /// Evaluates the loss on the stored mean of `step`, queues the gradient
  /// for the target and returns the loss. Empty when nothing is stored.
  std::optional<double> seed(std::int64_t step);
  std::vector<Message> take_messages();

  const GaussianEstimate* estimate(std::int64_t step) const;
  /// Drops stored estimates older than `step`.
  void prune(std::int64_t step);

 private:
  LossSpec spec_;
  std::map<std::int64_t, GaussianEstimate> received_;
  std::vector<Message> outbox_;
};

struct PeriodSwitch {
  double time = 0.0;
  ControlAction action = ControlAction::to_information;
};

/// Alternates the two periods every `interval` seconds once `activation`
/// is reached: multiples of 2*interval start information periods, odd
/// multiples start backpropagation periods.
class PeriodScheduler {
 public:
  PeriodScheduler(double interval = 15.0, double activation = 300.0, bool enabled = true);

  /// Switches with from < time <= to, in time order.
  std::vector<PeriodSwitch> switches(double from, double to) const;
  bool enabled() const noexcept { return enabled_; }
  double interval() const noexcept { return interval_; }
  double activation() const noexcept { return activation_; }

 private:
  double interval_;
  double activation_;
  bool enabled_;
};

}  // namespace ant
