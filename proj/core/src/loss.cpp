#include "ant/loss.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include <json.hpp>

#include "ant/errors.hpp"

namespace ant {

LossSpec LossSpec::magsorter_purity() {
  LossSpec s;
  for (int o = 0; o < kMaterials; ++o)
    for (int m = 0; m < kMaterials; ++m)
      for (int p = 0; p < kSizes; ++p)
        s.coordinates.push_back(std::string("out_") + kMaterialNames[o] + "_" + kMaterialNames[m] + "_" + kSizeNames[p]);
  // outlet o collects material o as true positive; medium size is p = 1
  for (int o = 0; o < kMaterials; ++o) {
    PurityTerm t;
    t.true_positive = 6 * o + 3 * o + 1;
    for (Eigen::Index i = 0; i < 6; ++i) t.outlet.push_back(6 * o + i);
    s.terms.push_back(t);
  }
  return s;
}

void LossSpec::validate() const {
  if (terms.empty()) throw ConfigError("loss needs at least one purity term");
  if (!(eps_flow >= 0.0)) throw ConfigError("loss eps_flow must be >= 0");
  for (const auto& t : terms) {
    if (t.true_positive < 0 || t.true_positive >= dim()) throw ConfigError("loss term index out of range");
    if (std::find(t.outlet.begin(), t.outlet.end(), t.true_positive) == t.outlet.end())
      throw ConfigError("loss term: outlet must contain its true positive flow");
    for (auto i : t.outlet)
      if (i < 0 || i >= dim()) throw ConfigError("loss term index out of range");
  }
}

Matrix LossSpec::exchange_matrix(const StateLayout& layout) const {
  const auto n = layout.size();
  Matrix m = Matrix::Zero(dim(), 2 * n);
  for (Eigen::Index r = 0; r < dim(); ++r) m(r, n + layout.index(coordinates[static_cast<std::size_t>(r)])) = 1.0;
  return m;
}

LossSpec loss_spec_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    LossSpec s = LossSpec::magsorter_purity();
    s.id = j.value("id", s.id);
    s.target = j.value("target", s.target);
    s.step_offset = j.value("step_offset", s.step_offset);
    s.eps_flow = j.value("eps_flow", s.eps_flow);
    if (j.contains("terms")) {
      s.coordinates.clear();
      s.terms.clear();
      // an explicit list fixes the exchange order; otherwise first appearance
      if (j.contains("coordinates")) s.coordinates = j["coordinates"].get<std::vector<std::string>>();
      auto slot = [&](const std::string& name) {
        auto it = std::find(s.coordinates.begin(), s.coordinates.end(), name);
        if (it != s.coordinates.end()) return static_cast<Eigen::Index>(it - s.coordinates.begin());
        if (j.contains("coordinates")) throw ConfigError("loss term uses '" + name + "', which is not in coordinates");
        s.coordinates.push_back(name);
        return static_cast<Eigen::Index>(s.coordinates.size() - 1);
      };
      for (const auto& t : j.at("terms")) {
        PurityTerm term;
        term.true_positive = slot(t.at("true_positive").get<std::string>());
        for (const auto& name : t.at("outlet")) term.outlet.push_back(slot(name.get<std::string>()));
        s.terms.push_back(std::move(term));
      }
    }
    if (s.step_offset < 0) throw ConfigError("loss step_offset must be >= 0");
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("loss: ") + e.what());
  }
}

double loss_evaluate(const LossSpec& spec, const Vector& x) {
  if (x.size() != spec.dim()) throw DimensionMismatch("loss exchange vector size");
  double loss = 0.0;
  for (const auto& t : spec.terms) {
    double total = 0.0;
    for (auto i : t.outlet) total += x(i);
    if (total <= spec.eps_flow) continue;
    const double tp = x(t.true_positive);
    loss -= tp * tp * tp / (total * total);
  }
  return loss;
}

Vector loss_gradient(const LossSpec& spec, const Vector& x) {
  if (x.size() != spec.dim()) throw DimensionMismatch("loss exchange vector size");
  Vector g = Vector::Zero(x.size());
  for (const auto& t : spec.terms) {
    double total = 0.0;
    for (auto i : t.outlet) total += x(i);
    if (total <= spec.eps_flow) continue;
    const double tp = x(t.true_positive);
    const double via_total = 2.0 * tp * tp * tp / (total * total * total);
    for (auto i : t.outlet) g(i) += via_total;
    g(t.true_positive) -= 3.0 * tp * tp / (total * total);
  }
  return g;
}

LossNode::LossNode(LossSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

void LossNode::handle(const Message& msg) {
  if (msg.type == MessageType::control) return;
  if (msg.type != MessageType::information || msg.sender != spec_.target)
    throw UnknownNeighbor(std::string("loss node: unexpected ") + to_string(msg.type) + " message from '" + msg.sender + "'");
  if (msg.mean.size() != spec_.dim()) throw DimensionMismatch("loss node: exchange format size");
  received_.insert_or_assign(msg.time_stamp, GaussianEstimate(msg.mean, msg.cov));
}

std::optional<double> LossNode::seed(std::int64_t step) {
  const auto it = received_.find(step);
  if (it == received_.end()) return std::nullopt;
  const Vector& x = it->second.mean();
  outbox_.push_back(Message::gradient_msg(spec_.id, spec_.target, step, loss_gradient(spec_, x)));
  return loss_evaluate(spec_, x);
}

std::vector<Message> LossNode::take_messages() { return std::exchange(outbox_, {}); }

const GaussianEstimate* LossNode::estimate(std::int64_t step) const {
  const auto it = received_.find(step);
  return it == received_.end() ? nullptr : &it->second;
}

void LossNode::prune(std::int64_t step) { received_.erase(received_.begin(), received_.lower_bound(step)); }

PeriodScheduler::PeriodScheduler(double interval, double activation, bool enabled)
    : interval_(interval), activation_(activation), enabled_(enabled) {
  if (!(interval > 0.0)) throw ConfigError("switch interval must be positive");
}

std::vector<PeriodSwitch> PeriodScheduler::switches(double from, double to) const {
  std::vector<PeriodSwitch> out;
  if (!enabled_ || !(to > from)) return out;
  auto k = static_cast<std::int64_t>(std::floor(std::max(from, activation_ - interval_) / interval_)) + 1;
  for (;; ++k) {
    const double t = static_cast<double>(k) * interval_;
    if (t > to) break;
    if (t <= from || t < activation_) continue;
    out.push_back({t, k % 2 == 0 ? ControlAction::to_information : ControlAction::to_backpropagation});
  }
  return out;
}

}  // namespace ant
