#include "ant/node.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>

namespace ant {

namespace {

constexpr const char* kPrior = "prior";
constexpr const char* kPred = "pred";
constexpr const char* kParam = "param";
const std::string kSensorPrefix = "sensor:";
const std::string kCommPrefix = "comm:";

// Successor priors closer than this to the stored one do not re-trigger fusion.
constexpr double kPriorChangeBits = 1e-10;

}  // namespace

LinearObservation SensorBinding::observation(const Vector& value) const {
  if (value.size() != selector.rows()) throw DimensionMismatch("sensor '" + id + "' value size");
  const auto n = selector.cols();
  Matrix m = Matrix::Zero(selector.rows(), 2 * n);
  m.rightCols(n) = selector;
  const Vector var = ((rel_std * value).array().square() + floor_std * floor_std).matrix();
  return LinearObservation(std::move(m), GaussianEstimate(value, var.asDiagonal()));
}

Node::Node(NodeConfig config) : cfg_(std::move(config)) {
  const auto n = cfg_.layout.size();
  if (n == 0) throw ConfigError("node '" + cfg_.id + "' has an empty state layout");
  if (!cfg_.prediction_model) throw ConfigError("node '" + cfg_.id + "' has no prediction model");
  if (cfg_.prediction_model->in_dim() != 2 * n) throw ConfigError("prediction model input size");
  for (const auto& m : cfg_.process_models)
    if (!m || m->in_dim() != 2 * n) throw ConfigError("node '" + cfg_.id + "': process model input size");
  if (cfg_.horizon < 1 || cfg_.history < 0) throw ConfigError("horizon must be >= 1 and history >= 0");
  if (!(cfg_.delta_info >= 0.0) || !(cfg_.delta_grad >= 0.0)) throw ConfigError("thresholds must be >= 0");

  std::vector<Eigen::Index> free;
  Eigen::Index param = -1;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (cfg_.layout.roles[static_cast<std::size_t>(i)] == CoordRole::parameter) param = i;
    else free.push_back(i);
  }
  s_prior_ = Matrix::Zero(static_cast<Eigen::Index>(free.size()), 2 * n);
  m_pred_ = Matrix::Zero(static_cast<Eigen::Index>(free.size()), 2 * n);
  for (std::size_t r = 0; r < free.size(); ++r) {
    s_prior_(static_cast<Eigen::Index>(r), n + free[r]) = 1.0;
    m_pred_(static_cast<Eigen::Index>(r), free[r]) = 1.0;
  }
  if (cfg_.initial_prior.dim() != static_cast<Eigen::Index>(free.size()))
    throw ConfigError("node '" + cfg_.id + "': initial prior must cover the " + std::to_string(free.size()) +
                      " non-parameter coordinates");

  if ((param >= 0) != cfg_.parameter.has_value())
    throw ConfigError("node '" + cfg_.id + "': parameter spec and layout parameter coordinate must match");
  if (cfg_.parameter) {
    const auto& p = *cfg_.parameter;
    rprop_.emplace(p.lo, p.hi, cfg_.rprop);
    if (!(p.obs_std > 0.0)) throw ConfigError("parameter obs_std must be positive");
    parameter_ = rprop_->clamp(p.initial);
    s_param_ = Matrix::Zero(2, 2 * n);
    s_param_(0, param) = 1.0;
    s_param_(1, n + param) = 1.0;
  }

  for (const auto& nb : cfg_.neighbors) {
    if (nb.obs_matrix.cols() != 2 * n)
      throw ConfigError("neighbor '" + nb.name + "': observation matrix needs " + std::to_string(2 * n) + " columns");
    Eigen::ColPivHouseholderQR<Matrix> qr(nb.obs_matrix.transpose());
    if (qr.rank() < nb.obs_matrix.rows())
      throw RankDeficient("neighbor '" + nb.name + "': observation matrix is not full row rank");
    for (const auto& other : cfg_.neighbors)
      if (&other != &nb && other.name == nb.name) throw ConfigError("duplicate neighbor '" + nb.name + "'");
  }
  for (const auto& s : cfg_.sensors)
    if (s.selector.cols() != n) throw ConfigError("sensor '" + s.id + "': selector needs " + std::to_string(n) + " columns");
}

const NeighborRegistration& Node::neighbor(const std::string& name) const {
  for (const auto& nb : cfg_.neighbors)
    if (nb.name == name) return nb;
  throw UnknownNeighbor("node '" + cfg_.id + "' has no neighbor '" + name + "'");
}

TimeStepRecord& Node::record(std::int64_t index) {
  auto it = steps_.find(index);
  if (it == steps_.end()) throw ConfigError("node '" + cfg_.id + "' has no step " + std::to_string(index));
  return it->second;
}

const TimeStepRecord* Node::step(std::int64_t index) const {
  auto it = steps_.find(index);
  return it == steps_.end() ? nullptr : &it->second;
}

std::vector<std::int64_t> Node::step_indices() const {
  std::vector<std::int64_t> out;
  for (const auto& [k, r] : steps_) out.push_back(k);
  return out;
}

std::vector<std::int64_t> Node::ensure_horizon(std::int64_t current) {
  std::vector<std::int64_t> created;
  if (!started_) {
    TimeStepRecord r;
    r.index = current;
    r.prior = cfg_.initial_prior;
    r.parameter = parameter_;
    r.frozen = period_ == Period::backpropagation;
    steps_.emplace(current, std::move(r));
    created.push_back(current);
    started_ = true;
  }
  current_ = std::max(current_, current);
  for (std::int64_t k = steps_.rbegin()->first + 1; k <= current_ + cfg_.horizon; ++k) {
    const TimeStepRecord& prev = steps_.rbegin()->second;
    TimeStepRecord r;
    r.index = k;
    r.prior = prev.result ? project(prev.result->estimate(), m_pred_) : prev.prior;
    r.parameter = parameter_;
    r.frozen = period_ == Period::backpropagation;
    steps_.emplace(k, std::move(r));
    created.push_back(k);
  }
  while (steps_.size() > 1 && steps_.begin()->first < current_ - cfg_.history) steps_.erase(steps_.begin());
  return created;
}

void Node::ingest_sensor(std::int64_t step, const std::string& sensor_id, LinearObservation obs) {
  TimeStepRecord& r = record(step);
  if (r.frozen) throw FrozenStep("node '" + cfg_.id + "': step " + std::to_string(step) + " is frozen");
  if (obs.matrix.cols() != 2 * state_dim()) throw DimensionMismatch("sensor observation matrix columns");
  r.sensors[sensor_id] = std::move(obs);
  r.dirty = true;
}

void Node::ingest_reading(std::int64_t step, const std::string& sensor_id, const Vector& value) {
  for (const auto& s : cfg_.sensors)
    if (s.id == sensor_id) return ingest_sensor(step, sensor_id, s.observation(value));
  throw ConfigError("node '" + cfg_.id + "' has no sensor '" + sensor_id + "'");
}

void Node::handle(const Message& msg) {
  switch (msg.type) {
    case MessageType::information: return handle_information(msg);
    case MessageType::gradient: return handle_gradient(msg);
    case MessageType::control: return handle_control(msg);
  }
}

void Node::handle_information(const Message& msg) {
  const NeighborRegistration& nb = neighbor(msg.sender);
  auto it = steps_.find(msg.time_stamp);
  if (it == steps_.end()) return;  // outside the retained window
  if (msg.mean.size() != nb.obs_matrix.rows())
    throw DimensionMismatch("information from '" + msg.sender + "' has " + std::to_string(msg.mean.size()) +
                            " entries, exchange format has " + std::to_string(nb.obs_matrix.rows()));
  it->second.comms[nb.name] = LinearObservation(nb.obs_matrix, GaussianEstimate(msg.mean, msg.cov));
  it->second.dirty = true;
}

void Node::handle_control(const Message& msg) {
  switch (msg.action) {
    case ControlAction::to_backpropagation:
      if (period_ == Period::backpropagation) return;
      for (auto& [k, r] : steps_) {
        r.frozen = true;
        r.parameter_gradient = 0.0;
        r.source_gradients.clear();
        r.pending.clear();
        r.max_sent.clear();
      }
      period_ = Period::backpropagation;
      return;
    case ControlAction::to_information:
      if (period_ == Period::information) return;
      apply_update();
      for (auto& [k, r] : steps_) r.frozen = false;
      period_ = Period::information;
      resolve_dirty();
      return;
  }
  throw UnknownAction("unknown control action " + std::to_string(static_cast<int>(msg.action)));
}

void Node::handle_gradient(const Message& msg) {
  if (period_ != Period::backpropagation)
    throw GradientOutsidePeriod("node '" + cfg_.id + "' received a gradient during the information period");
  const NeighborRegistration& nb = neighbor(msg.sender);
  if (msg.gradient.size() != nb.obs_matrix.rows())
    throw DimensionMismatch("gradient from '" + msg.sender + "' does not match the exchange format");
  auto it = steps_.find(msg.time_stamp);
  if (it == steps_.end() || !it->second.result)
    throw MissingFusionResult("node '" + cfg_.id + "' has no fusion result for step " + std::to_string(msg.time_stamp));
  backpropagate(msg.time_stamp, nb.obs_matrix.transpose() * msg.gradient);
}

void Node::backpropagate(std::int64_t step, const Vector& dl_dx) {
  if (dl_dx.isZero(0.0)) return;
  TimeStepRecord& r = record(step);
  if (!r.result) throw MissingFusionResult("node '" + cfg_.id + "' has no fusion result for step " + std::to_string(step));
  const FusionResult& res = *r.result;
  std::optional<Vector> to_previous;
  for (std::size_t i = 0; i < res.source_ids.size(); ++i) {
    const std::string& sid = res.source_ids[i];
    Vector g = res.jac_chunks[i].transpose() * dl_dx;
    if (sid == kPrior) {
      to_previous = std::move(g);
    } else if (sid == kParam) {
      r.parameter_gradient += g.sum();
    } else {
      if (sid.rfind(kCommPrefix, 0) == 0) {
        auto& p = r.pending[sid.substr(kCommPrefix.size())];
        if (p.size() == 0) p = Vector::Zero(g.size());
        p += g;
      }
      auto& s = r.source_gradients[sid];
      if (s.size() == 0) s = Vector::Zero(g.size());
      s += g;
    }
  }
  // Through time, but never into steps before the current one.
  if (to_previous && step - 1 >= current_) {
    auto prev = steps_.find(step - 1);
    if (prev != steps_.end() && prev->second.result) backpropagate(step - 1, m_pred_.transpose() * *to_previous);
  }
}

FusionProblem Node::build_problem(const TimeStepRecord& r) const {
  const auto n = state_dim();
  FusionProblem p(2 * n);
  p.add(InformationSource::linear(kPrior, SourceKind::prior, LinearObservation(s_prior_, r.prior)));
  p.add(InformationSource::implicit(kPred, SourceKind::prediction_model, cfg_.prediction_model));
  for (std::size_t i = 0; i < cfg_.process_models.size(); ++i)
    p.add(InformationSource::implicit("process" + std::to_string(i), SourceKind::process_model,
                                      cfg_.process_models[i]));
  if (cfg_.parameter) {
    const double sd = cfg_.parameter->obs_std;
    p.add(InformationSource::linear(
        kParam, SourceKind::parameter,
        LinearObservation(s_param_, GaussianEstimate(Vector::Constant(2, r.parameter), Matrix::Identity(2, 2) * sd * sd))));
  }
  for (const auto& [id, obs] : r.sensors) p.add(InformationSource::linear(kSensorPrefix + id, SourceKind::sensor, obs));
  for (const auto& [name, obs] : r.comms)
    p.add(InformationSource::linear(kCommPrefix + name, SourceKind::communication, obs));
  return p;
}

Vector Node::initial_point(const TimeStepRecord& r) const {
  const auto n = state_dim();
  Vector x(2 * n);
  if (r.result) {
    x = r.result->map;
  } else {
    Vector xt = s_prior_.rightCols(n).transpose() * r.prior.mean();
    x << xt, xt;
  }
  if (cfg_.parameter) {
    const auto pi = cfg_.layout.parameter();
    x(pi) = r.parameter;
    x(n + pi) = r.parameter;
  }
  return x;
}

const FusionResult& Node::resolve_step(std::int64_t step) {
  TimeStepRecord& r = record(step);
  if (r.frozen) throw FrozenStep("node '" + cfg_.id + "': step " + std::to_string(step) + " is frozen");
  try {
    r.result = fuse(build_problem(r), initial_point(r), cfg_.jacobian_mode);
  } catch (const Error&) {
    r.stale = true;
    r.dirty = false;
    throw;
  }
  r.stale = false;
  r.dirty = false;

  auto next = steps_.find(step + 1);
  if (next != steps_.end() && !next->second.frozen) {
    GaussianEstimate handed = project(r.result->estimate(), m_pred_);
    bool changed = true;
    try {
      changed = kl_divergence_bits(handed, next->second.prior) > kPriorChangeBits;
    } catch (const Error&) {
    }
    if (changed) {
      next->second.prior = std::move(handed);
      next->second.dirty = true;
    }
  }
  return *r.result;
}

void Node::resolve_dirty() {
  if (period_ != Period::information) return;
  for (auto& [k, r] : steps_) {
    if (!r.dirty || r.frozen) continue;
    try {
      resolve_step(k);
    } catch (const Error&) {
      // keeps the last valid result; the stale flag is visible in diagnostics
    }
  }
}

std::vector<Message> Node::generate_messages() {
  return period_ == Period::information ? generate_info_messages() : generate_gradient_messages();
}

std::vector<Message> Node::generate_info_messages() {
  std::vector<Message> out;
  if (period_ != Period::information) return out;
  for (auto& [k, r] : steps_) {
    if (!r.result) continue;
    const GaussianEstimate est = r.result->estimate();
    for (const auto& nb : cfg_.neighbors) {
      if (!nb.send_information) continue;
      GaussianEstimate proj = project(est, nb.obs_matrix);
      auto cached = r.sent_cache.find(nb.name);
      bool send = cached == r.sent_cache.end();
      if (!send) {
        try {
          send = kl_divergence_bits(proj, cached->second) > cfg_.delta_info;
        } catch (const Error&) {
          send = !(proj == cached->second);
        }
      }
      if (!send) continue;
      out.push_back(Message::information(cfg_.id, nb.name, k, proj));
      r.sent_cache[nb.name] = std::move(proj);
    }
  }
  return out;
}

std::vector<Message> Node::generate_gradient_messages() {
  std::vector<Message> out;
  if (period_ != Period::backpropagation) return out;
  for (auto& [k, r] : steps_) {
    for (auto& [name, g] : r.pending) {
      const double mag = g.lpNorm<Eigen::Infinity>();
      if (mag == 0.0) continue;
      auto sent = r.max_sent.find(name);
      const bool send = sent == r.max_sent.end() || mag > cfg_.delta_grad * sent->second;
      if (!send) continue;
      out.push_back(Message::gradient_msg(cfg_.id, name, k, g));
      r.max_sent[name] = sent == r.max_sent.end() ? mag : std::max(sent->second, mag);
      g.setZero();
    }
  }
  return out;
}

double Node::apply_update() {
  if (!rprop_) return 0.0;
  const double next = rprop_->step(parameter_, parameter_gradient());
  const double delta = next - parameter_;
  parameter_ = next;
  for (auto& [k, r] : steps_) {
    if (k < current_ || r.parameter == next) continue;
    r.parameter = next;
    r.dirty = true;
  }
  return delta;
}

double Node::parameter() const { return parameter_; }

double Node::parameter_gradient() const {
  double g = 0.0;
  for (const auto& [k, r] : steps_)
    if (k >= current_) g += r.parameter_gradient;
  return g;
}

}  // namespace ant
