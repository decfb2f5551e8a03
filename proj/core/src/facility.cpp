#include "ant/facility.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "ant/errors.hpp"
#include "json_util.hpp"

namespace ant {

std::vector<ArticleClass> default_classes() {
  return {
      {"paper_roll", 0.0090, 1, 2, 0.0069, 0.0520, 0.0199},
      {"bottle", 0.0180, 1, 2, 0.0275, 0.0012, 0.0348},
      {"coffee_cup", 0.0093, 1, 1, 0.0068, 0.0003, 0.0087},
      {"paper_ball", 0.0035, 1, 1, 0.0026, 0.0001, 0.0033},
      {"fm_can", 0.0149, 0, 1, 0.0226, 0.0356, 0.0226},
      {"fm_cap", 0.0007, 0, 0, 0.0011, 0.0001, 0.0013},
      {"nfm_cap", 0.0005, 1, 0, 0.0007, 0.0012, 0.0008},
  };
}

SieverTruth default_siever_truth() {
  SieverTruth s;
  s.split_lo.resize(3, 3);
  s.split_hi.resize(3, 3);
  s.split_lo << 0.80, 0.15, 0.05,  //
      0.10, 0.50, 0.40,            //
      0.02, 0.20, 0.78;
  s.split_hi << 0.88, 0.09, 0.03,  //
      0.06, 0.80, 0.14,            //
      0.02, 0.14, 0.84;
  return s;
}

Matrix SieverTruth::probabilities(double speed) const {
  const double u = (speed - speed_lo) / (speed_hi - speed_lo);
  Matrix p = (split_lo + u * (split_hi - split_lo)).cwiseMax(0.0).cwiseMin(1.0);
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const double s = p.row(r).sum();
    if (s > 1.0) p.row(r) /= s;
  }
  return p;
}

double MagsorterTruth::to_fm_outlet(int material, double height) const {
  if (material == 0) return 1.0 / (1.0 + std::exp((height - fm_center) / fm_width));
  return nfm_amplitude / (1.0 + std::exp((height - nfm_center) / nfm_width));
}

Vector FacilitySpec::flows_at(double t) const {
  Vector f(static_cast<Eigen::Index>(classes.size()));
  const bool second =
      kind == ScenarioKind::dynamic_flows && static_cast<std::int64_t>(std::floor(t / phase_length)) % 2 == 1;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const auto& k = classes[c];
    f(static_cast<Eigen::Index>(c)) = kind == ScenarioKind::static_flows ? k.flow_static : (second ? k.flow_b : k.flow_a);
  }
  return f;
}

FacilitySpec FacilitySpec::defaults(ScenarioKind kind) {
  FacilitySpec s;
  s.kind = kind;
  s.siever = default_siever_truth();
  return s;
}

std::string to_string(ScenarioKind kind) { return kind == ScenarioKind::static_flows ? "static" : "dynamic"; }

FacilitySpec facility_spec_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    const std::string kind = j.value("kind", std::string("static"));
    if (kind != "static" && kind != "dynamic") throw ConfigError("scenario kind must be 'static' or 'dynamic'");
    FacilitySpec s = FacilitySpec::defaults(kind == "static" ? ScenarioKind::static_flows : ScenarioKind::dynamic_flows);
    s.phase_length = j.value("phase_length", s.phase_length);
    s.loss_probability = j.value("loss_probability", s.loss_probability);
    s.conveyor_delay = j.value("conveyor_delay", s.conveyor_delay);
    s.initial_speed = j.value("initial_speed", s.initial_speed);
    s.initial_height = j.value("initial_height", s.initial_height);
    if (j.contains("magsorter")) {
      const auto& m = j["magsorter"];
      s.magsorter.fm_center = m.value("fm_center", s.magsorter.fm_center);
      s.magsorter.fm_width = m.value("fm_width", s.magsorter.fm_width);
      s.magsorter.nfm_amplitude = m.value("nfm_amplitude", s.magsorter.nfm_amplitude);
      s.magsorter.nfm_center = m.value("nfm_center", s.magsorter.nfm_center);
      s.magsorter.nfm_width = m.value("nfm_width", s.magsorter.nfm_width);
    }
    if (j.contains("siever")) {
      const auto& m = j["siever"];
      if (m.contains("split_lo")) s.siever.split_lo = json_util::to_matrix(m["split_lo"]);
      if (m.contains("split_hi")) s.siever.split_hi = json_util::to_matrix(m["split_hi"]);
      if (m.contains("dead_time")) s.siever.dead_time = m["dead_time"].get<std::array<double, 3>>();
      if (m.contains("tau")) s.siever.tau = m["tau"].get<std::array<double, 3>>();
      if (s.siever.split_lo.rows() != 3 || s.siever.split_lo.cols() != 3 || s.siever.split_hi.rows() != 3 ||
          s.siever.split_hi.cols() != 3)
        throw ConfigError("siever split tables must be 3x3");
    }
    if (j.contains("classes")) {
      s.classes.clear();
      for (const auto& c : j["classes"]) {
        ArticleClass a;
        a.name = c.at("name").get<std::string>();
        a.mass = c.at("mass").get<double>();
        a.material = c.at("material").get<std::string>() == "FM" ? 0 : 1;
        const auto sz = c.at("size").get<std::string>();
        a.size = sz == "S" ? 0 : sz == "M" ? 1 : sz == "L" ? 2 : -1;
        if (a.size < 0) throw ConfigError("class size must be S, M or L");
        a.flow_static = c.value("flow_static", 0.0);
        a.flow_a = c.value("flow_a", 0.0);
        a.flow_b = c.value("flow_b", 0.0);
        if (!(a.mass > 0.0)) throw ConfigError("class mass must be positive");
        s.classes.push_back(a);
      }
    }
    if (!(s.phase_length > 0.0) || s.loss_probability < 0.0 || s.loss_probability >= 1.0 || s.conveyor_delay < 0.0)
      throw ConfigError("invalid scenario timing or loss probability");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
}

int location_index(const std::string& name) {
  for (int i = 0; i < kLocationCount; ++i)
    if (name == kLocations[i]) return i;
  throw ConfigError("unknown sensor location '" + name + "'");
}

double SensorReading::flow(const std::vector<ArticleClass>& classes, int material, int size) const {
  double m = 0.0;
  for (std::size_t c = 0; c < classes.size(); ++c)
    if ((material < 0 || classes[c].material == material) && (size < 0 || classes[c].size == size))
      m += class_mass(static_cast<Eigen::Index>(c));
  return m / duration;
}

std::vector<int> poisson_instantiate(const Vector& flows, const std::vector<ArticleClass>& classes, double dt,
                                     std::mt19937_64& rng) {
  if (!(dt > 0.0)) throw ConfigError("instantiation step must be positive");
  if (flows.size() != static_cast<Eigen::Index>(classes.size())) throw DimensionMismatch("class flow vector size");
  std::vector<int> counts(classes.size(), 0);
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const double mean = flows(static_cast<Eigen::Index>(c)) / classes[c].mass * dt;
    if (mean > 0.0) counts[c] = std::poisson_distribution<int>(mean)(rng);
  }
  return counts;
}

Facility::Facility(FacilitySpec spec, std::uint64_t seed)
    : spec_(std::move(spec)), rng_(seed), speed_(spec_.initial_speed), height_(spec_.initial_height) {
  if (spec_.classes.empty()) throw ConfigError("facility needs at least one article class");
  if (!(spec_.window > 0.0) || !(spec_.substep > 0.0)) throw ConfigError("window and substep must be positive");
  const auto k = static_cast<Eigen::Index>(spec_.classes.size());
  instantiated_ = exited_ = lost_ = Vector::Zero(k);
  set_speed(speed_);
  set_height(height_);
  warnings_ = 0;
}

void Facility::set_speed(double rpm) {
  const double c = std::clamp(rpm, spec_.speed_min, spec_.speed_max);
  if (c != rpm) ++warnings_;
  speed_ = c;
}

void Facility::set_height(double cm) {
  const double c = std::clamp(cm, spec_.height_min, spec_.height_max);
  if (c != cm) ++warnings_;
  height_ = c;
}

void Facility::push(double t, EventKind kind, int cls, int outlet) { events_.push({t, seq_++, kind, cls, outlet}); }

bool Facility::lost() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < spec_.loss_probability; }

void Facility::record(int location, double t, int cls) {
  const auto w = static_cast<std::int64_t>(std::floor(t / spec_.window));
  auto it = windows_.find(w);
  if (it == windows_.end()) {
    std::array<Vector, kLocationCount> z;
    for (auto& v : z) v = Vector::Zero(static_cast<Eigen::Index>(spec_.classes.size()));
    it = windows_.emplace(w, std::move(z)).first;
  }
  it->second[static_cast<std::size_t>(location)](cls) += spec_.classes[static_cast<std::size_t>(cls)].mass;
}

void Facility::process(const Event& e) {
  const double mass = spec_.classes[static_cast<std::size_t>(e.cls)].mass;
  switch (e.kind) {
    case EventKind::arrival: {
      instantiated_(e.cls) += mass;
      record(0, e.t, e.cls);
      if (lost()) {
        lost_(e.cls) += mass;
        return;
      }
      const Matrix p = spec_.siever.probabilities(speed_);
      const int size = spec_.classes[static_cast<std::size_t>(e.cls)].size;
      double u = std::uniform_real_distribution<double>(0.0, p.row(size).sum())(rng_);
      int outlet = 0;
      while (outlet < 2 && u >= p(size, outlet)) u -= p(size, outlet++);
      const auto o = static_cast<std::size_t>(outlet);
      double delay = spec_.siever.dead_time[o];
      if (spec_.siever.tau[o] > 0.0) delay += std::exponential_distribution<double>(1.0 / spec_.siever.tau[o])(rng_);
      push(e.t + delay, EventKind::siever_exit, e.cls, outlet);
      return;
    }
    case EventKind::siever_exit:
      record(1 + e.outlet, e.t, e.cls);
      if (e.outlet != 1) {
        exited_(e.cls) += mass;
        return;
      }
      if (lost()) {
        lost_(e.cls) += mass;
        return;
      }
      push(e.t + spec_.conveyor_delay, EventKind::conveyor_exit, e.cls, 0);
      return;
    case EventKind::conveyor_exit: {
      record(4, e.t, e.cls);
      if (lost()) {
        lost_(e.cls) += mass;
        return;
      }
      const int material = spec_.classes[static_cast<std::size_t>(e.cls)].material;
      const bool up = std::uniform_real_distribution<double>(0.0, 1.0)(rng_) <
                      spec_.magsorter.to_fm_outlet(material, height_);
      record(up ? 5 : 6, e.t, e.cls);
      exited_(e.cls) += mass;
      return;
    }
  }
}

std::vector<SensorReading> Facility::advance_to(double t) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (now_ < t) {
    const double end = std::min(now_ + spec_.substep, t);
    const double dt = end - now_;
    const auto counts = poisson_instantiate(spec_.flows_at(now_), spec_.classes, dt, rng_);
    for (std::size_t c = 0; c < counts.size(); ++c)
      for (int i = 0; i < counts[c]; ++i) push(now_ + dt * unit(rng_), EventKind::arrival, static_cast<int>(c), 0);
    while (!events_.empty() && events_.top().t < end) {
      const Event e = events_.top();
      events_.pop();
      process(e);
    }
    now_ = end;
  }
  std::vector<SensorReading> out;
  const auto complete = static_cast<std::int64_t>(std::floor(now_ / spec_.window + 1e-9));
  for (; next_window_ < complete; ++next_window_) {
    auto it = windows_.find(next_window_);
    for (int l = 0; l < kLocationCount; ++l) {
      SensorReading r;
      r.location = kLocations[l];
      r.window = next_window_;
      r.class_mass = it == windows_.end() ? Vector::Zero(static_cast<Eigen::Index>(spec_.classes.size()))
                                          : it->second[static_cast<std::size_t>(l)];
      r.duration = spec_.window;
      r.total = r.class_mass.sum() / spec_.window;
      out.push_back(std::move(r));
    }
    if (it != windows_.end()) windows_.erase(it);
  }
  return out;
}

FacilityLedger Facility::ledger() const {
  FacilityLedger l{instantiated_, exited_, lost_, Vector::Zero(instantiated_.size())};
  auto copy = events_;
  while (!copy.empty()) {
    if (copy.top().kind != EventKind::arrival)
      l.in_flight(copy.top().cls) += spec_.classes[static_cast<std::size_t>(copy.top().cls)].mass;
    copy.pop();
  }
  return l;
}

std::array<Vector, kLocationCount> stationary_flows(const FacilitySpec& spec, const Vector& class_flows, double speed,
                                                    double height) {
  const auto k = static_cast<Eigen::Index>(spec.classes.size());
  if (class_flows.size() != k) throw DimensionMismatch("class flow vector size");
  std::array<Vector, kLocationCount> f;
  for (auto& v : f) v = Vector::Zero(k);
  const double keep = 1.0 - spec.loss_probability;
  const Matrix p = spec.siever.probabilities(speed);
  for (Eigen::Index c = 0; c < k; ++c) {
    const auto& a = spec.classes[static_cast<std::size_t>(c)];
    f[0](c) = class_flows(c);
    for (int o = 0; o < 3; ++o) f[static_cast<std::size_t>(1 + o)](c) = class_flows(c) * keep * p(a.size, o);
    f[4](c) = f[2](c) * keep;
    const double up = spec.magsorter.to_fm_outlet(a.material, height);
    f[5](c) = f[4](c) * keep * up;
    f[6](c) = f[4](c) * keep * (1.0 - up);
  }
  return f;
}

}  // namespace ant
