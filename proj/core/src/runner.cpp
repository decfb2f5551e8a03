#include "ant/runner.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <regex>

#include <json.hpp>

#include "ant/errors.hpp"

namespace ant {

namespace {

int size_index(const std::string& s) {
  for (int p = 0; p < kSizes; ++p)
    if (s == kSizeNames[p]) return p;
  return -1;
}

int material_index(const std::string& s) {
  for (int m = 0; m < kMaterials; ++m)
    if (s == kMaterialNames[m]) return m;
  return -1;
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

std::optional<TruthRef> truth_ref(const std::string& machine, const std::string& c) {
  static const std::regex hist(R"(in_h(\d+)_([SML]))");
  static const std::regex sieve_out(R"(out_([SML])_([SML]))");
  static const std::regex conv_out(R"(out_([SML]))");
  static const std::regex mag_in(R"(in_(N?FM)_([SML]))");
  static const std::regex mag_out(R"(out_(N?FM)_(N?FM)_([SML]))");
  std::smatch m;
  if (machine == "siever" || machine == "conveyor") {
    if (std::regex_match(c, m, hist))
      return TruthRef{machine == "siever" ? "input" : "siever_M", -1, size_index(m[2]), std::stoi(m[1])};
    if (machine == "siever" && std::regex_match(c, m, sieve_out))
      return TruthRef{"siever_" + m[1].str(), -1, size_index(m[2]), 0};
    if (machine == "conveyor" && std::regex_match(c, m, conv_out)) return TruthRef{"conveyor_out", -1, size_index(m[1]), 0};
  } else if (machine == "magsorter") {
    if (std::regex_match(c, m, mag_in)) return TruthRef{"conveyor_out", material_index(m[1]), size_index(m[2]), 0};
    if (std::regex_match(c, m, mag_out))
      return TruthRef{"magsorter_" + m[1].str(), material_index(m[2]), size_index(m[3]), 0};
  }
  return std::nullopt;
}

Runner::Runner(RunConfig config) : cfg_(std::move(config)) { cfg_.validate(); }

RunResult Runner::run() {
  RunResult out;
  Facility facility(cfg_.scenario, cfg_.seed);
  const auto& classes = cfg_.scenario.classes;

  std::vector<std::unique_ptr<NodeHandle>> nodes;
  for (const auto& c : cfg_.nodes) {
    if (cfg_.transport == TransportKind::tcp) nodes.push_back(std::make_unique<RemoteNode>(c));
    else nodes.push_back(std::make_unique<LocalNode>(c));
  }
  LossNode loss(cfg_.loss);
  LossEndpoint loss_ep(loss);
  InMemoryBus bus;
  for (auto& n : nodes) bus.add(*n);
  bus.add(loss_ep);
  const PeriodScheduler scheduler(cfg_.switch_interval, cfg_.activation, cfg_.optimize);

  const NodeConfig* target_cfg = nullptr;
  for (const auto& c : cfg_.nodes)
    if (c.id == cfg_.loss.target) target_cfg = &c;

  // readings by (window, location)
  std::map<std::pair<std::int64_t, std::string>, std::size_t> archive;
  auto truth = [&](const TruthRef& ref, std::int64_t step) {
    const auto it = archive.find({step - ref.lag, ref.location});
    return it == archive.end() ? kNaN : out.readings[it->second].flow(classes, ref.material, ref.size);
  };
  auto record = [&](std::vector<SensorReading> rs) {
    for (auto& r : rs) {
      archive[{r.window, r.location}] = out.readings.size();
      out.readings.push_back(std::move(r));
    }
  };

  auto cascade = [&](double t, const std::string& cause) { out.cascades.push_back({t, cause, bus.run()}); };
  auto broadcast = [&](ControlAction a) {
    for (auto& n : nodes) bus.post(Message::control(loss.id(), n->id(), a));
  };
  std::int64_t current = 0;
  auto log_setpoints = [&](double t) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& c = cfg_.nodes[i];
      if (!c.parameter) continue;
      const auto s = nodes[i]->snapshot(current);
      out.setpoints.push_back({t, current, c.id, c.parameter->name, s.parameter, s.parameter_gradient});
    }
  };
  auto push_setpoints = [&]() {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& c = cfg_.nodes[i];
      if (!c.parameter) continue;
      const double v = nodes[i]->snapshot(current).parameter;
      if (c.parameter->name == "speed") facility.set_speed(v);
      else if (c.parameter->name == "height") facility.set_height(v);
    }
  };

  for (auto& n : nodes) n->ensure_horizon(0);
  push_setpoints();
  cascade(0.0, "init");
  log_setpoints(0.0);

  const double dt = cfg_.dt;
  const auto steps = static_cast<std::int64_t>(std::floor(cfg_.duration / dt + 1e-9));
  for (std::int64_t k = 0; k < steps; ++k) {
    const double t0 = static_cast<double>(k) * dt, t1 = t0 + dt;
    bool boundary_switch = false;
    for (const auto& sw : scheduler.switches(t0, t1)) {
      if (sw.time >= t1) {
        boundary_switch = sw.action == ControlAction::to_information;
        continue;
      }
      record(facility.advance_to(sw.time));
      if (sw.action == ControlAction::to_backpropagation) {
        broadcast(sw.action);
        cascade(sw.time, "to_backpropagation");
        const std::int64_t step = current + cfg_.loss.step_offset;
        const auto value = loss.seed(step);
        cascade(sw.time, "gradient");
        if (value) {
          double measured = kNaN;
          if (target_cfg != nullptr) {
            Vector x(cfg_.loss.dim());
            for (Eigen::Index i = 0; i < x.size(); ++i) {
              const auto ref = truth_ref(machine_of(*target_cfg), cfg_.loss.coordinates[static_cast<std::size_t>(i)]);
              x(i) = ref ? truth(*ref, current - 1) : kNaN;
            }
            if (x.allFinite()) measured = loss_evaluate(cfg_.loss, x);
          }
          out.losses.push_back({sw.time, step, *value, measured});
        }
        log_setpoints(sw.time);
      } else {
        broadcast(sw.action);
        cascade(sw.time, "to_information");
      }
    }

    const std::size_t first_new = out.readings.size();
    record(facility.advance_to(t1));
    if (boundary_switch) {
      broadcast(ControlAction::to_information);
      cascade(t1, "to_information");
    }
    current = k + 1;
    for (auto& n : nodes) n->ensure_horizon(current);
    for (std::size_t i = first_new; i < out.readings.size(); ++i) {
      const auto& r = out.readings[i];
      for (std::size_t j = 0; j < nodes.size(); ++j)
        for (const auto& s : cfg_.nodes[j].sensors)
          if (s.location == r.location) nodes[j]->ingest(r.window, s.id, Vector::Constant(1, r.total));
    }
    cascade(t1, "sensor");
    push_setpoints();
    log_setpoints(t1);
    loss.prune(current - 1);

    for (std::size_t j = 0; j < nodes.size(); ++j) {
      const auto& c = cfg_.nodes[j];
      const auto snap = nodes[j]->snapshot(k);
      if (!snap.has_result) continue;
      for (Eigen::Index i = 0; i < c.layout.size(); ++i) {
        const auto& name = c.layout.names[static_cast<std::size_t>(i)];
        const auto ref = truth_ref(machine_of(c), name);
        out.estimates.push_back({t1, k, c.id, name, snap.mean(i), snap.std(i), ref ? truth(*ref, k) : kNaN});
      }
    }
  }
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (cfg_.nodes[i].parameter) out.final_parameters[cfg_.nodes[i].id] = nodes[i]->snapshot(current).parameter;
  out.setpoint_warnings = facility.setpoint_warnings();
  return out;
}

const char* const kEstimatesHeader = "time,step,node,coordinate,mean,std,truth";
const char* const kSetpointsHeader = "time,step,node,parameter,value,gradient";
const char* const kLossHeader = "time,step,inferred,measured";
const char* const kMessagesHeader =
    "time,cause,rounds,quiescent,information,gradient,control,max_info_per_pair,max_info_per_step";

std::string readings_header(const std::vector<ArticleClass>& classes) {
  std::string h = "window,location,total_flow";
  for (const auto& c : classes) h += ",flow_" + c.name;
  return h;
}

void write_outputs(const RunResult& r, const RunConfig& config, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory '" + dir + "': " + ec.message());
  auto open = [&](const char* name, const std::string& header) {
    auto f = std::make_unique<std::ofstream>(fs::path(dir) / name);
    if (!*f) throw Error(std::string("cannot write ") + name);
    f->precision(17);
    *f << "# ant-csv v1\n" << header << "\n";
    return f;
  };
  {
    auto f = open("steps.csv", kEstimatesHeader);
    for (const auto& e : r.estimates)
      *f << e.time << ',' << e.step << ',' << e.node << ',' << e.coordinate << ',' << e.mean << ',' << e.std << ','
         << e.truth << '\n';
  }
  {
    auto f = open("setpoints.csv", kSetpointsHeader);
    for (const auto& s : r.setpoints)
      *f << s.time << ',' << s.step << ',' << s.node << ',' << s.parameter << ',' << s.value << ',' << s.gradient
         << '\n';
  }
  {
    auto f = open("loss.csv", kLossHeader);
    for (const auto& l : r.losses) *f << l.time << ',' << l.step << ',' << l.inferred << ',' << l.measured << '\n';
  }
  {
    auto f = open("messages.csv", kMessagesHeader);
    for (const auto& c : r.cascades)
      *f << c.time << ',' << c.cause << ',' << c.stats.rounds << ',' << (c.stats.quiescent ? 1 : 0) << ','
         << c.stats.information << ',' << c.stats.gradient << ',' << c.stats.control << ','
         << c.stats.max_info_per_pair() << ',' << c.stats.max_info_per_step() << '\n';
  }
  {
    auto f = open("readings.csv", readings_header(config.scenario.classes));
    for (const auto& s : r.readings) {
      *f << s.window << ',' << s.location << ',' << s.total;
      for (Eigen::Index i = 0; i < s.class_mass.size(); ++i) *f << ',' << s.class_mass(i) / s.duration;
      *f << '\n';
    }
  }
  nlohmann::json j{{"seed", config.seed},
                   {"scenario", to_string(config.scenario.kind)},
                   {"setpoint_warnings", r.setpoint_warnings},
                   {"parameters", r.final_parameters}};
  std::ofstream f(fs::path(dir) / "final_parameters.json");
  f << j.dump(2) << "\n";
}

}  // namespace ant
