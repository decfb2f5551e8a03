#include "ant/config.hpp"

#include <filesystem>
#include <set>

#include <json.hpp>

#include "ant/errors.hpp"
#include "ant/models.hpp"
#include "json_util.hpp"

namespace ant {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string resolve(const std::string& base, const std::string& path) {
  const fs::path p(path);
  return p.is_absolute() ? path : (fs::path(base) / p).lexically_normal().string();
}

// One row over x_t per object entry, placed on the x_t half of x*.
Matrix rows_matrix(const json& rows, const StateLayout& layout, bool concatenated) {
  const auto n = layout.size();
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), concatenated ? 2 * n : n);
  const Eigen::Index off = concatenated ? n : 0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (!rows[r].is_object() || rows[r].empty()) throw ConfigError("rows must be non-empty objects of coefficients");
    for (const auto& [name, coef] : rows[r].items())
      m(static_cast<Eigen::Index>(r), off + layout.index(name)) += coef.get<double>();
  }
  return m;
}

Matrix coordinates_matrix(const json& names, const StateLayout& layout) {
  json rows = json::array();
  for (const auto& n : names) rows.push_back(json{{n.get<std::string>(), 1.0}});
  return rows_matrix(rows, layout, true);
}

Vector broadcast(const json& v, Eigen::Index n, const char* what) {
  if (v.is_number()) return Vector::Constant(n, v.get<double>());
  Vector out = json_util::to_vector(v);
  if (out.size() != n) throw ConfigError(std::string(what) + " needs " + std::to_string(n) + " entries");
  return out;
}

}  // namespace

std::string machine_of(const NodeConfig& config) { return config.layout.machine; }

NodeConfig node_config_from_json(const std::string& text, const std::string& base_dir) {
  try {
    const json j = json::parse(text);
    NodeConfig c;
    c.id = j.at("id").get<std::string>();
    const auto machine = j.at("machine").get<std::string>();
    const int history_len = j.value("history_len", 8);
    const double dt = j.value("dt", 30.0);
    if (machine == "siever") c.layout = siever_layout(history_len);
    else if (machine == "conveyor") c.layout = conveyor_layout(history_len);
    else if (machine == "magsorter") c.layout = magsorter_layout();
    else throw ConfigError("unknown machine '" + machine + "'");

    const json pred = j.value("prediction", json::object());
    c.prediction_model = lowpass_prediction(c.layout, pred.value("std_input", 1e-2), pred.value("std_rest", 1.0),
                                            pred.value("std_shift", 1e-4));

    if (machine == "siever") {
      const auto params =
          siever_params_from_json(json_util::read_file(resolve(base_dir, j.at("model").get<std::string>())),
                                  history_len, dt);
      c.process_models.push_back(std::make_shared<SieverModel>(c.layout, params));
    } else if (machine == "conveyor") {
      c.process_models.push_back(conveyor_model(c.layout, j.value("delay", 32.0), dt, j.value("std_out", 1e-4)));
    } else {
      Matrix cov;
      MlpModel mlp = mlp_from_json(json_util::read_file(resolve(base_dir, j.at("model").get<std::string>())), &cov);
      c.process_models.push_back(std::make_shared<MagsorterModel>(std::move(mlp), std::move(cov),
                                                                  j.value("conservation_var", 1e-4),
                                                                  j.value("independence_var", 1e-8)));
    }

    if (j.contains("parameter")) {
      const auto& p = j["parameter"];
      ParameterSpec s;
      s.name = p.value("name", c.layout.names[static_cast<std::size_t>(c.layout.parameter())]);
      s.lo = p.at("lo").get<double>();
      s.hi = p.at("hi").get<double>();
      s.initial = p.at("initial").get<double>();
      s.obs_std = p.value("obs_std", 1e-3);
      c.parameter = s;
    }

    const auto free = c.layout.size() - (c.parameter ? 1 : 0);
    const json prior = j.value("prior", json::object());
    const Vector mean = broadcast(prior.value("mean", json(0.01)), free, "prior mean");
    const Vector sd = broadcast(prior.value("std", json(0.05)), free, "prior std");
    if ((sd.array() <= 0.0).any()) throw ConfigError("prior std must be positive");
    c.initial_prior = GaussianEstimate(mean, sd.array().square().matrix().asDiagonal());

    for (const auto& nb : j.value("neighbors", json::array())) {
      NeighborRegistration r;
      r.name = nb.at("name").get<std::string>();
      r.send_information = nb.value("send_information", true);
      if (nb.contains("coordinates")) r.obs_matrix = coordinates_matrix(nb["coordinates"], c.layout);
      else r.obs_matrix = rows_matrix(nb.at("rows"), c.layout, true);
      c.neighbors.push_back(std::move(r));
    }
    for (const auto& s : j.value("sensors", json::array())) {
      SensorBinding b;
      b.id = s.at("id").get<std::string>();
      b.location = s.at("location").get<std::string>();
      location_index(b.location);
      b.selector = rows_matrix(s.at("rows"), c.layout, false);
      if (b.selector.rows() != 1) throw ConfigError("sensor '" + b.id + "' must have exactly one row (a total)");
      b.rel_std = s.value("rel_std", b.rel_std);
      b.floor_std = s.value("floor_std", b.floor_std);
      if (b.rel_std < 0.0 || !(b.floor_std > 0.0)) throw ConfigError("sensor '" + b.id + "' noise must be positive");
      c.sensors.push_back(std::move(b));
    }
    c.delta_info = j.value("delta_info", c.delta_info);
    c.delta_grad = j.value("delta_grad", c.delta_grad);
    c.horizon = j.value("horizon", c.horizon);
    c.history = j.value("history", c.history);
    const auto jac = j.value("jacobian", std::string("exact"));
    if (jac == "exact") c.jacobian_mode = JacobianMode::exact;
    else if (jac == "gauss_newton") c.jacobian_mode = JacobianMode::gauss_newton;
    else throw ConfigError("jacobian must be 'exact' or 'gauss_newton'");
    if (j.contains("rprop")) {
      const auto& r = j["rprop"];
      c.rprop.eta_plus = r.value("eta_plus", c.rprop.eta_plus);
      c.rprop.eta_minus = r.value("eta_minus", c.rprop.eta_minus);
      c.rprop.initial_fraction = r.value("initial_fraction", c.rprop.initial_fraction);
      c.rprop.min_fraction = r.value("min_fraction", c.rprop.min_fraction);
      c.rprop.max_fraction = r.value("max_fraction", c.rprop.max_fraction);
    }
    // the node constructor checks ranks and sizes; fail at load time
    Node check(c);
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("node config: ") + e.what());
  }
}

NodeConfig node_config_from_file(const std::string& path) {
  try {
    return node_config_from_json(json_util::read_file(path), fs::path(path).parent_path().string());
  } catch (const ConfigError& e) {
    throw ConfigError("'" + path + "': " + e.what());
  }
}

void RunConfig::validate() const {
  if (nodes.empty()) throw ConfigError("run needs at least one node");
  if (!(duration > 0.0) || !(dt > 0.0) || !(switch_interval > 0.0))
    throw ConfigError("duration, dt and switch_interval must be positive");
  if (scenario.window != dt) throw ConfigError("sensor window must equal the ANT step");
  std::set<std::string> ids{loss.id};
  for (const auto& n : nodes)
    if (!ids.insert(n.id).second) throw ConfigError("duplicate node id '" + n.id + "'");
  bool target = false;
  for (const auto& n : nodes) {
    for (const auto& nb : n.neighbors) {
      if (!ids.count(nb.name)) throw ConfigError("node '" + n.id + "': unknown neighbor '" + nb.name + "'");
      if (nb.name == loss.id) {
        if (n.id != loss.target) throw ConfigError("only the loss target may register the loss node");
        bool same = nb.obs_matrix.rows() == loss.dim();
        for (Eigen::Index i = 0; same && i < loss.dim(); ++i) {
          const auto name = loss.coordinates[static_cast<std::size_t>(i)];
          if (!n.layout.has(name)) {
            same = false;
            break;
          }
          Vector want = Vector::Zero(nb.obs_matrix.cols());
          want(n.layout.size() + n.layout.index(name)) = 1.0;
          same = nb.obs_matrix.row(i).transpose() == want;
        }
        if (!same)
          throw ConfigError("loss registration of '" + n.id + "' does not select the loss coordinates in order");
        target = true;
      }
    }
  }
  if (!target) throw ConfigError("loss target '" + loss.target + "' does not register the loss node");
  // the graph must be connected through registrations
  std::set<std::string> seen{nodes.front().id};
  for (bool grew = true; grew;) {
    grew = false;
    for (const auto& n : nodes)
      for (const auto& nb : n.neighbors)
        if (seen.count(n.id) != seen.count(nb.name)) {
          grew |= seen.insert(n.id).second;
          grew |= seen.insert(nb.name).second;
        }
  }
  for (const auto& n : nodes)
    if (!seen.count(n.id)) throw ConfigError("node graph is not connected: '" + n.id + "' is isolated");
}

RunConfig run_config_from_file(const std::string& path) {
  const std::string base = fs::path(path).parent_path().string();
  try {
    const json j = json_util::parse_file(path);
    RunConfig r;
    if (j.contains("scenario")) {
      const auto& s = j["scenario"];
      r.scenario = facility_spec_from_json(s.is_string() ? json_util::read_file(resolve(base, s.get<std::string>()))
                                                         : s.dump());
    }
    for (const auto& n : j.at("nodes")) r.nodes.push_back(node_config_from_file(resolve(base, n.get<std::string>())));
    if (j.contains("loss")) {
      const auto& l = j["loss"];
      r.loss = loss_spec_from_json(l.is_string() ? json_util::read_file(resolve(base, l.get<std::string>())) : l.dump());
    }
    const auto transport = j.value("transport", std::string("in-memory"));
    if (transport == "in-memory") r.transport = TransportKind::in_memory;
    else if (transport == "tcp") r.transport = TransportKind::tcp;
    else throw ConfigError("transport must be 'in-memory' or 'tcp'");
    r.seed = j.value("seed", r.seed);
    r.duration = j.value("duration", r.duration);
    r.dt = j.value("dt", r.dt);
    r.optimize = j.value("optimize", r.optimize);
    r.activation = j.value("activation", r.activation);
    r.switch_interval = j.value("switch_interval", r.switch_interval);
    r.out_dir = j.value("out", r.out_dir);
    r.scenario.window = r.dt;
    r.validate();
    return r;
  } catch (const json::exception& e) {
    throw ConfigError("'" + path + "': " + e.what());
  }
}

}  // namespace ant
