#include "ant/message.hpp"

#include <cmath>
#include <set>

#include <json.hpp>

#include "ant/errors.hpp"

namespace ant {

using nlohmann::json;

const char* to_string(MessageType t) {
  switch (t) {
    case MessageType::information: return "information";
    case MessageType::gradient: return "gradient";
    case MessageType::control: return "control";
  }
  return "?";
}

const char* to_string(ControlAction a) {
  return a == ControlAction::to_information ? "to_information" : "to_backpropagation";
}

Message Message::information(std::string sender, std::string recipient, std::int64_t step,
                             const GaussianEstimate& est) {
  Message m;
  m.sender = std::move(sender);
  m.recipient = std::move(recipient);
  m.type = MessageType::information;
  m.time_stamp = step;
  m.mean = est.mean();
  m.cov = est.cov();
  return m;
}

Message Message::gradient_msg(std::string sender, std::string recipient, std::int64_t step, Vector g) {
  Message m;
  m.sender = std::move(sender);
  m.recipient = std::move(recipient);
  m.type = MessageType::gradient;
  m.time_stamp = step;
  m.gradient = std::move(g);
  return m;
}

Message Message::control(std::string sender, std::string recipient, ControlAction action) {
  Message m;
  m.sender = std::move(sender);
  m.recipient = std::move(recipient);
  m.type = MessageType::control;
  m.action = action;
  return m;
}

bool Message::operator==(const Message& o) const {
  if (sender != o.sender || recipient != o.recipient || type != o.type) return false;
  switch (type) {
    case MessageType::information:
      return time_stamp == o.time_stamp && mean.size() == o.mean.size() && mean == o.mean &&
             cov.rows() == o.cov.rows() && cov.cols() == o.cov.cols() && cov == o.cov;
    case MessageType::gradient:
      return time_stamp == o.time_stamp && gradient.size() == o.gradient.size() && gradient == o.gradient;
    case MessageType::control: return action == o.action;
  }
  return false;
}

namespace {

json vec_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v(i))) throw MalformedMessage("cannot encode non-finite value", 0);
    a.push_back(v(i));
  }
  return a;
}

Vector json_vec(const json& a, const char* field) {
  if (!a.is_array()) throw MalformedMessage(std::string("field '") + field + "' must be an array", 0);
  Vector v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number()) throw MalformedMessage(std::string("field '") + field + "' must hold numbers", 0);
    v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  }
  return v;
}

}  // namespace

std::string encode(const Message& msg) {
  json j;
  j["sender"] = msg.sender;
  j["recipient"] = msg.recipient;
  j["type"] = to_string(msg.type);
  switch (msg.type) {
    case MessageType::information: {
      if (msg.cov.rows() != msg.mean.size() || msg.cov.cols() != msg.mean.size())
        throw MalformedMessage("information cov must be square and match mean", 0);
      j["time_stamp"] = msg.time_stamp;
      j["mean"] = vec_json(msg.mean);
      json rows = json::array();
      for (Eigen::Index r = 0; r < msg.cov.rows(); ++r) rows.push_back(vec_json(msg.cov.row(r).transpose()));
      j["cov"] = std::move(rows);
      break;
    }
    case MessageType::gradient:
      j["time_stamp"] = msg.time_stamp;
      j["gradient"] = vec_json(msg.gradient);
      break;
    case MessageType::control: j["action"] = to_string(msg.action); break;
  }
  return j.dump() + "\n";
}

Message decode(std::string_view line) {
  while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.remove_suffix(1);
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw MalformedMessage(std::string("invalid JSON: ") + e.what(), e.byte > 0 ? e.byte - 1 : 0);
  }
  if (!j.is_object()) throw MalformedMessage("message must be a JSON object", 0);

  auto str = [&](const char* f) {
    if (!j.contains(f) || !j[f].is_string()) throw MalformedMessage(std::string("missing string field '") + f + "'", 0);
    return j[f].get<std::string>();
  };
  Message m;
  m.sender = str("sender");
  m.recipient = str("recipient");
  const std::string type = str("type");
  std::set<std::string> allowed{"sender", "recipient", "type"};
  if (type == "information") {
    m.type = MessageType::information;
    allowed.insert({"time_stamp", "mean", "cov"});
  } else if (type == "gradient") {
    m.type = MessageType::gradient;
    allowed.insert({"time_stamp", "gradient"});
  } else if (type == "control") {
    m.type = MessageType::control;
    allowed.insert("action");
  } else {
    throw MalformedMessage("unknown message type '" + type + "'", 0);
  }
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw MalformedMessage("field '" + key + "' not allowed in " + type + " message", 0);
  for (const auto& key : allowed)
    if (!j.contains(key)) throw MalformedMessage("missing field '" + key + "' in " + type + " message", 0);

  if (m.type != MessageType::control) {
    const auto& ts = j["time_stamp"];
    if (!ts.is_number_integer()) throw MalformedMessage("field 'time_stamp' must be an integer", 0);
    m.time_stamp = ts.get<std::int64_t>();
  }
  if (m.type == MessageType::information) {
    m.mean = json_vec(j["mean"], "mean");
    const auto& c = j["cov"];
    if (!c.is_array() || c.size() != static_cast<std::size_t>(m.mean.size()))
      throw MalformedMessage("field 'cov' must have one row per mean entry", 0);
    m.cov.resize(m.mean.size(), m.mean.size());
    for (std::size_t r = 0; r < c.size(); ++r) {
      const Vector row = json_vec(c[r], "cov");
      if (row.size() != m.mean.size()) throw MalformedMessage("field 'cov' must be square", 0);
      m.cov.row(static_cast<Eigen::Index>(r)) = row.transpose();
    }
  } else if (m.type == MessageType::gradient) {
    m.gradient = json_vec(j["gradient"], "gradient");
  } else {
    const auto& a = j["action"];
    if (!a.is_string()) throw MalformedMessage("field 'action' must be a string", 0);
    const auto s = a.get<std::string>();
    if (s == "to_information") m.action = ControlAction::to_information;
    else if (s == "to_backpropagation") m.action = ControlAction::to_backpropagation;
    else throw MalformedMessage("unknown control action '" + s + "'", 0);
  }
  return m;
}

}  // namespace ant
