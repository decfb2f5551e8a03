#include "ant/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>

#include <json.hpp>

#include "ant/errors.hpp"
#include "json_util.hpp"

namespace ant {

NodeSnapshot snapshot_of(const Node& node, std::int64_t step) {
  NodeSnapshot s;
  s.step = step;
  s.parameter = node.parameter();
  s.parameter_gradient = node.parameter_gradient();
  const auto* r = node.step(step);
  if (r == nullptr || !r->result) return s;
  const auto n = node.state_dim();
  s.has_result = true;
  s.stale = r->stale;
  s.mean = r->result->map.tail(n);
  s.std = r->result->post_cov.diagonal().tail(n).cwiseMax(0.0).cwiseSqrt();
  return s;
}

std::vector<Message> LocalNode::poll() {
  if (node_.period() == Period::information) node_.resolve_dirty();
  return node_.generate_messages();
}

int CascadeStats::max_info_per_pair() const {
  int m = 0;
  for (const auto& [k, v] : info_per_pair) m = std::max(m, v);
  return m;
}

int CascadeStats::max_info_per_step() const {
  int m = 0;
  for (const auto& [k, v] : info_per_step) m = std::max(m, v);
  return m;
}

void InMemoryBus::add(Endpoint& endpoint) {
  const auto id = endpoint.id();
  if (by_id_.count(id)) throw ConfigError("duplicate endpoint '" + id + "'");
  endpoints_.push_back(&endpoint);
  by_id_[id] = &endpoint;
}

void InMemoryBus::post(Message msg) { queue_.push_back(std::move(msg)); }

CascadeStats InMemoryBus::run(int max_rounds) {
  CascadeStats stats;
  auto count = [&](const Message& m) {
    switch (m.type) {
      case MessageType::information:
        ++stats.information;
        ++stats.info_per_pair[{m.sender, m.recipient, m.time_stamp}];
        ++stats.info_per_step[m.time_stamp];
        break;
      case MessageType::gradient:
        ++stats.gradient;
        break;
      case MessageType::control:
        ++stats.control;
        break;
    }
  };
  for (const auto& m : queue_) count(m);
  // The first round always polls, so fresh sensor data gets fused.
  do {
    std::map<std::string, std::vector<Message>> inbox;
    for (auto& m : queue_) {
      if (!by_id_.count(m.recipient)) throw Error("no endpoint '" + m.recipient + "' for message from '" + m.sender + "'");
      inbox[m.recipient].push_back(std::move(m));
    }
    queue_.clear();
    for (auto* e : endpoints_) {
      for (const auto& m : inbox[e->id()]) e->deliver(m);
      for (auto& m : e->poll()) {
        count(m);
        queue_.push_back(std::move(m));
      }
    }
    ++stats.rounds;
  } while (!queue_.empty() && stats.rounds < max_rounds);
  stats.quiescent = queue_.empty();
  return stats;
}

// ---------------------------------------------------------------- TCP

namespace {

void write_all(int fd, const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const auto n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(std::string("socket write failed: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

// Returns false on EOF.
bool read_line(int fd, std::string& buffer, std::string& line) {
  for (;;) {
    const auto pos = buffer.find('\n');
    if (pos != std::string::npos) {
      line = buffer.substr(0, pos + 1);
      buffer.erase(0, pos + 1);
      return true;
    }
    char chunk[65536];
    const auto n = ::recv(fd, chunk, sizeof chunk, 0);
    if (n == 0) return false;
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(std::string("socket read failed: ") + std::strerror(errno));
    }
    buffer.append(chunk, static_cast<std::size_t>(n));
  }
}

std::string op_line(nlohmann::json j) { return j.dump() + "\n"; }

nlohmann::json snapshot_json(const NodeSnapshot& s) {
  return {{"op", "snapshot"},
          {"step", s.step},
          {"has_result", s.has_result},
          {"stale", s.stale},
          {"mean", json_util::vector(s.mean)},
          {"std", json_util::vector(s.std)},
          {"parameter", s.parameter},
          {"parameter_gradient", s.parameter_gradient}};
}

}  // namespace

void serve_node(int fd, NodeConfig config) {
  LocalNode node(std::move(config));
  std::string buffer, line, error;
  while (read_line(fd, buffer, line)) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      error = e.what();
      continue;
    }
    if (!j.is_object() || !j.contains("op")) {
      // a plain ANT message
      if (!error.empty()) continue;
      try {
        node.deliver(decode(line));
      } catch (const std::exception& e) {
        error = e.what();
      }
      continue;
    }
    const auto op = j["op"].get<std::string>();
    if (op == "shutdown") break;
    std::string reply;
    try {
      if (!error.empty()) throw Error(error);
      if (op == "poll") {
        for (const auto& m : node.poll()) reply += encode(m);
        reply += op_line({{"op", "done"}});
      } else if (op == "horizon") {
        node.ensure_horizon(j.at("step").get<std::int64_t>());
        reply = op_line({{"op", "ok"}});
      } else if (op == "ingest") {
        node.ingest(j.at("step").get<std::int64_t>(), j.at("sensor").get<std::string>(),
                    json_util::to_vector(j.at("value")));
        reply = op_line({{"op", "ok"}});
      } else if (op == "snapshot") {
        reply = op_line(snapshot_json(node.snapshot(j.at("step").get<std::int64_t>())));
      } else {
        throw Error("unknown op '" + op + "'");
      }
    } catch (const std::exception& e) {
      error.clear();
      reply = op_line({{"op", "error"}, {"what", e.what()}});
    }
    write_all(fd, reply);
  }
  ::close(fd);
}

RemoteNode::RemoteNode(NodeConfig config) : id_(config.id) {
  const int listener = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listener < 0) throw Error(std::string("socket: ") + std::strerror(errno));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  socklen_t len = sizeof addr;
  if (::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listener, 1) != 0 ||
      ::getsockname(listener, reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
    ::close(listener);
    throw Error(std::string("bind/listen: ") + std::strerror(errno));
  }
  port_ = ntohs(addr.sin_port);
  pid_ = ::fork();
  if (pid_ < 0) {
    ::close(listener);
    throw Error(std::string("fork: ") + std::strerror(errno));
  }
  if (pid_ == 0) {
    const int conn = ::accept(listener, nullptr, nullptr);
    ::close(listener);
    int code = 0;
    try {
      if (conn < 0) throw Error("accept failed");
      serve_node(conn, std::move(config));
    } catch (...) {
      code = 2;
    }
    ::_exit(code);
  }
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0 || ::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    ::close(listener);
    throw Error(std::string("connect: ") + std::strerror(errno));
  }
  ::close(listener);
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

RemoteNode::~RemoteNode() {
  try {
    shutdown();
  } catch (...) {
  }
}

void RemoteNode::shutdown() {
  if (fd_ >= 0) {
    try {
      send_line(op_line({{"op", "shutdown"}}));
    } catch (...) {
    }
    ::close(fd_);
    fd_ = -1;
  }
  if (pid_ > 0) {
    int status = 0;
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
  }
}

void RemoteNode::send_line(const std::string& line) {
  if (fd_ < 0) throw Error("node '" + id_ + "' is shut down");
  write_all(fd_, line);
}

std::string RemoteNode::read_line() {
  std::string line;
  if (!ant::read_line(fd_, buffer_, line)) throw Error("node '" + id_ + "' closed the connection");
  return line;
}

std::string RemoteNode::request(const std::string& line) {
  send_line(line);
  std::string reply = read_line();
  const auto j = nlohmann::json::parse(reply);
  if (j.value("op", std::string()) == "error") throw Error("node '" + id_ + "': " + j.value("what", std::string()));
  return reply;
}

void RemoteNode::deliver(const Message& msg) { send_line(encode(msg)); }

std::vector<Message> RemoteNode::poll() {
  send_line(op_line({{"op", "poll"}}));
  std::vector<Message> out;
  for (;;) {
    const std::string line = read_line();
    const auto j = nlohmann::json::parse(line);
    if (j.contains("op")) {
      const auto op = j["op"].get<std::string>();
      if (op == "done") return out;
      throw Error("node '" + id_ + "': " + j.value("what", std::string("unexpected reply")));
    }
    out.push_back(decode(line));
  }
}

void RemoteNode::ensure_horizon(std::int64_t current) { request(op_line({{"op", "horizon"}, {"step", current}})); }

void RemoteNode::ingest(std::int64_t step, const std::string& sensor_id, const Vector& value) {
  request(op_line({{"op", "ingest"}, {"step", step}, {"sensor", sensor_id}, {"value", json_util::vector(value)}}));
}

NodeSnapshot RemoteNode::snapshot(std::int64_t step) {
  const auto j = nlohmann::json::parse(request(op_line({{"op", "snapshot"}, {"step", step}})));
  NodeSnapshot s;
  s.step = j.at("step").get<std::int64_t>();
  s.has_result = j.at("has_result").get<bool>();
  s.stale = j.at("stale").get<bool>();
  s.mean = json_util::to_vector(j.at("mean"));
  s.std = json_util::to_vector(j.at("std"));
  s.parameter = j.at("parameter").get<double>();
  s.parameter_gradient = j.at("parameter_gradient").get<double>();
  return s;
}

}  // namespace ant
