#pragma once

// Message transports. The in-memory bus delivers in rounds: every endpoint
// drains its inbox, then produces messages for the next round, until no
// messages remain. The TCP transport runs each node in its own process and
// routes NDJSON lines through the driving process with the same rounds.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "ant/loss.hpp"
#include "ant/message.hpp"
#include "ant/node.hpp"

namespace ant {

class Endpoint {
 public:
  virtual ~Endpoint() = default;
  virtual std::string id() const = 0;
  virtual void deliver(const Message& msg) = 0;
  /// Called once per round after the inbox is drained.
  virtual std::vector<Message> poll() = 0;
};

struct NodeSnapshot {
  std::int64_t step = 0;
  bool has_result = false;
  bool stale = false;
  Vector mean;  // x_t half of the MAP
  Vector std;
  double parameter = 0.0;
  double parameter_gradient = 0.0;
};

/// What the runner needs from a node, wherever it lives.
class NodeHandle : public Endpoint {
 public:
  virtual void ensure_horizon(std::int64_t current) = 0;
  virtual void ingest(std::int64_t step, const std::string& sensor_id, const Vector& value) = 0;
  virtual NodeSnapshot snapshot(std::int64_t step) = 0;
};

NodeSnapshot snapshot_of(const Node& node, std::int64_t step);

/// Node living in this process. poll() re-fuses dirty steps during the
/// information period, then returns the node's outgoing messages.
class LocalNode : public NodeHandle {
 public:
  explicit LocalNode(NodeConfig config) : node_(std::move(config)) {}

  std::string id() const override { return node_.id(); }
  void deliver(const Message& msg) override { node_.handle(msg); }
  std::vector<Message> poll() override;
  void ensure_horizon(std::int64_t current) override { node_.ensure_horizon(current); }
  void ingest(std::int64_t step, const std::string& sensor_id, const Vector& value) override {
    node_.ingest_reading(step, sensor_id, value);
  }
  NodeSnapshot snapshot(std::int64_t step) override { return snapshot_of(node_, step); }

  Node& node() noexcept { return node_; }

 private:
  Node node_;
};

class LossEndpoint : public Endpoint {
 public:
  explicit LossEndpoint(LossNode& loss) : loss_(loss) {}
  std::string id() const override { return loss_.id(); }
  void deliver(const Message& msg) override { loss_.handle(msg); }
  std::vector<Message> poll() override { return loss_.take_messages(); }

 private:
  LossNode& loss_;
};

/// Message counts of one run of the bus until quiescence.
struct CascadeStats {
  int rounds = 0;
  bool quiescent = false;
  int information = 0;
  int gradient = 0;
  int control = 0;
  /// Information messages per (sender, recipient, step).
  std::map<std::tuple<std::string, std::string, std::int64_t>, int> info_per_pair;
  std::map<std::int64_t, int> info_per_step;

  int max_info_per_pair() const;
  int max_info_per_step() const;
};

class InMemoryBus {
 public:
  /// Endpoints are polled in registration order; not owned.
  void add(Endpoint& endpoint);
  /// Queues a message for the next round, e.g. a control broadcast.
  void post(Message msg);
  /// Runs rounds until no messages are in flight. Throws Error naming the
  /// recipient for undeliverable messages.
  CascadeStats run(int max_rounds = 1000);

 private:
  std::vector<Endpoint*> endpoints_;
  std::map<std::string, Endpoint*> by_id_;
  std::vector<Message> queue_;
};

/// Node in a forked child process, reached over a loopback TCP connection.
/// Messages travel as encoded NDJSON lines; runner commands are JSON lines
/// with an "op" field.
class RemoteNode : public NodeHandle {
 public:
  /// Forks a child serving `config`. The child exits when the handle is
  /// destroyed or shutdown() is called.
  explicit RemoteNode(NodeConfig config);
  ~RemoteNode() override;
  RemoteNode(const RemoteNode&) = delete;
  RemoteNode& operator=(const RemoteNode&) = delete;

  std::string id() const override { return id_; }
  void deliver(const Message& msg) override;
  std::vector<Message> poll() override;
  void ensure_horizon(std::int64_t current) override;
  void ingest(std::int64_t step, const std::string& sensor_id, const Vector& value) override;
  NodeSnapshot snapshot(std::int64_t step) override;
  void shutdown();
  int port() const noexcept { return port_; }

 private:
  std::string request(const std::string& line);
  void send_line(const std::string& line);
  std::string read_line();

  std::string id_;
  int fd_ = -1;
  int pid_ = -1;
  int port_ = 0;
  std::string buffer_;
};

/// Serves one node on an accepted connection until shutdown or EOF.
void serve_node(int fd, NodeConfig config);

}  // namespace ant
