#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "ant/models.hpp"
#include "ant/node.hpp"
#include "support.hpp"

using namespace ant;

namespace {

// x = [a, p]; process a_t = 0.5 p_t, one sensor on a, neighbor "peer" sees a_t.
NodeConfig toy_config(bool with_parameter = true) {
  NodeConfig c;
  c.id = "toy";
  c.layout.machine = "toy";
  c.layout.add("a", CoordRole::input);
  if (with_parameter) c.layout.add("p", CoordRole::parameter);
  const auto n = c.layout.size();
  c.prediction_model = lowpass_prediction(c.layout, 0.5);
  if (with_parameter) {
    c.process_models.push_back(std::make_shared<ant::testing::FunctionModel>(
        2 * n, Matrix::Identity(1, 1) * 0.01, [n](const Vector& x) { return Vector::Constant(1, x(n) - 0.5 * x(n + 1)); },
        [n](const Vector&) {
          Matrix j = Matrix::Zero(1, 2 * n);
          j(0, n) = 1.0;
          j(0, n + 1) = -0.5;
          return j;
        }));
    c.parameter = ParameterSpec{"p", 0.0, 10.0, 2.0, 1e-3};
  }
  c.initial_prior = GaussianEstimate(Vector::Zero(1), Matrix::Identity(1, 1));
  Matrix m = Matrix::Zero(1, 2 * n);
  m(0, n) = 1.0;
  c.neighbors.push_back({"peer", m});
  Matrix sel = Matrix::Zero(1, n);
  sel(0, 0) = 1.0;
  c.sensors.push_back({"s", "loc", sel, 0.0, 1.0});
  return c;
}

Message control(ControlAction a) { return Message::control("loss", "toy", a); }

}  // namespace

TEST(NodeHorizon, FreshNodeCreatesHorizon) {
  Node node(toy_config());
  const auto created = node.ensure_horizon(0);
  EXPECT_EQ(created.size(), 9u);  // current plus eight future steps
  EXPECT_EQ(node.step_indices().back() - node.current_step(), 8);
  EXPECT_TRUE(node.ensure_horizon(0).empty());
  EXPECT_EQ(node.ensure_horizon(1).size(), 1u);
  EXPECT_EQ(node.step_indices().back() - node.current_step(), 8);
}

TEST(NodeHorizon, OldStepsAreDropped) {
  NodeConfig c = toy_config();
  c.history = 2;
  Node node(c);
  node.ensure_horizon(0);
  node.ensure_horizon(10);
  EXPECT_EQ(node.step_indices().front(), 8);
}

TEST(NodeSensors, OverwriteKeepsOneSource) {
  Node node(toy_config());
  node.ensure_horizon(0);
  node.ingest_reading(0, "s", Vector::Constant(1, 1.0));
  node.ingest_reading(0, "s", Vector::Constant(1, 2.0));
  EXPECT_EQ(node.step(0)->sensors.size(), 1u);
  EXPECT_EQ(node.step(0)->sensors.at("s").value.mean()(0), 2.0);
  EXPECT_TRUE(node.step(0)->dirty);
  EXPECT_THROW(node.ingest_reading(0, "nope", Vector::Constant(1, 1.0)), ConfigError);
}

TEST(NodeSensors, FrozenStepRejectsSensor) {
  Node node(toy_config());
  node.ensure_horizon(0);
  node.handle(control(ControlAction::to_backpropagation));
  EXPECT_THROW(node.ingest_reading(0, "s", Vector::Constant(1, 1.0)), FrozenStep);
}

TEST(NodeResolve, PriorAndSensorScalar) {
  NodeConfig c = toy_config(false);
  Node node(c);
  node.ensure_horizon(0);
  node.ingest_reading(0, "s", Vector::Constant(1, 2.0));
  const auto& r = node.resolve_step(0);
  const double a = r.map(1);
  EXPECT_NEAR(a, 1.0, 1e-9);  // equal variances
  EXPECT_GT(a, 0.0);
  EXPECT_LT(a, 2.0);
}

TEST(NodeResolve, CascadeUpdatesSuccessorPrior) {
  Node node(toy_config());
  node.ensure_horizon(0);
  node.resolve_dirty();
  const GaussianEstimate before = node.step(1)->prior;
  node.ingest_reading(0, "s", Vector::Constant(1, 3.0));
  node.resolve_step(0);
  EXPECT_GT(kl_divergence_bits(node.step(1)->prior, before), 0.0);
  EXPECT_TRUE(node.step(1)->dirty);
  node.resolve_dirty();
  for (auto k : node.step_indices()) EXPECT_FALSE(node.step(k)->dirty);
}

TEST(NodeInformation, UnknownNeighborRejected) {
  Node node(toy_config());
  node.ensure_horizon(0);
  Message m = Message::information("stranger", "toy", 0, GaussianEstimate(Vector::Zero(1), Matrix::Identity(1, 1)));
  EXPECT_THROW(node.handle(m), UnknownNeighbor);
}

TEST(NodeInformation, DuplicateOverwrites) {
  Node node(toy_config());
  node.ensure_horizon(0);
  node.handle(Message::information("peer", "toy", 0, GaussianEstimate(Vector::Constant(1, 1.0), Matrix::Identity(1, 1))));
  EXPECT_EQ(node.step(0)->comms.size(), 1u);
  node.handle(Message::information("peer", "toy", 0, GaussianEstimate(Vector::Constant(1, 4.0), Matrix::Identity(1, 1))));
  EXPECT_EQ(node.step(0)->comms.size(), 1u);
  EXPECT_EQ(node.step(0)->comms.at("peer").value.mean()(0), 4.0);
}

TEST(NodeInformation, SendOncePerNeighborAndStep) {
  Node node(toy_config());
  node.ensure_horizon(0);
  node.resolve_dirty();
  const auto first = node.generate_info_messages();
  EXPECT_EQ(first.size(), node.step_indices().size());
  for (const auto& m : first) EXPECT_EQ(m.recipient, "peer");
  EXPECT_TRUE(node.generate_info_messages().empty());
  node.ingest_reading(0, "s", Vector::Constant(1, 3.0));
  node.resolve_dirty();
  EXPECT_FALSE(node.generate_info_messages().empty());
}

TEST(NodeInformation, ReceiveOnlyNeighborGetsNothing) {
  NodeConfig c = toy_config();
  c.neighbors[0].send_information = false;
  Node node(c);
  node.ensure_horizon(0);
  node.resolve_dirty();
  EXPECT_TRUE(node.generate_info_messages().empty());
  node.handle(Message::information("peer", "toy", 0, GaussianEstimate(Vector::Ones(1), Matrix::Identity(1, 1))));
  EXPECT_EQ(node.step(0)->comms.size(), 1u);
}

TEST(NodeGradient, OutsidePeriodRejected) {
  Node node(toy_config());
  node.ensure_horizon(0);
  node.resolve_dirty();
  EXPECT_THROW(node.handle(Message::gradient_msg("peer", "toy", 0, Vector::Ones(1))), GradientOutsidePeriod);
}

TEST(NodeGradient, MissingResultRejected) {
  Node node(toy_config());
  node.ensure_horizon(0);
  node.handle(control(ControlAction::to_backpropagation));
  EXPECT_THROW(node.handle(Message::gradient_msg("peer", "toy", 0, Vector::Ones(1))), MissingFusionResult);
}

TEST(NodeGradient, ZeroGradientQueuesNothing) {
  Node node(toy_config());
  node.ensure_horizon(0);
  node.resolve_dirty();
  node.handle(control(ControlAction::to_backpropagation));
  node.handle(Message::gradient_msg("peer", "toy", 1, Vector::Zero(1)));
  EXPECT_EQ(node.parameter_gradient(), 0.0);
  EXPECT_TRUE(node.generate_gradient_messages().empty());
}

TEST(NodeGradient, ReachesParameterAndAccumulates) {
  Node node(toy_config());
  node.ensure_horizon(0);
  node.resolve_dirty();
  node.handle(control(ControlAction::to_backpropagation));
  node.handle(Message::gradient_msg("peer", "toy", 1, Vector::Constant(1, 1.0)));
  const double once = node.parameter_gradient();
  // a = 0.5 p with a tight process model and tight parameter observation
  EXPECT_NEAR(once, 0.5, 1e-3);
  node.handle(Message::gradient_msg("peer", "toy", 1, Vector::Constant(1, 1.0)));
  EXPECT_NEAR(node.parameter_gradient(), 2.0 * once, 1e-12);
}

TEST(NodeGradient, AccumulationIsOrderIndependent) {
  std::mt19937_64 rng(4);
  std::vector<Message> msgs;
  std::normal_distribution<double> nd;
  for (int i = 0; i < 12; ++i) msgs.push_back(Message::gradient_msg("peer", "toy", 1 + i % 3, Vector::Constant(1, nd(rng))));
  auto run = [&](const std::vector<Message>& order) {
    Node node(toy_config());
    node.ensure_horizon(0);
    node.handle(Message::information("peer", "toy", 1, GaussianEstimate(Vector::Constant(1, 1.0), Matrix::Identity(1, 1))));
    node.resolve_dirty();
    node.handle(control(ControlAction::to_backpropagation));
    for (const auto& m : order) node.handle(m);
    return node.parameter_gradient();
  };
  const double a = run(msgs);
  std::shuffle(msgs.begin(), msgs.end(), rng);
  EXPECT_NEAR(run(msgs), a, 1e-12);
}

TEST(NodeGradient, RelayedOnlyToInformationSources) {
  Node node(toy_config());
  node.ensure_horizon(0);
  node.handle(Message::information("peer", "toy", 2, GaussianEstimate(Vector::Constant(1, 1.0), Matrix::Identity(1, 1) * 1e-6)));
  node.resolve_dirty();
  node.handle(control(ControlAction::to_backpropagation));
  node.handle(Message::gradient_msg("peer", "toy", 2, Vector::Constant(1, 1.0)));
  node.handle(Message::gradient_msg("peer", "toy", 4, Vector::Constant(1, 1.0)));
  const auto out = node.generate_gradient_messages();
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].time_stamp, 2);
  EXPECT_EQ(out[0].recipient, "peer");
}

TEST(NodeGradient, SmallFollowUpSuppressed) {
  Node node(toy_config());
  node.ensure_horizon(0);
  node.handle(Message::information("peer", "toy", 2, GaussianEstimate(Vector::Constant(1, 1.0), Matrix::Identity(1, 1) * 1e-6)));
  node.resolve_dirty();
  node.handle(control(ControlAction::to_backpropagation));
  node.handle(Message::gradient_msg("peer", "toy", 2, Vector::Constant(1, 1.0)));
  const auto first = node.generate_gradient_messages();
  ASSERT_EQ(first.size(), 1u);
  const double sent = std::abs(first[0].gradient(0));
  // follow-up scaled so the relayed part is about 1e-9 of what was sent
  node.handle(Message::gradient_msg("peer", "toy", 2, Vector::Constant(1, 1e-9)));
  EXPECT_TRUE(node.generate_gradient_messages().empty());
  node.handle(Message::gradient_msg("peer", "toy", 2, Vector::Constant(1, 1.0)));
  EXPECT_EQ(node.generate_gradient_messages().size(), 1u);
  EXPECT_GT(sent, 0.0);
}

TEST(NodeControl, FreezeKeepsResultsBitwise) {
  Node node(toy_config());
  node.ensure_horizon(0);
  node.ingest_reading(0, "s", Vector::Constant(1, 1.5));
  node.resolve_dirty();
  const Vector before = node.step(0)->result->map;
  node.handle(control(ControlAction::to_backpropagation));
  node.handle(Message::information("peer", "toy", 0, GaussianEstimate(Vector::Constant(1, 9.0), Matrix::Identity(1, 1))));
  node.resolve_dirty();
  EXPECT_THROW(node.resolve_step(0), FrozenStep);
  EXPECT_EQ(node.step(0)->result->map, before);
  for (auto k : node.step_indices()) EXPECT_TRUE(node.step(k)->frozen);
}

TEST(NodeControl, RepeatedCommandIsNoOp) {
  Node node(toy_config());
  node.ensure_horizon(0);
  node.resolve_dirty();
  node.handle(control(ControlAction::to_backpropagation));
  node.handle(Message::gradient_msg("peer", "toy", 1, Vector::Constant(1, 1.0)));
  const double g = node.parameter_gradient();
  node.handle(control(ControlAction::to_backpropagation));
  EXPECT_EQ(node.parameter_gradient(), g);
  const double p = node.parameter();
  node.handle(control(ControlAction::to_information));
  EXPECT_NE(node.parameter(), p);
  const double q = node.parameter();
  node.handle(control(ControlAction::to_information));
  EXPECT_EQ(node.parameter(), q);
}

TEST(NodeControl, UpdateMovesAgainstGradientAndRefuses) {
  Node node(toy_config());
  node.ensure_horizon(0);
  node.resolve_dirty();
  node.handle(control(ControlAction::to_backpropagation));
  EXPECT_EQ(node.parameter_gradient(), 0.0);
  node.handle(Message::gradient_msg("peer", "toy", 1, Vector::Constant(1, 1.0)));
  node.handle(control(ControlAction::to_information));
  EXPECT_NEAR(node.parameter(), 2.0 - 0.2, 1e-12);  // 2% of the range
  for (auto k : node.step_indices()) {
    EXPECT_FALSE(node.step(k)->dirty);
    EXPECT_NEAR(node.step(k)->result->map(3), node.parameter(), 1e-3);
  }
}

TEST(NodeConfigChecks, Rejected) {
  NodeConfig c = toy_config();
  c.initial_prior = GaussianEstimate(Vector::Zero(2), Matrix::Identity(2, 2));
  EXPECT_THROW(Node{c}, ConfigError);
  c = toy_config();
  c.neighbors.push_back(c.neighbors[0]);
  EXPECT_THROW(Node{c}, ConfigError);
  c = toy_config();
  c.neighbors[0].obs_matrix = Matrix::Zero(1, 4);
  EXPECT_THROW(Node{c}, RankDeficient);
  c = toy_config();
  c.parameter.reset();
  EXPECT_THROW(Node{c}, ConfigError);
}

TEST(Rprop, ZeroGradientZeroDelta) {
  Rprop r(5.0, 21.0);
  EXPECT_EQ(r.step(13.0, 0.0), 13.0);
}

TEST(Rprop, ConsistentSignGrowsToMax) {
  Rprop r(0.0, 100.0);
  double v = 50.0, prev = v, step = 0.0;
  for (int i = 0; i < 30; ++i) {
    v = r.step(v, -1.0);
    step = v - prev;
    prev = v;
    if (v >= 100.0) break;
  }
  EXPECT_NEAR(r.step_size(), 10.0, 1e-12);
  EXPECT_GT(step, 0.0);
}

TEST(Rprop, SignFlipShrinksAndSkips) {
  Rprop r(0.0, 100.0);
  double v = r.step(50.0, 1.0);
  EXPECT_NEAR(v, 48.0, 1e-12);
  const double w = r.step(v, -1.0);
  EXPECT_EQ(w, v);
  EXPECT_NEAR(r.step_size(), 1.0, 1e-12);
  EXPECT_NEAR(r.step(w, -1.0), 49.0, 1e-12);
}

TEST(Rprop, ClampsToUpperBound) {
  Rprop r(5.0, 21.0);
  double v = 20.9;
  for (int i = 0; i < 5; ++i) v = r.step(v, -3.0);
  EXPECT_EQ(v, 21.0);
}

TEST(Rprop, BoundsHoldUnderRandomGradients) {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    Rprop r(8.0, 16.0);
    double v = 12.0;
    for (int i = 0; i < 200; ++i) {
      v = r.step(v, nd(rng) * std::pow(10.0, nd(rng) * 3));
      ASSERT_GE(v, 8.0);
      ASSERT_LE(v, 16.0);
      ASSERT_GE(r.step_size(), 0.008 - 1e-15);
      ASSERT_LE(r.step_size(), 0.8 + 1e-15);
    }
  }
}
