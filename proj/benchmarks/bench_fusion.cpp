#include <benchmark/benchmark.h>

#include <random>

#include "ant/config.hpp"
#include "ant/message.hpp"
#include "ant/node.hpp"
#include "ant/runner.hpp"
#include "support.hpp"

using namespace ant;

namespace {

const std::string kConfigs = std::string(ANT_SOURCE_DIR) + "/configs/";

void BM_Fuse(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const auto p = testing::random_problem(rng, static_cast<int>(state.range(0)), 2);
  const Vector x0 = Vector::Zero(p.dim());
  for (auto _ : state) benchmark::DoNotOptimize(fuse(p, x0));
  state.SetLabel("x* dim " + std::to_string(p.dim()));
}
BENCHMARK(BM_Fuse)->Arg(1)->Arg(3)->Arg(8)->Arg(17)->Arg(34)->Unit(benchmark::kMicrosecond);

void BM_CiWeights(benchmark::State& state) {
  std::mt19937_64 rng(4);
  const auto p = testing::random_problem(rng, 8, static_cast<int>(state.range(0)));
  const Vector naive = solve_map(p, CiWeights::unit(p.comm_ids()), Vector::Zero(p.dim()));
  for (auto _ : state) benchmark::DoNotOptimize(ci_optimize_weights(p, naive));
}
BENCHMARK(BM_CiWeights)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMicrosecond);

// One fusion step of a shipped node with every sensor reporting.
void BM_NodeResolveStep(benchmark::State& state) {
  const char* files[] = {"siever.json", "conveyor.json", "magsorter.json"};
  Node node(node_config_from_file(kConfigs + files[state.range(0)]));
  node.ensure_horizon(5);
  for (const auto& s : node.config().sensors) node.ingest_reading(5, s.id, Vector::Constant(1, 0.5));
  for (auto _ : state) {
    node.ingest_reading(5, node.config().sensors.empty() ? "" : node.config().sensors[0].id, Vector::Constant(1, 0.5));
    benchmark::DoNotOptimize(node.resolve_step(5));
  }
  state.SetLabel(node.id());
}
BENCHMARK(BM_NodeResolveStep)->Arg(0)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_MessageCodec(benchmark::State& state) {
  std::mt19937_64 rng(5);
  const int k = static_cast<int>(state.range(0));
  const auto m = Message::information("siever", "conveyor", 42,
                                      GaussianEstimate(testing::random_vector(rng, k), testing::random_spd(rng, k)));
  for (auto _ : state) benchmark::DoNotOptimize(decode(encode(m)));
}
BENCHMARK(BM_MessageCodec)->Arg(3)->Arg(12)->Unit(benchmark::kMicrosecond);

void BM_StaticRun(benchmark::State& state) {
  auto c = run_config_from_file(kConfigs + "static.json");
  c.duration = static_cast<double>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(Runner(c).run());
}
BENCHMARK(BM_StaticRun)->Arg(390)->Unit(benchmark::kMillisecond)->Iterations(1);

}  // namespace

BENCHMARK_MAIN();
