// ant: scenario runner and offline toolchain.
//
//   ant run        --config configs/static.json [--seed N] [--duration S] [--transport tcp] [--no-optimize] [--out DIR]
//   ant sweep      [--config scenario.json] [--seed N] --out dataset.csv
//   ant train-mlp  --dataset dataset.csv [--seed N] --out model.json
//   ant fit-siever [--config scenario.json] [--seed N] --out siever.json
//   ant oracle     [--config scenario.json] [--loss loss.json] [--out curve.csv]
//
// Exit codes: 0 ok, 1 configuration or usage error, 2 runtime error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "ant/config.hpp"
#include "ant/errors.hpp"
#include "ant/runner.hpp"
#include "ant/toolchain.hpp"

namespace {

using namespace ant;

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write '" + path + "'");
  f << text;
  if (text.empty() || text.back() != '\n') f << '\n';
}

FacilitySpec scenario_or_default(const std::string& path) {
  return path.empty() ? FacilitySpec::defaults(ScenarioKind::static_flows) : facility_spec_from_json(slurp(path));
}

struct Options {
  std::string config;
  std::string out;
  std::string dataset;
  std::string loss;
  std::string transport;
  std::optional<std::uint64_t> seed;
  std::optional<double> duration;
  bool no_optimize = false;
  double speed_step = 1.0;
  double height_step = 0.05;
};

int cmd_run(const Options& o) {
  RunConfig cfg = run_config_from_file(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.duration) cfg.duration = *o.duration;
  if (!o.transport.empty()) {
    if (o.transport == "tcp") cfg.transport = TransportKind::tcp;
    else if (o.transport == "in-memory") cfg.transport = TransportKind::in_memory;
    else throw ConfigError("--transport must be 'in-memory' or 'tcp'");
  }
  if (o.no_optimize) cfg.optimize = false;
  if (!o.out.empty()) cfg.out_dir = o.out;
  Runner runner(cfg);
  const auto result = runner.run();
  write_outputs(result, cfg, cfg.out_dir);
  std::cout << "wrote " << cfg.out_dir << "/ (" << result.estimates.size() << " estimate rows, "
            << result.losses.size() << " loss evaluations)\n";
  for (const auto& [node, value] : result.final_parameters) std::cout << node << " " << value << "\n";
  return kOk;
}

int cmd_sweep(const Options& o) {
  if (o.out.empty()) throw ConfigError("sweep needs --out");
  const auto d = sweep_magsorter(scenario_or_default(o.config), o.seed.value_or(1));
  write_dataset_csv(d, o.out);
  std::cout << "wrote " << d.inputs.rows() << " samples to " << o.out << "\n";
  return kOk;
}

int cmd_train_mlp(const Options& o) {
  if (o.out.empty()) throw ConfigError("train-mlp needs --out");
  const auto d = read_dataset_csv(o.dataset);
  const auto r = mlp_train(d.inputs, d.targets, o.seed.value_or(1));
  write_text(o.out, mlp_to_json(r.model, r.residual_cov));
  std::cout << "validation rmse " << r.validation_rmse << " (train " << r.train_rmse << ")\n";
  return kOk;
}

int cmd_fit_siever(const Options& o) {
  if (o.out.empty()) throw ConfigError("fit-siever needs --out");
  const auto fit = fit_siever(scenario_or_default(o.config), o.seed.value_or(1));
  write_text(o.out, siever_params_to_json(fit.params));
  for (int k = 0; k < kSizes; ++k) {
    const auto& kr = fit.params.kernels[static_cast<std::size_t>(k)];
    std::cout << "outlet " << kSizeNames[k] << ": dead time " << kr.dead_time << " s, tau " << kr.tau << " s\n";
  }
  return kOk;
}

int cmd_oracle(const Options& o) {
  const auto spec = scenario_or_default(o.config);
  const LossSpec loss = o.loss.empty() ? LossSpec::magsorter_purity() : loss_spec_from_json(slurp(o.loss));
  const auto speeds = linspace_grid(spec.speed_min, spec.speed_max, o.speed_step);
  const auto heights = linspace_grid(spec.height_min, spec.height_max, o.height_step);

  std::vector<std::pair<std::string, Vector>> phases;
  const auto n = static_cast<Eigen::Index>(spec.classes.size());
  Vector s(n), a(n), b(n);
  for (Eigen::Index c = 0; c < n; ++c) {
    const auto& k = spec.classes[static_cast<std::size_t>(c)];
    s(c) = k.flow_static;
    a(c) = k.flow_a;
    b(c) = k.flow_b;
  }
  if (spec.kind == ScenarioKind::static_flows) {
    phases.emplace_back("static", s);
  } else {
    phases.emplace_back("phase_a", a);
    phases.emplace_back("phase_b", b);
  }

  nlohmann::json report = nlohmann::json::object();
  std::unique_ptr<std::ofstream> curve;
  if (!o.out.empty()) {
    curve = std::make_unique<std::ofstream>(o.out);
    if (!*curve) throw Error("cannot write '" + o.out + "'");
    curve->precision(17);
    *curve << "# ant-csv v1\nphase,speed,height,loss\n";
  }
  for (const auto& [name, flows] : phases) {
    const auto r = oracle_optimum(spec, loss, flows, speeds, heights);
    report[name] = {{"speed", r.best.speed}, {"height", r.best.height}, {"loss", r.best.loss}};
    if (curve)
      for (const auto& p : r.grid) *curve << name << ',' << p.speed << ',' << p.height << ',' << p.loss << '\n';
  }
  std::cout << report.dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Artificial neural twin: distributed inference and optimization on a simulated facility"};
  app.require_subcommand(1);
  Options o;
  auto seed_flag = [&](CLI::App* c) { c->add_option("--seed", o.seed, "random seed"); };

  auto* run = app.add_subcommand("run", "run a scenario and write CSV outputs");
  run->add_option("--config", o.config, "run configuration JSON")->required();
  seed_flag(run);
  run->add_option("--duration", o.duration, "simulated seconds");
  run->add_option("--transport", o.transport, "in-memory or tcp");
  run->add_flag("--no-optimize", o.no_optimize, "inference only, setpoints stay constant");
  run->add_option("--out", o.out, "output directory");

  auto* sweep = app.add_subcommand("sweep", "magnetic sorter training data from the facility");
  sweep->add_option("--config", o.config, "scenario JSON (default: static scenario)");
  seed_flag(sweep);
  sweep->add_option("--out", o.out, "dataset CSV")->required();

  auto* train = app.add_subcommand("train-mlp", "train the magnetic sorter network");
  train->add_option("--dataset", o.dataset, "dataset CSV from 'sweep'")->required();
  seed_flag(train);
  train->add_option("--out", o.out, "model JSON")->required();

  auto* fit = app.add_subcommand("fit-siever", "fit residence kernels and split fractions");
  fit->add_option("--config", o.config, "scenario JSON (default: static scenario)");
  seed_flag(fit);
  fit->add_option("--out", o.out, "siever parameter JSON")->required();

  auto* oracle = app.add_subcommand("oracle", "grid-search optimum of the expected loss");
  oracle->add_option("--config", o.config, "scenario JSON (default: static scenario)");
  oracle->add_option("--loss", o.loss, "loss JSON (default: magnetic sorter purity)");
  oracle->add_option("--out", o.out, "loss curve CSV");
  oracle->add_option("--speed-step", o.speed_step, "rpm")->check(CLI::PositiveNumber);
  oracle->add_option("--height-step", o.height_step, "cm")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (run->parsed()) return cmd_run(o);
    if (sweep->parsed()) return cmd_sweep(o);
    if (train->parsed()) return cmd_train_mlp(o);
    if (fit->parsed()) return cmd_fit_siever(o);
    if (oracle->parsed()) return cmd_oracle(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kConfigError;
}
