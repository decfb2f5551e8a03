#include "ant/toolchain.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "ant/errors.hpp"
#include "ant/runner.hpp"

namespace ant {

std::vector<double> linspace_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || hi < lo) throw ConfigError("grid needs step > 0 and hi >= lo");
  std::vector<double> g;
  const auto n = static_cast<std::int64_t>(std::floor((hi - lo) / step + 1e-9));
  for (std::int64_t i = 0; i <= n; ++i) g.push_back(lo + static_cast<double>(i) * step);
  if (hi - g.back() > 1e-9 * std::max(1.0, std::abs(hi))) g.push_back(hi);
  return g;
}

MagsorterDataset sweep_magsorter(const FacilitySpec& base, std::uint64_t seed, SweepOptions options) {
  if (options.heights.empty()) options.heights = linspace_grid(8.0, 16.0, 0.5);
  std::vector<std::array<double, 7>> rows;
  std::uint64_t run = 0;
  for (int mix = 0; mix < 3; ++mix) {
    for (double scale : options.flow_scales) {
      for (double h : options.heights) {
        FacilitySpec s = base;
        s.kind = ScenarioKind::static_flows;
        for (auto& c : s.classes) c.flow_static = scale * (mix == 0 ? c.flow_static : mix == 1 ? c.flow_a : c.flow_b);
        s.initial_height = h;
        Facility f(s, seed + 7919 * run++);
        const auto readings = f.advance_to(options.duration);
        std::map<std::int64_t, std::array<double, 6>> w;  // fm_in, nfm_in, FM outlet fm/nfm, NFM outlet nfm/fm
        for (const auto& r : readings) {
          if (r.window < 3) continue;  // conveyor and siever still filling
          auto& a = w[r.window];
          if (r.location == "conveyor_out") {
            a[0] = r.flow(s.classes, 0, -1);
            a[1] = r.flow(s.classes, 1, -1);
          } else if (r.location == "magsorter_FM") {
            a[2] = r.flow(s.classes, 0, -1);
            a[3] = r.flow(s.classes, 1, -1);
          } else if (r.location == "magsorter_NFM") {
            a[4] = r.flow(s.classes, 1, -1);
            a[5] = r.flow(s.classes, 0, -1);
          }
        }
        for (const auto& [k, a] : w) rows.push_back({a[0], a[1], h, a[2], a[3], a[4], a[5]});
      }
    }
  }
  MagsorterDataset d;
  d.inputs.resize(static_cast<Eigen::Index>(rows.size()), 3);
  d.targets.resize(static_cast<Eigen::Index>(rows.size()), 4);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (int c = 0; c < 3; ++c) d.inputs(r, c) = rows[i][static_cast<std::size_t>(c)];
    for (int c = 0; c < 4; ++c) d.targets(r, c) = rows[i][static_cast<std::size_t>(3 + c)];
  }
  return d;
}

namespace {
const char* const kDatasetHeader = "fm_in,nfm_in,height,fm_out_fm,fm_out_nfm,nfm_out_nfm,nfm_out_fm";
}

void write_dataset_csv(const MagsorterDataset& d, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write '" + path + "'");
  f << std::setprecision(17) << kDatasetHeader << "\n";
  for (Eigen::Index i = 0; i < d.inputs.rows(); ++i) {
    f << d.inputs(i, 0) << ',' << d.inputs(i, 1) << ',' << d.inputs(i, 2);
    for (int c = 0; c < 4; ++c) f << ',' << d.targets(i, c);
    f << '\n';
  }
}

MagsorterDataset read_dataset_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open dataset '" + path + "'");
  std::string line;
  if (!std::getline(f, line) || line != kDatasetHeader) throw ConfigError("dataset '" + path + "' has no valid header");
  std::vector<std::array<double, 7>> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::array<double, 7> r{};
    std::stringstream ss(line);
    std::string cell;
    for (std::size_t c = 0; c < 7; ++c) {
      if (!std::getline(ss, cell, ',')) throw ConfigError("dataset row with fewer than 7 columns");
      try {
        r[c] = std::stod(cell);
      } catch (const std::exception&) {
        throw ConfigError("dataset cell '" + cell + "' is not a number");
      }
    }
    rows.push_back(r);
  }
  if (rows.empty()) throw ConfigError("dataset '" + path + "' is empty");
  MagsorterDataset d;
  d.inputs.resize(static_cast<Eigen::Index>(rows.size()), 3);
  d.targets.resize(static_cast<Eigen::Index>(rows.size()), 4);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int c = 0; c < 7; ++c) {
      if (c < 3) d.inputs(static_cast<Eigen::Index>(i), c) = rows[i][static_cast<std::size_t>(c)];
      else d.targets(static_cast<Eigen::Index>(i), c - 3) = rows[i][static_cast<std::size_t>(c)];
    }
  return d;
}

SieverFit fit_siever(const FacilitySpec& base, std::uint64_t seed, const SieverFitOptions& opt) {
  SieverFit fit;
  const auto& classes = base.classes;

  // Step experiment: input switches between zero and the static mix.
  {
    FacilitySpec s = base;
    s.kind = ScenarioKind::dynamic_flows;
    for (auto& c : s.classes) {
      c.flow_a = 0.0;
      c.flow_b = opt.step_flow_scale * c.flow_static;
    }
    s.phase_length = opt.step_phase;
    s.window = opt.step_window;
    s.initial_speed = opt.step_speed;
    Facility f(s, seed);
    const auto readings = f.advance_to(2.0 * opt.step_phase * opt.step_cycles);
    const auto per_phase = static_cast<std::int64_t>(std::llround(opt.step_phase / opt.step_window));
    for (int o = 0; o < kSizes; ++o) {
      const std::string loc = std::string("siever_") + kSizeNames[o];
      std::map<std::int64_t, double> flow;
      for (const auto& r : readings)
        if (r.location == loc) flow[r.window] = r.total;
      StepRecording rec;
      std::vector<double> sum(static_cast<std::size_t>(per_phase), 0.0);
      int used = 0;
      for (int c = 0; c < opt.step_cycles; ++c) {
        const std::int64_t on = (2 * c + 1) * per_phase, off = on + per_phase;
        double ss = 0.0;  // steady state from the last third of the on phase
        int n = 0;
        for (std::int64_t w = off - per_phase / 3; w < off; ++w, ++n) ss += flow[w];
        ss /= n;
        if (!(ss > 0.0)) continue;
        ++used;
        for (std::int64_t i = 0; i < per_phase; ++i) {
          const double rise = flow[on + i] / ss;
          const double fall = off + i < 2 * per_phase * opt.step_cycles ? 1.0 - flow[off + i] / ss : rise;
          sum[static_cast<std::size_t>(i)] += 0.5 * (rise + fall);
        }
      }
      if (used == 0) throw FitIllConditioned("step experiment produced no flow at " + loc);
      for (std::int64_t i = 0; i < per_phase; ++i) {
        rec.t.push_back((static_cast<double>(i) + 0.5) * opt.step_window);
        rec.y.push_back(sum[static_cast<std::size_t>(i)] / used);
      }
      fit.params.kernels[static_cast<std::size_t>(o)] = fit_step_response(rec);
      fit.steps.push_back(std::move(rec));
    }
  }

  // Speed sweep of outlet fractions per size class.
  std::uint64_t run = 1;
  for (double v : opt.speeds) {
    FacilitySpec s = base;
    s.kind = ScenarioKind::static_flows;
    s.initial_speed = v;
    Facility f(s, seed + 104729 * run++);
    Vector in = Vector::Zero(kSizes);
    Matrix out = Matrix::Zero(kSizes, kSizes);  // [size x outlet]
    for (const auto& r : f.advance_to(opt.sweep_duration)) {
      if (r.window < 10) continue;
      const int l = location_index(r.location);
      for (int p = 0; p < kSizes; ++p) {
        const double m = r.flow(classes, -1, p);
        if (l == 0) in(p) += m;
        else if (l >= 1 && l <= 3) out(p, l - 1) += m;
      }
    }
    for (int p = 0; p < kSizes; ++p) {
      if (!(in(p) > 0.0)) throw FitIllConditioned(std::string("speed sweep saw no input of size ") + kSizeNames[p]);
      for (int o = 0; o < kSizes; ++o) fit.samples.push_back({v, p, o, out(p, o) / in(p)});
    }
  }
  fit.params.splits = fit_splits(fit.samples);
  fit.params.speed_min = base.speed_min;
  fit.params.speed_max = base.speed_max;
  return fit;
}

double expected_loss(const FacilitySpec& spec, const LossSpec& loss, const Vector& class_flows, double speed,
                     double height) {
  const auto f = stationary_flows(spec, class_flows, speed, height);
  Vector x(loss.dim());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const auto ref = truth_ref("magsorter", loss.coordinates[static_cast<std::size_t>(i)]);
    if (!ref) throw ConfigError("loss coordinate '" + loss.coordinates[static_cast<std::size_t>(i)] +
                                "' has no ground-truth location");
    const auto& v = f[static_cast<std::size_t>(location_index(ref->location))];
    double sum = 0.0;
    for (std::size_t c = 0; c < spec.classes.size(); ++c) {
      const auto& k = spec.classes[c];
      if ((ref->material < 0 || k.material == ref->material) && (ref->size < 0 || k.size == ref->size))
        sum += v(static_cast<Eigen::Index>(c));
    }
    x(i) = sum;
  }
  return loss_evaluate(loss, x);
}

OracleResult oracle_optimum(const FacilitySpec& spec, const LossSpec& loss, const Vector& class_flows,
                            const std::vector<double>& speeds, const std::vector<double>& heights) {
  if (speeds.empty() || heights.empty()) throw ConfigError("oracle grid is empty");
  OracleResult r;
  bool first = true;
  for (double v : speeds)
    for (double h : heights) {
      const OraclePoint p{v, h, expected_loss(spec, loss, class_flows, v, h)};
      r.grid.push_back(p);
      if (first || p.loss < r.best.loss) r.best = p;
      first = false;
    }
  return r;
}

}  // namespace ant
