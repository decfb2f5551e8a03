#pragma once

// Desk-scale ground-truth recycling facility: Poisson article streams, a
// sieving drum, a conveyor belt with a fixed dead time and a magnetic
// sorter, with mass-counting sensors integrating over fixed windows.

#include <array>
#include <cstdint>
#include <map>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include "ant/mvn.hpp"

namespace ant {

struct ArticleClass {
  std::string name;
  double mass = 0.0;  // kg per article
  int material = 0;   // 0 = FM, 1 = NFM
  int size = 0;       // 0 = S, 1 = M, 2 = L
  double flow_static = 0.0;  // kg/s
  double flow_a = 0.0;       // dynamic scenario, first phase
  double flow_b = 0.0;       // dynamic scenario, second phase
};

/// The seven article classes with masses and mean flows.
std::vector<ArticleClass> default_classes();

/// Outlet split of the sieving drum: per (size, outlet) probability linear
/// in speed between two anchor speeds, clamped to [0, 1]. Residence time
/// per outlet is dead_time + Exp(tau).
struct SieverTruth {
  Matrix split_lo;  // [size x outlet] at speed_lo
  Matrix split_hi;  // at speed_hi
  double speed_lo = 5.0;
  double speed_hi = 21.0;
  std::array<double, 3> dead_time{10.0, 25.0, 40.0};
  std::array<double, 3> tau{10.0, 15.0, 20.0};

  Matrix probabilities(double speed) const;
};

/// Probability of an article leaving through the FM (upper) outlet:
/// logistic in magnet height, FM capture falls and NFM drag falls as the
/// magnet is raised.
struct MagsorterTruth {
  double fm_center = 12.25;
  double fm_width = 0.6;
  double nfm_amplitude = 0.7;
  double nfm_center = 11.25;
  double nfm_width = 0.6;

  double to_fm_outlet(int material, double height) const;
};

enum class ScenarioKind { static_flows, dynamic_flows };

struct FacilitySpec {
  ScenarioKind kind = ScenarioKind::static_flows;
  std::vector<ArticleClass> classes = default_classes();
  double phase_length = 600.0;  // s, dynamic scenario
  double window = 30.0;         // sensor integration, s
  double substep = 1.0;         // Poisson instantiation step, s
  double loss_probability = 0.01;  // per machine
  double conveyor_delay = 32.0;
  SieverTruth siever;
  MagsorterTruth magsorter;
  double speed_min = 5.0, speed_max = 21.0;
  double height_min = 8.0, height_max = 16.0;
  double initial_speed = 13.0;
  double initial_height = 12.0;

  /// Mean flow per class at time t, kg/s.
  Vector flows_at(double t) const;
  static FacilitySpec defaults(ScenarioKind kind);
};

/// Declared siever ground truth endpoints and dead times.
SieverTruth default_siever_truth();

/// Parses a scenario document; missing fields keep their defaults.
FacilitySpec facility_spec_from_json(const std::string& text);
std::string to_string(ScenarioKind kind);

inline constexpr int kLocationCount = 7;
/// Sensor locations in reading order.
inline constexpr const char* kLocations[kLocationCount] = {
    "input", "siever_S", "siever_M", "siever_L", "conveyor_out", "magsorter_FM", "magsorter_NFM"};
int location_index(const std::string& name);

struct SensorReading {
  std::string location;
  std::int64_t window = 0;  // covers [window * dt, (window + 1) * dt)
  Vector class_mass;        // kg per class
  double total = 0.0;       // kg/s
  double duration = 30.0;   // s

  /// Flow in kg/s of one (material, size) combination; -1 means any.
  double flow(const std::vector<ArticleClass>& classes, int material, int size) const;
};

/// Per class article counts over dt: Poisson(flow / mass * dt).
std::vector<int> poisson_instantiate(const Vector& flows, const std::vector<ArticleClass>& classes, double dt,
                                     std::mt19937_64& rng);

struct FacilityLedger {
  Vector instantiated;  // kg per class
  Vector exited;
  Vector lost;
  Vector in_flight;
};

class Facility {
 public:
  Facility(FacilitySpec spec, std::uint64_t seed);

  double time() const noexcept { return now_; }
  const FacilitySpec& spec() const noexcept { return spec_; }

  /// Out-of-range setpoints are clamped and counted as warnings.
  void set_speed(double rpm);
  void set_height(double cm);
  double speed() const noexcept { return speed_; }
  double height() const noexcept { return height_; }
  int setpoint_warnings() const noexcept { return warnings_; }

  /// Simulates up to time t and returns the readings of every window that
  /// ended in the meantime, ordered by window, then location.
  std::vector<SensorReading> advance_to(double t);

  FacilityLedger ledger() const;

 private:
  enum class EventKind { arrival, siever_exit, conveyor_exit };
  struct Event {
    double t;
    std::uint64_t seq;
    EventKind kind;
    int cls;
    int outlet;
    bool operator>(const Event& o) const { return t != o.t ? t > o.t : seq > o.seq; }
  };

  void process(const Event& e);
  void record(int location, double t, int cls);
  bool lost();
  void push(double t, EventKind kind, int cls, int outlet);

  FacilitySpec spec_;
  std::mt19937_64 rng_;
  double now_ = 0.0;
  double speed_;
  double height_;
  int warnings_ = 0;
  std::uint64_t seq_ = 0;
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> events_;
  std::map<std::int64_t, std::array<Vector, kLocationCount>> windows_;
  std::int64_t next_window_ = 0;
  Vector instantiated_, exited_, lost_;
};

/// Long-run mean flows per class at every location for constant class
/// input flows and setpoints, kg/s. Indexed like kLocations.
std::array<Vector, kLocationCount> stationary_flows(const FacilitySpec& spec, const Vector& class_flows,
                                                    double speed, double height);

}  // namespace ant
