#pragma once

#include "resrl/common.hpp"
#include "resrl/config.hpp"

#include <deque>
#include <utility>

namespace resrl {

// Surrogate continuous process plant: first-order coupled linear dynamics
// with one manipulated variable, a multiplicative actuation-path
// disturbance ("feed loss"), additive process noise, and hard shutdown
// limits on every process variable.
struct PlantConfig {
  int m_y = 1;                 // process variable count
  double dt = 0.01;            // sim-hours per step
  double episode_hours = 5.0;
  Vector tau;                  // time constants, sim-hours, per variable
  Vector gain;                 // actuator gain per variable
  Matrix coupling;             // m_y x m_y
  Vector setpoint;
  double noise_sd = 0.0;
  Vector y_low, y_high;        // shutdown limits
  double u_low = 0.0, u_high = 1.0;
  int history_depth = 1;       // l: observation keeps l+1 (y, a) pairs

  int steps() const;
  void validate() const;       // throws naming the offending field

  static PlantConfig siso_default();
  static PlantConfig miso_default();
  static PlantConfig from_config(const Config& c);
};

// Step disturbance: the actuation path of target_var is scaled by
// (1 - magnitude) while t_on <= t < t_off. On/off times are drawn
// uniformly from [*_lo, *_hi] at reset (degenerate range pins them).
struct DisturbanceProfile {
  double magnitude = 0.0;
  int target_var = 0;
  int on_lo = 0, on_hi = 0;
  int off_lo = 0, off_hi = 0;

  void validate(int total_steps, int m_y) const;
  static DisturbanceProfile from_config(const Config& c, int total_steps);
};

// Flattened POMDP observation: (l+1) pairs (y_k, a_{k-1}) from oldest to
// newest, zero-padded before episode start. Length (l+1)*(m_y+1).
struct Observation {
  Vector entries;
  int history_depth = 1;
  int m_y = 1;

  static int length(int history_depth, int m_y) { return (history_depth + 1) * (m_y + 1); }
  // One row per time step (oldest first), columns = [y..., a_prev].
  Matrix as_sequence() const;
  // Process variables of the newest pair.
  Vector newest_y() const;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool shutdown = false;
  Vector y;                    // raw process variables after the step
  bool disturbance_active = false;
};

// Negative l1 norm of the setpoint error.
double setpoint_reward(const Vector& y, const Vector& setpoint);

class Plant {
 public:
  // Constructs the plant in its reset state: y at setpoint, t = 0,
  // disturbance window drawn from the profile's ranges with `seed`.
  Plant(PlantConfig config, DisturbanceProfile disturbance, std::uint64_t seed);

  // Advances one Euler step. `u` is the applied actuation (caller clips to
  // u_bounds); `a_expert` is the expert component of u recorded into the
  // observation history. Throws if the plant has already shut down.
  StepResult step(double u, double a_expert);

  Observation observation() const;

  bool disturbance_at(int t) const { return t_on_ <= t && t < t_off_; }
  // Reward of the worst still-in-bounds state; the harness charges this for
  // every step cut off by an emergency shutdown.
  double worst_reward() const;

  const PlantConfig& config() const { return cfg_; }
  const Vector& y() const { return y_; }
  int t() const { return t_; }
  int t_on() const { return t_on_; }
  int t_off() const { return t_off_; }
  bool is_shutdown() const { return shutdown_; }

 private:
  PlantConfig cfg_;
  DisturbanceProfile dist_;
  Vector y_;
  int t_ = 0;
  int t_on_ = 0, t_off_ = 0;
  bool shutdown_ = false;
  std::deque<std::pair<Vector, double>> history_;  // (y_k, a_{k-1}), size l+1
  Rng rng_;
};

}  // namespace resrl
