#pragma once

#include "resrl/config.hpp"

namespace resrl {

struct PidGains {
  double kp = 0.0;
  double ki = 0.0;
  double kd = 0.0;
  double bias = 0.0;     // steady-state output offset
  double out_lo = 0.0;
  double out_hi = 1.0;

  void validate() const;
  static PidGains from_config(const Config& c);
  static PidGains siso_default();
  static PidGains miso_default();
};

// Positional-form discrete PID with clamping anti-windup: the integral is
// frozen on any step where integrating would push the clamped output into
// saturation.
class Pid {
 public:
  Pid(PidGains gains, double dt);

  double step(double error);  // throws on non-finite error
  void reset();

  double integral() const { return integral_; }
  bool saturated() const { return saturated_; }
  const PidGains& gains() const { return gains_; }

 private:
  PidGains gains_;
  double dt_;
  double integral_ = 0.0;
  double prev_error_ = 0.0;
  bool saturated_ = false;
};

}  // namespace resrl
