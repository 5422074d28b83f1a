#include "resrl/pid.hpp"

#include "resrl/common.hpp"

#include <cmath>
#include <stdexcept>

namespace resrl {

void PidGains::validate() const {
  if (!(out_lo < out_hi)) {
    throw std::invalid_argument("pid gains: output_bounds low must be < high");
  }
}

PidGains PidGains::siso_default() {
  // Deliberately conservative tuning, fixed across all experiments: rejects
  // the step disturbance but with a slow integral climb, leaving room for a
  // learned policy to react faster.
  PidGains g;
  g.kp = 0.30;
  g.ki = 4.0;
  g.kd = 0.0;
  g.bias = 0.25;
  return g;
}

PidGains PidGains::miso_default() {
  PidGains g = siso_default();
  // One actuator feeds every loop at gain 4*setpoint, so steady state sits at
  // y_i = 4*sp_i*u. The uncontrolled loops stay inside sp_i +/- 0.75 only for
  // u <= 0.4; saturating below that keeps the integral action from tripping
  // the shutdown bounds while it chases the disturbed variable.
  g.out_hi = 0.38;
  return g;
}

PidGains PidGains::from_config(const Config& c) {
  PidGains g = c.get_str("plant.preset", "siso") == "miso" ? miso_default() : siso_default();
  g.kp = c.get_double("pid.kp", g.kp);
  g.ki = c.get_double("pid.ki", g.ki);
  g.kd = c.get_double("pid.kd", g.kd);
  g.bias = c.get_double("pid.bias", g.bias);
  g.out_lo = c.get_double("pid.out_lo", g.out_lo);
  g.out_hi = c.get_double("pid.out_hi", g.out_hi);
  g.validate();
  return g;
}

Pid::Pid(PidGains gains, double dt) : gains_(gains), dt_(dt) {
  gains_.validate();
  if (!(dt_ > 0.0)) throw std::invalid_argument("pid: dt must be > 0");
}

double Pid::step(double error) {
  if (!std::isfinite(error)) throw std::invalid_argument("pid: non-finite error input");
  const double derivative = (error - prev_error_) / dt_;
  const double candidate_integral = integral_ + error * dt_;
  double u = gains_.bias + gains_.kp * error + gains_.ki * candidate_integral + gains_.kd * derivative;
  if (u >= gains_.out_lo && u <= gains_.out_hi) {
    integral_ = candidate_integral;
    saturated_ = false;
  } else {
    // Anti-windup: keep the previous integral and clamp.
    u = clamp(gains_.bias + gains_.kp * error + gains_.ki * integral_ + gains_.kd * derivative,
              gains_.out_lo, gains_.out_hi);
    saturated_ = true;
  }
  prev_error_ = error;
  return u;
}

void Pid::reset() {
  integral_ = 0.0;
  prev_error_ = 0.0;
  saturated_ = false;
}

}  // namespace resrl
