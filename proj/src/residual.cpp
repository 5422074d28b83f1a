#include "resrl/residual.hpp"

#include <cmath>
#include <stdexcept>

namespace resrl {

std::string control_mode_name(ControlMode m) {
  switch (m) {
    case ControlMode::pid_only:
      return "pid_only";
    case ControlMode::drl_only:
      return "drl_only";
    case ControlMode::residual:
      return "residual";
  }
  throw std::logic_error("residual: unknown control mode");
}

ControlMode control_mode_from_name(const std::string& s) {
  if (s == "pid_only") return ControlMode::pid_only;
  if (s == "drl_only") return ControlMode::drl_only;
  if (s == "residual") return ControlMode::residual;
  throw std::invalid_argument("residual: unknown control mode '" + s + "'");
}

double residual_map(double sigmoid_out, double r_scale) {
  if (!(sigmoid_out >= 0.0 && sigmoid_out <= 1.0)) {
    throw std::invalid_argument("residual: sigmoid output outside [0, 1]");
  }
  return (2.0 * sigmoid_out - 1.0) * r_scale;
}

double superpose(double a_expert, double a_agent, double u_lo, double u_hi) {
  if (!std::isfinite(a_expert) || !std::isfinite(a_agent)) {
    throw std::invalid_argument("residual: non-finite action component");
  }
  return clamp(a_expert + a_agent, u_lo, u_hi);
}

ControlDecision act(const Observation& obs, Pid& pid, Td3Nets& nets, bool gate_on,
                    ControlMode mode, bool training, const ActContext& ctx, Rng& rng) {
  ControlDecision d;
  d.mode = mode;
  d.gate_on = gate_on;
  switch (mode) {
    case ControlMode::pid_only: {
      d.a_expert = pid.step(ctx.setpoint0 - obs.newest_y()[0]);
      d.a_agent = 0.0;
      break;
    }
    case ControlMode::drl_only: {
      const double sig = nets.actor.forward(obs.as_sequence())[0];
      double a = ctx.u_low + sig * (ctx.u_high - ctx.u_low);
      if (training && ctx.explore_sd > 0.0) {
        a = clamp(a + rng.gaussian(0.0, ctx.explore_sd), ctx.u_low, ctx.u_high);
      }
      d.a_expert = 0.0;
      d.a_agent = a;
      break;
    }
    case ControlMode::residual: {
      d.a_expert = pid.step(ctx.setpoint0 - obs.newest_y()[0]);
      if (gate_on) {
        const double sig = nets.actor.forward(obs.as_sequence())[0];
        double r = residual_map(sig, ctx.r_scale);
        if (training && ctx.explore_sd > 0.0) {
          r = clamp(r + rng.gaussian(0.0, ctx.explore_sd), -ctx.r_scale, ctx.r_scale);
        }
        d.a_agent = r;
      } else {
        d.a_agent = 0.0;
      }
      break;
    }
  }
  d.a_applied = superpose(d.a_expert, d.a_agent, ctx.u_low, ctx.u_high);
  return d;
}

}  // namespace resrl
