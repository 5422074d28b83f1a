#pragma once

#include "resrl/common.hpp"
#include "resrl/pid.hpp"
#include "resrl/plant.hpp"
#include "resrl/td3.hpp"

#include <string>

namespace resrl {

enum class ControlMode { pid_only, drl_only, residual };

std::string control_mode_name(ControlMode m);
ControlMode control_mode_from_name(const std::string& s);

// Maps the actor's sigmoid output onto a symmetric increment:
// (2*sigmoid_out - 1) * r_scale. Throws if the input leaves [0, 1].
double residual_map(double sigmoid_out, double r_scale);

// clamp(a_expert + a_agent, u_bounds); clipping happens after the sum so the
// in-range part keeps exact superposition semantics.
double superpose(double a_expert, double a_agent, double u_lo, double u_hi);

struct ControlDecision {
  double a_expert = 0.0;
  double a_agent = 0.0;
  double a_applied = 0.0;
  bool gate_on = false;
  ControlMode mode = ControlMode::pid_only;
};

struct ActContext {
  double setpoint0 = 1.0;  // setpoint of the loop-controlled variable
  double u_low = 0.0;
  double u_high = 1.0;
  double r_scale = 0.5;    // residual half-span in actuation units
  double explore_sd = 0.0; // exploration noise, actuation units
};

// One control decision.
//   pid_only:  C = a_expert; the agent is not consulted.
//   drl_only:  C = actor output mapped onto u_bounds; the loop controller is
//              not consulted.
//   residual:  C = a_expert + residual when gate_on, else the expert acts
//              alone and a_agent = 0.
// When training, exploration noise is added to the agent component and the
// noisy component is clipped to its own range before superposition. With
// training = false no randomness is consumed.
ControlDecision act(const Observation& obs, Pid& pid, Td3Nets& nets, bool gate_on,
                    ControlMode mode, bool training, const ActContext& ctx, Rng& rng);

}  // namespace resrl
