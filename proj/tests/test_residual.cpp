#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "resrl/residual.hpp"

#include <cmath>
#include <vector>

using namespace resrl;

namespace {

void zero_params(Network& net) {
  for (auto& v : net.param_views()) {
    for (std::size_t i = 0; i < v.size; ++i) v.value[i] = 0.0;
  }
}

Td3Nets siso_nets(std::uint64_t seed) {
  Td3Config cfg;
  return make_td3_nets(PlantConfig::siso_default(), cfg, seed);
}

ActContext siso_ctx(double explore_sd = 0.0) {
  ActContext ctx;
  ctx.setpoint0 = 1.0;
  ctx.u_low = 0.0;
  ctx.u_high = 1.0;
  ctx.r_scale = 0.5;
  ctx.explore_sd = explore_sd;
  return ctx;
}

// Number of raw draws the engine has consumed so far, via state comparison.
bool same_engine_state(Rng& a, Rng& b) { return a.engine() == b.engine(); }

}  // namespace

TEST_CASE("residual map is odd, centered, and bounded") {
  CHECK(residual_map(0.5, 0.3) == 0.0);
  CHECK(residual_map(1.0, 0.3) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(residual_map(0.0, 0.3) == doctest::Approx(-0.3).epsilon(1e-15));
  for (double s : {0.1, 0.25, 0.4}) {
    CHECK(residual_map(s, 0.5) == doctest::Approx(-residual_map(1.0 - s, 0.5)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(residual_map(1.1, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(residual_map(-0.1, 0.5), std::invalid_argument);
}

TEST_CASE("superposition clips the sum, not the parts") {
  CHECK(superpose(0.4, 0.2, 0.0, 1.0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(superpose(0.9, 0.4, 0.0, 1.0) == 1.0);
  CHECK(superpose(0.1, -0.4, 0.0, 1.0) == 0.0);
  CHECK(superpose(0.25, 0.0, 0.0, 1.0) == 0.25);  // identity on the expert part
  CHECK_THROWS_AS(superpose(std::nan(""), 0.0, 0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(superpose(0.0, INFINITY, 0.0, 1.0), std::invalid_argument);
}

TEST_CASE("mode names round-trip") {
  for (const char* name : {"pid_only", "drl_only", "residual"}) {
    CHECK(control_mode_name(control_mode_from_name(name)) == name);
  }
  CHECK_THROWS_AS(control_mode_from_name("bang_bang"), std::invalid_argument);
}

TEST_CASE("loop-controller mode matches a direct controller step") {
  Td3Nets nets = siso_nets(1);
  Pid pid(PidGains::siso_default(), 0.01);
  Pid twin(PidGains::siso_default(), 0.01);
  Plant plant(PlantConfig::siso_default(), DisturbanceProfile{}, 3);
  plant.step(0.3, 0.3);
  const Observation obs = plant.observation();

  Rng rng(7);
  const ControlDecision d =
      act(obs, pid, nets, false, ControlMode::pid_only, false, siso_ctx(), rng);
  CHECK(d.a_expert == twin.step(1.0 - obs.newest_y()[0]));
  CHECK(d.a_agent == 0.0);
  CHECK(d.a_applied == d.a_expert);
  CHECK(pid.integral() == twin.integral());
}

TEST_CASE("agent-only mode never touches the loop controller state") {
  Td3Nets nets = siso_nets(5);
  Pid pid(PidGains::siso_default(), 0.01);
  pid.step(0.2);
  const double integral_before = pid.integral();
  Plant plant(PlantConfig::siso_default(), DisturbanceProfile{}, 3);
  const Observation obs = plant.observation();

  Rng rng(9);
  const ControlDecision d =
      act(obs, pid, nets, true, ControlMode::drl_only, false, siso_ctx(), rng);
  CHECK(pid.integral() == integral_before);
  CHECK(d.a_expert == 0.0);
  CHECK(d.a_agent == d.a_applied);
  CHECK(d.a_agent >= 0.0);
  CHECK(d.a_agent <= 1.0);
  // Full-range mapping of the sigmoid head.
  const double sig = nets.actor.forward(obs.as_sequence())[0];
  CHECK(d.a_agent == doctest::Approx(sig).epsilon(1e-15));
}

TEST_CASE("evaluation decisions consume no randomness") {
  Td3Nets nets = siso_nets(11);
  Pid pid(PidGains::siso_default(), 0.01);
  Plant plant(PlantConfig::siso_default(), DisturbanceProfile{}, 3);
  const Observation obs = plant.observation();

  Rng used(42), untouched(42);
  for (ControlMode mode : {ControlMode::pid_only, ControlMode::drl_only, ControlMode::residual}) {
    act(obs, pid, nets, true, mode, false, siso_ctx(0.1), used);
  }
  CHECK(same_engine_state(used, untouched));

  // Training with zero exploration is also draw-free.
  act(obs, pid, nets, true, ControlMode::residual, true, siso_ctx(0.0), used);
  CHECK(same_engine_state(used, untouched));

  // Training with exploration consumes draws.
  act(obs, pid, nets, true, ControlMode::residual, true, siso_ctx(0.1), used);
  CHECK_FALSE(same_engine_state(used, untouched));
}

TEST_CASE("centered actor leaves the residual trajectory at the expert's") {
  // Zeroed actor emits sigmoid 0.5 -> residual increment exactly 0, so the
  // gated-on residual controller must follow the expert bitwise.
  Td3Nets nets = siso_nets(13);
  zero_params(nets.actor);

  DisturbanceProfile d;
  d.magnitude = 0.65;
  d.on_lo = d.on_hi = 100;
  d.off_lo = d.off_hi = 300;
  const PlantConfig pcfg = PlantConfig::siso_default();

  Plant plant_res(pcfg, d, 77);
  Plant plant_pid(pcfg, d, 77);
  Pid pid_res(PidGains::siso_default(), pcfg.dt);
  Pid pid_pid(PidGains::siso_default(), pcfg.dt);
  Rng rng_res(1), rng_pid(1);

  for (int t = 0; t < pcfg.steps(); ++t) {
    const ControlDecision dr = act(plant_res.observation(), pid_res, nets, true,
                                   ControlMode::residual, false, siso_ctx(), rng_res);
    const ControlDecision dp = act(plant_pid.observation(), pid_pid, nets, false,
                                   ControlMode::pid_only, false, siso_ctx(), rng_pid);
    CHECK(dr.a_agent == 0.0);
    CHECK(dr.a_applied == dp.a_applied);
    const StepResult rr = plant_res.step(dr.a_applied, dr.a_expert);
    const StepResult rp = plant_pid.step(dp.a_applied, dp.a_expert);
    CHECK(rr.y[0] == rp.y[0]);
    REQUIRE_FALSE(rr.shutdown);
  }
}

TEST_CASE("gated-off residual steps keep the expert alone") {
  Td3Nets nets = siso_nets(17);
  Pid pid(PidGains::siso_default(), 0.01);
  Plant plant(PlantConfig::siso_default(), DisturbanceProfile{}, 3);
  Rng rng(3);
  const ControlDecision d = act(plant.observation(), pid, nets, false, ControlMode::residual,
                                true, siso_ctx(0.2), rng);
  CHECK(d.a_agent == 0.0);
  CHECK(d.a_applied == d.a_expert);
  CHECK_FALSE(d.gate_on);
  // Gate off also means no draws, even in training.
  Rng fresh(3);
  CHECK(same_engine_state(rng, fresh));
}

TEST_CASE("exploration noise is clipped to the residual range") {
  Td3Nets nets = siso_nets(19);
  Pid pid(PidGains::siso_default(), 0.01);
  Plant plant(PlantConfig::siso_default(), DisturbanceProfile{}, 3);
  const Observation obs = plant.observation();

  ActContext ctx = siso_ctx(50.0);  // absurd noise: every draw clips
  ctx.r_scale = 0.25;
  Rng rng(23);
  for (int k = 0; k < 40; ++k) {
    Pid scratch(PidGains::siso_default(), 0.01);
    const ControlDecision d =
        act(obs, scratch, nets, true, ControlMode::residual, true, ctx, rng);
    CHECK(d.a_agent >= -0.25);
    CHECK(d.a_agent <= 0.25);
  }

  // The agent-only frame clips to the actuation bounds instead.
  ctx.explore_sd = 50.0;
  for (int k = 0; k < 40; ++k) {
    Pid scratch(PidGains::siso_default(), 0.01);
    const ControlDecision d =
        act(obs, scratch, nets, true, ControlMode::drl_only, true, ctx, rng);
    CHECK(d.a_agent >= 0.0);
    CHECK(d.a_agent <= 1.0);
  }
}

TEST_CASE("applied action is always the clipped superposition") {
  Td3Nets nets = siso_nets(29);
  Plant plant(PlantConfig::siso_default(), DisturbanceProfile{}, 3);
  const Observation obs = plant.observation();
  Rng rng(31);
  ActContext ctx = siso_ctx(0.3);
  for (int k = 0; k < 25; ++k) {
    Pid pid(PidGains::siso_default(), 0.01);
    const ControlDecision d =
        act(obs, pid, nets, true, ControlMode::residual, true, ctx, rng);
    CHECK(d.a_applied == superpose(d.a_expert, d.a_agent, ctx.u_low, ctx.u_high));
    CHECK(d.a_applied >= 0.0);
    CHECK(d.a_applied <= 1.0);
  }
}
