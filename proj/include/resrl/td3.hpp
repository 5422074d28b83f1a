#pragma once

#include "resrl/common.hpp"
#include "resrl/config.hpp"
#include "resrl/net.hpp"
#include "resrl/plant.hpp"

#include <cstdint>
#include <vector>

namespace resrl {

// One environment step as stored for replay. The applied actuation is
// always a_expert + a_agent clipped to the plant's bounds; the two parts
// are kept separately so residual variants can bootstrap on the agent
// component while superposed updates use the sum. a_expert_next is the
// expert component that was applied from obs_next (zero at episode end);
// hidden_state is the operating-regime label active when the step was
// taken (-1 when unknown).
struct Transition {
  Observation obs;
  double a_expert = 0.0;
  double a_agent = 0.0;
  double u = 0.0;  // applied actuation: clamp(a_expert + a_agent, u bounds)
  double reward = 0.0;
  Observation obs_next;
  bool done = false;
  double a_expert_next = 0.0;
  int hidden_state = -1;
  bool demo = false;  // collected under the expert policy alone
};

// Fixed-capacity FIFO replay buffer with uniform sampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const { return data_[i]; }

  // `n` distinct indices, uniform without replacement.
  std::vector<const Transition*> sample(std::size_t n, Rng& rng) const;

 private:
  std::vector<Transition> data_;
  std::size_t capacity_;
  std::size_t next_ = 0;
};

struct Td3Config {
  double gamma = 0.99;
  double rho = 0.995;            // target <- rho*target + (1-rho)*online
  int policy_delay = 2;
  double smoothing_sd = 0.1;     // target policy smoothing noise
  double smoothing_clip = 0.25;
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  int batch_size = 64;
  double action_low = -0.5;      // agent action range (for noise clipping)
  double action_high = 0.5;

  void validate() const;
};

// Actor, twin critics, and their targets. The actor ends in a sigmoid; the
// agent action is that output affinely mapped onto [action_low, action_high].
struct Td3Nets {
  Network actor, critic1, critic2;
  Network actor_t, critic1_t, critic2_t;
  Td3Config cfg;
  long updates = 0;              // counts td3_update_step calls (for the delay)

  // Sigmoid output mapped to the agent action range.
  double to_action(double sigmoid_out) const;
  double act(const Observation& obs);                 // deterministic policy
  double act_target(const Observation& obs);

  void hard_sync_targets();                           // targets <- online
  void soft_sync_targets();                           // polyak with cfg.rho

  void save(const std::string& dir, const std::string& prefix) const;
  void load(const std::string& dir, const std::string& prefix);
};

// Builds the policy/value stacks: actor is a two-layer recurrent network
// (64 then 32 units) with a sigmoid head over the observation sequence;
// critics are dense 64-relu / 32-relu / linear over [flat obs; action].
Td3Nets make_td3_nets(const PlantConfig& plant, const Td3Config& cfg, std::uint64_t init_seed);
Network make_critic_net(int obs_len, double lr, Rng& rng);
Network make_actor_net(int step_width, double lr, Rng& rng);
Network make_value_net(int obs_len, double lr, Rng& rng);

// Batched inputs from transitions.
std::vector<Matrix> actor_input(const std::vector<const Transition*>& batch, bool next);
Matrix critic_input(const std::vector<const Transition*>& batch, const Vector& actions);
Vector flat_obs(const Observation& obs);

// Action frame for critic training.
//   residual:   the critic values the agent increment alone; bootstrap probes
//               the target residual policy. Used by plain residual variants
//               (the recorded expert-demo action in this frame is zero).
//   direct:     the critic values the full applied actuation (expert+agent
//               sum as stored); bootstrap probes the target policy alone.
//               Used when the agent is the whole controller.
//   superposed: the critic values the expert+agent sum and bootstraps at
//               a_expert_next plus the target residual. Used by the
//               specialized residual updates.
enum class CriticMode { residual, direct, superposed };

// Executed action used in critic targets and losses (see CriticMode).
Vector executed_actions(const std::vector<const Transition*>& batch, CriticMode mode);

// r + gamma * (1-done) * min(Q1', Q2')(s', a') with smoothed, clipped
// target-policy actions.
Vector td3_targets(Td3Nets& nets, const std::vector<const Transition*>& batch, CriticMode mode,
                   Rng& smoothing_rng);

// Critic regression toward fixed targets; returns the mean over both
// critics of (1/B) sum 0.5*(target - Q)^2 and accumulates gradients.
double critic_loss_and_grad(Td3Nets& nets, const std::vector<const Transition*>& batch,
                            CriticMode mode, const Vector& targets);

// Deterministic policy-gradient objective -mean Q1(s, a(s)); accumulates
// actor gradients through critic1 (whose own gradient accumulators are left
// unchanged). In superposed mode the critic is probed at a_expert + a(s).
double actor_loss_and_grad(Td3Nets& nets, const std::vector<const Transition*>& batch,
                           CriticMode mode);

struct UpdateStats {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  bool actor_updated = false;
};

// One off-policy update: critics every call, actor + target sync every
// cfg.policy_delay-th call.
UpdateStats td3_update_step(Td3Nets& nets, const std::vector<const Transition*>& batch,
                            CriticMode mode, Rng& smoothing_rng);

Td3Config td3_from_config(const Config& c);

}  // namespace resrl
