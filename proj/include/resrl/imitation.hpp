#pragma once

#include "resrl/common.hpp"
#include "resrl/iohmm.hpp"
#include "resrl/pid.hpp"
#include "resrl/plant.hpp"
#include "resrl/td3.hpp"

#include <cstdint>
#include <vector>

namespace resrl {

// Behavioral-cloning regression of the actor's mapped output onto the
// executed action expressed in the actor's own frame: mean over the batch
// of 0.5*(label - to_action(sigmoid_out))^2. Labels per frame: direct ->
// the applied actuation u (the expert's action on demonstrations, the
// agent's own on collected steps); residual -> the applied correction
// u - a_expert (exactly zero on demonstrations); superposed -> the stored
// expert component. Accumulates actor gradients; returns the loss.
double bc_loss_and_grad(Td3Nets& nets, const std::vector<const Transition*>& batch,
                        CriticMode mode);

// Held-out cloning error in the actor's action units (no gradients).
double bc_mse(Td3Nets& nets, const std::vector<const Transition*>& batch, CriticMode mode);

struct LossBreakdown {
  double l_bc = 0.0;
  double l_a = 0.0;
  double l_q = 0.0;   // mean of the two critic regressions
  double total = 0.0;
  bool actor_updated = false;
};

// One combined update: critics regress on the TD targets every call; on
// actor steps the actor descends the cloning loss plus the policy-gradient
// objective. `update_actor` overrides the policy delay (pretraining updates
// the actor every step).
LossBreakdown col_update_step(Td3Nets& nets, const std::vector<const Transition*>& batch,
                              CriticMode mode, Rng& smoothing_rng, bool update_actor);
LossBreakdown col_update_auto(Td3Nets& nets, const std::vector<const Transition*>& batch,
                              CriticMode mode, Rng& smoothing_rng);

// Specialized combined update: superposed-action losses on a batch that the
// gate restricted to abnormal-state steps. A sample whose recorded hidden
// state lies outside `abnormal` is a contract violation and throws.
LossBreakdown col_sdrprl_update(Td3Nets& nets, const std::vector<const Transition*>& batch,
                                const std::vector<int>& abnormal, Rng& smoothing_rng);

// Fixed-ratio two-source batch: round(ratio * n) transitions from `expert`,
// the rest from `agent`, each uniform without replacement.
std::vector<const Transition*> mix_batch(const ReplayBuffer& expert, const ReplayBuffer& agent,
                                         std::size_t n, double expert_ratio, Rng& rng);

struct ExpertData {
  std::vector<std::vector<Transition>> episodes;
  std::vector<double> returns;    // per episode, shutdown penalty included
  std::vector<std::pair<int, int>> windows;  // per episode [t_on, t_off) actually drawn
  int shutdowns = 0;
  double mean_return = 0.0;
};

// Runs the hand-tuned loop controller for `n_episodes` and records every
// step. Episode e uses the plant stream derived from (master_seed, e).
ExpertData collect_expert(const PlantConfig& plant_cfg, const DisturbanceProfile& dist,
                          const PidGains& gains, int n_episodes, std::uint64_t master_seed);

ReplayBuffer build_buffer(const std::vector<std::vector<Transition>>& episodes,
                          std::size_t capacity);

// (u, y) training sequences for the regime detector, one per episode. With
// use_input = false the input columns are dropped and the detector degrades
// to input-independent transitions.
std::vector<SequencePair> to_sequences(const std::vector<std::vector<Transition>>& episodes,
                                       bool use_input = true);

enum class PretrainMode { none, bc, col };
PretrainMode pretrain_mode_from_string(const std::string& s);
std::string pretrain_mode_name(PretrainMode m);

struct PretrainResult {
  long steps = 0;
  double final_bc = 0.0;
  double final_critic = 0.0;
};

// Offline pretraining on expert transitions. bc: cloning-only actor updates.
// col: combined actor+critic updates every step with target tracking. Both
// finish with a hard target sync so the cloned policy is also the initial
// target policy.
PretrainResult pretrain(Td3Nets& nets, const ReplayBuffer& expert, PretrainMode mode,
                        CriticMode critic_mode, long steps, Rng& batch_rng, Rng& smoothing_rng);

}  // namespace resrl
