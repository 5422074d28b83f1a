#include "resrl/imitation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace resrl {

namespace {

Vector mapped_outputs(Td3Nets& nets, const std::vector<const Transition*>& batch,
                      Matrix* sig_out) {
  const Matrix sig = nets.actor.forward_batch(actor_input(batch, false));
  Vector a_hat(static_cast<long>(batch.size()));
  for (long b = 0; b < a_hat.size(); ++b) {
    a_hat[b] = nets.to_action(sig(0, b));
  }
  if (sig_out) *sig_out = sig;
  return a_hat;
}

// Cloning target in the actor's own action frame. Rows without a real
// expert label (direct-frame steps the agent drove alone) carry none and
// are excluded from the loss; residual and superposed rows always apply
// the expert component, so every row is labeled there.
struct BcTarget {
  bool labeled;
  double value;
};

BcTarget bc_target(const Transition& tr, CriticMode mode) {
  switch (mode) {
    case CriticMode::direct:
      return {tr.demo, tr.u};
    case CriticMode::residual:
      // Matching the expert means applying no correction.
      return {true, 0.0};
    case CriticMode::superposed:
      return {true, tr.a_expert};
  }
  throw std::logic_error("imitation: unknown critic mode");
}

}  // namespace

double bc_loss_and_grad(Td3Nets& nets, const std::vector<const Transition*>& batch,
                        CriticMode mode) {
  if (batch.empty()) throw std::invalid_argument("imitation: empty batch");
  const long B = static_cast<long>(batch.size());
  const double span = nets.cfg.action_high - nets.cfg.action_low;
  Matrix sig;
  const Vector a_hat = mapped_outputs(nets, batch, &sig);
  Matrix dsig = Matrix::Zero(1, B);
  double loss = 0.0;
  long n = 0;
  for (long b = 0; b < B; ++b) {
    const BcTarget t = bc_target(*batch[static_cast<std::size_t>(b)], mode);
    if (!t.labeled) continue;
    const double diff = t.value - a_hat[b];
    loss += 0.5 * diff * diff;
    dsig(0, b) = -diff * span;
    ++n;
  }
  if (n == 0) {
    // Still run the backward pass so momentum bookkeeping stays uniform.
    nets.actor.backward_batch(dsig);
    return 0.0;
  }
  dsig /= static_cast<double>(n);
  nets.actor.backward_batch(dsig);
  return loss / static_cast<double>(n);
}

double bc_mse(Td3Nets& nets, const std::vector<const Transition*>& batch, CriticMode mode) {
  if (batch.empty()) throw std::invalid_argument("imitation: empty batch");
  const Vector a_hat = mapped_outputs(nets, batch, nullptr);
  double mse = 0.0;
  long n = 0;
  for (long b = 0; b < a_hat.size(); ++b) {
    const BcTarget t = bc_target(*batch[static_cast<std::size_t>(b)], mode);
    if (!t.labeled) continue;
    mse += (t.value - a_hat[b]) * (t.value - a_hat[b]);
    ++n;
  }
  return n == 0 ? 0.0 : mse / static_cast<double>(n);
}

LossBreakdown col_update_step(Td3Nets& nets, const std::vector<const Transition*>& batch,
                              CriticMode mode, Rng& smoothing_rng, bool update_actor) {
  LossBreakdown out;
  nets.critic1.zero_grad();
  nets.critic2.zero_grad();
  const Vector targets = td3_targets(nets, batch, mode, smoothing_rng);
  out.l_q = critic_loss_and_grad(nets, batch, mode, targets);
  nets.critic1.apply_update();
  nets.critic2.apply_update();
  if (update_actor) {
    nets.actor.zero_grad();
    out.l_bc = bc_loss_and_grad(nets, batch, mode);
    out.l_a = actor_loss_and_grad(nets, batch, mode);
    nets.actor.apply_update();
    nets.soft_sync_targets();
    out.actor_updated = true;
  }
  out.total = out.l_bc + out.l_a + out.l_q;
  return out;
}

LossBreakdown col_update_auto(Td3Nets& nets, const std::vector<const Transition*>& batch,
                              CriticMode mode, Rng& smoothing_rng) {
  ++nets.updates;
  const bool actor_step = nets.updates % nets.cfg.policy_delay == 0;
  return col_update_step(nets, batch, mode, smoothing_rng, actor_step);
}

LossBreakdown col_sdrprl_update(Td3Nets& nets, const std::vector<const Transition*>& batch,
                                const std::vector<int>& abnormal, Rng& smoothing_rng) {
  for (const Transition* tr : batch) {
    if (!std::binary_search(abnormal.begin(), abnormal.end(), tr->hidden_state)) {
      throw std::logic_error("imitation: specialized batch contains a step decoded to state " +
                             std::to_string(tr->hidden_state) +
                             ", which is not specialized; the gate must filter upstream");
    }
  }
  return col_update_auto(nets, batch, CriticMode::superposed, smoothing_rng);
}

std::vector<const Transition*> mix_batch(const ReplayBuffer& expert, const ReplayBuffer& agent,
                                         std::size_t n, double expert_ratio, Rng& rng) {
  if (expert_ratio < 0.0 || expert_ratio > 1.0) {
    throw std::invalid_argument("imitation: expert_ratio must be in [0, 1]");
  }
  const auto n_expert = static_cast<std::size_t>(
      std::lround(expert_ratio * static_cast<double>(n)));
  const std::size_t n_agent = n - std::min(n, n_expert);
  std::vector<const Transition*> batch = expert.sample(std::min(n, n_expert), rng);
  const auto agent_part = agent.sample(n_agent, rng);
  batch.insert(batch.end(), agent_part.begin(), agent_part.end());
  return batch;
}

ExpertData collect_expert(const PlantConfig& plant_cfg, const DisturbanceProfile& dist,
                          const PidGains& gains, int n_episodes, std::uint64_t master_seed) {
  if (n_episodes < 1) throw std::invalid_argument("imitation: need at least one episode");
  ExpertData data;
  data.episodes.reserve(static_cast<std::size_t>(n_episodes));
  for (int ep = 0; ep < n_episodes; ++ep) {
    Plant plant(plant_cfg, dist,
                derive_seed(master_seed, seed_stream::kPlant, static_cast<std::uint64_t>(ep)));
    Pid pid(gains, plant_cfg.dt);
    std::vector<Transition> episode;
    episode.reserve(static_cast<std::size_t>(plant_cfg.steps()));
    double ep_return = 0.0;
    bool shutdown = false;
    const int total = plant_cfg.steps();
    for (int t = 0; t < total; ++t) {
      const Observation obs = plant.observation();
      const double err = plant_cfg.setpoint[0] - plant.y()[0];
      const double a_expert = pid.step(err);
      const double u = clamp(a_expert, plant_cfg.u_low, plant_cfg.u_high);
      StepResult res = plant.step(u, a_expert);
      ep_return += res.reward;
      Transition tr;
      tr.obs = obs;
      tr.a_expert = a_expert;
      tr.a_agent = 0.0;
      tr.u = u;
      tr.reward = res.reward;
      tr.obs_next = res.observation;
      tr.done = res.shutdown;
      tr.demo = true;
      if (!episode.empty()) episode.back().a_expert_next = a_expert;
      episode.push_back(std::move(tr));
      if (res.shutdown) {
        shutdown = true;
        ep_return += static_cast<double>(total - 1 - t) * plant.worst_reward();
        break;
      }
    }
    if (!shutdown && !episode.empty()) {
      // Peek at the action the controller would take from the final state so
      // the last stored step still has a usable bootstrap companion.
      Pid peek = pid;
      episode.back().a_expert_next =
          peek.step(plant_cfg.setpoint[0] - plant.y()[0]);
    }
    if (shutdown) ++data.shutdowns;
    data.returns.push_back(ep_return);
    data.windows.emplace_back(plant.t_on(), plant.t_off());
    data.episodes.push_back(std::move(episode));
  }
  double sum = 0.0;
  for (double r : data.returns) sum += r;
  data.mean_return = sum / static_cast<double>(data.returns.size());
  return data;
}

ReplayBuffer build_buffer(const std::vector<std::vector<Transition>>& episodes,
                          std::size_t capacity) {
  ReplayBuffer buf(capacity);
  for (const auto& ep : episodes) {
    for (const auto& tr : ep) buf.push(tr);
  }
  return buf;
}

std::vector<SequencePair> to_sequences(const std::vector<std::vector<Transition>>& episodes,
                                       bool use_input) {
  std::vector<SequencePair> seqs;
  seqs.reserve(episodes.size());
  for (const auto& ep : episodes) {
    if (ep.empty()) continue;
    const long T = static_cast<long>(ep.size());
    const long m = ep[0].obs_next.newest_y().size();
    SequencePair sp;
    sp.u.resize(T, use_input ? 1 : 0);
    sp.y.resize(T, m);
    for (long t = 0; t < T; ++t) {
      const Transition& tr = ep[static_cast<std::size_t>(t)];
      if (use_input) sp.u(t, 0) = tr.u;
      sp.y.row(t) = tr.obs_next.newest_y().transpose();
    }
    seqs.push_back(std::move(sp));
  }
  return seqs;
}

PretrainMode pretrain_mode_from_string(const std::string& s) {
  if (s == "none") return PretrainMode::none;
  if (s == "bc") return PretrainMode::bc;
  if (s == "col") return PretrainMode::col;
  throw std::invalid_argument("imitation: unknown pretrain mode '" + s + "'");
}

std::string pretrain_mode_name(PretrainMode m) {
  switch (m) {
    case PretrainMode::none:
      return "none";
    case PretrainMode::bc:
      return "bc";
    case PretrainMode::col:
      return "col";
  }
  throw std::logic_error("imitation: unknown pretrain mode");
}

PretrainResult pretrain(Td3Nets& nets, const ReplayBuffer& expert, PretrainMode mode,
                        CriticMode critic_mode, long steps, Rng& batch_rng, Rng& smoothing_rng) {
  PretrainResult res;
  if (mode == PretrainMode::none || steps <= 0) return res;
  const auto n = static_cast<std::size_t>(nets.cfg.batch_size);
  for (long step = 0; step < steps; ++step) {
    const auto batch = expert.sample(n, batch_rng);
    if (mode == PretrainMode::bc) {
      nets.actor.zero_grad();
      res.final_bc = bc_loss_and_grad(nets, batch, critic_mode);
      nets.actor.apply_update();
    } else {
      const LossBreakdown lb = col_update_step(nets, batch, critic_mode, smoothing_rng, true);
      res.final_bc = lb.l_bc;
      res.final_critic = lb.l_q;
    }
    ++res.steps;
  }
  nets.hard_sync_targets();
  return res;
}

}  // namespace resrl
