#include "resrl/td3.hpp"

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <stdexcept>

namespace resrl {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay buffer: capacity must be positive");
  data_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(Transition t) {
  if (data_.size() < capacity_) {
    data_.push_back(std::move(t));
  } else {
    data_[next_] = std::move(t);
    next_ = (next_ + 1) % capacity_;
  }
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  if (n > data_.size()) {
    throw std::runtime_error("replay buffer: asked for " + std::to_string(n) + " samples, holds " +
                             std::to_string(data_.size()));
  }
  // Partial Fisher-Yates: stable across platforms for a given seed.
  std::vector<std::size_t> idx(data_.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<const Transition*> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(static_cast<int>(k), static_cast<int>(idx.size())));
    std::swap(idx[k], idx[j]);
    out.push_back(&data_[idx[k]]);
  }
  return out;
}

void Td3Config::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("td3: gamma must be in (0, 1]");
  if (!(rho >= 0.0 && rho < 1.0)) throw std::invalid_argument("td3: rho must be in [0, 1)");
  if (policy_delay < 1) throw std::invalid_argument("td3: policy_delay must be >= 1");
  if (smoothing_sd < 0.0 || smoothing_clip < 0.0) {
    throw std::invalid_argument("td3: smoothing noise parameters must be non-negative");
  }
  if (actor_lr <= 0.0 || critic_lr <= 0.0) {
    throw std::invalid_argument("td3: learning rates must be positive");
  }
  if (batch_size < 1) throw std::invalid_argument("td3: batch_size must be >= 1");
  if (!(action_low < action_high)) {
    throw std::invalid_argument("td3: action_low must be below action_high");
  }
}

double Td3Nets::to_action(double sigmoid_out) const {
  return cfg.action_low + sigmoid_out * (cfg.action_high - cfg.action_low);
}

double Td3Nets::act(const Observation& obs) {
  return to_action(actor.forward(obs.as_sequence())[0]);
}

double Td3Nets::act_target(const Observation& obs) {
  return to_action(actor_t.forward(obs.as_sequence())[0]);
}

void Td3Nets::hard_sync_targets() {
  polyak(actor_t, actor, 0.0);
  polyak(critic1_t, critic1, 0.0);
  polyak(critic2_t, critic2, 0.0);
}

void Td3Nets::soft_sync_targets() {
  polyak(actor_t, actor, cfg.rho);
  polyak(critic1_t, critic1, cfg.rho);
  polyak(critic2_t, critic2, cfg.rho);
}

void Td3Nets::save(const std::string& dir, const std::string& prefix) const {
  std::filesystem::create_directories(dir);
  const std::string base = dir + "/" + prefix;
  actor.save(base + "_actor.net");
  critic1.save(base + "_critic1.net");
  critic2.save(base + "_critic2.net");
  actor_t.save(base + "_actor_t.net");
  critic1_t.save(base + "_critic1_t.net");
  critic2_t.save(base + "_critic2_t.net");
}

void Td3Nets::load(const std::string& dir, const std::string& prefix) {
  const std::string base = dir + "/" + prefix;
  actor = Network::load(base + "_actor.net");
  critic1 = Network::load(base + "_critic1.net");
  critic2 = Network::load(base + "_critic2.net");
  actor_t = Network::load(base + "_actor_t.net");
  critic1_t = Network::load(base + "_critic1_t.net");
  critic2_t = Network::load(base + "_critic2_t.net");
}

Network make_actor_net(int step_width, double lr, Rng& rng) {
  Network net(step_width);
  net.add_lstm(64, rng).add_lstm(32, rng).add_dense(1, Activation::Sigmoid, rng).set_lr(lr);
  return net;
}

Network make_critic_net(int obs_len, double lr, Rng& rng) {
  Network net(obs_len + 1);
  net.add_dense(64, Activation::Relu, rng)
      .add_dense(32, Activation::Relu, rng)
      .add_dense(1, Activation::Linear, rng)
      .set_lr(lr);
  return net;
}

Network make_value_net(int obs_len, double lr, Rng& rng) {
  Network net(obs_len);
  net.add_dense(64, Activation::Relu, rng)
      .add_dense(32, Activation::Relu, rng)
      .add_dense(1, Activation::Linear, rng)
      .set_lr(lr);
  return net;
}

Td3Nets make_td3_nets(const PlantConfig& plant, const Td3Config& cfg, std::uint64_t init_seed) {
  cfg.validate();
  const int step_width = plant.m_y + 1;
  const int obs_len = Observation::length(plant.history_depth, plant.m_y);
  Rng ra(derive_seed(init_seed, seed_stream::kInit, 0));
  Rng rc1(derive_seed(init_seed, seed_stream::kInit, 1));
  Rng rc2(derive_seed(init_seed, seed_stream::kInit, 2));
  Td3Nets nets{make_actor_net(step_width, cfg.actor_lr, ra),
               make_critic_net(obs_len, cfg.critic_lr, rc1),
               make_critic_net(obs_len, cfg.critic_lr, rc2),
               Network(),
               Network(),
               Network(),
               cfg,
               0};
  nets.actor_t = nets.actor;
  nets.critic1_t = nets.critic1;
  nets.critic2_t = nets.critic2;
  return nets;
}

Vector flat_obs(const Observation& obs) { return obs.entries; }

std::vector<Matrix> actor_input(const std::vector<const Transition*>& batch, bool next) {
  if (batch.empty()) throw std::invalid_argument("td3: empty batch");
  const Observation& first = next ? batch[0]->obs_next : batch[0]->obs;
  const int T = first.history_depth + 1;
  const int width = first.m_y + 1;
  const auto B = static_cast<long>(batch.size());
  std::vector<Matrix> xs(static_cast<std::size_t>(T), Matrix(width, B));
  for (long b = 0; b < B; ++b) {
    const Observation& o = next ? batch[static_cast<std::size_t>(b)]->obs_next
                                : batch[static_cast<std::size_t>(b)]->obs;
    const Matrix seq = o.as_sequence();
    if (seq.rows() != T || seq.cols() != width) {
      throw std::runtime_error("td3: batch mixes observation shapes");
    }
    for (int t = 0; t < T; ++t) {
      xs[static_cast<std::size_t>(t)].col(b) = seq.row(t).transpose();
    }
  }
  return xs;
}

Matrix critic_input(const std::vector<const Transition*>& batch, const Vector& actions) {
  if (batch.empty()) throw std::invalid_argument("td3: empty batch");
  const long B = static_cast<long>(batch.size());
  if (actions.size() != B) throw std::invalid_argument("td3: action count mismatch");
  const long obs_len = batch[0]->obs.entries.size();
  Matrix in(obs_len + 1, B);
  for (long b = 0; b < B; ++b) {
    in.col(b).head(obs_len) = batch[static_cast<std::size_t>(b)]->obs.entries;
    in(obs_len, b) = actions[b];
  }
  return in;
}

Vector executed_actions(const std::vector<const Transition*>& batch, CriticMode mode) {
  Vector a(static_cast<long>(batch.size()));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    double v = 0.0;
    switch (mode) {
      case CriticMode::residual:
        v = batch[b]->a_agent;
        break;
      case CriticMode::direct:
        // The critic values the applied actuation, whichever policy drove it.
        v = batch[b]->u;
        break;
      case CriticMode::superposed:
        v = batch[b]->a_expert + batch[b]->a_agent;
        break;
    }
    a[static_cast<long>(b)] = v;
  }
  return a;
}

Vector td3_targets(Td3Nets& nets, const std::vector<const Transition*>& batch, CriticMode mode,
                   Rng& smoothing_rng) {
  const long B = static_cast<long>(batch.size());
  const Matrix sig = nets.actor_t.forward_batch(actor_input(batch, true));
  Vector a_next(B);
  for (long b = 0; b < B; ++b) {
    double noise = clamp(smoothing_rng.gaussian(0.0, nets.cfg.smoothing_sd),
                         -nets.cfg.smoothing_clip, nets.cfg.smoothing_clip);
    double a = clamp(nets.to_action(sig(0, b)) + noise, nets.cfg.action_low, nets.cfg.action_high);
    if (mode == CriticMode::superposed) a += batch[static_cast<std::size_t>(b)]->a_expert_next;
    a_next[b] = a;
  }
  const long obs_len = batch[0]->obs_next.entries.size();
  Matrix in(obs_len + 1, B);
  for (long b = 0; b < B; ++b) {
    in.col(b).head(obs_len) = batch[static_cast<std::size_t>(b)]->obs_next.entries;
    in(obs_len, b) = a_next[b];
  }
  const Matrix q1 = nets.critic1_t.forward_batch({in});
  const Matrix q2 = nets.critic2_t.forward_batch({in});
  Vector targets(B);
  for (long b = 0; b < B; ++b) {
    const Transition& tr = *batch[static_cast<std::size_t>(b)];
    const double not_done = tr.done ? 0.0 : 1.0;
    targets[b] = tr.reward + nets.cfg.gamma * not_done * std::min(q1(0, b), q2(0, b));
  }
  return targets;
}

double critic_loss_and_grad(Td3Nets& nets, const std::vector<const Transition*>& batch,
                            CriticMode mode, const Vector& targets) {
  const long B = static_cast<long>(batch.size());
  const Matrix in = critic_input(batch, executed_actions(batch, mode));
  double loss_sum = 0.0;
  for (Network* critic : {&nets.critic1, &nets.critic2}) {
    const Matrix q = critic->forward_batch({in});
    Matrix dq(1, B);
    double loss = 0.0;
    for (long b = 0; b < B; ++b) {
      const double diff = targets[b] - q(0, b);
      loss += 0.5 * diff * diff;
      dq(0, b) = -diff / static_cast<double>(B);
    }
    critic->backward_batch(dq);
    loss_sum += loss / static_cast<double>(B);
  }
  return loss_sum / 2.0;
}

namespace {

std::vector<Vector> snapshot_grads(Network& net) {
  std::vector<Vector> snap;
  for (auto& v : net.param_views()) {
    snap.emplace_back(Eigen::Map<const Vector>(v.grad, static_cast<long>(v.size)));
  }
  return snap;
}

void restore_grads(Network& net, const std::vector<Vector>& snap) {
  auto views = net.param_views();
  for (std::size_t i = 0; i < views.size(); ++i) {
    Eigen::Map<Vector>(views[i].grad, static_cast<long>(views[i].size)) = snap[i];
  }
}

}  // namespace

double actor_loss_and_grad(Td3Nets& nets, const std::vector<const Transition*>& batch,
                           CriticMode mode) {
  const long B = static_cast<long>(batch.size());
  const Matrix sig = nets.actor.forward_batch(actor_input(batch, false));
  Vector actions(B);
  for (long b = 0; b < B; ++b) {
    double a = nets.to_action(sig(0, b));
    if (mode == CriticMode::superposed) a += batch[static_cast<std::size_t>(b)]->a_expert;
    actions[b] = a;
  }
  const Matrix in = critic_input(batch, actions);
  // The critic is only a conduit here; its accumulated gradients must not
  // change.
  const auto saved = snapshot_grads(nets.critic1);
  const Matrix q = nets.critic1.forward_batch({in});
  Matrix dq = Matrix::Constant(1, B, -1.0 / static_cast<double>(B));
  const std::vector<Matrix> din = nets.critic1.backward_batch(dq);
  restore_grads(nets.critic1, saved);
  const long obs_len = batch[0]->obs.entries.size();
  // d(action)/d(sigmoid out) is the affine range width; the expert offset is
  // constant.
  Matrix dsig(1, B);
  for (long b = 0; b < B; ++b) {
    dsig(0, b) = din[0](obs_len, b) * (nets.cfg.action_high - nets.cfg.action_low);
  }
  nets.actor.backward_batch(dsig);
  double loss = 0.0;
  for (long b = 0; b < B; ++b) loss -= q(0, b);
  return loss / static_cast<double>(B);
}

UpdateStats td3_update_step(Td3Nets& nets, const std::vector<const Transition*>& batch,
                            CriticMode mode, Rng& smoothing_rng) {
  UpdateStats stats;
  nets.critic1.zero_grad();
  nets.critic2.zero_grad();
  const Vector targets = td3_targets(nets, batch, mode, smoothing_rng);
  stats.critic_loss = critic_loss_and_grad(nets, batch, mode, targets);
  nets.critic1.apply_update();
  nets.critic2.apply_update();
  ++nets.updates;
  if (nets.updates % nets.cfg.policy_delay == 0) {
    nets.actor.zero_grad();
    stats.actor_loss = actor_loss_and_grad(nets, batch, mode);
    nets.actor.apply_update();
    nets.soft_sync_targets();
    stats.actor_updated = true;
  }
  return stats;
}

Td3Config td3_from_config(const Config& c) {
  Td3Config cfg;
  cfg.gamma = c.get_double("td3.gamma", cfg.gamma);
  cfg.rho = c.get_double("td3.rho", cfg.rho);
  cfg.policy_delay = c.get_int("td3.policy_delay", cfg.policy_delay);
  cfg.smoothing_sd = c.get_double("td3.smoothing_sd", cfg.smoothing_sd);
  cfg.smoothing_clip = c.get_double("td3.smoothing_clip", cfg.smoothing_clip);
  cfg.actor_lr = c.get_double("td3.actor_lr", cfg.actor_lr);
  cfg.critic_lr = c.get_double("td3.critic_lr", cfg.critic_lr);
  cfg.batch_size = c.get_int("td3.batch_size", cfg.batch_size);
  cfg.validate();
  return cfg;
}

}  // namespace resrl
