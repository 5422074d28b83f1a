#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "resrl/imitation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

using namespace resrl;

namespace {

Observation small_obs(double y) {
  Observation o;
  o.history_depth = 1;
  o.m_y = 1;
  o.entries.resize(4);
  o.entries << y, 0.0, y, 0.0;
  return o;
}

Transition marked_transition(double reward, int hidden = -1) {
  Transition t;
  t.obs = small_obs(1.0);
  t.obs_next = small_obs(1.0);
  t.reward = reward;
  t.a_expert = 0.4;
  t.u = 0.4;  // demonstration shape: applied action is the expert's
  t.hidden_state = hidden;
  return t;
}

void zero_params(Network& net) {
  for (auto& v : net.param_views()) {
    for (std::size_t i = 0; i < v.size; ++i) v.value[i] = 0.0;
  }
}

std::vector<double> snapshot(const Network& net) {
  std::vector<double> s;
  for (const auto& v : net.param_views()) s.insert(s.end(), v.value, v.value + v.size);
  return s;
}

Td3Nets fresh_nets(std::uint64_t seed, double gamma = 0.99, double actor_lr = 1e-4) {
  Td3Config cfg;
  cfg.gamma = gamma;
  cfg.actor_lr = actor_lr;
  cfg.action_low = 0.0;  // whole-actuation frame for cloning tests
  cfg.action_high = 1.0;
  return make_td3_nets(PlantConfig::siso_default(), cfg, seed);
}

DisturbanceProfile feed_loss() {
  DisturbanceProfile d;
  d.magnitude = 0.65;
  d.on_lo = 50;
  d.on_hi = 225;
  d.off_lo = 275;
  d.off_hi = 450;
  return d;
}

const ExpertData& demo_data() {
  static const ExpertData data =
      collect_expert(PlantConfig::siso_default(), feed_loss(), PidGains::siso_default(), 6, 123);
  return data;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t k = 0; k < idx.size(); ++k) r[idx[k]] = static_cast<double>(k);
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n - 1.0) / 2.0;
  double num = 0.0, da = 0.0, db = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (ra[i] - mean) * (rb[i] - mean);
    da += (ra[i] - mean) * (ra[i] - mean);
    db += (rb[i] - mean) * (rb[i] - mean);
  }
  return num / std::sqrt(da * db);
}

}  // namespace

TEST_CASE("cloning loss is half the squared gap in the actor's action frame") {
  Td3Nets nets = fresh_nets(1);
  zero_params(nets.actor);  // sigmoid head emits exactly 0.5 -> a_hat = 0.5
  Transition lo = marked_transition(0.0);
  lo.u = 0.3;
  lo.a_expert = 0.25;
  Transition hi = marked_transition(0.0);
  hi.u = 0.7;
  hi.a_expert = 0.75;
  std::vector<const Transition*> batch = {&lo, &hi};

  // Whole-actuation frame: the label is the applied action u.
  nets.actor.zero_grad();
  const double loss = bc_loss_and_grad(nets, batch, CriticMode::direct);
  CHECK(loss == doctest::Approx(0.5 * 0.2 * 0.2).epsilon(1e-12));
  // Held-out metric is the plain mean squared error, not the half version.
  CHECK(bc_mse(nets, batch, CriticMode::direct) == doctest::Approx(0.2 * 0.2).epsilon(1e-12));

  // Superposed frame: the label is the expert action itself.
  CHECK(bc_mse(nets, batch, CriticMode::superposed) ==
        doctest::Approx(0.25 * 0.25).epsilon(1e-12));

  // Correction frame: the label is u - a_expert, here +/-0.05. A zeroed
  // actor on a symmetric span emits exactly 0.
  Td3Config rcfg;
  rcfg.action_low = -0.5;
  rcfg.action_high = 0.5;
  Td3Nets rnets = make_td3_nets(PlantConfig::siso_default(), rcfg, 1);
  zero_params(rnets.actor);
  CHECK(bc_mse(rnets, batch, CriticMode::residual) ==
        doctest::Approx(0.05 * 0.05).epsilon(1e-12));
}

TEST_CASE("combined loss is the sum of its three parts") {
  Td3Nets nets = fresh_nets(3);
  std::vector<Transition> store;
  for (int i = 0; i < 8; ++i) {
    Transition t = marked_transition(-0.1 * i);
    t.a_expert = 0.2 + 0.05 * i;
    t.u = t.a_expert;
    store.push_back(t);
  }
  std::vector<const Transition*> batch;
  for (const auto& t : store) batch.push_back(&t);
  Rng rng(5);
  const LossBreakdown out = col_update_step(nets, batch, CriticMode::direct, rng, true);
  CHECK(out.actor_updated);
  CHECK(out.total == out.l_bc + out.l_a + out.l_q);
  CHECK(out.l_bc > 0.0);
  CHECK(out.l_q > 0.0);
}

TEST_CASE("specialized update rejects steps outside the specialized states") {
  Td3Nets nets = fresh_nets(7);
  std::vector<Transition> store = {marked_transition(-0.1, 2), marked_transition(-0.2, 2)};
  std::vector<const Transition*> batch = {&store[0], &store[1]};
  const std::vector<int> abnormal = {2};

  Rng rng(9);
  CHECK_NOTHROW(col_sdrprl_update(nets, batch, abnormal, rng));

  store.push_back(marked_transition(-0.3, 0));  // decoded to a healthy state
  std::vector<const Transition*> tainted = {&store[0], &store[2]};
  Rng rng2(9);
  CHECK_THROWS_AS(col_sdrprl_update(nets, tainted, abnormal, rng2), std::logic_error);
}

TEST_CASE("mixed batches honor the expert ratio, expert part first") {
  ReplayBuffer expert(64), agent(64);
  for (int i = 0; i < 40; ++i) expert.push(marked_transition(+1.0));
  for (int i = 0; i < 60; ++i) agent.push(marked_transition(-1.0));

  Rng rng(13);
  const auto batch = mix_batch(expert, agent, 64, 0.25, rng);
  REQUIRE(batch.size() == 64);
  for (int i = 0; i < 16; ++i) CHECK(batch[i]->reward == +1.0);
  int agents = 0;
  for (int i = 16; i < 64; ++i) agents += batch[i]->reward == -1.0;
  CHECK(agents == 48);

  const auto all_agent = mix_batch(expert, agent, 8, 0.0, rng);
  for (const Transition* t : all_agent) CHECK(t->reward == -1.0);
  const auto all_expert = mix_batch(expert, agent, 8, 1.0, rng);
  for (const Transition* t : all_expert) CHECK(t->reward == +1.0);

  CHECK_THROWS(mix_batch(expert, agent, 64, 1.5, rng));
  ReplayBuffer tiny(4);
  tiny.push(marked_transition(0.0));
  CHECK_THROWS(mix_batch(tiny, agent, 64, 0.5, rng));  // expert side too small
}

TEST_CASE("demonstration episodes log the loop controller faithfully") {
  const ExpertData& data = demo_data();
  REQUIRE(data.episodes.size() == 6);
  CHECK(data.returns.size() == 6);
  CHECK(data.windows.size() == 6);
  CHECK(data.shutdowns == 0);

  double sum = 0.0;
  for (double r : data.returns) sum += r;
  CHECK(data.mean_return == doctest::Approx(sum / 6.0).epsilon(1e-15));

  for (std::size_t e = 0; e < data.episodes.size(); ++e) {
    const auto& ep = data.episodes[e];
    REQUIRE(ep.size() == 500);
    CHECK(data.windows[e].first >= 50);
    CHECK(data.windows[e].first <= 225);
    CHECK(data.windows[e].second >= 275);
    CHECK(data.windows[e].second <= 450);
    for (const Transition& tr : ep) {
      CHECK(tr.a_agent == 0.0);
      CHECK(tr.u == tr.a_expert);  // saturation bounds sit inside u bounds
      CHECK(tr.hidden_state == -1);
    }
    for (std::size_t t = 0; t + 1 < ep.size(); ++t) {
      CHECK(ep[t].a_expert_next == ep[t + 1].a_expert);
      CHECK((ep[t].obs_next.entries - ep[t + 1].obs.entries).norm() == 0.0);
    }
    CHECK(ep.back().a_expert_next > 0.0);  // controller peek, not a placeholder
  }
}

TEST_CASE("demonstration collection is seed-reproducible") {
  const ExpertData& a = demo_data();
  const ExpertData b =
      collect_expert(PlantConfig::siso_default(), feed_loss(), PidGains::siso_default(), 6, 123);
  for (std::size_t e = 0; e < 6; ++e) {
    CHECK(a.returns[e] == b.returns[e]);
    CHECK(a.windows[e] == b.windows[e]);
    CHECK(a.episodes[e][250].a_expert == b.episodes[e][250].a_expert);
    CHECK(a.episodes[e][250].reward == b.episodes[e][250].reward);
  }
  const ExpertData c =
      collect_expert(PlantConfig::siso_default(), feed_loss(), PidGains::siso_default(), 1, 321);
  CHECK(c.returns[0] != a.returns[0]);
}

TEST_CASE("replay buffer and detector sequences mirror the episodes") {
  const ExpertData& data = demo_data();
  const ReplayBuffer buf = build_buffer(data.episodes, 100000);
  CHECK(buf.size() == 3000);
  CHECK(buf.at(0).a_expert == data.episodes[0][0].a_expert);
  CHECK(buf.at(500).a_expert == data.episodes[1][0].a_expert);

  const auto seqs = to_sequences(data.episodes, true);
  REQUIRE(seqs.size() == 6);
  CHECK(seqs[0].u.cols() == 1);
  CHECK(seqs[0].length() == 500);
  for (int t = 0; t < 500; t += 97) {
    const Transition& tr = data.episodes[0][static_cast<std::size_t>(t)];
    CHECK(seqs[0].u(t, 0) == tr.u);
    CHECK(seqs[0].y(t, 0) == tr.obs_next.newest_y()[0]);
  }
  const auto blind = to_sequences(data.episodes, false);
  CHECK(blind[0].u.cols() == 0);
  CHECK((blind[0].y - seqs[0].y).norm() == 0.0);
}

TEST_CASE("pretraining is a no-op when disabled") {
  const ReplayBuffer buf = build_buffer(demo_data().episodes, 100000);
  Td3Nets nets = fresh_nets(11);
  const auto before = snapshot(nets.actor);
  Rng batch_rng(1), noise_rng(2);
  const PretrainResult none =
      pretrain(nets, buf, PretrainMode::none, CriticMode::direct, 100, batch_rng, noise_rng);
  CHECK(none.steps == 0);
  CHECK(snapshot(nets.actor) == before);
  const PretrainResult zero =
      pretrain(nets, buf, PretrainMode::bc, CriticMode::direct, 0, batch_rng, noise_rng);
  CHECK(zero.steps == 0);
  CHECK(snapshot(nets.actor) == before);
}

TEST_CASE("cloning pretraining drives the held-out error down") {
  const ExpertData& data = demo_data();
  std::vector<std::vector<Transition>> train(data.episodes.begin(), data.episodes.begin() + 4);
  const ReplayBuffer buf = build_buffer(train, 100000);
  std::vector<const Transition*> held_out;
  for (std::size_t e = 4; e < 6; ++e) {
    for (std::size_t t = 0; t < data.episodes[e].size(); t += 7) {
      held_out.push_back(&data.episodes[e][t]);
    }
  }

  Td3Nets nets = fresh_nets(17, 0.99, 1e-3);
  const double before = bc_mse(nets, held_out, CriticMode::direct);
  Rng batch_rng(3), noise_rng(4);
  const PretrainResult res =
      pretrain(nets, buf, PretrainMode::bc, CriticMode::direct, 200, batch_rng, noise_rng);
  CHECK(res.steps == 200);
  const double after = bc_mse(nets, held_out, CriticMode::direct);
  INFO("held-out mse ", before, " -> ", after);
  CHECK(after < before);
  CHECK(after < 0.01);
  // The cloned policy is hard-synced into the target actor.
  CHECK(snapshot(nets.actor_t) == snapshot(nets.actor));
}

TEST_CASE("combined pretraining ranks states consistently with observed returns") {
  const ExpertData& data = demo_data();
  const ReplayBuffer buf = build_buffer(data.episodes, 100000);
  Td3Nets nets = fresh_nets(23, 0.9, 1e-3);
  Rng batch_rng(7), noise_rng(8);
  pretrain(nets, buf, PretrainMode::col, CriticMode::direct, 500, batch_rng, noise_rng);

  // Probe one episode on a coarse grid: Q(s, a_expert) against the
  // discounted return actually collected from that step onward.
  const auto& ep = data.episodes[0];
  std::vector<double> q_vals, rtg_vals;
  for (std::size_t t = 0; t < ep.size(); t += 40) {
    std::vector<const Transition*> one = {&ep[t]};
    const Vector q_in = critic_input(one, executed_actions(one, CriticMode::direct)).col(0);
    q_vals.push_back(nets.critic1.forward(q_in)[0]);
    double g = 0.0, w = 1.0;
    for (std::size_t k = t; k < ep.size(); ++k, w *= 0.9) g += w * ep[k].reward;
    rtg_vals.push_back(g);
  }
  const double rho = spearman(q_vals, rtg_vals);
  INFO("spearman ", rho);
  CHECK(rho > 0.3);
}

TEST_CASE("pretrain mode names round-trip") {
  for (const char* name : {"none", "bc", "col"}) {
    CHECK(pretrain_mode_name(pretrain_mode_from_string(name)) == name);
  }
  CHECK_THROWS_AS(pretrain_mode_from_string("dagger"), std::invalid_argument);
}
