#include "resrl/harness.hpp"

#include "resrl/csv.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>

namespace resrl {

namespace {

// Training episodes and learning-curve probes draw plant seeds from index
// ranges disjoint from expert collection (0..) and final evaluation (0..).
constexpr std::uint64_t kTrainEpisodeBase = 1000000;

std::vector<std::string> trajectory_header(int m_y) {
  std::vector<std::string> h;
  h.push_back("t");
  for (int i = 0; i < m_y; ++i) h.push_back("y" + std::to_string(i));
  h.push_back("u");
  h.push_back("a_expert");
  h.push_back("a_agent");
  h.push_back("reward");
  h.push_back("disturbance");
  h.push_back("hidden_state");
  return h;
}

void write_trajectory_row(CsvWriter& w, int t, const Vector& y, double u, double a_expert,
                          double a_agent, double reward, bool disturbance, int hidden_state) {
  w.field(t);
  for (int i = 0; i < y.size(); ++i) w.field(y[i]);
  w.field(u).field(a_expert).field(a_agent).field(reward).field(disturbance ? 1 : 0);
  w.field(hidden_state);
  w.end_row();
}

void ensure_parent_dir(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

std::string magnitude_tag(double m) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", m);
  return buf;
}

struct EpisodeSetup {
  Controller controller = Controller::expert;
  bool specialized = false;
  bool training = false;
  double explore_sd = 0.0;
  const Pipeline* pipe = nullptr;  // required when specialized
  CsvWriter* traj = nullptr;
  double init_frac = 0.0;
};

struct EpisodeOutcome {
  double scored_return = 0.0;  // excludes the init window; shutdown charged
  double full_return = 0.0;
  bool shutdown = false;
  long agent_steps = 0;  // steps on which the agent contributed
  long steps = 0;
};

// One closed-loop episode. Stored transitions (complete with their
// next-step expert action) are handed to `on_step` one step delayed; for
// specialized rows only gated steps are stored.
EpisodeOutcome run_episode(const ExperimentConfig& cfg, const DisturbanceProfile& dist,
                           std::uint64_t plant_seed, Td3Nets* nets, const EpisodeSetup& s,
                           Rng& explore_rng,
                           const std::function<void(const Transition&)>& on_step) {
  if (s.specialized && (s.pipe == nullptr || !s.pipe->has_detection)) {
    throw std::logic_error("harness: specialized episode requires detection products");
  }
  if (s.controller != Controller::expert && nets == nullptr) {
    throw std::logic_error("harness: learned controller requires policy networks");
  }

  Plant plant(cfg.plant, dist, plant_seed);
  Pid pid(cfg.pid, cfg.plant.dt);
  Td3Nets unused_nets;
  Td3Nets& policy = nets != nullptr ? *nets : unused_nets;

  std::optional<IohmmFilter> filter;
  if (s.specialized) filter.emplace(s.pipe->iohmm);

  ActContext ctx;
  ctx.setpoint0 = cfg.plant.setpoint[0];
  ctx.u_low = cfg.plant.u_low;
  ctx.u_high = cfg.plant.u_high;
  ctx.r_scale = cfg.r_scale();
  ctx.explore_sd = s.explore_sd;

  const int total = cfg.plant.steps();
  const int init_start = static_cast<int>(std::floor(s.init_frac * total));

  EpisodeOutcome out;
  std::optional<Transition> pending;  // stored transition awaiting a_expert_next

  auto flush_pending = [&](double a_expert_next) {
    if (!pending) return;
    pending->a_expert_next = a_expert_next;
    if (on_step) on_step(*pending);
    pending.reset();
  };

  for (int t = 0; t < total; ++t) {
    const Observation obs = plant.observation();

    int decoded = -1;
    bool gate_on = false;
    if (s.specialized) {
      decoded = filter->state();
      gate_on = s.pipe->classification.is_abnormal(decoded);
    }

    ControlDecision d;
    bool agent_active = false;
    switch (s.controller) {
      case Controller::expert:
        d = act(obs, pid, policy, false, ControlMode::pid_only, s.training, ctx, explore_rng);
        break;
      case Controller::expert_agent: {
        const bool g = s.specialized ? gate_on : true;
        d = act(obs, pid, policy, g, ControlMode::residual, s.training, ctx, explore_rng);
        agent_active = g;
        break;
      }
      case Controller::agent:
        if (!s.specialized) {
          d = act(obs, pid, policy, true, ControlMode::drl_only, s.training, ctx, explore_rng);
          agent_active = true;
        } else if (gate_on) {
          // Keep the fallback controller's state warm across gated stretches.
          pid.step(ctx.setpoint0 - obs.newest_y()[0]);
          d = act(obs, pid, policy, true, ControlMode::drl_only, s.training, ctx, explore_rng);
          agent_active = true;
        } else {
          d = act(obs, pid, policy, false, ControlMode::pid_only, s.training, ctx, explore_rng);
        }
        break;
    }

    flush_pending(d.a_expert);

    // The action history entry is the expert component, except for
    // agent-as-controller rows where the applied actuation is the
    // natural "previous action" signal in both gated and fallback steps.
    const double history_entry =
        s.controller == Controller::agent ? d.a_applied : d.a_expert;
    const StepResult res = plant.step(d.a_applied, history_entry);
    if (filter) {
      Vector u_row;
      if (cfg.iohmm_use_input) {
        u_row.resize(1);
        u_row[0] = d.a_applied;
      } else {
        u_row.resize(0);
      }
      filter->push(u_row, res.y);
    }

    out.full_return += res.reward;
    if (t >= init_start) out.scored_return += res.reward;
    if (agent_active) ++out.agent_steps;
    ++out.steps;

    if (s.traj != nullptr) {
      write_trajectory_row(*s.traj, t, res.y, d.a_applied, d.a_expert, d.a_agent, res.reward,
                           res.disturbance_active, decoded);
    }

    const bool store = s.training && s.controller != Controller::expert &&
                       (!s.specialized || gate_on);
    if (store) {
      Transition tr;
      tr.obs = obs;
      tr.a_expert = d.a_expert;
      tr.a_agent = d.a_agent;
      tr.u = d.a_applied;
      tr.reward = res.reward;
      tr.obs_next = res.observation;
      tr.done = res.shutdown;
      tr.hidden_state = decoded;
      pending = std::move(tr);
    }

    if (res.shutdown) {
      out.shutdown = true;
      const double worst = plant.worst_reward();
      const int remaining = total - 1 - t;
      out.full_return += remaining * worst;
      const int scored_remaining = total - std::max(t + 1, init_start);
      if (scored_remaining > 0) out.scored_return += scored_remaining * worst;
      if (pending) {
        // The trip's cost is the rest of the horizon at the worst in-bounds
        // reward; fold its discounted sum into the terminal transition so
        // the critic prices the shutdown instead of seeing a short episode.
        const double g = cfg.td3.gamma;
        pending->reward += g < 1.0
                               ? worst * g * (1.0 - std::pow(g, remaining)) / (1.0 - g)
                               : worst * remaining;
      }
      flush_pending(0.0);  // terminal: no bootstrap companion
      break;
    }
  }

  if (pending) {
    // Peek at the expert action from the final state so the last stored
    // step still carries a usable bootstrap companion.
    Pid peek = pid;
    flush_pending(peek.step(ctx.setpoint0 - plant.y()[0]));
  }
  return out;
}

const VariantSpec* find_variant(const std::string& name) {
  for (const auto& v : variant_table()) {
    if (v.name == name) return &v;
  }
  return nullptr;
}

std::uint64_t variant_index(const std::string& name) {
  const auto& table = variant_table();
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (table[i].name == name) return static_cast<std::uint64_t>(i);
  }
  throw std::invalid_argument("harness: variant '" + name + "' is not in the matrix");
}

double sample_mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double sample_sd(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = sample_mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

}  // namespace

std::string train_loss_name(TrainLoss t) {
  switch (t) {
    case TrainLoss::none:
      return "none";
    case TrainLoss::qa:
      return "qa";
    case TrainLoss::col:
      return "col";
  }
  throw std::logic_error("harness: unknown training loss");
}

TrainLoss train_loss_from_name(const std::string& s) {
  if (s == "none") return TrainLoss::none;
  if (s == "qa" || s == "q+a") return TrainLoss::qa;
  if (s == "col") return TrainLoss::col;
  throw std::invalid_argument("harness: unknown training loss '" + s + "'");
}

std::string controller_name(Controller c) {
  switch (c) {
    case Controller::expert:
      return "expert";
    case Controller::agent:
      return "agent";
    case Controller::expert_agent:
      return "expert_agent";
  }
  throw std::logic_error("harness: unknown controller");
}

Controller controller_from_name(const std::string& s) {
  if (s == "expert") return Controller::expert;
  if (s == "agent") return Controller::agent;
  if (s == "expert_agent" || s == "expert+agent") return Controller::expert_agent;
  throw std::invalid_argument("harness: unknown controller '" + s + "'");
}

const std::vector<VariantSpec>& variant_table() {
  static const std::vector<VariantSpec> table = [] {
    auto row = [](const char* name, PretrainMode p, TrainLoss t, Controller c, bool s) {
      VariantSpec v;
      v.name = name;
      v.pretrain = p;
      v.train = t;
      v.controller = c;
      v.specialized = s;
      return v;
    };
    std::vector<VariantSpec> t;
    t.push_back(row("pid", PretrainMode::none, TrainLoss::none, Controller::expert, false));
    t.push_back(row("bc_direct", PretrainMode::bc, TrainLoss::none, Controller::agent, false));
    t.push_back(row("td3_direct", PretrainMode::none, TrainLoss::qa, Controller::agent, false));
    t.push_back(row("bc_td3_direct", PretrainMode::bc, TrainLoss::qa, Controller::agent, false));
    t.push_back(row("col_direct", PretrainMode::col, TrainLoss::col, Controller::agent, false));
    t.push_back(
        row("td3_residual", PretrainMode::none, TrainLoss::qa, Controller::expert_agent, false));
    t.push_back(
        row("bc_td3_residual", PretrainMode::bc, TrainLoss::qa, Controller::expert_agent, false));
    t.push_back(
        row("col_residual", PretrainMode::col, TrainLoss::col, Controller::expert_agent, false));
    t.push_back(
        row("td3_direct_gated", PretrainMode::none, TrainLoss::qa, Controller::agent, true));
    t.push_back(
        row("bc_td3_direct_gated", PretrainMode::bc, TrainLoss::qa, Controller::agent, true));
    t.push_back(
        row("col_direct_gated", PretrainMode::col, TrainLoss::col, Controller::agent, true));
    t.push_back(row("td3_residual_gated", PretrainMode::none, TrainLoss::qa,
                    Controller::expert_agent, true));
    t.push_back(row("bc_td3_residual_gated", PretrainMode::bc, TrainLoss::qa,
                    Controller::expert_agent, true));
    t.push_back(row("col_residual_gated", PretrainMode::col, TrainLoss::col,
                    Controller::expert_agent, true));
    return t;
  }();
  return table;
}

VariantSpec variant_by_name(const std::string& name) {
  const VariantSpec* v = find_variant(name);
  if (v == nullptr) {
    std::string known;
    for (const auto& row : variant_table()) known += (known.empty() ? "" : ", ") + row.name;
    throw std::invalid_argument("harness: unknown variant '" + name + "' (known: " + known + ")");
  }
  return *v;
}

VariantSpec variant_by_tuple(PretrainMode pretrain, TrainLoss train, Controller controller,
                             bool specialized) {
  for (const auto& v : variant_table()) {
    if (v.pretrain == pretrain && v.train == train && v.controller == controller &&
        v.specialized == specialized) {
      return v;
    }
  }
  throw std::invalid_argument(
      "harness: tuple (" + pretrain_mode_name(pretrain) + ", " + train_loss_name(train) + ", " +
      controller_name(controller) + ", " + (specialized ? "specialized" : "plain") +
      ") is not a matrix row");
}

ExperimentConfig ExperimentConfig::from_config(const Config& c) {
  ExperimentConfig e;
  e.experiment = c.get_str("experiment", e.experiment);
  if (e.experiment != "exp1_sync" && e.experiment != "exp2_activation" &&
      e.experiment != "exp3_ablation") {
    throw std::runtime_error("config: experiment must be exp1_sync, exp2_activation or "
                             "exp3_ablation, got '" +
                             e.experiment + "'");
  }
  e.plant = PlantConfig::from_config(c);
  e.disturbance = DisturbanceProfile::from_config(c, e.plant.steps());
  e.disturbance.validate(e.plant.steps(), e.plant.m_y);
  e.pid = PidGains::from_config(c);
  e.td3 = td3_from_config(c);
  e.em.n_states = c.get_int("iohmm.n_states", e.em.n_states);
  e.em.max_iters = c.get_int("iohmm.max_iters", e.em.max_iters);
  e.em.tol = c.get_double("iohmm.tol", e.em.tol);
  e.em.restarts = c.get_int("iohmm.restarts", e.em.restarts);
  e.iohmm_use_input = c.get_bool("iohmm.use_input", e.iohmm_use_input);

  e.seed = c.get_u64("seed", e.seed);
  e.out_dir = c.get_str("out", e.out_dir);

  e.expert_episodes = c.get_int("train.expert_episodes", e.expert_episodes);
  e.pretrain_steps = c.get_int("train.pretrain_steps", static_cast<int>(e.pretrain_steps));
  e.value_warmup = c.get_int("train.value_warmup", static_cast<int>(e.value_warmup));
  int default_episodes = 150;
  if (e.experiment == "exp2_activation") default_episodes = 50;
  if (e.experiment == "exp3_ablation") default_episodes = 300;
  e.episodes = c.get_int("train.episodes", default_episodes);
  e.train_every = c.get_int("train.every", e.train_every);
  e.explore_sd = c.get_double("train.explore_sd", e.explore_sd);
  e.expert_ratio = c.get_double("train.expert_ratio", e.expert_ratio);
  e.buffer_capacity =
      static_cast<std::size_t>(c.get_int("train.buffer_capacity", static_cast<int>(e.buffer_capacity)));

  e.eval_every = c.get_int("eval.every", e.eval_every);
  e.eval_runs = c.get_int("eval.runs", e.eval_runs);
  e.init_frac = c.get_double("eval.init_frac", e.init_frac);

  if (c.has("exp1.eval_magnitudes")) {
    e.eval_magnitudes = c.get_vec("exp1.eval_magnitudes");
  } else {
    // Default: the trained level plus a slightly stronger unseen one.
    e.eval_magnitudes = {e.disturbance.magnitude,
                         std::min(1.0, e.disturbance.magnitude + 0.05)};
  }
  if (c.has("ablate.variants")) e.variants = c.get_str_list("ablate.variants");

  if (e.expert_episodes < 1) throw std::runtime_error("config: train.expert_episodes must be >= 1");
  if (e.episodes < 0) throw std::runtime_error("config: train.episodes must be >= 0");
  if (e.train_every < 1) throw std::runtime_error("config: train.every must be >= 1");
  if (e.eval_runs < 1) throw std::runtime_error("config: eval.runs must be >= 1");
  if (e.init_frac < 0.0 || e.init_frac >= 1.0) {
    throw std::runtime_error("config: eval.init_frac must lie in [0, 1)");
  }
  if (e.expert_ratio < 0.0 || e.expert_ratio > 1.0) {
    throw std::runtime_error("config: train.expert_ratio must lie in [0, 1]");
  }
  return e;
}

Pipeline build_pipeline(const ExperimentConfig& cfg, bool need_detection) {
  Pipeline p;
  p.expert = collect_expert(cfg.plant, cfg.disturbance, cfg.pid, cfg.expert_episodes, cfg.seed);
  p.expert_buffer = build_buffer(p.expert.episodes, cfg.buffer_capacity);
  p.sequences = to_sequences(p.expert.episodes, cfg.iohmm_use_input);
  if (!need_detection) return p;

  const EmResult fit = em_fit(p.sequences, cfg.em, cfg.seed);
  p.iohmm = fit.params;
  p.iohmm_loglik = fit.loglik_history;

  const int obs_len = Observation::length(cfg.plant.history_depth, cfg.plant.m_y);
  Rng value_init(derive_seed(cfg.seed, seed_stream::kInit, 3));
  p.value_net = make_value_net(obs_len, cfg.td3.critic_lr, value_init);
  Rng value_batch(derive_seed(cfg.seed, seed_stream::kBatch, 999));
  train_value(p.value_net, p.expert_buffer, cfg.value_warmup, cfg.td3.batch_size, cfg.td3.gamma,
              value_batch);
  p.classification = classify_states(p.value_net, p.iohmm, p.expert.episodes, p.sequences);

  ReplayBuffer abnormal(cfg.buffer_capacity);
  for (std::size_t ep = 0; ep < p.expert.episodes.size(); ++ep) {
    const auto& path = p.classification.decoded[ep];
    for (std::size_t t = 0; t < p.expert.episodes[ep].size(); ++t) {
      const int st = path[t];
      if (!p.classification.is_abnormal(st)) continue;
      Transition tr = p.expert.episodes[ep][t];
      tr.hidden_state = st;
      abnormal.push(std::move(tr));
    }
  }
  p.expert_abnormal = std::move(abnormal);
  p.has_detection = true;
  return p;
}

void export_pipeline(const std::string& out_dir, const ExperimentConfig& cfg, Pipeline& pipe) {
  const std::string expert_dir = out_dir + "/expert";
  std::filesystem::create_directories(expert_dir);

  CsvWriter summary(expert_dir + "/summary.csv",
                    {"episode", "return", "shutdown", "t_on", "t_off"});
  for (std::size_t ep = 0; ep < pipe.expert.episodes.size(); ++ep) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s/episode_%03zu.csv", expert_dir.c_str(), ep);
    CsvWriter traj(name, trajectory_header(cfg.plant.m_y));
    const auto& episode = pipe.expert.episodes[ep];
    const auto [t_on, t_off] = pipe.expert.windows[ep];
    for (std::size_t t = 0; t < episode.size(); ++t) {
      const Transition& tr = episode[t];
      const bool disturbed =
          cfg.disturbance.magnitude > 0.0 && static_cast<int>(t) >= t_on && static_cast<int>(t) < t_off;
      const int decoded = pipe.has_detection ? pipe.classification.decoded[ep][t] : -1;
      write_trajectory_row(traj, static_cast<int>(t), tr.obs_next.newest_y(), tr.u, tr.a_expert,
                           tr.a_agent, tr.reward, disturbed, decoded);
    }
    const bool shutdown = !episode.empty() && episode.back().done;
    summary.field(static_cast<int>(ep))
        .field(pipe.expert.returns[ep])
        .field(shutdown ? 1 : 0)
        .field(t_on)
        .field(t_off);
    summary.end_row();
  }

  if (!pipe.has_detection) return;
  const std::string det_dir = out_dir + "/detection";
  std::filesystem::create_directories(det_dir);
  pipe.iohmm.save(det_dir + "/iohmm_model.txt");
  {
    CsvWriter ll(det_dir + "/iohmm_loglik.csv", {"iteration", "loglik"});
    for (std::size_t i = 0; i < pipe.iohmm_loglik.size(); ++i) {
      ll.field(static_cast<int>(i)).field(pipe.iohmm_loglik[i]);
      ll.end_row();
    }
  }
  pipe.value_net.save(det_dir + "/value_net.net");
  write_classification_csv(det_dir + "/classification.csv", pipe.classification);
  write_state_distribution_csv(det_dir + "/state_distribution.csv", pipe.value_net,
                               pipe.expert.episodes, pipe.classification);
}

TrainedVariant train_variant(const ExperimentConfig& cfg, const VariantSpec& spec,
                             const Pipeline& pipe, const std::string& out_dir) {
  if (find_variant(spec.name) == nullptr) {
    throw std::invalid_argument("harness: variant '" + spec.name + "' is not in the matrix");
  }
  TrainedVariant tv;
  tv.spec = spec;
  if (spec.specialized && !pipe.has_detection) {
    throw std::logic_error("harness: specialized variant '" + spec.name +
                           "' needs detection products in the pipeline");
  }

  std::string vdir;
  std::unique_ptr<CsvWriter> metrics;
  std::unique_ptr<CsvWriter> train_traj;
  if (!out_dir.empty()) {
    vdir = out_dir + "/variants/" + spec.name;
    std::filesystem::create_directories(vdir);
  }

  if (spec.controller == Controller::expert) return tv;

  Td3Config tcfg = cfg.td3;
  if (spec.controller == Controller::agent) {
    tcfg.action_low = cfg.plant.u_low;
    tcfg.action_high = cfg.plant.u_high;
  } else {
    tcfg.action_low = -cfg.r_scale();
    tcfg.action_high = cfg.r_scale();
  }
  tv.nets = make_td3_nets(cfg.plant, tcfg, derive_seed(cfg.seed, seed_stream::kInit, 0));
  tv.has_nets = true;

  const std::uint64_t vi = variant_index(spec.name);
  Rng batch_rng(derive_seed(cfg.seed, seed_stream::kBatch, vi));
  Rng smoothing_rng(derive_seed(cfg.seed, seed_stream::kSmoothing, vi));
  Rng explore_rng(derive_seed(cfg.seed, seed_stream::kExplore, vi));

  // Action frame: the critic of an agent-as-controller row values the full
  // actuation; residual rows value the increment, and specialized residual
  // rows value the superposed sum with the expert's next action in the
  // bootstrap.
  const CriticMode online_mode =
      spec.controller == Controller::agent
          ? CriticMode::direct
          : (spec.specialized ? CriticMode::superposed : CriticMode::residual);
  const CriticMode pretrain_mode_frame =
      spec.controller == Controller::agent ? CriticMode::direct : CriticMode::residual;

  if (spec.pretrain != PretrainMode::none) {
    pretrain(tv.nets, pipe.expert_buffer, spec.pretrain, pretrain_mode_frame, cfg.pretrain_steps,
             batch_rng, smoothing_rng);
  }

  if (!vdir.empty()) {
    metrics = std::make_unique<CsvWriter>(
        vdir + "/metrics.csv",
        std::vector<std::string>{"episode", "steps", "return", "scored_return", "shutdown",
                                 "gate_fraction", "explore_sd", "eval_return"});
    if (spec.specialized) {
      train_traj = std::make_unique<CsvWriter>(vdir + "/train_traj.csv",
                                               trajectory_header(cfg.plant.m_y));
    }
  }

  if (spec.train != TrainLoss::none) {
    ReplayBuffer agent_buf(cfg.buffer_capacity);
    const ReplayBuffer& expert_src =
        spec.specialized ? pipe.expert_abnormal : pipe.expert_buffer;
    const auto batch_size = static_cast<std::size_t>(tcfg.batch_size);
    const auto n_expert = static_cast<std::size_t>(
        std::lround(cfg.expert_ratio * static_cast<double>(batch_size)));
    long stored = 0;

    auto on_step = [&](const Transition& tr) {
      agent_buf.push(tr);
      ++stored;
      if (stored % cfg.train_every != 0) return;
      if (spec.train == TrainLoss::col) {
        if (expert_src.size() < n_expert || agent_buf.size() < batch_size - n_expert) return;
        const auto batch = mix_batch(expert_src, agent_buf, batch_size, cfg.expert_ratio, batch_rng);
        if (spec.specialized && spec.controller == Controller::expert_agent) {
          col_sdrprl_update(tv.nets, batch, pipe.classification.abnormal, smoothing_rng);
        } else {
          col_update_auto(tv.nets, batch, online_mode, smoothing_rng);
        }
      } else {
        if (agent_buf.size() < batch_size) return;
        const auto batch = agent_buf.sample(batch_size, batch_rng);
        td3_update_step(tv.nets, batch, online_mode, smoothing_rng);
      }
    };

    for (int ep = 0; ep < cfg.episodes; ++ep) {
      EpisodeSetup es;
      es.controller = spec.controller;
      es.specialized = spec.specialized;
      es.training = true;
      es.explore_sd = cfg.explore_sd * (1.0 - static_cast<double>(ep) / cfg.episodes);
      es.pipe = &pipe;
      es.traj = train_traj.get();
      es.init_frac = 0.0;
      const EpisodeOutcome oc =
          run_episode(cfg, cfg.disturbance, derive_seed(cfg.seed, seed_stream::kPlant, kTrainEpisodeBase + ep),
                      &tv.nets, es, explore_rng, on_step);

      std::string probe;
      if (cfg.eval_every > 0 && (ep + 1) % cfg.eval_every == 0) {
        const EvalResult er = evaluate(cfg, cfg.disturbance, tv, pipe, cfg.eval_runs);
        probe = format_double(er.mean);
      }
      if (metrics) {
        metrics->field(ep)
            .field(oc.steps)
            .field(oc.full_return)
            .field(oc.scored_return)
            .field(oc.shutdown ? 1 : 0)
            .field(oc.steps > 0 ? static_cast<double>(oc.agent_steps) / oc.steps : 0.0)
            .field(es.explore_sd)
            .field(probe);
        metrics->end_row();
      }
    }
  }

  if (!vdir.empty()) tv.nets.save(vdir, "policy");
  return tv;
}

EvalResult evaluate(const ExperimentConfig& cfg, const DisturbanceProfile& dist,
                    TrainedVariant& tv, const Pipeline& pipe, int runs,
                    const std::string& eval_csv, const std::string& traj_csv) {
  if (runs < 1) throw std::invalid_argument("harness: evaluate needs runs >= 1");
  std::unique_ptr<CsvWriter> rows;
  if (!eval_csv.empty()) {
    ensure_parent_dir(eval_csv);
    rows = std::make_unique<CsvWriter>(
        eval_csv, std::vector<std::string>{"run", "return", "shutdown", "gate_fraction"});
  }

  EvalResult r;
  long agent_steps = 0;
  long steps = 0;
  Rng no_noise(0);  // never consumed: evaluation runs the deterministic policy
  for (int run = 0; run < runs; ++run) {
    std::unique_ptr<CsvWriter> traj;
    if (run == 0 && !traj_csv.empty()) {
      ensure_parent_dir(traj_csv);
      traj = std::make_unique<CsvWriter>(traj_csv, trajectory_header(cfg.plant.m_y));
    }
    EpisodeSetup es;
    es.controller = tv.spec.controller;
    es.specialized = tv.spec.specialized;
    es.training = false;
    es.explore_sd = 0.0;
    es.pipe = &pipe;
    es.traj = traj.get();
    es.init_frac = cfg.init_frac;
    const EpisodeOutcome oc =
        run_episode(cfg, dist, derive_seed(cfg.seed, seed_stream::kEval, static_cast<std::uint64_t>(run)),
                    tv.has_nets ? &tv.nets : nullptr, es, no_noise, nullptr);
    r.returns.push_back(oc.scored_return);
    if (oc.shutdown) ++r.shutdowns;
    agent_steps += oc.agent_steps;
    steps += oc.steps;
    if (rows) {
      rows->field(run)
          .field(oc.scored_return)
          .field(oc.shutdown ? 1 : 0)
          .field(oc.steps > 0 ? static_cast<double>(oc.agent_steps) / oc.steps : 0.0);
      rows->end_row();
    }
  }
  r.mean = sample_mean(r.returns);
  r.sd = sample_sd(r.returns);
  r.activation_fraction = steps > 0 ? static_cast<double>(agent_steps) / steps : 0.0;
  return r;
}

std::vector<VariantReport> MetricsReport::ranked(double disturbance) const {
  std::vector<VariantReport> out;
  for (const auto& row : rows) {
    if (std::abs(row.disturbance - disturbance) < 1e-12) out.push_back(row);
  }
  std::stable_sort(out.begin(), out.end(), [](const VariantReport& a, const VariantReport& b) {
    return a.eval.mean > b.eval.mean;
  });
  return out;
}

const VariantReport& MetricsReport::row(const std::string& name, double disturbance) const {
  for (const auto& row : rows) {
    if (row.name == name && std::abs(row.disturbance - disturbance) < 1e-12) return row;
  }
  throw std::invalid_argument("harness: no report row for variant '" + name + "' at disturbance " +
                              std::to_string(disturbance));
}

namespace {

void write_metric_rows(const std::string& path, const std::vector<VariantReport>& rows,
                       bool with_rank) {
  std::vector<std::string> header;
  if (with_rank) header.push_back("rank");
  header.insert(header.end(), {"variant", "specialized", "disturbance", "mean_reward",
                               "sd_reward", "shutdowns", "activation_fraction"});
  CsvWriter w(path, header);
  int rank = 1;
  for (const auto& row : rows) {
    if (with_rank) w.field(rank++);
    w.field(row.name)
        .field(row.specialized ? 1 : 0)
        .field(row.disturbance)
        .field(row.eval.mean)
        .field(row.eval.sd)
        .field(row.eval.shutdowns)
        .field(row.eval.activation_fraction);
    w.end_row();
  }
}

void write_run_rows(const std::string& path,
                    const std::vector<std::pair<VariantReport, const EvalResult*>>& entries) {
  CsvWriter w(path, {"variant", "disturbance", "run", "return"});
  for (const auto& [row, eval] : entries) {
    for (std::size_t i = 0; i < eval->returns.size(); ++i) {
      w.field(row.name).field(row.disturbance).field(static_cast<int>(i)).field(eval->returns[i]);
      w.end_row();
    }
  }
}

}  // namespace

MetricsReport run_exp1(const ExperimentConfig& cfg) {
  if (cfg.plant.m_y != 1) {
    throw std::invalid_argument("harness: exp1_sync expects the single-variable plant");
  }
  std::filesystem::create_directories(cfg.out_dir);
  Pipeline pipe = build_pipeline(cfg, false);
  export_pipeline(cfg.out_dir, cfg, pipe);

  const std::vector<std::string> names = {"pid", "col_direct", "col_residual"};
  MetricsReport report;
  std::vector<std::pair<VariantReport, const EvalResult*>> run_rows;
  std::vector<EvalResult> evals;
  evals.reserve(names.size() * cfg.eval_magnitudes.size());

  for (const auto& name : names) {
    const VariantSpec spec = variant_by_name(name);
    TrainedVariant tv = train_variant(cfg, spec, pipe, cfg.out_dir);
    for (double mag : cfg.eval_magnitudes) {
      DisturbanceProfile dist = cfg.disturbance;
      dist.magnitude = mag;
      const std::string tag = magnitude_tag(mag);
      const std::string vdir = cfg.out_dir + "/variants/" + name;
      VariantReport row;
      row.name = name;
      row.specialized = spec.specialized;
      row.disturbance = mag;
      row.eval = evaluate(cfg, dist, tv, pipe, cfg.eval_runs, vdir + "/eval_d" + tag + ".csv",
                          vdir + "/traj_d" + tag + ".csv");
      report.rows.push_back(row);
      evals.push_back(row.eval);
    }
  }
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    run_rows.emplace_back(report.rows[i], &evals[i]);
  }
  write_metric_rows(cfg.out_dir + "/exp1_metrics.csv", report.rows, false);
  write_run_rows(cfg.out_dir + "/exp1_runs.csv", run_rows);
  return report;
}

MetricsReport run_exp2(const ExperimentConfig& cfg) {
  if (cfg.plant.m_y < 2) {
    throw std::invalid_argument("harness: exp2_activation expects the multi-variable plant");
  }
  std::filesystem::create_directories(cfg.out_dir);
  Pipeline pipe = build_pipeline(cfg, true);
  export_pipeline(cfg.out_dir, cfg, pipe);

  // The specialized run plus the same-budget non-specialized run it is
  // compared against, and the loop controller as the floor.
  const std::vector<std::string> names = {"col_residual_gated", "col_residual", "pid"};
  MetricsReport report;
  std::vector<EvalResult> evals;
  for (const auto& name : names) {
    const VariantSpec spec = variant_by_name(name);
    TrainedVariant tv = train_variant(cfg, spec, pipe, cfg.out_dir);
    const std::string vdir = cfg.out_dir + "/variants/" + name;
    VariantReport row;
    row.name = name;
    row.specialized = spec.specialized;
    row.disturbance = cfg.disturbance.magnitude;
    row.eval = evaluate(cfg, cfg.disturbance, tv, pipe, cfg.eval_runs, vdir + "/eval.csv",
                        vdir + "/traj.csv");
    report.rows.push_back(row);
    evals.push_back(row.eval);
  }
  write_metric_rows(cfg.out_dir + "/exp2_metrics.csv", report.rows, false);
  std::vector<std::pair<VariantReport, const EvalResult*>> run_rows;
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    run_rows.emplace_back(report.rows[i], &evals[i]);
  }
  write_run_rows(cfg.out_dir + "/exp2_runs.csv", run_rows);
  return report;
}

MetricsReport run_exp3(const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
  std::vector<VariantSpec> selected;
  if (cfg.variants.empty()) {
    selected = variant_table();
  } else {
    for (const auto& name : cfg.variants) selected.push_back(variant_by_name(name));
  }
  bool need_detection = false;
  for (const auto& v : selected) need_detection = need_detection || v.specialized;

  Pipeline pipe = build_pipeline(cfg, need_detection);
  export_pipeline(cfg.out_dir, cfg, pipe);

  MetricsReport report;
  std::vector<EvalResult> evals;
  for (const auto& spec : selected) {
    TrainedVariant tv = train_variant(cfg, spec, pipe, cfg.out_dir);
    const std::string vdir = cfg.out_dir + "/variants/" + spec.name;
    VariantReport row;
    row.name = spec.name;
    row.specialized = spec.specialized;
    row.disturbance = cfg.disturbance.magnitude;
    row.eval = evaluate(cfg, cfg.disturbance, tv, pipe, cfg.eval_runs, vdir + "/eval.csv",
                        vdir + "/traj.csv");
    report.rows.push_back(row);
    evals.push_back(row.eval);
  }

  const auto ranked = report.ranked(cfg.disturbance.magnitude);
  write_metric_rows(cfg.out_dir + "/exp3_ranking.csv", ranked, true);
  std::vector<std::pair<VariantReport, const EvalResult*>> run_rows;
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    run_rows.emplace_back(report.rows[i], &evals[i]);
  }
  write_run_rows(cfg.out_dir + "/exp3_runs.csv", run_rows);
  return report;
}

MetricsReport run_experiment(const ExperimentConfig& cfg) {
  if (cfg.experiment == "exp1_sync") return run_exp1(cfg);
  if (cfg.experiment == "exp2_activation") return run_exp2(cfg);
  if (cfg.experiment == "exp3_ablation") return run_exp3(cfg);
  throw std::invalid_argument("harness: unknown experiment '" + cfg.experiment + "'");
}

SequencePair load_trajectory_csv(const std::string& path, bool use_input) {
  const CsvTable table = read_csv(path);
  const int u_col = table.column("u");
  if (u_col < 0) throw std::runtime_error("trajectory csv '" + path + "': missing column 'u'");
  std::vector<int> y_cols;
  for (int i = 0;; ++i) {
    const int c = table.column("y" + std::to_string(i));
    if (c < 0) break;
    y_cols.push_back(c);
  }
  if (y_cols.empty()) {
    throw std::runtime_error("trajectory csv '" + path + "': missing columns y0..");
  }
  const long T = static_cast<long>(table.rows.size());
  if (T == 0) throw std::runtime_error("trajectory csv '" + path + "': no data rows");
  SequencePair sp;
  sp.u.resize(T, use_input ? 1 : 0);
  sp.y.resize(T, static_cast<long>(y_cols.size()));
  for (long t = 0; t < T; ++t) {
    const auto& row = table.rows[static_cast<std::size_t>(t)];
    if (use_input) sp.u(t, 0) = std::stod(row[static_cast<std::size_t>(u_col)]);
    for (std::size_t j = 0; j < y_cols.size(); ++j) {
      sp.y(t, static_cast<long>(j)) = std::stod(row[static_cast<std::size_t>(y_cols[j])]);
    }
  }
  return sp;
}

}  // namespace resrl
