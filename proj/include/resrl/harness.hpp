#pragma once

#include "resrl/common.hpp"
#include "resrl/config.hpp"
#include "resrl/imitation.hpp"
#include "resrl/iohmm.hpp"
#include "resrl/pid.hpp"
#include "resrl/plant.hpp"
#include "resrl/residual.hpp"
#include "resrl/specialization.hpp"
#include "resrl/td3.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace resrl {

enum class TrainLoss { none, qa, col };
enum class Controller { expert, agent, expert_agent };

std::string train_loss_name(TrainLoss t);
TrainLoss train_loss_from_name(const std::string& s);
std::string controller_name(Controller c);
Controller controller_from_name(const std::string& s);

// One ablation row. The name encodes the tuple:
// [bc_|col_][td3_]{direct|residual}[_gated], plus the bare "pid" row.
struct VariantSpec {
  std::string name;
  PretrainMode pretrain = PretrainMode::none;
  TrainLoss train = TrainLoss::none;
  Controller controller = Controller::expert;
  bool specialized = false;
};

// All 14 rows of the comparison matrix.
const std::vector<VariantSpec>& variant_table();
// Lookup by name / by tuple; anything outside the matrix is refused.
VariantSpec variant_by_name(const std::string& name);
VariantSpec variant_by_tuple(PretrainMode pretrain, TrainLoss train, Controller controller,
                             bool specialized);

struct ExperimentConfig {
  std::string experiment = "exp1_sync";  // exp1_sync | exp2_activation | exp3_ablation
  PlantConfig plant;
  DisturbanceProfile disturbance;
  PidGains pid;
  Td3Config td3;
  EmOptions em;
  bool iohmm_use_input = true;

  std::uint64_t seed = 1;
  std::string out_dir = "out";

  int expert_episodes = 10;
  long pretrain_steps = 2000;
  long value_warmup = 2000;
  int episodes = 150;        // online training episodes per variant
  int train_every = 1;       // stored steps per gradient update
  double explore_sd = 0.1;   // initial exploration noise, decays linearly to 0
  double expert_ratio = 0.25;
  std::size_t buffer_capacity = 100000;

  int eval_every = 5;        // learning-curve probe cadence, episodes
  int eval_runs = 10;
  double init_frac = 0.1;    // leading fraction of steps excluded from returns

  std::vector<double> eval_magnitudes;  // exp1 evaluation disturbance levels
  std::vector<std::string> variants;    // exp3 row subset; empty selects all

  double r_scale() const { return 0.5 * (plant.u_high - plant.u_low); }

  static ExperimentConfig from_config(const Config& c);
};

// Offline pipeline products shared by every variant trained under one config.
struct Pipeline {
  ExpertData expert;
  ReplayBuffer expert_buffer{1};
  std::vector<SequencePair> sequences;

  bool has_detection = false;
  IohmmParams iohmm;
  std::vector<double> iohmm_loglik;  // winning restart's EM trace
  Network value_net;
  StateClassification classification;
  ReplayBuffer expert_abnormal{1};   // expert steps decoded into the gated set
};

// Expert collection always; detector + value net + state classification when
// requested.
Pipeline build_pipeline(const ExperimentConfig& cfg, bool need_detection);
// Writes expert episodes, detector model/loglik trace, classification and
// state-distribution CSVs under out_dir.
void export_pipeline(const std::string& out_dir, const ExperimentConfig& cfg, Pipeline& pipe);

struct TrainedVariant {
  VariantSpec spec;
  Td3Nets nets;
  bool has_nets = false;
};

struct EvalResult {
  double mean = 0.0;
  double sd = 0.0;              // sample SD (n-1); 0 when runs == 1
  std::vector<double> returns;  // per-run returns scored after the init window
  int shutdowns = 0;
  double activation_fraction = 0.0;  // share of steps with the agent acting
};

// Trains one row against the shared pipeline. Writes per-episode metrics
// (and, for specialized rows, the full per-step training log) under
// out_dir/variants/<name>/ unless out_dir is empty.
TrainedVariant train_variant(const ExperimentConfig& cfg, const VariantSpec& spec,
                             const Pipeline& pipe, const std::string& out_dir);

// Noise-free evaluation over `runs` derived-seed episodes. Optionally writes
// one row per run to eval_csv and the first run's trajectory to traj_csv.
EvalResult evaluate(const ExperimentConfig& cfg, const DisturbanceProfile& dist,
                    TrainedVariant& tv, const Pipeline& pipe, int runs,
                    const std::string& eval_csv = "", const std::string& traj_csv = "");

struct VariantReport {
  std::string name;
  bool specialized = false;
  double disturbance = 0.0;
  EvalResult eval;
};

struct MetricsReport {
  std::vector<VariantReport> rows;

  // Rows at one disturbance level, sorted by descending mean reward.
  std::vector<VariantReport> ranked(double disturbance) const;
  const VariantReport& row(const std::string& name, double disturbance) const;
};

MetricsReport run_exp1(const ExperimentConfig& cfg);
MetricsReport run_exp2(const ExperimentConfig& cfg);
MetricsReport run_exp3(const ExperimentConfig& cfg);
MetricsReport run_experiment(const ExperimentConfig& cfg);

// Reads a trajectory CSV back into a detector training sequence.
SequencePair load_trajectory_csv(const std::string& path, bool use_input = true);

}  // namespace resrl
