#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "resrl/cli.hpp"
#include "resrl/csv.hpp"
#include "resrl/harness.hpp"

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace resrl;

namespace {

std::string tmp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small enough to train in seconds yet exercises the full exp1 path:
// expert collection, pretraining, online updates, two-level evaluation.
std::string tiny_exp1_text(const std::string& out) {
  return "experiment = exp1_sync\n"
         "plant.episode_hours = 0.5\n"
         "seed = 11\n"
         "out = " + out + "\n"
         "train.expert_episodes = 2\n"
         "train.pretrain_steps = 20\n"
         "train.episodes = 2\n"
         "eval.every = 0\n"
         "eval.runs = 2\n"
         "exp1.eval_magnitudes = 0.65, 0.7\n";
}

struct Exp1Fixture {
  ExperimentConfig cfg;
  MetricsReport report;
  std::string dir_a;
  std::string dir_b;
};

// One shared pair of runs; the training cost is paid once for the whole
// suite and the second run only serves the byte-identity check.
const Exp1Fixture& exp1_fixture() {
  static const Exp1Fixture fx = [] {
    Exp1Fixture f;
    f.dir_a = tmp_dir("resrl_harness_exp1_a");
    f.dir_b = tmp_dir("resrl_harness_exp1_b");
    f.cfg = ExperimentConfig::from_config(Config::from_string(tiny_exp1_text(f.dir_a)));
    f.report = run_exp1(f.cfg);
    ExperimentConfig again = ExperimentConfig::from_config(
        Config::from_string(tiny_exp1_text(f.dir_b)));
    run_exp1(again);
    return f;
  }();
  return fx;
}

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double sd_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

ExperimentConfig quick_cfg(const std::string& extra = "") {
  return ExperimentConfig::from_config(Config::from_string(
      "plant.episode_hours = 0.5\n"
      "train.expert_episodes = 1\n"
      "seed = 5\n" + extra));
}

int cli(std::initializer_list<const char*> args) {
  std::vector<const char*> argv = {"resrl"};
  argv.insert(argv.end(), args.begin(), args.end());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("comparison matrix holds the fourteen expected rows") {
  const auto& table = variant_table();
  REQUIRE(table.size() == 14);

  std::set<std::string> names;
  for (const auto& v : table) names.insert(v.name);
  const std::set<std::string> expected = {
      "pid",
      "bc_direct", "td3_direct", "bc_td3_direct", "col_direct",
      "td3_residual", "bc_td3_residual", "col_residual",
      "td3_direct_gated", "bc_td3_direct_gated", "col_direct_gated",
      "td3_residual_gated", "bc_td3_residual_gated", "col_residual_gated"};
  CHECK(names == expected);

  const VariantSpec pid = variant_by_name("pid");
  CHECK(pid.pretrain == PretrainMode::none);
  CHECK(pid.train == TrainLoss::none);
  CHECK(pid.controller == Controller::expert);
  CHECK_FALSE(pid.specialized);

  const VariantSpec top = variant_by_name("col_residual_gated");
  CHECK(top.pretrain == PretrainMode::col);
  CHECK(top.train == TrainLoss::col);
  CHECK(top.controller == Controller::expert_agent);
  CHECK(top.specialized);

  const VariantSpec bc = variant_by_name("bc_direct");
  CHECK(bc.pretrain == PretrainMode::bc);
  CHECK(bc.train == TrainLoss::none);
  CHECK(bc.controller == Controller::agent);
}

TEST_CASE("variant lookup is a bijection and refuses anything off the matrix") {
  for (const auto& v : variant_table()) {
    const VariantSpec by_name = variant_by_name(v.name);
    CHECK(by_name.pretrain == v.pretrain);
    CHECK(by_name.train == v.train);
    CHECK(by_name.controller == v.controller);
    CHECK(by_name.specialized == v.specialized);

    const VariantSpec by_tuple =
        variant_by_tuple(v.pretrain, v.train, v.controller, v.specialized);
    CHECK(by_tuple.name == v.name);
  }

  CHECK_THROWS_AS(variant_by_name("warp_drive"), std::invalid_argument);
  try {
    variant_by_name("warp_drive");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("known:") != std::string::npos);
    CHECK(msg.find("col_residual_gated") != std::string::npos);
  }

  // Imitation pretraining with the plain q+a loss on the expert-only row,
  // and similar combinations outside the table, are refused.
  CHECK_THROWS_AS(variant_by_tuple(PretrainMode::bc, TrainLoss::col, Controller::agent, false),
                  std::invalid_argument);
  CHECK_THROWS_AS(variant_by_tuple(PretrainMode::col, TrainLoss::none, Controller::agent, false),
                  std::invalid_argument);
  CHECK_THROWS_AS(variant_by_tuple(PretrainMode::none, TrainLoss::none, Controller::expert, true),
                  std::invalid_argument);
}

TEST_CASE("loss and controller names round-trip with their aliases") {
  CHECK(train_loss_from_name(train_loss_name(TrainLoss::none)) == TrainLoss::none);
  CHECK(train_loss_from_name(train_loss_name(TrainLoss::qa)) == TrainLoss::qa);
  CHECK(train_loss_from_name(train_loss_name(TrainLoss::col)) == TrainLoss::col);
  CHECK(train_loss_from_name("q+a") == TrainLoss::qa);
  CHECK_THROWS_AS(train_loss_from_name("bc"), std::invalid_argument);

  CHECK(controller_from_name(controller_name(Controller::expert)) == Controller::expert);
  CHECK(controller_from_name(controller_name(Controller::agent)) == Controller::agent);
  CHECK(controller_from_name(controller_name(Controller::expert_agent)) ==
        Controller::expert_agent);
  CHECK(controller_from_name("expert+agent") == Controller::expert_agent);
  CHECK_THROWS_AS(controller_from_name("oracle"), std::invalid_argument);
}

TEST_CASE("experiment config defaults follow the experiment and overrides win") {
  const ExperimentConfig def = ExperimentConfig::from_config(Config::from_string(""));
  CHECK(def.experiment == "exp1_sync");
  CHECK(def.episodes == 150);
  CHECK(def.expert_episodes == 10);
  CHECK(def.pretrain_steps == 2000);
  CHECK(def.value_warmup == 2000);
  CHECK(def.train_every == 1);
  CHECK(def.explore_sd == 0.1);
  CHECK(def.expert_ratio == 0.25);
  CHECK(def.buffer_capacity == 100000);
  CHECK(def.eval_every == 5);
  CHECK(def.eval_runs == 10);
  CHECK(def.init_frac == 0.1);
  CHECK(def.seed == 1);
  CHECK(def.out_dir == "out");
  CHECK(def.plant.m_y == 1);
  CHECK(def.iohmm_use_input);
  CHECK(def.em.n_states == 4);
  CHECK(def.em.restarts == 5);
  CHECK(def.em.tol == 10.0);
  CHECK(def.r_scale() == 0.5);
  // Default probe levels: the trained magnitude plus a stronger unseen one.
  REQUIRE(def.eval_magnitudes.size() == 2);
  CHECK(def.eval_magnitudes[0] == def.disturbance.magnitude);
  CHECK(def.eval_magnitudes[1] == std::min(1.0, def.disturbance.magnitude + 0.05));

  const ExperimentConfig e2 = ExperimentConfig::from_config(
      Config::from_string("experiment = exp2_activation\nplant.preset = miso\n"));
  CHECK(e2.episodes == 50);
  CHECK(e2.plant.m_y == 8);

  const ExperimentConfig e3 = ExperimentConfig::from_config(
      Config::from_string("experiment = exp3_ablation\n"));
  CHECK(e3.episodes == 300);

  const ExperimentConfig over = ExperimentConfig::from_config(Config::from_string(
      "experiment = exp3_ablation\n"
      "train.episodes = 7\n"
      "exp1.eval_magnitudes = 0.5, 0.6\n"
      "ablate.variants = pid, col_residual\n"));
  CHECK(over.episodes == 7);
  REQUIRE(over.eval_magnitudes.size() == 2);
  CHECK(over.eval_magnitudes[0] == 0.5);
  CHECK(over.eval_magnitudes[1] == 0.6);
  REQUIRE(over.variants.size() == 2);
  CHECK(over.variants[0] == "pid");
  CHECK(over.variants[1] == "col_residual");
}

TEST_CASE("experiment config validation rejects out-of-range knobs") {
  auto from = [](const std::string& text) {
    return ExperimentConfig::from_config(Config::from_string(text));
  };
  CHECK_THROWS_AS(from("experiment = exp9_magic\n"), std::runtime_error);
  CHECK_THROWS_AS(from("eval.init_frac = 1.0\n"), std::runtime_error);
  CHECK_THROWS_AS(from("eval.init_frac = -0.2\n"), std::runtime_error);
  CHECK_THROWS_AS(from("train.expert_ratio = 1.5\n"), std::runtime_error);
  CHECK_THROWS_AS(from("eval.runs = 0\n"), std::runtime_error);
  CHECK_THROWS_AS(from("train.every = 0\n"), std::runtime_error);
  CHECK_THROWS_AS(from("train.expert_episodes = 0\n"), std::runtime_error);
  CHECK_THROWS_AS(from("eval.init_frac = nope\n"), std::runtime_error);
}

TEST_CASE("evaluation aggregates per-run returns and repeats bitwise") {
  const ExperimentConfig cfg = quick_cfg();
  const Pipeline pipe = build_pipeline(cfg, false);
  TrainedVariant pid = train_variant(cfg, variant_by_name("pid"), pipe, "");
  CHECK_FALSE(pid.has_nets);

  const EvalResult one = evaluate(cfg, cfg.disturbance, pid, pipe, 1);
  REQUIRE(one.returns.size() == 1);
  CHECK(one.sd == 0.0);
  CHECK(one.mean == one.returns[0]);
  CHECK(one.shutdowns == 0);
  CHECK(one.activation_fraction == 0.0);

  const EvalResult a = evaluate(cfg, cfg.disturbance, pid, pipe, 3);
  const EvalResult b = evaluate(cfg, cfg.disturbance, pid, pipe, 3);
  REQUIRE(a.returns.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a.returns[i] == b.returns[i]);
  CHECK(a.mean == b.mean);
  CHECK(a.sd == b.sd);
  CHECK(a.mean == mean_of(a.returns));
  CHECK(a.sd == sd_of(a.returns));

  CHECK_THROWS_AS(evaluate(cfg, cfg.disturbance, pid, pipe, 0), std::invalid_argument);
}

TEST_CASE("train_variant refuses off-matrix rows and ungated pipelines") {
  const ExperimentConfig cfg = quick_cfg();
  const Pipeline pipe = build_pipeline(cfg, false);

  VariantSpec bogus;
  bogus.name = "bogus";
  CHECK_THROWS_AS(train_variant(cfg, bogus, pipe, ""), std::invalid_argument);

  // Specialized rows need detector products in the shared pipeline.
  CHECK_THROWS_AS(train_variant(cfg, variant_by_name("col_residual_gated"), pipe, ""),
                  std::logic_error);
}

TEST_CASE("experiment runners are matched to their plant shape") {
  const ExperimentConfig miso = ExperimentConfig::from_config(
      Config::from_string("plant.preset = miso\n"));
  CHECK_THROWS_AS(run_exp1(miso), std::invalid_argument);

  const ExperimentConfig siso = quick_cfg();
  CHECK_THROWS_AS(run_exp2(siso), std::invalid_argument);

  ExperimentConfig bad = quick_cfg();
  bad.experiment = "exp9";
  CHECK_THROWS_AS(run_experiment(bad), std::invalid_argument);
}

TEST_CASE("metric rows reproduce the per-run evaluation files exactly") {
  const Exp1Fixture& fx = exp1_fixture();
  REQUIRE(fx.report.rows.size() == 6);  // three rows at two magnitudes

  const CsvTable metrics = read_csv(fx.dir_a + "/exp1_metrics.csv");
  REQUIRE(metrics.rows.size() == 6);
  const int c_name = metrics.column("variant");
  const int c_dist = metrics.column("disturbance");
  const int c_mean = metrics.column("mean_reward");
  const int c_sd = metrics.column("sd_reward");
  REQUIRE(c_name >= 0);
  REQUIRE(c_dist >= 0);
  REQUIRE(c_mean >= 0);
  REQUIRE(c_sd >= 0);

  for (const auto& row : metrics.rows) {
    const std::string& name = row[static_cast<std::size_t>(c_name)];
    const std::string& dist = row[static_cast<std::size_t>(c_dist)];
    // Metric rows log the full-precision value; file names use the short form.
    char tag[32];
    std::snprintf(tag, sizeof(tag), "%g", std::stod(dist));
    const std::string eval_path =
        fx.dir_a + "/variants/" + name + "/eval_d" + std::string(tag) + ".csv";
    const CsvTable eval = read_csv(eval_path);
    const int c_ret = eval.column("return");
    REQUIRE(c_ret >= 0);
    REQUIRE(eval.rows.size() == 2);  // eval.runs

    std::vector<double> returns;
    for (const auto& r : eval.rows) returns.push_back(std::stod(r[static_cast<std::size_t>(c_ret)]));
    // %.17g round-trips exactly, so the recomputed aggregate matches bitwise.
    CHECK(std::stod(row[static_cast<std::size_t>(c_mean)]) == mean_of(returns));
    CHECK(std::stod(row[static_cast<std::size_t>(c_sd)]) == sd_of(returns));

    const VariantReport& rep = fx.report.row(name, std::stod(dist));
    CHECK(rep.eval.mean == mean_of(returns));
  }

  const CsvTable runs = read_csv(fx.dir_a + "/exp1_runs.csv");
  CHECK(runs.rows.size() == 6 * 2);
  CHECK_THROWS_AS(fx.report.row("pid", 0.123), std::invalid_argument);
}

TEST_CASE("a rerun with the same seed reproduces every table byte for byte") {
  const Exp1Fixture& fx = exp1_fixture();
  const std::vector<std::string> files = {
      "/exp1_metrics.csv",
      "/exp1_runs.csv",
      "/expert/summary.csv",
      "/expert/episode_000.csv",
      "/variants/col_direct/metrics.csv",
      "/variants/col_residual/metrics.csv",
      "/variants/col_residual/eval_d0.65.csv",
      "/variants/col_residual/traj_d0.7.csv",
  };
  for (const auto& f : files) {
    INFO("file: " << f);
    CHECK(slurp(fx.dir_a + f) == slurp(fx.dir_b + f));
  }
  CHECK(std::filesystem::exists(fx.dir_a + "/variants/col_residual/policy_actor.net"));
  CHECK(std::filesystem::exists(fx.dir_a + "/variants/col_direct/policy_critic2_t.net"));

  const CsvTable summary = read_csv(fx.dir_a + "/expert/summary.csv");
  CHECK(summary.rows.size() == 2);  // train.expert_episodes
}

TEST_CASE("logged trajectories read back into the detector training sequences") {
  const ExperimentConfig cfg = quick_cfg();
  Pipeline pipe = build_pipeline(cfg, false);
  const std::string dir = tmp_dir("resrl_harness_traj");
  export_pipeline(dir, cfg, pipe);

  const SequencePair loaded = load_trajectory_csv(dir + "/expert/episode_000.csv");
  REQUIRE(loaded.y.rows() == pipe.sequences[0].y.rows());
  REQUIRE(loaded.u.cols() == 1);
  CHECK((loaded.y - pipe.sequences[0].y).norm() == 0.0);
  CHECK((loaded.u - pipe.sequences[0].u).norm() == 0.0);

  const SequencePair blind = load_trajectory_csv(dir + "/expert/episode_000.csv", false);
  CHECK(blind.u.cols() == 0);
  CHECK((blind.y - pipe.sequences[0].y).norm() == 0.0);

  CHECK_THROWS_AS(load_trajectory_csv(dir + "/expert/missing.csv"), std::runtime_error);
  {
    CsvWriter bogus(dir + "/bogus.csv", {"t", "x"});
    bogus.field(0).field(1.0);
    bogus.end_row();
  }
  CHECK_THROWS_AS(load_trajectory_csv(dir + "/bogus.csv"), std::runtime_error);
}

TEST_CASE("the ablation runner honours a requested row subset") {
  const std::string dir = tmp_dir("resrl_harness_exp3");
  const ExperimentConfig cfg = ExperimentConfig::from_config(Config::from_string(
      "experiment = exp3_ablation\n"
      "plant.episode_hours = 0.5\n"
      "seed = 7\n"
      "out = " + dir + "\n"
      "train.expert_episodes = 1\n"
      "train.episodes = 1\n"
      "eval.every = 0\n"
      "eval.runs = 2\n"
      "ablate.variants = pid, td3_residual\n"));
  const MetricsReport report = run_exp3(cfg);
  REQUIRE(report.rows.size() == 2);
  CHECK(report.row("pid", cfg.disturbance.magnitude).name == "pid");
  CHECK(report.row("td3_residual", cfg.disturbance.magnitude).name == "td3_residual");

  const auto ranked = report.ranked(cfg.disturbance.magnitude);
  REQUIRE(ranked.size() == 2);
  CHECK(ranked[0].eval.mean >= ranked[1].eval.mean);

  const CsvTable table = read_csv(dir + "/exp3_ranking.csv");
  REQUIRE(table.rows.size() == 2);
  REQUIRE(table.column("rank") >= 0);
  CHECK(table.rows[0][static_cast<std::size_t>(table.column("rank"))] == "1");
  // The written ranking is the in-memory one.
  CHECK(table.rows[0][static_cast<std::size_t>(table.column("variant"))] == ranked[0].name);
}

TEST_CASE("command line reports usage errors and runs the collection pipeline") {
  CHECK(cli({"collect-expert", "--config", "/nonexistent/resrl.cfg"}) == 1);
  CHECK(cli({"frobnicate"}) != 0);
  CHECK(cli({"train"}) != 0);  // --config is required
  CHECK(cli({}) != 0);         // a subcommand is required

  const std::string dir = tmp_dir("resrl_harness_cli");
  const std::string cfg_path = dir + "/run.cfg";
  {
    std::ofstream out(cfg_path);
    out << "plant.episode_hours = 0.5\n"
           "train.expert_episodes = 1\n"
           "seed = 5\n"
           "out = " << dir << "/out\n";
  }
  CHECK(cli({"collect-expert", "--config", cfg_path.c_str()}) == 0);
  CHECK(std::filesystem::exists(dir + "/out/expert/summary.csv"));
  CHECK(std::filesystem::exists(dir + "/out/expert/episode_000.csv"));

  // Evaluating a learned variant before any training is a clean failure.
  CHECK(cli({"eval", "--config", cfg_path.c_str(), "--variant", "col_residual"}) == 1);

  const std::string empty = tmp_dir("resrl_harness_empty");
  CHECK(cli({"export-plots", "--out", empty.c_str()}) == 1);

  const Exp1Fixture& fx = exp1_fixture();
  CHECK(cli({"export-plots", "--out", fx.dir_a.c_str()}) == 0);
  CHECK(std::filesystem::exists(fx.dir_a + "/plots/learning_curves.csv"));
  CHECK(std::filesystem::exists(fx.dir_a + "/plots/reward_summary.csv"));

  const CsvTable summary = read_csv(fx.dir_a + "/plots/reward_summary.csv");
  CHECK(summary.rows.size() == 6);
}
