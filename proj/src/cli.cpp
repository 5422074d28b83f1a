#include "resrl/cli.hpp"

#include "resrl/csv.hpp"
#include "resrl/harness.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace resrl {

namespace {

struct CommonArgs {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool have_seed = false;
};

ExperimentConfig load_experiment(const CommonArgs& a) {
  Config c = Config::load(a.config);
  if (a.have_seed) c.set("seed", std::to_string(a.seed));
  if (!a.out.empty()) c.set("out", a.out);
  return ExperimentConfig::from_config(c);
}

void add_common(CLI::App* sub, CommonArgs& a, bool config_required) {
  auto* cfg = sub->add_option("--config", a.config, "key = value configuration file");
  if (config_required) cfg->required();
  sub->add_option("--seed", a.seed, "master seed override")
      ->each([&a](const std::string&) { a.have_seed = true; });
  sub->add_option("--out", a.out, "output directory override");
}

void print_report(const MetricsReport& report) {
  for (const auto& row : report.rows) {
    std::cout << row.name << "  disturbance=" << row.disturbance << "  mean=" << row.eval.mean
              << "  sd=" << row.eval.sd << "  shutdowns=" << row.eval.shutdowns
              << "  activation=" << row.eval.activation_fraction << "\n";
  }
}

std::vector<std::filesystem::path> sorted_files(const std::string& dir,
                                                const std::string& prefix,
                                                const std::string& suffix) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.size() < prefix.size() + suffix.size()) continue;
    if (name.compare(0, prefix.size(), prefix) != 0) continue;
    if (name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) continue;
    out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void cmd_collect_expert(const CommonArgs& a) {
  const ExperimentConfig cfg = load_experiment(a);
  Pipeline pipe = build_pipeline(cfg, false);
  export_pipeline(cfg.out_dir, cfg, pipe);
  std::cout << "collected " << pipe.expert.episodes.size() << " expert episodes, mean return "
            << pipe.expert.mean_return << ", shutdowns " << pipe.expert.shutdowns << "\n"
            << "trajectories under " << cfg.out_dir << "/expert\n";
}

void cmd_train_iohmm(const CommonArgs& a) {
  const ExperimentConfig cfg = load_experiment(a);
  const std::string expert_dir = cfg.out_dir + "/expert";
  const auto files = sorted_files(expert_dir, "episode_", ".csv");
  if (files.empty()) {
    throw std::runtime_error("no expert trajectories under '" + expert_dir +
                             "'; run collect-expert first");
  }
  std::vector<SequencePair> seqs;
  seqs.reserve(files.size());
  for (const auto& f : files) seqs.push_back(load_trajectory_csv(f.string(), cfg.iohmm_use_input));
  const EmResult fit = em_fit(seqs, cfg.em, cfg.seed);
  const std::string det_dir = cfg.out_dir + "/detection";
  std::filesystem::create_directories(det_dir);
  fit.params.save(det_dir + "/iohmm_model.txt");
  CsvWriter ll(det_dir + "/iohmm_loglik.csv", {"iteration", "loglik"});
  for (std::size_t i = 0; i < fit.loglik_history.size(); ++i) {
    ll.field(static_cast<int>(i)).field(fit.loglik_history[i]);
    ll.end_row();
  }
  std::cout << "fitted " << cfg.em.n_states << "-state detector on " << seqs.size()
            << " sequences, loglik " << fit.loglik << " (restart " << fit.restart_index << ")\n"
            << "model at " << det_dir << "/iohmm_model.txt\n";
}

void cmd_classify(const CommonArgs& a) {
  const ExperimentConfig cfg = load_experiment(a);
  Pipeline pipe = build_pipeline(cfg, true);
  export_pipeline(cfg.out_dir, cfg, pipe);
  std::cout << "abnormal states:";
  for (int s : pipe.classification.abnormal) std::cout << " " << s;
  std::cout << "\n";
  for (const auto& st : pipe.classification.stats) {
    std::cout << "state " << st.state << "  mean_v=" << st.mean_v << "  sd=" << st.sd_v
              << "  count=" << st.count << (st.specialized ? "  [gated]" : "") << "\n";
  }
  std::cout << "tables under " << cfg.out_dir << "/detection\n";
}

void cmd_train(const CommonArgs& a) {
  const ExperimentConfig cfg = load_experiment(a);
  const MetricsReport report = run_experiment(cfg);
  print_report(report);
  std::cout << "logs under " << cfg.out_dir << "\n";
}

void cmd_eval(const CommonArgs& a, const std::string& variant, double magnitude, bool have_mag,
              int runs) {
  const ExperimentConfig cfg = load_experiment(a);
  const VariantSpec spec = variant_by_name(variant);
  Pipeline pipe = build_pipeline(cfg, spec.specialized);

  TrainedVariant tv;
  tv.spec = spec;
  if (spec.controller != Controller::expert) {
    const std::string vdir = cfg.out_dir + "/variants/" + spec.name;
    if (!std::filesystem::exists(vdir + "/policy_actor.net")) {
      throw std::runtime_error("no trained policy at '" + vdir +
                               "/policy_actor.net'; run train first");
    }
    Td3Config tcfg = cfg.td3;
    if (spec.controller == Controller::agent) {
      tcfg.action_low = cfg.plant.u_low;
      tcfg.action_high = cfg.plant.u_high;
    } else {
      tcfg.action_low = -cfg.r_scale();
      tcfg.action_high = cfg.r_scale();
    }
    tv.nets = make_td3_nets(cfg.plant, tcfg, derive_seed(cfg.seed, seed_stream::kInit, 0));
    tv.nets.load(vdir, "policy");
    tv.has_nets = true;
  }

  DisturbanceProfile dist = cfg.disturbance;
  if (have_mag) dist.magnitude = magnitude;
  const int n = runs > 0 ? runs : cfg.eval_runs;
  const std::string vdir = cfg.out_dir + "/variants/" + spec.name;
  const EvalResult r = evaluate(cfg, dist, tv, pipe, n, vdir + "/eval_cli.csv");
  std::cout << spec.name << "  disturbance=" << dist.magnitude << "  runs=" << n
            << "  mean=" << r.mean << "  sd=" << r.sd << "  shutdowns=" << r.shutdowns
            << "  activation=" << r.activation_fraction << "\n";
}

void cmd_ablate(const CommonArgs& a) {
  ExperimentConfig cfg = load_experiment(a);
  cfg.experiment = "exp3_ablation";
  const MetricsReport report = run_exp3(cfg);
  const auto ranked = report.ranked(cfg.disturbance.magnitude);
  int rank = 1;
  for (const auto& row : ranked) {
    std::cout << rank++ << ". " << row.name << "  mean=" << row.eval.mean
              << "  sd=" << row.eval.sd << (row.specialized ? "  [gated]" : "") << "\n";
  }
  std::cout << "ranking at " << cfg.out_dir << "/exp3_ranking.csv\n";
}

// Gathers the already-written CSVs into tidy plot-ready tables.
void cmd_export_plots(const std::string& out_dir) {
  if (!std::filesystem::is_directory(out_dir)) {
    throw std::runtime_error("output directory '" + out_dir + "' does not exist");
  }
  const std::string plots = out_dir + "/plots";
  std::filesystem::create_directories(plots);
  int written = 0;

  // Learning curves: probe evaluations from every variant's metrics.csv.
  const std::string vdir = out_dir + "/variants";
  if (std::filesystem::is_directory(vdir)) {
    std::vector<std::filesystem::path> variants;
    for (const auto& entry : std::filesystem::directory_iterator(vdir)) {
      if (entry.is_directory()) variants.push_back(entry.path());
    }
    std::sort(variants.begin(), variants.end());
    CsvWriter curves(plots + "/learning_curves.csv", {"variant", "episode", "eval_return"});
    for (const auto& v : variants) {
      const std::string metrics = (v / "metrics.csv").string();
      if (!std::filesystem::exists(metrics)) continue;
      const CsvTable t = read_csv(metrics);
      const int ep_col = t.column("episode");
      const int ev_col = t.column("eval_return");
      if (ep_col < 0 || ev_col < 0) continue;
      for (const auto& row : t.rows) {
        const std::string& ev = row[static_cast<std::size_t>(ev_col)];
        if (ev.empty()) continue;
        curves.field(v.filename().string()).field(row[static_cast<std::size_t>(ep_col)]).field(ev);
        curves.end_row();
      }
    }
    ++written;
  }

  // Reward summaries from whichever experiment tables exist.
  {
    const std::vector<std::string> sources = {"exp1_metrics.csv", "exp2_metrics.csv",
                                              "exp3_ranking.csv"};
    CsvWriter summary(plots + "/reward_summary.csv",
                      {"source", "variant", "specialized", "disturbance", "mean_reward",
                       "sd_reward", "shutdowns", "activation_fraction"});
    for (const auto& src : sources) {
      const std::string path = out_dir + "/" + src;
      if (!std::filesystem::exists(path)) continue;
      const CsvTable t = read_csv(path);
      const std::vector<std::string> cols = {"variant",   "specialized", "disturbance",
                                             "mean_reward", "sd_reward", "shutdowns",
                                             "activation_fraction"};
      std::vector<int> idx;
      bool ok = true;
      for (const auto& c : cols) {
        const int i = t.column(c);
        if (i < 0) ok = false;
        idx.push_back(i);
      }
      if (!ok) continue;
      for (const auto& row : t.rows) {
        summary.field(src);
        for (int i : idx) summary.field(row[static_cast<std::size_t>(i)]);
        summary.end_row();
      }
      ++written;
    }
  }

  // State tables are already plot-shaped; mirror them next to the rest.
  for (const std::string name : {"classification.csv", "state_distribution.csv"}) {
    const std::string src = out_dir + "/detection/" + name;
    if (!std::filesystem::exists(src)) continue;
    std::filesystem::copy_file(src, plots + "/" + name,
                               std::filesystem::copy_options::overwrite_existing);
    ++written;
  }

  if (written == 0) {
    throw std::runtime_error("nothing to export from '" + out_dir +
                             "'; run an experiment first");
  }
  std::cout << "plot data under " << plots << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"residual reinforcement-learning process-control experiments"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string eval_variant;
  double eval_magnitude = 0.0;
  bool have_magnitude = false;
  int eval_runs = 0;
  std::string plots_out;

  auto* collect = app.add_subcommand("collect-expert", "run the loop controller, log episodes");
  add_common(collect, args, true);
  collect->callback([&] { cmd_collect_expert(args); });

  auto* iohmm = app.add_subcommand("train-iohmm", "fit the regime detector on logged episodes");
  add_common(iohmm, args, true);
  iohmm->callback([&] { cmd_train_iohmm(args); });

  auto* classify = app.add_subcommand("classify", "value-based state screening + gate selection");
  add_common(classify, args, true);
  classify->callback([&] { cmd_classify(args); });

  auto* train = app.add_subcommand("train", "run the configured experiment end to end");
  add_common(train, args, true);
  train->callback([&] { cmd_train(args); });

  auto* eval = app.add_subcommand("eval", "evaluate a trained variant");
  add_common(eval, args, true);
  eval->add_option("--variant", eval_variant, "variant name")->required();
  eval->add_option("--magnitude", eval_magnitude, "disturbance magnitude override")
      ->each([&](const std::string&) { have_magnitude = true; });
  eval->add_option("--runs", eval_runs, "number of evaluation runs");
  eval->callback([&] { cmd_eval(args, eval_variant, eval_magnitude, have_magnitude, eval_runs); });

  auto* ablate = app.add_subcommand("ablate", "train and rank the variant matrix");
  add_common(ablate, args, true);
  ablate->callback([&] { cmd_ablate(args); });

  auto* plots = app.add_subcommand("export-plots", "bundle plot-ready tables from a results dir");
  plots->add_option("--out", plots_out, "results directory")->required();
  plots->callback([&] { cmd_export_plots(plots_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace resrl
