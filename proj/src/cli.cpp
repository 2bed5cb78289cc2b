#include "arbiter/cli.hpp"

#include "arbiter/experiment.hpp"
#include "arbiter/teleop_server.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace arbiter::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  double scale = 1.0;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Master seed");
  cmd->add_option("--out", c.out, "Output directory");
  cmd->add_option("--scale", c.scale, "Dataset scale factor")->check(CLI::PositiveNumber);
}

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_experiment_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage) { return fnv1a64(stage) ^ seed; }

fs::path out_dir(const Common& c) {
  fs::create_directories(c.out);
  return c.out;
}

std::string demo_file(bool obstacles) { return obstacles ? "trajopt_demos_obstacles.jsonl" : "trajopt_demos.jsonl"; }
std::string motion_file(bool obstacles) { return obstacles ? "motion_obstacles.weights.json" : "motion.weights.json"; }

std::vector<DemoSample> read_demos(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::vector<DemoSample> samples;
  bool header = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (!header) {
        if (j.value("kind", "") != "trajopt-demos") throw FormatError("not a trajectory dataset");
        header = true;
        continue;
      }
      samples.push_back(demo_sample_from_json(j));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header) throw FormatError(path.string() + " is empty");
  return samples;
}

json report_json(const nn::TrainReport& r) {
  return {{"initial_val_loss", r.initial_val_loss},
          {"best_val_loss", r.best_val_loss},
          {"best_epoch", r.best_epoch},
          {"epochs", r.val_loss.size()}};
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) parts.push_back(item);
  return parts;
}

TeleopServer* g_server = nullptr;
extern "C" void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Shared-autonomy teleoperation workbench"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Common common;
  std::string stage;
  std::function<json()> action;

  // gen-trajopt-data
  auto* gen_traj = app.add_subcommand("gen-trajopt-data", "Optimize random pick-and-place trajectories");
  add_common(gen_traj, common);
  std::optional<int> n_traj;
  bool traj_obstacles = false;
  gen_traj->add_option("--n", n_traj, "Number of trajectories")->check(CLI::PositiveNumber);
  gen_traj->add_flag("--obstacles", traj_obstacles, "Use the obstacle dataset settings");
  gen_traj->callback([&] {
    action = [&] {
      const auto cfg = load(common);
      DemoParams params = traj_obstacles ? cfg.obstacle_demos : cfg.demos;
      params.trajectories = n_traj ? *n_traj : scaled_count(params.trajectories, common.scale);
      const auto set = generate_demos(cfg.world, cfg.trajopt, params, stage_seed(cfg.seed, stage));
      std::string text = json{{"kind", "trajopt-demos"},
                              {"seed", cfg.seed},
                              {"world", to_json(cfg.world)},
                              {"trajopt", trajopt::to_json(cfg.trajopt)},
                              {"demos", to_json(params)},
                              {"trajectories", set.trajectories},
                              {"samples", set.samples.size()}}
                             .dump() +
                         '\n';
      for (const auto& s : set.samples) text += to_json(s).dump() + '\n';
      const auto path = out_dir(common) / demo_file(traj_obstacles);
      write_file_atomic(path, text);
      return json{{"trajectories", set.trajectories},
                  {"samples", set.samples.size()},
                  {"rejected", set.rejected},
                  {"path", path.string()}};
    };
  });

  // train-motion
  auto* train_motion_cmd = app.add_subcommand("train-motion", "Behavior-clone the motion policy");
  add_common(train_motion_cmd, common);
  std::string motion_data;
  bool motion_obstacles = false;
  std::optional<int> motion_epochs;
  train_motion_cmd->add_option("--data", motion_data, "Trajectory dataset (default: <out>/trajopt_demos*.jsonl)");
  train_motion_cmd->add_flag("--obstacles", motion_obstacles, "Train the obstacle-aware variant");
  train_motion_cmd->add_option("--epochs", motion_epochs)->check(CLI::PositiveNumber);
  train_motion_cmd->callback([&] {
    action = [&] {
      const auto cfg = load(common);
      const fs::path data = motion_data.empty() ? fs::path(common.out) / demo_file(motion_obstacles) : fs::path(motion_data);
      const auto samples = read_demos(data);
      nn::TrainHyper hyper = cfg.motion_train;
      if (motion_epochs) hyper.epochs = *motion_epochs;
      hyper.seed = stage_seed(cfg.seed, stage);
      const auto res = train_motion(samples, motion_obstacles ? cfg.motion_obstacles : cfg.motion, hyper);
      const auto path = out_dir(common) / motion_file(motion_obstacles);
      nn::save_weights(res.model, path);
      json s = report_json(res.report);
      s["val_mse"] = res.report.best_val_loss;
      s["val_mse_over_vmax2"] = res.report.best_val_loss / (cfg.world.v_max * cfg.world.v_max);
      s["samples"] = samples.size();
      s["path"] = path.string();
      return s;
    };
  });

  // gen-user-data
  auto* gen_user = app.add_subcommand("gen-user-data", "Record direct-control episodes of scripted users");
  add_common(gen_user, common);
  std::optional<int> n_users;
  gen_user->add_option("--n", n_users, "Number of episodes")->check(CLI::PositiveNumber);
  gen_user->callback([&] {
    action = [&] {
      const auto cfg = load(common);
      const int n = n_users ? *n_users : cfg.intent_episodes;
      std::vector<Episode> eps;
      int successes = 0;
      for (int i = 0; i < n; ++i) {
        const std::uint64_t seed = collection_seed(stage_seed(cfg.seed, stage), 0, i);
        eps.push_back(run_direct_episode(cfg.intent_users.sample(seed, cfg.world.num_goals()), cfg.world, seed, i));
        successes += eps.back().success();
      }
      const auto path = out_dir(common) / "user_episodes.jsonl";
      write_episodes(path, eps);
      return json{{"episodes", n}, {"successes", successes}, {"path", path.string()}};
    };
  });

  // train-intent
  auto* train_intent_cmd = app.add_subcommand("train-intent", "Train the goal-intent network");
  add_common(train_intent_cmd, common);
  std::string intent_data;
  std::optional<int> intent_epochs;
  train_intent_cmd->add_option("--data", intent_data, "Episode file (default: <out>/user_episodes.jsonl)");
  train_intent_cmd->add_option("--epochs", intent_epochs)->check(CLI::PositiveNumber);
  train_intent_cmd->callback([&] {
    action = [&] {
      const auto cfg = load(common);
      const fs::path data = intent_data.empty() ? fs::path(common.out) / "user_episodes.jsonl" : fs::path(intent_data);
      const auto eps = read_episodes(data);
      nn::TrainHyper hyper = cfg.intent_train;
      if (intent_epochs) hyper.epochs = *intent_epochs;
      hyper.seed = stage_seed(cfg.seed, stage);
      const auto res = train_intent(eps, cfg.world, cfg.intent, hyper, 10);
      const auto path = out_dir(common) / "intent.weights.json";
      nn::save_weights(res.model, path);
      std::vector<Episode> held_out;
      for (std::size_t i = 9; i < eps.size(); i += 10) held_out.push_back(eps[i]);
      json s = report_json(res.report);
      s["held_out"] = held_out.size();
      s["accuracy_at_20"] = intent_accuracy(res.model, held_out, cfg.world, 0.2).accuracy();
      s["accuracy_at_80"] = intent_accuracy(res.model, held_out, cfg.world, 0.8).accuracy();
      s["path"] = path.string();
      return s;
    };
  });

  // pretrain-arb and dagger share the aggregation driver.
  std::string models_dir;
  std::string preset = "paper-fig5";
  auto aggregate = [&](int iterations) {
    const auto cfg = load(common);
    const fs::path models_path = models_dir.empty() ? fs::path(common.out) : fs::path(models_dir);
    ModelSet models = load_model_set(models_path);
    models.arbitration.reset();
    DaggerSchedule schedule = preset == cfg.schedule.name ? cfg.schedule : DaggerSchedule::preset(preset);
    schedule = schedule.scaled(common.scale);
    if (iterations >= 0) schedule.iterations = iterations;
    AggregationOptions opts;
    opts.seed = stage_seed(cfg.seed, "dagger");
    opts.arb = cfg.arbitration;
    opts.out_dir = out_dir(common) / "dagger";
    opts.log = [&](const std::string& m) { err << m << '\n'; };
    const auto res = run_aggregation(schedule, cfg.dagger_users, cfg.world, models, opts);
    const auto final_path = out_dir(common) / "arbitration.weights.json";
    nn::save_weights(res.lineage.back(), final_path);
    std::size_t degenerate = 0;
    for (const auto& s : res.dataset) degenerate += s.degenerate;
    json lineage = json::array();
    for (std::size_t k = 0; k < res.lineage.size(); ++k)
      lineage.push_back((*opts.out_dir / ("arb_" + std::to_string(k) + ".weights.json")).string());
    return json{{"schedule", to_json(schedule)},
                {"lineage", lineage},
                {"episode_counts", res.episode_counts},
                {"dataset_sizes", res.dataset_sizes},
                {"degenerate_fraction", res.dataset.empty() ? 0.0 : double(degenerate) / res.dataset.size()},
                {"path", final_path.string()}};
  };

  auto* pretrain = app.add_subcommand("pretrain-arb", "Train the arbitration net on direct-control episodes");
  add_common(pretrain, common);
  pretrain->add_option("--models", models_dir, "Directory with intent/motion weights (default: --out)");
  pretrain->callback([&] { action = [&] { return aggregate(0); }; });

  auto* dagger = app.add_subcommand("dagger", "Run hindsight data aggregation");
  add_common(dagger, common);
  std::optional<int> iterations;
  dagger->add_option("--models", models_dir, "Directory with intent/motion weights (default: --out)");
  dagger->add_option("--preset", preset, "Schedule preset")->check(CLI::IsMember({"paper-fig5"}));
  dagger->add_option("--iterations", iterations, "Override the number of aggregation rounds")
      ->check(CLI::NonNegativeNumber);
  dagger->callback([&] { action = [&] { return aggregate(iterations ? *iterations : -1); }; });

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate control modes with simulated users");
  add_common(eval, common);
  std::string modes = "direct,shared_baseline,shared_learned";
  std::string environments;
  std::optional<int> eval_episodes;
  std::string arb_file, eval_output, episodes_output, blend_name = "rotational";
  bool perfect_intent = false;
  eval->add_option("--models", models_dir, "Model directory (default: --out)");
  eval->add_option("--modes", modes, "Comma-separated control modes");
  eval->add_option("--environments", environments, "Comma-separated: free,obstacles");
  eval->add_option("--episodes", eval_episodes, "Episodes per mode and environment")->check(CLI::PositiveNumber);
  eval->add_option("--arb", arb_file, "Arbitration weights overriding the model directory");
  eval->add_option("--blend", blend_name)->check(CLI::IsMember({"rotational", "linear"}));
  eval->add_option("--output", eval_output, "Metrics CSV (default: <out>/metrics.csv)");
  eval->add_option("--save-episodes", episodes_output, "Also write every evaluated episode");
  eval->add_flag("--perfect-intent", perfect_intent, "Pin g* to the user's goal");
  eval->callback([&] {
    action = [&] {
      const auto cfg = load(common);
      ModelSet models = load_model_set(models_dir.empty() ? fs::path(common.out) : fs::path(models_dir));
      if (!arb_file.empty()) models.arbitration = nn::load_weights(arb_file);
      EvalOptions opts;
      for (const auto& m : split(modes)) opts.modes.push_back(control_mode_from_string(m));
      if (opts.modes.empty()) throw ConfigError("no modes given");
      opts.environments = environments.empty() ? cfg.eval_environments : split(environments);
      opts.episodes = eval_episodes ? *eval_episodes : cfg.eval_episodes;
      opts.seed = stage_seed(cfg.seed, stage);
      opts.blend = blend_mode_from_string(blend_name);
      opts.perfect_intent = perfect_intent;
      std::vector<Episode> eps;
      const auto rows = evaluate(opts, cfg.eval_users, cfg.world, models, episodes_output.empty() ? nullptr : &eps);
      const fs::path path = eval_output.empty() ? out_dir(common) / "metrics.csv" : fs::path(eval_output);
      write_file_atomic(path, metrics_csv(rows));
      if (!episodes_output.empty()) write_episodes(episodes_output, eps);
      json table = json::array();
      for (const auto& r : rows)
        table.push_back({{"mode", r.mode},
                         {"environment", r.environment},
                         {"success_rate", r.success_rate},
                         {"mean_steps", r.mean_steps},
                         {"mean_alpha", r.mean_alpha}});
      return json{{"rows", table}, {"path", path.string()}};
    };
  });

  // export-traces
  auto* traces = app.add_subcommand("export-traces", "Per-step alpha/confidence traces of one episode as CSV");
  add_common(traces, common);
  std::string trace_input, trace_output;
  int trace_index = 0;
  traces->add_option("--episodes", trace_input, "Episode JSONL file")->required()->check(CLI::ExistingFile);
  traces->add_option("--episode", trace_index, "Index of the episode within the file")->check(CLI::NonNegativeNumber);
  traces->add_option("--output", trace_output, "CSV path (default: <out>/traces.csv)");
  traces->callback([&] {
    action = [&] {
      const auto cfg = load(common);
      const auto eps = read_episodes(trace_input);
      if (trace_index >= static_cast<int>(eps.size()))
        throw FormatError("episode index " + std::to_string(trace_index) + " out of range");
      const auto& ep = eps[static_cast<std::size_t>(trace_index)];
      std::ostringstream csv;
      csv << std::setprecision(17) << "t,alpha,confidence,timid_alpha,grabbed,g_star,true_goal\n";
      for (const auto& r : ep.steps)
        csv << r.state.t << ',' << r.alpha << ',' << r.confidence << ','
            << timid_alpha(r.confidence).alpha << ',' << (r.grabbed ? 1 : 0) << ',' << r.g_star << ','
            << (ep.header.true_goal ? std::to_string(*ep.header.true_goal) : "") << '\n';
      const fs::path path = trace_output.empty() ? out_dir(common) / "traces.csv" : fs::path(trace_output);
      write_file_atomic(path, csv.str());
      return json{{"rows", ep.steps.size()}, {"path", path.string()}};
    };
  });

  // serve
  auto* serve = app.add_subcommand("serve", "Run the WebSocket teleoperation server");
  add_common(serve, common);
  ServerOptions server_opts;
  std::string record_dir, serve_mode = "shared_learned";
  double tick_ms = 50.0;
  serve->add_option("--port", server_opts.port, "TCP port");
  serve->add_option("--address", server_opts.address, "Bind address");
  serve->add_option("--models", models_dir, "Model directory (default: --out)");
  serve->add_option("--record", record_dir, "Directory for recorded episodes");
  serve->add_option("--heatmap-every", server_opts.session.heatmap_every, "Send the heatmap every n ticks (0 = never)")
      ->check(CLI::NonNegativeNumber);
  serve->add_option("--tick-ms", tick_ms, "Tick period in milliseconds")->check(CLI::PositiveNumber);
  serve->add_option("--mode", serve_mode, "Initial control mode")
      ->check(CLI::IsMember({"direct", "shared_baseline", "shared_learned"}));
  serve->callback([&] {
    action = [&] {
      const auto cfg = load(common);
      const ModelSet models = load_model_set(models_dir.empty() ? fs::path(common.out) : fs::path(models_dir));
      server_opts.tick_seconds = tick_ms / 1000.0;
      server_opts.session.mode = control_mode_from_string(serve_mode);
      server_opts.session.seed = cfg.seed;
      if (!record_dir.empty()) server_opts.session.record_dir = fs::path(record_dir);
      TeleopServer server(models, cfg.world, server_opts);
      err << "listening on ws://" << server_opts.address << ':' << server.port() << '\n';
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      server.run();
      g_server = nullptr;
      return json{{"port", server.port()}, {"episodes", server.finished_episodes()}};
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  for (auto* sub : app.get_subcommands()) stage = sub->get_name();
  try {
    json summary = action();
    summary["command"] = stage;
    summary["status"] = "ok";
    out << summary.dump() << std::endl;
    return kOk;
  } catch (const StageError& e) {
    err << "error [" << stage << "/" << e.stage() << "]: " << e.what() << '\n';
    out << json{{"command", stage}, {"status", "error"}, {"stage", stage + "/" + e.stage()}, {"message", e.what()}}.dump()
        << std::endl;
  } catch (const std::exception& e) {
    err << "error [" << stage << "]: " << e.what() << '\n';
    out << json{{"command", stage}, {"status", "error"}, {"stage", stage}, {"message", e.what()}}.dump() << std::endl;
  }
  return kStageFailure;
}

}  // namespace arbiter::cli
