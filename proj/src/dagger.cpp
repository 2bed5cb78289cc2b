#include "arbiter/dagger.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace arbiter {

Action hindsight_action(const ModelSet& models, const WorldState& state, int true_goal, const WorldConfig& world) {
  return motion_act(motion_model_for(models, state), state, true_goal, world, ActionRole::Hindsight);
}

std::vector<AlphaSample> hindsight_label(const Episode& ep, const ModelSet& models, const WorldConfig& world,
                                         const ArbNetConfig& cfg) {
  const int id = ep.header.episode_id;
  if (!ep.header.true_goal) throw LabelingError("episode " + std::to_string(id) + " has no true goal");
  const int goal = *ep.header.true_goal;
  if (goal < 0 || goal >= world.num_goals())
    throw LabelingError("episode " + std::to_string(id) + " has an out-of-range true goal");
  if (ep.header.config_hash != config_hash(world))
    throw LabelingError("episode " + std::to_string(id) + " was recorded in a different world");

  std::size_t n = ep.steps.size();
  if (ep.success() && n > 0) --n;
  std::vector<AlphaSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = ep.steps[i];
    const WorldState state = reconstruct_state(r.state, ep.header, world);
    const Vec2 a_h = hindsight_action(models, state, goal, world).v;
    const AlphaValue label = hindsight_alpha(r.a_u, r.a_r, a_h);
    AlphaSample s;
    s.episode_id = id;
    s.t = r.state.t;
    s.target = label.alpha;
    s.degenerate = label.degenerate;
    try {
      s.features = decision_features(state, r.a_u, r.a_r, {r.windowed_scores, r.g_star, r.confidence}, cfg);
    } catch (const Error& e) {
      throw LabelingError("episode " + std::to_string(id) + " step " + std::to_string(r.state.t) + ": " + e.what());
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<AlphaSequence> group_sequences(std::span<const AlphaSample> samples) {
  std::vector<AlphaSequence> seqs;
  std::size_t i = 0;
  while (i < samples.size()) {
    std::size_t j = i;
    while (j < samples.size() && samples[j].episode_id == samples[i].episode_id) ++j;
    AlphaSequence seq;
    seq.episode_id = samples[i].episode_id;
    seq.features.resize(static_cast<Eigen::Index>(j - i), samples[i].features.size());
    for (std::size_t k = i; k < j; ++k) {
      seq.features.row(static_cast<Eigen::Index>(k - i)) = samples[k].features.transpose();
      seq.targets.push_back(samples[k].target);
      seq.degenerate.push_back(samples[k].degenerate);
    }
    seqs.push_back(std::move(seq));
    i = j;
  }
  return seqs;
}

std::string alpha_dataset_to_jsonl(std::span<const AlphaSample> samples) {
  std::string out;
  for (const auto& s : samples) {
    json j = {{"episode", s.episode_id},
              {"t", s.t},
              {"features", std::vector<double>(s.features.data(), s.features.data() + s.features.size())},
              {"alpha", s.target},
              {"degenerate", s.degenerate}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<AlphaSample> parse_alpha_dataset(std::string_view text) {
  std::vector<AlphaSample> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      AlphaSample s;
      s.episode_id = j.at("episode").get<int>();
      s.t = j.at("t").get<int>();
      const auto f = j.at("features").get<std::vector<double>>();
      s.features = Eigen::Map<const nn::Vec>(f.data(), static_cast<Eigen::Index>(f.size()));
      s.target = j.at("alpha").get<double>();
      s.degenerate = j.at("degenerate").get<bool>();
      if (!(s.target >= 0.0 && s.target <= 1.0)) throw FormatError("alpha target outside [0, 1]");
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw FormatError("alpha dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

DaggerSchedule DaggerSchedule::preset(std::string_view name) {
  if (name != "paper-fig5") throw ConfigError("unknown schedule preset '" + std::string(name) + "'");
  DaggerSchedule s;
  s.pretrain.epochs = 40;
  s.pretrain.batch_size = 8;
  s.pretrain.adam.lr = 2e-3;
  s.retrain.epochs = 20;
  s.retrain.batch_size = 8;
  s.retrain.adam.lr = 1e-3;
  return s;
}

DaggerSchedule DaggerSchedule::scaled(double scale) const {
  DaggerSchedule s = *this;
  s.direct_episodes = scaled_count(direct_episodes, scale);
  s.episodes_per_iteration = scaled_count(episodes_per_iteration, scale);
  return s;
}

json to_json(const DaggerSchedule& s) {
  return {{"name", s.name},
          {"direct_episodes", s.direct_episodes},
          {"iterations", s.iterations},
          {"episodes_per_iteration", s.episodes_per_iteration},
          {"pretrain", nn::to_json(s.pretrain)},
          {"retrain", nn::to_json(s.retrain)}};
}

DaggerSchedule dagger_schedule_from_json(const json& j) {
  DaggerSchedule s = DaggerSchedule::preset(j.value("name", std::string("paper-fig5")));
  s.direct_episodes = j.value("direct_episodes", s.direct_episodes);
  s.iterations = j.value("iterations", s.iterations);
  s.episodes_per_iteration = j.value("episodes_per_iteration", s.episodes_per_iteration);
  if (j.contains("pretrain")) s.pretrain = nn::train_hyper_from_json(j.at("pretrain"), s.pretrain);
  if (j.contains("retrain")) s.retrain = nn::train_hyper_from_json(j.at("retrain"), s.retrain);
  if (s.direct_episodes < 1 || s.iterations < 0 || s.episodes_per_iteration < 1)
    throw ConfigError("schedule episode counts must be positive");
  return s;
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t collection_seed(std::uint64_t base, int stage, int index) {
  return splitmix(splitmix(splitmix(base) ^ static_cast<std::uint64_t>(stage)) ^ static_cast<std::uint64_t>(index));
}

std::uint64_t evaluation_seed(std::uint64_t base, int index) {
  return splitmix(splitmix(base ^ 0xe7a1e7a1e7a1e7a1ULL) ^ static_cast<std::uint64_t>(index));
}

AggregationResult run_aggregation(const DaggerSchedule& schedule, const UserPopulation& users,
                                  const WorldConfig& world, const ModelSet& models, const AggregationOptions& opts) {
  AggregationResult res;
  auto log = [&](const std::string& msg) {
    if (opts.log) opts.log(msg);
  };
  auto persist = [&](int k, std::span<const Episode> new_eps) {
    if (!opts.out_dir) return;
    std::filesystem::create_directories(*opts.out_dir);
    const auto tag = std::to_string(k);
    nn::save_weights(res.lineage.back(), *opts.out_dir / ("arb_" + tag + ".weights.json"));
    write_file_atomic(*opts.out_dir / ("dataset_" + tag + ".jsonl"), alpha_dataset_to_jsonl(res.dataset));
    write_episodes(*opts.out_dir / ("episodes_" + tag + ".jsonl"), new_eps);
  };

  int next_id = 0;
  auto collect = [&](SharedController& controller, int stage, int count) {
    std::vector<Episode> eps;
    for (int i = 0; i < count; ++i) {
      const std::uint64_t seed = collection_seed(opts.seed, stage, i);
      eps.push_back(run_shared_episode(controller, users.sample(seed, world.num_goals()), world, seed, next_id++));
      const auto labels = hindsight_label(eps.back(), models, world, opts.arb);
      res.dataset.insert(res.dataset.end(), labels.begin(), labels.end());
    }
    res.dataset_sizes.push_back(res.dataset.size());
    res.episodes.insert(res.episodes.end(), eps.begin(), eps.end());
    return eps;
  };

  std::string stage = "pretrain";
  try {
    {
      SharedController direct(models, world, {ControlMode::Direct, opts.blend, {}, std::nullopt, std::nullopt});
      const auto eps = collect(direct, 0, schedule.direct_episodes);
      const auto seqs = group_sequences(res.dataset);
      nn::TrainHyper h = schedule.pretrain;
      h.seed = opts.seed;
      res.lineage.push_back(train_arbitration(seqs, opts.arb, h).model);
      res.episode_counts.push_back(0);
      persist(0, eps);
      log("pretrain: " + std::to_string(eps.size()) + " direct episodes, " + std::to_string(res.dataset.size()) +
          " samples");
    }
    for (int k = 1; k <= schedule.iterations; ++k) {
      stage = "collect-" + std::to_string(k);
      ModelSet current = models;
      current.arbitration = res.lineage.back();
      SharedController shared(current, world, {ControlMode::SharedLearned, opts.blend, {}, std::nullopt, std::nullopt});
      const auto eps = collect(shared, k, schedule.episodes_per_iteration);
      stage = "train-" + std::to_string(k);
      const auto seqs = group_sequences(res.dataset);
      nn::TrainHyper h = schedule.retrain;
      h.seed = opts.seed + static_cast<std::uint64_t>(k);
      res.lineage.push_back(train_arbitration(seqs, opts.arb, h, &res.lineage.back()).model);
      res.episode_counts.push_back(k * schedule.episodes_per_iteration);
      persist(k, eps);
      log(stage + ": " + std::to_string(res.episode_counts.back()) + " shared episodes, " +
          std::to_string(res.dataset.size()) + " samples");
    }
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e.what());
  }
  return res;
}

MetricsRow summarize(std::string mode, std::string environment, std::span<const Episode> eps) {
  MetricsRow row;
  row.mode = std::move(mode);
  row.environment = std::move(environment);
  row.n = static_cast<int>(eps.size());
  std::vector<double> steps;
  double alpha_sum = 0.0;
  std::size_t alpha_n = 0, reach_n = 0, wrong_n = 0;
  for (const auto& ep : eps) {
    if (ep.success()) steps.push_back(ep.header.steps);
    for (const auto& r : ep.steps) {
      alpha_sum += r.alpha;
      ++alpha_n;
      if (r.state.phase == Phase::Reach && r.g_star >= 0 && ep.header.true_goal) {
        ++reach_n;
        if (r.g_star != *ep.header.true_goal) ++wrong_n;
      }
    }
  }
  if (!eps.empty()) row.success_rate = static_cast<double>(steps.size()) / eps.size();
  if (!steps.empty()) {
    double sum = 0.0;
    for (double s : steps) sum += s;
    row.mean_steps = sum / steps.size();
    std::vector<double> sorted = steps;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t m = sorted.size() / 2;
    row.median_steps = sorted.size() % 2 ? sorted[m] : 0.5 * (sorted[m - 1] + sorted[m]);
    double ss = 0.0;
    for (double s : steps) ss += (s - row.mean_steps) * (s - row.mean_steps);
    row.std_steps = steps.size() > 1 ? std::sqrt(ss / (steps.size() - 1)) : 0.0;
  }
  if (alpha_n) row.mean_alpha = alpha_sum / alpha_n;
  if (reach_n) row.wrong_goal_fraction = static_cast<double>(wrong_n) / reach_n;
  return row;
}

WorldConfig environment_world(const WorldConfig& base, const std::string& environment) {
  WorldConfig w = base;
  if (environment == "free") {
    w.obstacles.clear();
    w.random_obstacles.count = 0;
  } else if (environment == "obstacles") {
    if (w.obstacles.empty() && w.random_obstacles.count == 0) w.random_obstacles.count = 2;
  } else {
    throw ConfigError("unknown environment '" + environment + "'");
  }
  return w;
}

std::vector<MetricsRow> evaluate(const EvalOptions& opts, const UserPopulation& users, const WorldConfig& base,
                                 const ModelSet& models, std::vector<Episode>* episodes) {
  std::vector<MetricsRow> rows;
  for (const auto& env : opts.environments) {
    const WorldConfig world = environment_world(base, env);
    for (const ControlMode mode : opts.modes) {
      std::vector<Episode> eps;
      ControllerOptions co{mode, opts.blend, opts.timid, std::nullopt, std::nullopt};
      SharedController shared(models, world, co);
      for (int i = 0; i < opts.episodes; ++i) {
        const std::uint64_t seed = evaluation_seed(opts.seed, i);
        const SimUserParams user = users.sample(seed, world.num_goals());
        if (opts.perfect_intent) {
          ControllerOptions pinned = co;
          pinned.perfect_intent_goal = user.goal;
          SharedController oracle(models, world, pinned);
          eps.push_back(run_shared_episode(oracle, user, world, seed, i));
        } else {
          eps.push_back(run_shared_episode(shared, user, world, seed, i));
        }
      }
      rows.push_back(summarize(to_string(mode), env, eps));
      if (episodes) episodes->insert(episodes->end(), eps.begin(), eps.end());
    }
  }
  return rows;
}

std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::ostringstream out;
  out << "mode,environment,n,success_rate,mean_steps,median_steps,std_steps,mean_alpha,wrong_goal_fraction\n";
  out << std::setprecision(10);
  for (const auto& r : rows)
    out << r.mode << ',' << r.environment << ',' << r.n << ',' << r.success_rate << ',' << r.mean_steps << ','
        << r.median_steps << ',' << r.std_steps << ',' << r.mean_alpha << ',' << r.wrong_goal_fraction << '\n';
  return out.str();
}

}  // namespace arbiter
