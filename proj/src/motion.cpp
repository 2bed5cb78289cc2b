#include "arbiter/motion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace arbiter {

nn::NetworkSpec motion_network_spec(const MotionNetConfig& cfg) {
  nn::NetworkSpec spec;
  spec.name = "motion";
  spec.layers = {
      nn::Dense{cfg.feature_size(), cfg.hidden, nn::Activation::Tanh},
      nn::Dense{cfg.hidden, cfg.hidden, nn::Activation::Tanh},
      nn::Dense{cfg.hidden, 2, nn::Activation::Linear},
  };
  spec.meta = {{"max_obstacles", cfg.max_obstacles}, {"v_max", cfg.v_max}};
  spec.validate();
  return spec;
}

MotionNetConfig motion_config_from_spec(const nn::NetworkSpec& spec) {
  if (spec.name != "motion") throw SpecError("network '" + spec.name + "' is not a motion net");
  MotionNetConfig cfg;
  cfg.max_obstacles = spec.meta.value("max_obstacles", cfg.max_obstacles);
  cfg.v_max = spec.meta.value("v_max", cfg.v_max);
  const auto* first = std::get_if<nn::Dense>(&spec.layers.at(0));
  if (!first) throw SpecError("unexpected motion network layout");
  cfg.hidden = first->out;
  if (!(motion_network_spec(cfg) == spec)) throw SpecError("unexpected motion network layout");
  return cfg;
}

nn::Vec motion_features(const Vec2& pos, bool grabbed, const Vec2& target, std::span<const Circle> obstacles,
                        const MotionNetConfig& cfg) {
  nn::Vec f = nn::Vec::Zero(cfg.feature_size());
  f(0) = pos.x();
  f(1) = pos.y();
  f(2) = grabbed ? 1.0 : 0.0;
  f(3) = target.x();
  f(4) = target.y();
  if (cfg.max_obstacles > 0 && !obstacles.empty()) {
    std::vector<std::size_t> order(obstacles.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto gap = [&](std::size_t i) { return (pos - obstacles[i].center).norm() - obstacles[i].radius; };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return gap(a) < gap(b); });
    const std::size_t n = std::min(order.size(), static_cast<std::size_t>(cfg.max_obstacles));
    for (std::size_t k = 0; k < n; ++k) {
      const auto& c = obstacles[order[k]];
      const auto base = static_cast<Eigen::Index>(5 + 3 * k);
      f(base) = c.center.x();
      f(base + 1) = c.center.y();
      f(base + 2) = c.radius;
    }
  }
  return f;
}

namespace {

// s(r) = tanh(r) / r and s'(r) / r, with series expansions near zero.
double squash_gain(double r) { return r < 1e-6 ? 1.0 - r * r / 3.0 : std::tanh(r) / r; }

double squash_gain_slope(double r) {
  if (r < 1e-3) return -2.0 / 3.0 + 8.0 * r * r / 15.0;
  const double t = std::tanh(r);
  return (r * (1.0 - t * t) - t) / (r * r * r);
}

}  // namespace

Vec2 squash_velocity(const Vec2& z, double v_max) { return v_max * squash_gain(z.norm()) * z; }

Eigen::Matrix2d squash_jacobian(const Vec2& z, double v_max) {
  const double r = z.norm();
  return v_max * (squash_gain(r) * Eigen::Matrix2d::Identity() + squash_gain_slope(r) * z * z.transpose());
}

Action motion_act(const nn::Model& model, const WorldState& state, int goal, const WorldConfig& world,
                  ActionRole role) {
  const auto cfg = motion_config_from_spec(model.spec);
  const Vec2 target = subgoal(state, goal, world);
  nn::RecurrentState rs = nn::initial_state(model.spec);
  const nn::Vec z =
      nn::step(model, rs, motion_features(state.gripper_pos, state.grabbed.has_value(), target, state.obstacles, cfg));
  return {squash_velocity(Vec2{z(0), z(1)}, cfg.v_max), role};
}

json to_json(const DemoSample& s) {
  json j = {{"traj", s.trajectory},
            {"pos", to_json(s.pos)},
            {"grabbed", s.grabbed},
            {"target", to_json(s.target)},
            {"v", to_json(s.velocity)}};
  if (!s.obstacles.empty()) {
    json obs = json::array();
    for (const auto& c : s.obstacles) obs.push_back(json::array({c.center.x(), c.center.y(), c.radius}));
    j["obstacles"] = obs;
  }
  return j;
}

DemoSample demo_sample_from_json(const json& j) {
  DemoSample s;
  s.trajectory = j.at("traj").get<int>();
  s.pos = vec2_from_json(j.at("pos"));
  s.grabbed = j.at("grabbed").get<bool>();
  s.target = vec2_from_json(j.at("target"));
  s.velocity = vec2_from_json(j.at("v"));
  if (j.contains("obstacles"))
    for (const auto& c : j.at("obstacles")) s.obstacles.push_back({Vec2{c.at(0).get<double>(), c.at(1).get<double>()}, c.at(2).get<double>()});
  return s;
}

json to_json(const DemoParams& p) {
  return {{"trajectories", p.trajectories},
          {"speed", p.speed},
          {"random_object_fraction", p.random_object_fraction},
          {"obstacles", p.obstacles},
          {"edge_margin", p.edge_margin}};
}

DemoParams demo_params_from_json(const json& j) {
  DemoParams p;
  p.trajectories = j.value("trajectories", p.trajectories);
  p.speed = j.value("speed", p.speed);
  p.random_object_fraction = j.value("random_object_fraction", p.random_object_fraction);
  p.obstacles = j.value("obstacles", p.obstacles);
  p.edge_margin = j.value("edge_margin", p.edge_margin);
  if (p.trajectories < 1) throw ConfigError("demo trajectories must be at least 1");
  if (!(p.speed > 0.0)) throw ConfigError("demo speed must be positive");
  return p;
}

DemoSet generate_demos(const WorldConfig& world, const trajopt::OptParams& opt, const DemoParams& params,
                       std::uint64_t seed) {
  if (params.speed > world.v_max) throw ConfigError("demo speed exceeds v_max");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(world.workspace_min.x() + params.edge_margin,
                                            world.workspace_max.x() - params.edge_margin);
  std::uniform_real_distribution<double> uy(world.workspace_min.y() + params.edge_margin,
                                            world.workspace_max.y() - params.edge_margin);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> pick_goal(0, world.num_goals() - 1);

  WorldConfig obstacle_world = world;
  obstacle_world.random_obstacles.count = params.obstacles;
  const Vec2 place = world.place_target.center;

  DemoSet set;
  for (int i = 0; i < params.trajectories; ++i) {
    for (;;) {
      std::vector<Circle> obstacles = world.obstacles;
      if (params.obstacles > 0) obstacles = reset(obstacle_world, rng()).obstacles;
      auto free_point = [&](Vec2 p) { return signed_distance(p, obstacles) > opt.margin; };
      Vec2 start{ux(rng), uy(rng)};
      while (!free_point(start)) start = {ux(rng), uy(rng)};
      Vec2 object = world.goal_objects[static_cast<std::size_t>(pick_goal(rng))].center;
      if (unit(rng) < params.random_object_fraction) {
        object = {ux(rng), uy(rng)};
        while (!free_point(object)) object = {ux(rng), uy(rng)};
      }
      if ((object - start).norm() < 0.05 || (place - object).norm() < 0.05 || !free_point(object)) {
        ++set.rejected;
        continue;
      }
      const auto plan = trajopt::pick_place_plan(start, object, place, obstacles, opt, world.dt);
      if (!plan.to_object.converged || !plan.to_place.converged) {
        ++set.rejected;
        continue;
      }
      for (const auto* res : {&plan.to_object, &plan.to_place}) {
        const bool grabbed = res->trajectory.segment == trajopt::Segment::ToPlace;
        const auto timed = trajopt::retime(res->trajectory, params.speed);
        for (const auto& label : trajopt::label_velocities(timed, world.v_max))
          set.samples.push_back({i, label.position, grabbed, grabbed ? place : object, obstacles, label.velocity});
      }
      break;
    }
    ++set.trajectories;
  }
  return set;
}

namespace {

struct Batch {
  nn::Mat x;
  nn::Mat v;
};

Batch assemble(std::span<const DemoSample> samples, const std::vector<std::size_t>& idx, const MotionNetConfig& cfg) {
  Batch b{nn::Mat(static_cast<Eigen::Index>(idx.size()), cfg.feature_size()),
          nn::Mat(static_cast<Eigen::Index>(idx.size()), 2)};
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto& s = samples[idx[k]];
    const auto row = static_cast<Eigen::Index>(k);
    b.x.row(row) = motion_features(s.pos, s.grabbed, s.target, s.obstacles, cfg).transpose();
    b.v.row(row) = s.velocity.transpose();
  }
  return b;
}

// Mean squared velocity error; fills dLoss/dz when `grad` is non-null.
double squashed_loss(const nn::Mat& z, const nn::Mat& v_target, double v_max, nn::Mat* grad) {
  const Eigen::Index n = z.rows();
  if (grad) grad->setZero(n, 2);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec2 zi{z(i, 0), z(i, 1)};
    const Vec2 diff = squash_velocity(zi, v_max) - Vec2{v_target(i, 0), v_target(i, 1)};
    loss += diff.squaredNorm();
    if (grad) grad->row(i) = (squash_jacobian(zi, v_max).transpose() * (2.0 * diff / n)).transpose();
  }
  return loss / n;
}

double batch_loss(const nn::Model& model, const Batch& b, double v_max) {
  if (b.x.rows() == 0) return 0.0;
  return squashed_loss(nn::forward(model, b.x), b.v, v_max, nullptr);
}

}  // namespace

double motion_mse(const nn::Model& model, std::span<const DemoSample> samples) {
  const auto cfg = motion_config_from_spec(model.spec);
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return batch_loss(model, assemble(samples, idx, cfg), cfg.v_max);
}

MotionTrainResult train_motion(std::span<const DemoSample> samples, const MotionNetConfig& cfg,
                               const nn::TrainHyper& hyper) {
  if (samples.empty()) throw TrainingError("motion dataset is empty");
  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < samples.size(); ++i)
    (samples[i].trajectory % 10 == 9 ? val_idx : train_idx).push_back(i);
  if (train_idx.empty()) std::swap(train_idx, val_idx);

  MotionTrainResult result{nn::init_model(motion_network_spec(cfg), hyper.seed), {}};
  nn::Model& model = result.model;
  const Batch train_all = assemble(samples, train_idx, cfg);
  const Batch val_all = assemble(samples, val_idx, cfg);
  const Batch& monitor = val_idx.empty() ? train_all : val_all;

  auto& report = result.report;
  report.initial_train_loss = batch_loss(model, train_all, cfg.v_max);
  report.initial_val_loss = batch_loss(model, monitor, cfg.v_max);
  report.best_val_loss = report.initial_val_loss;
  nn::Model best = model;

  nn::AdamState adam = nn::adam_init(model, hyper.adam);
  std::mt19937_64 rng(hyper.seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(train_all.x.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const auto bs = static_cast<std::size_t>(std::max(1, hyper.batch_size));
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t n = std::min(bs, order.size() - start);
      Batch b{nn::Mat(static_cast<Eigen::Index>(n), cfg.feature_size()), nn::Mat(static_cast<Eigen::Index>(n), 2)};
      for (std::size_t k = 0; k < n; ++k) {
        b.x.row(static_cast<Eigen::Index>(k)) = train_all.x.row(order[start + k]);
        b.v.row(static_cast<Eigen::Index>(k)) = train_all.v.row(order[start + k]);
      }
      nn::SequenceCache cache;
      const nn::Mat z = nn::forward(model, b.x, &cache);
      nn::Mat g;
      epoch_loss += squashed_loss(z, b.v, cfg.v_max, &g);
      nn::NamedTensors grads = nn::backward(model, cache, g);
      nn::clip_gradient(grads, hyper.grad_clip);
      nn::adam_step(model, grads, adam);
      ++batches;
    }
    report.train_loss.push_back(epoch_loss / batches);
    const double v = batch_loss(model, monitor, cfg.v_max);
    report.val_loss.push_back(v);
    if (v < report.best_val_loss) {
      report.best_val_loss = v;
      report.best_epoch = epoch;
      best = model;
    }
  }
  model = std::move(best);
  return result;
}

}  // namespace arbiter
