#include "arbiter/teleop_session.hpp"

#include <cmath>

namespace arbiter {

namespace {

json error_message(const std::string& reason) { return {{"type", "error"}, {"reason", reason}}; }

}  // namespace

Session::Session(std::string id, const ModelSet& models, const WorldConfig& world, SessionOptions options)
    : id_(std::move(id)),
      models_(&models),
      world_(world),
      options_(std::move(options)),
      mode_(options_.mode),
      next_mode_(options_.mode),
      controller_(models, world, {options_.mode, options_.blend, {}, std::nullopt, std::nullopt}) {
  if (options_.heatmap_every < 0) throw ConfigError("heatmap_every must be non-negative");
  start_episode();
}

void Session::start_episode() {
  mode_ = next_mode_;
  controller_.set_mode(mode_);
  controller_.reset();
  const std::uint64_t seed = options_.seed + static_cast<std::uint64_t>(episode_index_);
  state_ = reset(world_, seed);
  episode_ = {};
  episode_.header.episode_id = episode_index_;
  episode_.header.config_hash = config_hash(world_);
  episode_.header.seed = seed;
  episode_.header.mode = mode_;
  episode_.header.obstacles = state_.obstacles;
  episode_.header.source = "live";
  command_.reset();
  over_ = false;
  ++episode_index_;
}

void Session::finish_episode(Outcome outcome, std::vector<json>& out) {
  over_ = true;
  episode_.header.outcome = outcome;
  episode_.header.steps = static_cast<int>(episode_.steps.size());
  episode_.header.true_goal = state_.grabbed;
  finished_.push_back(episode_);
  if (options_.record_dir) {
    std::filesystem::create_directories(*options_.record_dir);
    write_episodes(*options_.record_dir / ("session-" + id_ + "-episode-" + std::to_string(episode_.header.episode_id) +
                                           ".jsonl"),
                   std::span<const Episode>(&episode_, 1));
  }
  out.push_back({{"type", "episode_end"},
                 {"timesteps", episode_.header.steps},
                 {"success", outcome == Outcome::Success},
                 {"outcome", to_string(outcome)}});
}

json Session::config_message() const {
  json obstacles = json::array();
  for (const auto& c : state_.obstacles) obstacles.push_back({{"center", to_json(c.center)}, {"radius", c.radius}});
  return {{"type", "config"},
          {"version", kProtocolVersion},
          {"session", id_},
          {"mode", to_string(mode_)},
          {"world", to_json(world_)},
          {"obstacles", obstacles},
          {"heatmap_every", options_.heatmap_every}};
}

std::vector<json> Session::handle_message(std::string_view text, double now) {
  json msg;
  try {
    msg = json::parse(text);
  } catch (const json::exception&) {
    return {error_message("message is not valid JSON")};
  }
  if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string())
    return {error_message("message must be an object with a string 'type'")};
  const std::string type = msg["type"];

  if (type == "hello") {
    if (!msg.contains("version") || !msg["version"].is_number_integer())
      return {error_message("hello needs an integer 'version'")};
    if (msg["version"].get<int>() != kProtocolVersion)
      return {error_message("unsupported protocol version " + msg["version"].dump())};
    return {config_message()};
  }
  if (type == "user_cmd") {
    if (!msg.contains("seq") || !msg["seq"].is_number_integer()) return {error_message("user_cmd needs an integer 'seq'")};
    const auto& v = msg.contains("v") ? msg["v"] : json();
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
      return {error_message("user_cmd needs 'v' as [vx, vy]")};
    const Vec2 cmd{v[0].get<double>(), v[1].get<double>()};
    if (!is_finite(cmd)) return {error_message("user_cmd velocity must be finite")};
    inbox_.push_back({Pending::Kind::Command, cmd, now, ControlMode::Direct});
    return {};
  }
  if (type == "set_mode") {
    if (!msg.contains("mode") || !msg["mode"].is_string()) return {error_message("set_mode needs a string 'mode'")};
    ControlMode m;
    try {
      m = control_mode_from_string(msg["mode"].get<std::string>());
    } catch (const Error& e) {
      return {error_message(e.what())};
    }
    if (m == ControlMode::SharedLearned && !models_->arbitration)
      return {error_message("no arbitration model loaded for shared_learned")};
    inbox_.push_back({Pending::Kind::SetMode, {}, now, m});
    return {{{"type", "ack"}, {"request", "set_mode"}, {"mode", to_string(m)}, {"applies", "next_reset"}}};
  }
  if (type == "reset") {
    inbox_.push_back({Pending::Kind::Reset, {}, now, ControlMode::Direct});
    return {};
  }
  return {error_message("unknown message type '" + type + "'")};
}

json Session::state_message(const std::optional<Decision>& d) const {
  json objects = json::array();
  for (const auto& p : state_.object_positions) objects.push_back(to_json(p));
  json m = {{"type", "state"},
            {"t", state_.t},
            {"gripper", to_json(state_.gripper_pos)},
            {"objects", objects},
            {"grabbed", state_.grabbed ? json(*state_.grabbed) : json(nullptr)},
            {"alpha", d ? d->alpha : 0.0},
            {"conf", d ? d->intent.goal.confidence : 0.0},
            {"g_star", d ? d->intent.goal.g_star : -1},
            {"mode", to_string(mode_)},
            {"done", over_}};
  if (d && options_.heatmap_every > 0 && ticks_ % static_cast<std::uint64_t>(options_.heatmap_every) == 0) {
    const auto& h = d->intent.heatmap;
    m["heatmap"] = std::vector<double>(h.data(), h.data() + h.size());
  }
  return m;
}

std::vector<json> Session::tick(double now) {
  std::vector<json> out;
  while (!inbox_.empty()) {
    const Pending p = inbox_.front();
    inbox_.pop_front();
    switch (p.kind) {
      case Pending::Kind::Command:
        command_ = p.v;
        command_time_ = p.received;
        break;
      case Pending::Kind::SetMode: next_mode_ = p.mode; break;
      case Pending::Kind::Reset:
        if (!over_ && !episode_.steps.empty()) finish_episode(Outcome::Aborted, out);
        start_episode();
        out.push_back(config_message());
        break;
    }
  }

  std::optional<Decision> decision;
  if (!over_) {
    const Vec2 a_u = command_ && now - command_time_ <= options_.stale_after ? *command_ : Vec2::Zero();
    try {
      const WorldState before = state_;
      decision = controller_.decide(before, a_u);
      StepRecord r;
      r.state = StateSnapshot::of(before);
      r.a_u = a_u;
      r.a_r = decision->a_r;
      r.a_s = decision->a_s;
      r.alpha = decision->alpha;
      r.confidence = decision->intent.goal.confidence;
      r.windowed_scores = decision->intent.goal.windowed;
      r.g_star = decision->intent.goal.g_star;
      r.grabbed = before.grabbed.has_value();
      state_ = step(before, {decision->a_s, ActionRole::Shared}, world_);
      episode_.steps.push_back(std::move(r));
    } catch (const Error& e) {
      decision.reset();
      out.push_back(error_message(std::string("control step failed: ") + e.what()));
      finish_episode(Outcome::Aborted, out);
    }
    if (!over_ && (state_.phase == Phase::Done || state_.t >= world_.max_steps)) {
      over_ = true;
      out.push_back(state_message(decision));
      ++ticks_;
      finish_episode(state_.phase == Phase::Done ? Outcome::Success : Outcome::Truncated, out);
      return out;
    }
  }
  out.push_back(state_message(decision));
  ++ticks_;
  return out;
}

}  // namespace arbiter
