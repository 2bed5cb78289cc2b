#include "arbiter/dagger.hpp"
#include "arbiter/teleop_server.hpp"
#include "arbiter/teleop_session.hpp"

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <thread>

#include <unistd.h>

using namespace arbiter;
namespace fs = std::filesystem;

namespace {

const ModelSet& models() {
  static const ModelSet set = [] {
    const auto world = WorldConfig::default_layout();
    DemoParams p;
    p.trajectories = 100;
    const auto demos = generate_demos(world, {}, p, 5);
    nn::TrainHyper h;
    h.epochs = 20;
    h.batch_size = 64;
    h.adam.lr = 3e-3;
    ModelSet m;
    m.motion = train_motion(demos.samples, {}, h).model;
    m.intent = nn::init_model(intent_network_spec({}), 1);
    m.arbitration = nn::init_model(arbitration_network_spec({}), 2);
    return m;
  }();
  return set;
}

std::string cmd(double vx, double vy, int seq = 0) {
  return json{{"type", "user_cmd"}, {"seq", seq}, {"v", {vx, vy}}}.dump();
}

const json* find_type(const std::vector<json>& msgs, const std::string& type) {
  for (const auto& m : msgs)
    if (m.at("type") == type) return &m;
  return nullptr;
}

// Straight-line operator: heads for `goal`, then for the place target.
Vec2 operator_command(const json& state, int goal, const WorldConfig& world) {
  const Vec2 pos = vec2_from_json(state.at("gripper"));
  const Vec2 target = state.at("grabbed").is_null() ? world.goal_objects[static_cast<std::size_t>(goal)].center
                                                    : world.place_target.center;
  const Vec2 d = target - pos;
  if (d.norm() < 1e-12) return Vec2::Zero();
  return d.normalized() * std::min(0.35, d.norm() / world.dt);
}

class TeleopFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("arbiter_teleop_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

}  // namespace

TEST(Session, HelloYieldsConfigAndVersionIsChecked) {
  const auto world = WorldConfig::default_layout();
  Session s("a", models(), world, {});
  auto r = s.handle_message(R"({"type":"hello","version":1})", 0.0);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].at("type"), "config");
  EXPECT_EQ(r[0].at("version"), kProtocolVersion);
  EXPECT_EQ(r[0].at("mode"), "shared_learned");
  EXPECT_EQ(world_config_from_json(r[0].at("world")).num_goals(), 4);
  r = s.handle_message(R"({"type":"hello","version":2})", 0.0);
  EXPECT_EQ(r[0].at("type"), "error");
}

TEST(Session, InvalidMessagesProduceErrorsAndKeepTheSession) {
  Session s("a", models(), WorldConfig::default_layout(), {});
  for (const char* bad : {"{oops", "[1,2]", R"({"type":"warp"})", R"({"type":"user_cmd","seq":1,"v":[1]})",
                          R"({"type":"user_cmd","v":[0.1,0.1]})", R"({"type":"set_mode","mode":"autopilot"})",
                          R"({"type":"hello"})"}) {
    const auto r = s.handle_message(bad, 0.0);
    ASSERT_EQ(r.size(), 1u) << bad;
    EXPECT_EQ(r[0].at("type"), "error") << bad;
    EXPECT_TRUE(r[0].at("reason").is_string());
  }
  const auto out = s.tick(0.05);
  ASSERT_NE(find_type(out, "state"), nullptr);
  EXPECT_EQ(s.ticks(), 1u);
}

TEST(Session, LastCommandWinsAndStaleCommandsStopTheGripper) {
  const auto world = WorldConfig::default_layout();
  SessionOptions o;
  o.mode = ControlMode::Direct;
  Session s("a", models(), world, o);
  const Vec2 start = s.state().gripper_pos;
  s.tick(0.0);
  EXPECT_EQ(s.state().gripper_pos, start);  // no command yet

  s.handle_message(cmd(0.3, 0.0, 1), 0.10);
  s.handle_message(cmd(0.0, 0.2, 2), 0.11);
  s.tick(0.12);
  EXPECT_TRUE(s.state().gripper_pos.isApprox(start + Vec2{0.0, 0.2 * world.dt}));
  const Vec2 held = s.state().gripper_pos;
  s.tick(0.30);  // 0.19 s old: still applied
  EXPECT_GT(s.state().gripper_pos.y(), held.y());
  const Vec2 later = s.state().gripper_pos;
  s.tick(0.40);  // 0.29 s old: stale
  EXPECT_EQ(s.state().gripper_pos, later);
  EXPECT_EQ(s.current_episode().steps.back().a_u, Vec2::Zero());
}

TEST(Session, ModeChangeIsAcknowledgedAndAppliesAtReset) {
  Session s("a", models(), WorldConfig::default_layout(), {});
  auto r = s.handle_message(R"({"type":"set_mode","mode":"direct"})", 0.0);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].at("type"), "ack");
  EXPECT_EQ(r[0].at("applies"), "next_reset");
  auto out = s.tick(0.0);
  EXPECT_EQ(s.mode(), ControlMode::SharedLearned);
  EXPECT_EQ(find_type(out, "state")->at("mode"), "shared_learned");

  s.handle_message(R"({"type":"reset"})", 0.0);
  out = s.tick(0.05);
  EXPECT_EQ(s.mode(), ControlMode::Direct);
  ASSERT_NE(find_type(out, "episode_end"), nullptr);
  EXPECT_EQ(find_type(out, "episode_end")->at("outcome"), "aborted");
  ASSERT_NE(find_type(out, "config"), nullptr);
  EXPECT_EQ(find_type(out, "config")->at("mode"), "direct");
  EXPECT_EQ(s.finished_episodes().size(), 1u);
  EXPECT_EQ(s.current_episode().header.seed, 1u);

  ModelSet no_arb = models();
  no_arb.arbitration.reset();
  SessionOptions o;
  o.mode = ControlMode::Direct;
  Session plain("b", no_arb, WorldConfig::default_layout(), o);
  EXPECT_EQ(plain.handle_message(R"({"type":"set_mode","mode":"shared_learned"})", 0.0)[0].at("type"), "error");
}

TEST(Session, DirectModeStatesCarryZeroAlphaAndPeriodicHeatmaps) {
  SessionOptions o;
  o.mode = ControlMode::Direct;
  Session s("a", models(), WorldConfig::default_layout(), o);
  for (int k = 0; k < 11; ++k) {
    s.handle_message(cmd(0.1, 0.2), 0.05 * k);
    const auto out = s.tick(0.05 * k);
    const json* st = find_type(out, "state");
    ASSERT_NE(st, nullptr);
    EXPECT_EQ(st->at("alpha"), 0.0);
    EXPECT_EQ(st->at("t"), k + 1);
    EXPECT_EQ(st->contains("heatmap"), k % 5 == 0) << k;
    if (st->contains("heatmap")) {
      double sum = 0.0;
      for (double v : st->at("heatmap")) sum += v;
      EXPECT_EQ(st->at("heatmap").size(), 784u);
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
  }
}

TEST_F(TeleopFiles, CompletedEpisodeIsRecordedLabelledAndReplayed) {
  const auto world = WorldConfig::default_layout();
  SessionOptions o;
  o.mode = ControlMode::SharedBaseline;
  o.record_dir = dir_;
  o.seed = 40;
  Session s("7", models(), world, o);
  std::vector<json> out = s.tick(0.0);
  double now = 0.0;
  const json* end = nullptr;
  for (int k = 0; k < 400 && !end; ++k) {
    now += world.dt;
    const Vec2 a = operator_command(*find_type(out, "state"), 1, world);
    s.handle_message(cmd(a.x(), a.y(), k), now);
    out = s.tick(now);
    end = find_type(out, "episode_end");
  }
  ASSERT_NE(end, nullptr);
  EXPECT_EQ(end->at("success"), true);
  EXPECT_EQ(end->at("outcome"), "success");
  EXPECT_EQ(find_type(out, "state")->at("done"), true);
  EXPECT_TRUE(s.episode_over());

  const auto path = dir_ / "session-7-episode-0.jsonl";
  ASSERT_TRUE(fs::exists(path));
  const auto eps = read_episodes(path);
  ASSERT_EQ(eps.size(), 1u);
  const Episode& ep = eps[0];
  EXPECT_EQ(ep.header.source, "live");
  EXPECT_EQ(ep.header.true_goal, 1);
  EXPECT_EQ(ep.header.steps, end->at("timesteps").get<int>());

  const auto samples = hindsight_label(ep, models(), world, {});
  EXPECT_EQ(samples.size(), ep.steps.size() - 1);

  ControllerOptions co;
  co.mode = ControlMode::SharedBaseline;
  SharedController c(models(), world, co);
  EXPECT_EQ(to_jsonl(replay_episode(ep, c, world)), to_jsonl(ep));

  // Ticks after the end leave the world untouched until a reset.
  const auto frozen = s.state().gripper_pos;
  s.tick(now + 1.0);
  EXPECT_EQ(s.state().gripper_pos, frozen);
}

TEST_F(TeleopFiles, WebSocketClientDrivesAFullPickAndPlace) {
  namespace beast = boost::beast;
  namespace websocket = beast::websocket;
  using tcp = boost::asio::ip::tcp;

  const auto world = WorldConfig::default_layout();
  ServerOptions so;
  so.port = 0;
  so.tick_seconds = 0.01;
  so.session.record_dir = dir_;
  so.session.heatmap_every = 0;
  TeleopServer server(models(), world, so);
  std::thread loop([&] { server.run(); });

  boost::asio::io_context ioc;
  tcp::resolver resolver(ioc);
  websocket::stream<tcp::socket> ws(ioc);
  boost::asio::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(server.port())));
  ws.handshake("127.0.0.1", "/");
  ws.text(true);

  auto read = [&] {
    beast::flat_buffer buf;
    ws.read(buf);
    return json::parse(beast::buffers_to_string(buf.data()));
  };
  auto send = [&](const json& m) { ws.write(boost::asio::buffer(m.dump())); };

  send({{"type", "hello"}, {"version", 1}});
  send({{"type", "set_mode"}, {"mode", "direct"}});
  send({{"type", "reset"}});
  bool acked = false, configured = false;
  json end;
  int seq = 0;
  for (int guard = 0; guard < 20000 && end.is_null(); ++guard) {
    const json m = read();
    const std::string type = m.at("type");
    if (type == "ack") acked = true;
    if (type == "config" && m.at("mode") == "direct") configured = true;
    if (type == "episode_end" && configured && m.at("outcome") != "aborted") end = m;
    if (type == "state" && configured && !m.at("done").get<bool>()) {
      const Vec2 a = operator_command(m, 2, world);
      send({{"type", "user_cmd"}, {"seq", seq++}, {"v", {a.x(), a.y()}}});
    }
  }
  ws.close(websocket::close_code::normal);
  server.stop();
  loop.join();

  EXPECT_TRUE(acked);
  ASSERT_FALSE(end.is_null());
  EXPECT_EQ(end.at("success"), true);

  const auto path = dir_ / "session-0-episode-1.jsonl";
  ASSERT_TRUE(fs::exists(path));
  const auto ep = read_episodes(path).at(0);
  EXPECT_EQ(ep.header.mode, ControlMode::Direct);
  EXPECT_EQ(ep.header.true_goal, 2);
  EXPECT_EQ(ep.header.seed, 1u);
  EXPECT_NO_THROW(hindsight_label(ep, models(), world, {}));
  ControllerOptions co;
  co.mode = ControlMode::Direct;
  SharedController c(models(), world, co);
  EXPECT_EQ(to_jsonl(replay_episode(ep, c, world)), to_jsonl(ep));
  EXPECT_GE(server.finished_episodes(), 1u);
}
