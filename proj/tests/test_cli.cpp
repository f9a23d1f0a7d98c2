#include <gtest/gtest.h>

#include <imitdrive/cli.hpp>
#include <imitdrive/server.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace imitdrive;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("imitdrive_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

struct CmdResult {
  int code;
  std::string out, err;
};

CmdResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "imitdrive");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_command(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir = fresh_dir("pipeline");
    write_text(dir / "small.json", R"({"gp": {"max_points": 300, "max_search_points": 150},
                                        "network": {"hidden": 8}, "train": {"checkpoint_every": 2}})");
    const std::string cfg = (dir / "small.json").string();
    ASSERT_EQ(run({"collect-expert", "--track", "desk", "--rounds", "2", "--seed", "3", "--out",
                   (dir / "demo.csv").string()}).code, 0);
    for (const char* v : {"trackpos", "speed"})
      ASSERT_EQ(run({"--config", cfg, "fit-gp", "--track", "desk", "--demo", (dir / "demo.csv").string(),
                     "--variable", v, "--out", (dir / (std::string(v) + ".json")).string()}).code, 0);
  }

  static CmdResult train(const std::string& out_dir) {
    return run({"--config", (dir / "small.json").string(), "train", "--track", "desk", "--trackpos-model",
                (dir / "trackpos.json").string(), "--speed-model", (dir / "speed.json").string(), "--steps", "1500",
                "--seed", "4", "--quiet", "--out-dir", (dir / out_dir).string()});
  }

  static inline fs::path dir;
};

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  const Config d = config_from_json(nlohmann::json::object());
  EXPECT_EQ(d.hidden, 600);
  EXPECT_EQ(d.ppo.gamma, 0.98);
  const Config c = config_from_json(nlohmann::json::parse(
      R"({"network": {"hidden": 64, "output_gain": 0.01}, "ppo": {"learning_rate": 1e-3}, "reward": {"mode": "stochastic"}})"));
  EXPECT_EQ(c.hidden, 64);
  EXPECT_EQ(c.head.output_gain, 0.01);
  EXPECT_EQ(c.ppo.learning_rate, 1e-3);
  EXPECT_EQ(c.reward.mode, RewardMode::stochastic);
}

TEST(Config, UnknownAndInvalidKeysRejected) {
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"nope": 1})")), ValidationError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"ppo": {"gama": 0.9}})")), ValidationError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"ppo": {"batch_size": 300}})")), ValidationError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"network": {"hidden": "x"}})")), ValidationError);
}

TEST(Config, EnvironmentVariableFallback) {
  const fs::path d = fresh_dir("env");
  write_text(d / "c.json", R"({"network": {"hidden": 12}})");
  ::setenv(kConfigEnvVar, (d / "c.json").c_str(), 1);
  EXPECT_EQ(resolve_config("").hidden, 12);
  write_text(d / "e.json", R"({"network": {"hidden": 20}})");
  EXPECT_EQ(resolve_config((d / "e.json").string()).hidden, 20);
  ::unsetenv(kConfigEnvVar);
  EXPECT_EQ(resolve_config("").hidden, 600);
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"default.json", "desk.json", "training_track.json"}) {
    const fs::path p = fs::path(IMITDRIVE_SOURCE_DIR) / "configs" / name;
    EXPECT_NO_THROW(load_config(p.string())) << p;
  }
}

TEST(Session, LockstepSequence) {
  const Track t = build_desk_track();
  Session s(t);
  auto hello = s.handle(R"({"type":"hello"})", 0.0);
  ASSERT_EQ(hello.size(), 2u);
  EXPECT_EQ(nlohmann::json::parse(hello[0])["track_id"], "desk");
  EXPECT_EQ(nlohmann::json::parse(hello[1])["seq"], 0);
  for (int i = 0; i < 100; ++i) {
    const auto r = s.handle(R"({"type":"control","steering":0.0,"torque":0.1,"seq":)" + std::to_string(i) + "}",
                            0.1 * i);
    ASSERT_EQ(r.size(), 1u);
    const auto j = nlohmann::json::parse(r[0]);
    EXPECT_EQ(j["type"], "state");
    EXPECT_EQ(j["seq"], i);
  }
}

TEST(Session, ErrorsKeepSessionAlive) {
  const Track t = build_desk_track();
  Session s(t);
  EXPECT_EQ(nlohmann::json::parse(s.handle("not json", 0.0)[0])["type"], "error");
  EXPECT_EQ(nlohmann::json::parse(s.handle(R"({"type":"fly"})", 0.0)[0])["type"], "error");
  EXPECT_EQ(nlohmann::json::parse(s.handle(R"({"type":"control","steering":2,"torque":0,"seq":1})", 0.0)[0])["type"],
            "error");
  s.handle(R"({"type":"control","steering":0,"torque":0,"seq":5})", 0.0);
  EXPECT_EQ(nlohmann::json::parse(s.handle(R"({"type":"control","steering":0,"torque":0,"seq":5})", 0.0)[0])["type"],
            "error");
  EXPECT_EQ(nlohmann::json::parse(s.handle(R"({"type":"control","steering":0,"torque":0,"seq":6})", 0.0)[0])["seq"], 6);
}

TEST(Session, RecordingProducesLoadableDemo) {
  const Track t = build_desk_track();
  const fs::path d = fresh_dir("record");
  SessionConfig cfg;
  cfg.demo_dir = d.string();
  Session s(t, cfg);
  s.handle(R"({"type":"hello"})", 0.0);
  s.handle(R"({"type":"record","on":true})", 0.0);
  EXPECT_TRUE(s.recording());
  ScriptedExpert ex(t, {}, 1);
  for (int i = 0; i < 200; ++i) {
    const Action a = ex.act(s.state());
    nlohmann::json c{{"type", "control"}, {"steering", a.steering}, {"torque", a.torque}, {"seq", i}};
    s.handle(c.dump(), 0.1 * i);
  }
  const auto saved = nlohmann::json::parse(s.handle(R"({"type":"record","on":false})", 20.0)[0]);
  ASSERT_EQ(saved["type"], "demo_saved");
  EXPECT_EQ(saved["rows"], 201);
  const DemoLog log = load_demo(saved["path"].get<std::string>(), t);
  EXPECT_EQ(log.records.size(), 201u);
  EXPECT_EQ(log.driver, "human");
}

TEST(Session, IdleRecordingPauses) {
  const Track t = build_desk_track();
  SessionConfig cfg;
  cfg.demo_dir = fresh_dir("idle").string();
  Session s(t, cfg);
  s.handle(R"({"type":"record","on":true})", 0.0);
  s.tick(5.0);
  EXPECT_FALSE(s.paused());
  s.tick(11.0);
  EXPECT_TRUE(s.paused());
  s.handle(R"({"type":"record","on":true})", 12.0);
  EXPECT_FALSE(s.paused());
}

TEST(Server, TcpSessionsAreIsolated) {
  const Track t = build_desk_track();
  SessionServer server(t, SessionConfig{}, 0);
  std::thread loop([&] { server.run(); });
  auto connect_and = [&](const std::vector<std::string>& lines, std::size_t expect) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<std::uint16_t>(server.port()));
    EXPECT_EQ(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr), 0);
    std::string payload;
    for (const auto& l : lines) payload += l + "\n";
    detail::send_all(fd, payload);
    std::string got;
    char buf[4096];
    while (static_cast<std::size_t>(std::count(got.begin(), got.end(), '\n')) < expect) {
      const ssize_t n = ::recv(fd, buf, sizeof buf, 0);
      if (n <= 0) break;
      got.append(buf, static_cast<std::size_t>(n));
    }
    ::close(fd);
    std::vector<std::string> out;
    std::istringstream in(got);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
  };
  const auto a = connect_and({R"({"type":"hello"})", R"({"type":"control","steering":0,"torque":1,"seq":1})"}, 3);
  const auto b = connect_and({R"({"type":"control","steering":0,"torque":0,"seq":1})"}, 1);
  server.stop();
  loop.join();
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(nlohmann::json::parse(a[2])["seq"], 1);
  ASSERT_EQ(b.size(), 1u);
  // A fresh session starts at the configured speed regardless of the other client.
  EXPECT_LT(nlohmann::json::parse(b[0])["V_kmh"].get<double>(), nlohmann::json::parse(a[2])["V_kmh"].get<double>());
}

TEST(Command, ExitCodes) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({"bogus"}).code, 2);
  EXPECT_EQ(run({"fit-gp", "--demo", "/nonexistent.csv", "--variable", "trackpos", "--out", "/tmp/x.json"}).code, 2);
  const fs::path d = fresh_dir("codes");
  ASSERT_EQ(run({"collect-expert", "--rounds", "1", "--out", (d / "one.csv").string()}).code, 0);
  EXPECT_EQ(run({"fit-gp", "--demo", (d / "one.csv").string(), "--variable", "trackpos", "--out",
                 (d / "m.json").string()}).code, 2);
  EXPECT_EQ(run({"fit-gp", "--demo", (d / "one.csv").string(), "--variable", "height", "--out",
                 (d / "m.json").string()}).code, 2);
  write_text(d / "bad.json", R"({"ppo": {"gama": 1}})");
  EXPECT_EQ(run({"--config", (d / "bad.json").string(), "collect-expert", "--out", (d / "x.csv").string()}).code, 2);
}

TEST(Command, GenerateRoadWritesTrack) {
  const fs::path d = fresh_dir("road");
  const CmdResult r = run({"generate-road", "--kind", "gaussian_batched", "--seed", "2", "--out", (d / "r.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Track t = load_track((d / "r.json").string());
  EXPECT_NEAR(t.total_length(), 3140.0, 1e-6);
}

TEST(Command, ServeStdioSpeaksProtocol) {
  std::istringstream in("{\"type\":\"hello\"}\n{\"type\":\"control\",\"steering\":0,\"torque\":0,\"seq\":1}\n");
  std::ostringstream out;
  run_stream_session(build_desk_track(), SessionConfig{}, in, out);
  const std::string text = out.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
}

TEST_F(Pipeline, SampleGpWritesRequestedCount) {
  const CmdResult r = run({"sample-gp", "--model", (dir / "trackpos.json").string(), "--n", "7", "--seed", "1", "--out",
                     (dir / "s.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(samples_from_csv(read_file((dir / "s.csv").string())).size(), 7u);
}

TEST_F(Pipeline, TrainTwiceGivesIdenticalMetrics) {
  const CmdResult a = train("run_a");
  ASSERT_EQ(a.code, 0) << a.err;
  const CmdResult b = train("run_b");
  ASSERT_EQ(b.code, 0) << b.err;
  const std::string ma = read_file((dir / "run_a" / "metrics.csv").string());
  EXPECT_EQ(ma, read_file((dir / "run_b" / "metrics.csv").string()));
  EXPECT_EQ(ma.substr(0, ma.find('\n')), kMetricsHeader);
  EXPECT_EQ(read_file((dir / "run_a" / "checkpoint.bin").string()),
            read_file((dir / "run_b" / "checkpoint.bin").string()));
}

TEST_F(Pipeline, ReplayRecordsEpisode) {
  const CmdResult t = train("run_replay");
  ASSERT_EQ(t.code, 0) << t.err;
  const CmdResult r = run({"--config", (dir / "small.json").string(), "replay", "--checkpoint", (dir / "run_replay" / "checkpoint.bin").string(), "--max-steps", "50",
                     "--out", (dir / "episode.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "episode.csv"));
  const CmdResult s = run({"replay", "--log", (dir / "demo.csv").string()});
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_NE(s.out.find("round,rows,duration_s"), std::string::npos) << s.out;
  EXPECT_EQ(run({"replay"}).code, 2);
}
