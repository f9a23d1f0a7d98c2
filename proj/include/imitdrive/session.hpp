#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "expert.hpp"
#include "io.hpp"
#include "sim.hpp"
#include "track.hpp"

namespace imitdrive {

// ---------------------------------------------------------------------------
// Live driving session. Newline-delimited JSON records, each with a "type":
//   client -> server
//     {"type":"hello"}
//     {"type":"control","steering":s,"torque":t,"seq":n}   s, t in [-1, 1]
//     {"type":"reset"}
//     {"type":"record","on":true|false}
//   server -> client
//     {"type":"hello","track_id":id,"dt":0.1}
//     {"type":"state","seq":n,"x","y","theta","V_kmh","D","sigma","psi_deg",
//      "tau","lap","recording","ranges_preview":[...],"termination":kind}
//     {"type":"demo_saved","path":p,"rows":n}
//     {"type":"error","message":m}
// Lockstep: each control advances the simulator by one step and produces
// exactly one state whose seq echoes the control's seq. The state after
// hello carries seq 0. A terminal state is followed by an automatic reset.
// ---------------------------------------------------------------------------

struct SessionConfig {
  double start_speed_kmh = 50.0;
  /// Every n-th ray goes into ranges_preview.
  int preview_stride = 8;
  /// Recording pauses when the client is silent this long.
  double idle_pause_s = 10.0;
  std::string demo_dir = ".";
  std::string driver = "human";
};

class Session {
 public:
  Session(const Track& track, SessionConfig cfg = {}, std::uint64_t seed = 0)
      : track_(&track), cfg_(std::move(cfg)), env_(track), seed_(seed) {
    if (cfg_.preview_stride < 1) throw ValidationError("preview stride must be >= 1");
    restart();
  }

  bool recording() const { return recording_; }
  bool paused() const { return paused_; }
  const SimState& state() const { return env_.state(); }
  long last_seq() const { return last_seq_; }

  /// Handles one line received at time `now` (seconds, any monotonic origin)
  /// and returns the reply lines.
  std::vector<std::string> handle(const std::string& line, double now) {
    check_idle(now);
    last_message_ = now;
    nlohmann::json msg;
    try {
      msg = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      return {error("malformed message: not valid JSON")};
    }
    if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string())
      return {error("malformed message: missing string field 'type'")};
    const std::string type = msg["type"];
    try {
      if (type == "hello") return on_hello();
      if (type == "control") return on_control(msg);
      if (type == "reset") {
        restart();
        return {state_message(last_seq_ < 0 ? 0 : last_seq_)};
      }
      if (type == "record") return on_record(msg);
    } catch (const nlohmann::json::exception& e) {
      return {error(std::string("malformed ") + type + " message: " + e.what())};
    } catch (const ValidationError& e) {
      return {error(e.what())};
    }
    return {error("unknown message type '" + type + "'")};
  }

  /// Periodic check from the server loop; pauses an idle recording.
  void tick(double now) { check_idle(now); }

  /// Demo CSV of the current recording (rows so far).
  std::string demo_csv() const {
    DemoLog log;
    log.driver = cfg_.driver;
    log.track_id = track_->id();
    log.seed = seed_;
    log.records = rows_;
    return demo_to_csv(log);
  }

 private:
  std::vector<std::string> on_hello() {
    nlohmann::json h{{"type", "hello"}, {"track_id", track_->id()}, {"dt", env_.params().dt}};
    return {h.dump(), state_message(0)};
  }

  std::vector<std::string> on_control(const nlohmann::json& msg) {
    const double steering = msg.at("steering").get<double>();
    const double torque = msg.at("torque").get<double>();
    const long seq = msg.at("seq").get<long>();
    if (!std::isfinite(steering) || !std::isfinite(torque) || std::abs(steering) > 1.0 || std::abs(torque) > 1.0)
      throw ValidationError("control values must lie in [-1, 1]");
    if (seq <= last_seq_) throw ValidationError("control seq must increase (last " + std::to_string(last_seq_) + ")");
    last_seq_ = seq;
    env_.step({steering, torque});
    const TerminationKind term = env_.termination();
    if (recording_ && !paused_) record_row(term);
    std::string reply = state_message(seq);
    if (term != TerminationKind::none) {
      restart();
      if (recording_) ++round_;
      round_start_ = env_.state().time_step;
      lap_base_ = 0;
    } else if (recording_ && env_.state().lap_count > lap_base_) {
      lap_base_ = env_.state().lap_count;
      ++round_;
      round_start_ = env_.state().time_step;
    }
    return {reply};
  }

  std::vector<std::string> on_record(const nlohmann::json& msg) {
    const bool on = msg.at("on").get<bool>();
    if (on) {
      if (!recording_) {
        rows_.clear();
        round_ = 0;
        lap_base_ = env_.state().lap_count;
        round_start_ = env_.state().time_step;
        record_row(TerminationKind::none);
      }
      recording_ = true;
      paused_ = false;
      return {state_message(std::max(last_seq_, 0L))};
    }
    if (!recording_) throw ValidationError("not recording");
    recording_ = false;
    paused_ = false;
    const std::string path = cfg_.demo_dir + "/demo-" + track_->id() + "-" + std::to_string(++saved_) + ".csv";
    write_file_atomic(path, demo_csv());
    nlohmann::json r{{"type", "demo_saved"}, {"path", path}, {"rows", rows_.size()}};
    return {r.dump()};
  }

  void record_row(TerminationKind term) {
    SimState s = env_.state();
    DemoRecord r = make_demo_record(round_, s, term, env_.params().dt);
    r.t = static_cast<double>(s.time_step - round_start_) * env_.params().dt;
    rows_.push_back(r);
  }

  void check_idle(double now) {
    if (recording_ && last_message_ && now - *last_message_ > cfg_.idle_pause_s) paused_ = true;
  }

  void restart() {
    env_.reset_to(place_on_track(*track_, 0.0, track_->lane_center(Lane::right), kmh_to_ms(cfg_.start_speed_kmh)));
  }

  std::string state_message(long seq) const {
    const SimState& s = env_.state();
    const bool off = std::abs(s.lateral) > track_->half_width();
    std::vector<double> preview;
    if (!off) {
      const RangeScan rays = sense_rays(s, *track_, env_.params());
      for (int i = 0; i < kRayCount; i += cfg_.preview_stride) preview.push_back(rays[static_cast<std::size_t>(i)]);
    }
    nlohmann::json j{{"type", "state"},
                     {"seq", seq},
                     {"x", s.position.x},
                     {"y", s.position.y},
                     {"theta", s.heading},
                     {"V_kmh", ms_to_kmh(s.speed)},
                     {"D", s.lateral},
                     {"sigma", s.sigma},
                     {"psi_deg", rad_to_deg(s.steer)},
                     {"tau", s.torque},
                     {"lap", s.lap_count},
                     {"recording", recording_ ? (paused_ ? "paused" : "on") : "off"},
                     {"ranges_preview", preview},
                     {"termination", to_string(env_.termination())}};
    return j.dump();
  }

  static std::string error(const std::string& m) { return nlohmann::json{{"type", "error"}, {"message", m}}.dump(); }

  const Track* track_;
  SessionConfig cfg_;
  DrivingEnv env_;
  std::uint64_t seed_;
  long last_seq_ = -1;
  bool recording_ = false;
  bool paused_ = false;
  std::optional<double> last_message_;
  std::vector<DemoRecord> rows_;
  int round_ = 0;
  int lap_base_ = 0;
  long round_start_ = 0;
  int saved_ = 0;
};

}  // namespace imitdrive
