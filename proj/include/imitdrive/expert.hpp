#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "io.hpp"
#include "sim.hpp"
#include "track.hpp"

namespace imitdrive {

struct ExpertParams {
  double lane_offset = 3.0;           // preferred lateral target (right-lane center)
  double lookahead_base = 60.0;       // m
  double lookahead_per_speed = 2.0;   // s
  double ramp_length = 40.0;          // m, smoothstep lane change length
  double clearance_before = 15.0;     // lane change completes this far before an obstacle
  double return_after = 30.0;         // start returning this far after passing
  double max_speed_kmh = 100.0;
  double lateral_accel = 3.0;         // m/s^2, curvature speed limit
  double avoid_speed_factor = 0.8;
  double preview_time = 4.0;          // s of curvature preview for braking
  double preview_min = 50.0;          // m
  double pursuit_min = 8.0;           // m
  double pursuit_time = 0.8;          // s
  double speed_gain = 0.15;           // torque per km/h of speed error
  double ou_theta = 0.3;              // 1/s
  double ou_sigma_lateral = 0.3;      // m, stationary std
  double ou_sigma_speed_kmh = 2.0;    // km/h, stationary std
};

inline double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

/// Ornstein-Uhlenbeck perturbations applied to the expert's targets.
struct OuNoise {
  double lateral = 0.0;
  double speed_kmh = 0.0;

  void advance(const ExpertParams& p, double dt, std::mt19937_64& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    const double decay = std::exp(-p.ou_theta * dt);
    const double diffusion = std::sqrt(1.0 - decay * decay);
    lateral = lateral * decay + p.ou_sigma_lateral * diffusion * n01(rng);
    speed_kmh = speed_kmh * decay + p.ou_sigma_speed_kmh * diffusion * n01(rng);
  }
};

/// Avoidance weight in [0, 1] at arc-length `sigma`: 1 means fully in the
/// other lane. Only obstacles in the preferred lane count, and only once they
/// are inside the speed-dependent lookahead.
inline double avoidance_weight(const Track& track, const ExpertParams& p, double sigma, double speed) {
  const double L = track.total_length();
  const Lane own = p.lane_offset >= 0.0 ? Lane::right : Lane::left;
  const double lookahead = p.lookahead_base + p.lookahead_per_speed * speed;
  double w = 0.0;
  for (const Obstacle& o : track.obstacles()) {
    if (o.lane != own) continue;
    const double ahead = wrap_positive(o.arc_length - sigma, L);
    const double behind = L - ahead;
    double wi = 0.0;
    if (ahead <= lookahead && ahead <= L / 2) {
      const double start = p.clearance_before + p.ramp_length;
      wi = smoothstep((start - ahead) / p.ramp_length);
    } else if (behind <= L / 2) {
      wi = 1.0 - smoothstep((behind - p.return_after) / p.ramp_length);
    }
    w = std::max(w, wi);
  }
  return w;
}

/// Noise-free lateral target at `sigma`.
inline double expert_lateral_target(const Track& track, const ExpertParams& p, double sigma, double speed) {
  return p.lane_offset * (1.0 - 2.0 * avoidance_weight(track, p, sigma, speed));
}

/// Noise-free speed target (km/h) at the current state.
inline double expert_speed_target(const Track& track, const ExpertParams& p, const SimState& s) {
  const double preview = std::max(p.preview_min, s.speed * p.preview_time);
  const double kappa = track.max_curvature_ahead(s.sigma, preview);
  double v = p.max_speed_kmh;
  if (kappa > 0.0) v = std::min(v, ms_to_kmh(std::sqrt(p.lateral_accel / kappa)));
  if (avoidance_weight(track, p, s.sigma, s.speed) > 0.0) v *= p.avoid_speed_factor;
  return v;
}

/// Pure-pursuit steering toward the (perturbed) lateral target and a
/// proportional speed controller toward the (perturbed) speed target.
inline Action scripted_expert_action(const SimState& s, const Track& track, const ExpertParams& p,
                                     const OuNoise& noise, const VehicleParams& vp = {}) {
  const double lookahead = std::max(p.pursuit_min, p.pursuit_time * s.speed);
  const double s_target = s.sigma + lookahead;
  const double d_target = expert_lateral_target(track, p, s_target, s.speed) + noise.lateral;
  const Vec2 target = track.point_at(s_target, d_target);
  const Vec2 rel = target - s.position;
  const double alpha = wrap_angle(std::atan2(rel.y, rel.x) - s.heading);
  const double ld = norm(rel);
  const double steer = std::atan(2.0 * vp.wheelbase * std::sin(alpha) / ld);
  const double v_target = std::min(p.max_speed_kmh, expert_speed_target(track, p, s) + noise.speed_kmh);
  return Action{std::clamp(steer / vp.max_steer, -1.0, 1.0),
                std::clamp(p.speed_gain * (v_target - ms_to_kmh(s.speed)), -1.0, 1.0)};
}

/// Stateful expert driver: owns its noise process and random stream.
class ScriptedExpert {
 public:
  ScriptedExpert(const Track& track, ExpertParams params, std::uint64_t seed, VehicleParams vp = {})
      : track_(&track), params_(params), vehicle_(vp), rng_(seed) {}

  Action act(const SimState& s) {
    noise_.advance(params_, vehicle_.dt, rng_);
    return scripted_expert_action(s, *track_, params_, noise_, vehicle_);
  }

  const OuNoise& noise() const { return noise_; }

 private:
  const Track* track_;
  ExpertParams params_;
  VehicleParams vehicle_;
  std::mt19937_64 rng_;
  OuNoise noise_;
};

struct DemoRecord {
  int round = 0;
  double t = 0.0;
  double sigma = 0.0;
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  double speed_kmh = 0.0;
  double lateral = 0.0;
  double steer_deg = 0.0;
  double torque = 0.0;
  TerminationKind termination = TerminationKind::none;

  bool operator==(const DemoRecord&) const = default;
};

struct DemoLog {
  std::string driver = "scripted-expert";
  std::string track_id;
  std::uint64_t seed = 0;
  std::vector<DemoRecord> records;

  bool operator==(const DemoLog&) const = default;

  int round_count() const {
    int n = 0;
    for (const auto& r : records) n = std::max(n, r.round + 1);
    return n;
  }

  std::vector<std::vector<DemoRecord>> rounds() const {
    std::vector<std::vector<DemoRecord>> out(static_cast<std::size_t>(round_count()));
    for (const auto& r : records) out[static_cast<std::size_t>(r.round)].push_back(r);
    return out;
  }
};

inline DemoRecord make_demo_record(int round, const SimState& s, TerminationKind term, double dt) {
  return DemoRecord{round, s.time(dt), s.sigma, s.position.x, s.position.y, s.heading, ms_to_kmh(s.speed),
                    s.lateral, rad_to_deg(s.steer), s.torque, term};
}

/// Drives `rounds` complete laps from arc-length 0 on the right-lane center
/// and logs every control step. A termination means the expert is unsafe
/// for this track.
inline DemoLog collect_demos(const Track& track, int rounds, std::uint64_t seed, const ExpertParams& params = {},
                             const VehicleParams& vp = {}) {
  if (rounds < 1) throw ValidationError("rounds must be >= 1");
  DemoLog log;
  log.track_id = track.id();
  log.seed = seed;
  ScriptedExpert expert(track, params, seed, vp);
  SimState s = place_on_track(track, 0.0, params.lane_offset, 0.0);
  s.speed = kmh_to_ms(expert_speed_target(track, params, s));
  log.records.push_back(make_demo_record(0, s, TerminationKind::none, vp.dt));
  const long max_steps = static_cast<long>(rounds) * static_cast<long>(track.total_length() / 0.5 + 1000);
  for (long k = 0; k < max_steps; ++k) {
    const StepResult r = step(track, s, expert.act(s), vp);
    s = r.state;
    if (r.termination != TerminationKind::none)
      throw ConfigurationError(std::string("scripted expert terminated (") + to_string(r.termination) +
                               ") at sigma=" + fmt_double(s.sigma) + "; expert parameters are unsafe for track " +
                               track.id());
    if (s.lap_count >= rounds) return log;
    log.records.push_back(make_demo_record(s.lap_count, s, TerminationKind::none, vp.dt));
  }
  throw ConfigurationError("scripted expert failed to complete the requested rounds");
}

// ---------------------------------------------------------------------------
// Demo CSV:
//   # driver=<id>
//   # track=<track id>
//   # seed=<integer>
//   round,t,sigma,x,y,theta,V_kmh,D,psi_deg,tau,termination
//   0,0,0,...
// The sigma, theta and termination columns are optional on input.
// ---------------------------------------------------------------------------

inline constexpr const char* kDemoHeader = "round,t,sigma,x,y,theta,V_kmh,D,psi_deg,tau,termination";

inline std::string demo_row(const DemoRecord& r) {
  std::string row = std::to_string(r.round);
  for (double v : {r.t, r.sigma, r.x, r.y, r.theta, r.speed_kmh, r.lateral, r.steer_deg, r.torque})
    row += "," + fmt_double(v);
  row += ",";
  row += to_string(r.termination);
  return row;
}

inline std::string demo_preamble(const std::string& driver, const std::string& track_id, std::uint64_t seed) {
  return "# driver=" + driver + "\n# track=" + track_id + "\n# seed=" + std::to_string(seed) + "\n" +
         kDemoHeader + "\n";
}

inline std::string demo_to_csv(const DemoLog& log) {
  std::string out = demo_preamble(log.driver, log.track_id, log.seed);
  for (const auto& r : log.records) out += demo_row(r) + "\n";
  return out;
}

inline void write_demo(const DemoLog& log, const std::string& path) { write_file_atomic(path, demo_to_csv(log)); }

/// Parses and validates a demo CSV against `track`.
inline DemoLog parse_demo(const std::string& text, const Track& track, double max_speed_kmh = 100.0) {
  DemoLog log;
  log.track_id.clear();
  std::istringstream in(text);
  std::string line;
  std::map<std::string, int> col;
  int lineno = 0;
  auto fail = [&](const std::string& msg) { throw ValidationError("demo line " + std::to_string(lineno) + ": " + msg); };
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view v = trim(line);
    if (v.empty()) continue;
    if (v.front() == '#') {
      const std::string meta(trim(v.substr(1)));
      const auto eq = meta.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = meta.substr(0, eq), value = meta.substr(eq + 1);
      if (key == "driver") log.driver = value;
      else if (key == "track") log.track_id = value;
      else if (key == "seed") log.seed = static_cast<std::uint64_t>(parse_long(value, "seed"));
      continue;
    }
    const auto fields = split_csv(v);
    if (col.empty()) {
      for (std::size_t i = 0; i < fields.size(); ++i) col[fields[i]] = static_cast<int>(i);
      for (const char* req : {"round", "t", "x", "y", "V_kmh", "D", "psi_deg", "tau"})
        if (!col.count(req)) fail(std::string("missing required column '") + req + "'");
      continue;
    }
    if (fields.size() != col.size()) fail("expected " + std::to_string(col.size()) + " fields");
    auto num = [&](const char* name) { return parse_double(fields[static_cast<std::size_t>(col.at(name))], name); };
    DemoRecord r;
    try {
      r.round = static_cast<int>(parse_long(fields[static_cast<std::size_t>(col.at("round"))], "round"));
      r.t = num("t");
      r.x = num("x");
      r.y = num("y");
      r.speed_kmh = num("V_kmh");
      r.lateral = num("D");
      r.steer_deg = num("psi_deg");
      r.torque = num("tau");
      r.theta = col.count("theta") ? num("theta") : 0.0;
      if (col.count("termination"))
        r.termination = termination_from_string(fields[static_cast<std::size_t>(col.at("termination"))]);
      if (col.count("sigma")) {
        r.sigma = num("sigma");
      } else {
        try {
          r.sigma = track.project({r.x, r.y}).arc_length;
        } catch (const std::domain_error&) {
          fail("position too far from the track to recover sigma");
        }
      }
    } catch (const ValidationError& e) {
      fail(e.what());
    }
    if (r.round < 0) fail("negative round index");
    if (!(r.speed_kmh <= max_speed_kmh + 1e-9) || r.speed_kmh < 0.0)
      fail("speed " + fmt_double(r.speed_kmh) + " km/h outside [0, " + fmt_double(max_speed_kmh) + "]");
    for (double x : {r.t, r.sigma, r.x, r.y, r.theta, r.lateral, r.steer_deg, r.torque})
      if (!std::isfinite(x)) fail("non-finite value");
    log.records.push_back(r);
  }
  if (col.empty()) throw ValidationError("demo file has no header");
  if (log.track_id != track.id())
    throw ValidationError("unknown track id '" + log.track_id + "' (expected '" + track.id() + "')");
  std::stable_sort(log.records.begin(), log.records.end(), [](const DemoRecord& a, const DemoRecord& b) {
    return a.round != b.round ? a.round < b.round : a.t < b.t;
  });
  for (std::size_t i = 1; i < log.records.size(); ++i)
    if (log.records[i].round == log.records[i - 1].round && !(log.records[i].t > log.records[i - 1].t))
      throw ValidationError("non-monotone time in round " + std::to_string(log.records[i].round));
  return log;
}

inline DemoLog load_demo(const std::string& path, const Track& track) { return parse_demo(read_file(path), track); }

/// Every round index in [0, n) present and at least `min_rounds` rounds.
inline void require_rounds(const DemoLog& log, int min_rounds) {
  const auto rounds = log.rounds();
  if (static_cast<int>(rounds.size()) < min_rounds)
    throw ValidationError("demo has " + std::to_string(rounds.size()) + " rounds; at least " +
                          std::to_string(min_rounds) + " required");
  for (std::size_t i = 0; i < rounds.size(); ++i)
    if (rounds[i].empty()) throw ValidationError("demo is missing round " + std::to_string(i));
}

}  // namespace imitdrive
