#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "geometry.hpp"
#include "track.hpp"

namespace imitdrive {

struct VehicleParams {
  double wheelbase = 2.6;
  double steer_time_constant = 0.2;
  double max_steer = deg_to_rad(25.0);
  double max_accel = 4.0;
  double max_brake = 8.0;
  double max_speed = kmh_to_ms(100.0);
  double length = 4.5;
  double width = 1.8;
  double dt = 0.1;
  int substeps = 10;
  double too_slow_kmh = 5.0;
  double too_slow_grace = 3.0;
  double wrong_way_window = 1.0;
  double ray_range = 300.0;
};

struct Action {
  double steering = 0.0;  // [-1, 1] of max steer
  double torque = 0.0;    // [-1, 1]; negative brakes
};

enum class TerminationKind { none, obstacle_collision, off_road, too_slow, wrong_way };

inline const char* to_string(TerminationKind k) {
  switch (k) {
    case TerminationKind::none: return "none";
    case TerminationKind::obstacle_collision: return "obstacle_collision";
    case TerminationKind::off_road: return "off_road";
    case TerminationKind::too_slow: return "too_slow";
    case TerminationKind::wrong_way: return "wrong_way";
  }
  return "?";
}

inline TerminationKind termination_from_string(const std::string& s) {
  for (auto k : {TerminationKind::none, TerminationKind::obstacle_collision, TerminationKind::off_road,
                 TerminationKind::too_slow, TerminationKind::wrong_way})
    if (s == to_string(k)) return k;
  throw ValidationError("unknown termination kind '" + s + "'");
}

/// Physical vehicle state, SI units.
struct SimState {
  Vec2 position;
  double heading = 0.0;    // global, radians
  double speed = 0.0;      // m/s
  double steer = 0.0;      // physical wheel angle, radians
  double steer_cmd = 0.0;  // last steering command, [-1, 1]
  double torque = 0.0;     // last torque command, [-1, 1]
  double sigma = 0.0;      // centerline arc-length
  double lateral = 0.0;    // signed track position D
  double tangent_heading = 0.0;
  double odometer = 0.0;   // accumulated Euclidean distance
  double progress = 0.0;   // unwrapped signed arc-length since reset
  int lap_count = 0;
  long time_step = 0;
  double wrong_way_time = 0.0;

  double time(double dt) const { return static_cast<double>(time_step) * dt; }
};

/// State at arc-length s, lateral offset d, aligned with the tangent.
inline SimState place_on_track(const Track& track, double s, double d, double speed) {
  SimState st;
  st.position = track.point_at(s, d);
  st.heading = track.tangent_heading(s);
  st.speed = speed;
  const Projection p = track.project(st.position);
  st.sigma = p.arc_length;
  st.lateral = p.lateral;
  st.tangent_heading = p.tangent_heading;
  return st;
}

/// Reference-state initialization: uniform arc-length on the right-lane
/// center, speed ~ U(30, 90) km/h. Arc-lengths within `clearance` metres
/// before (or 10 m past) a right-lane obstacle are redrawn.
inline SimState reset(const Track& track, std::mt19937_64& rng, double clearance = 60.0) {
  std::uniform_real_distribution<double> arc(0.0, track.total_length());
  std::uniform_real_distribution<double> speed(30.0, 90.0);
  const double L = track.total_length();
  double s = arc(rng);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    bool blocked = false;
    for (const Obstacle& o : track.obstacles()) {
      if (o.lane != Lane::right) continue;
      const double ahead = wrap_positive(o.arc_length - s, L);
      if (ahead <= clearance || ahead >= L - 10.0) blocked = true;
    }
    if (!blocked) break;
    s = arc(rng);
  }
  const double v = kmh_to_ms(speed(rng));
  return place_on_track(track, s, track.lane_center(Lane::right), v);
}

inline OrientedBox car_box(const SimState& s, const VehicleParams& p) {
  return OrientedBox{s.position, s.heading, p.length / 2, p.width / 2};
}

inline bool collides(const SimState& s, const Track& track, const VehicleParams& p) {
  const OrientedBox car = car_box(s, p);
  const auto& boxes = track.obstacle_boxes();
  const auto obstacles = track.obstacles();
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const double ahead = wrap_positive(obstacles[i].arc_length - s.sigma, track.total_length());
    if (std::min(ahead, track.total_length() - ahead) > 15.0) continue;
    if (boxes_overlap(car, boxes[i])) return true;
  }
  return false;
}

/// Termination for a state whose projection fields are current. At most one
/// kind is reported; collision takes precedence, then off-road, wrong-way,
/// too-slow.
inline TerminationKind classify(const SimState& s, const Track& track, const VehicleParams& p) {
  if (collides(s, track, p)) return TerminationKind::obstacle_collision;
  if (std::abs(s.lateral) > track.half_width()) return TerminationKind::off_road;
  if (s.wrong_way_time >= p.wrong_way_window - 1e-9) return TerminationKind::wrong_way;
  if (s.time(p.dt) >= p.too_slow_grace - 1e-9 && ms_to_kmh(s.speed) < p.too_slow_kmh)
    return TerminationKind::too_slow;
  return TerminationKind::none;
}

struct StepResult {
  SimState state;
  TerminationKind termination = TerminationKind::none;
};

/// Advances one control period: steering lag, asymmetric longitudinal
/// limits, kinematic bicycle, then re-projection and termination checks.
inline StepResult step(const Track& track, const SimState& in, const Action& action,
                       const VehicleParams& p = {}) {
  if (!std::isfinite(action.steering) || !std::isfinite(action.torque))
    throw NumericalError("non-finite action");
  SimState s = in;
  s.steer_cmd = std::clamp(action.steering, -1.0, 1.0);
  s.torque = std::clamp(action.torque, -1.0, 1.0);
  const double target_steer = s.steer_cmd * p.max_steer;
  const double h = p.dt / p.substeps;
  const double lag = 1.0 - std::exp(-h / p.steer_time_constant);
  const double accel = s.torque >= 0.0 ? p.max_accel * s.torque : p.max_brake * s.torque;
  const Vec2 start = s.position;
  for (int i = 0; i < p.substeps; ++i) {
    s.steer += (target_steer - s.steer) * lag;
    s.speed = std::clamp(s.speed + accel * h, 0.0, p.max_speed);
    s.heading += s.speed / p.wheelbase * std::tan(s.steer) * h;
    s.position += unit_from_angle(s.heading) * (s.speed * h);
  }
  s.heading = wrap_angle(s.heading);
  s.odometer += norm(s.position - start);
  s.time_step += 1;

  const double L = track.total_length();
  const Projection pr = track.project(s.position);
  double ds = pr.arc_length - s.sigma;
  if (ds > L / 2) ds -= L;
  if (ds < -L / 2) ds += L;
  s.progress += ds;
  s.lap_count = static_cast<int>(std::floor(s.progress / L));
  s.sigma = pr.arc_length;
  s.lateral = pr.lateral;
  s.tangent_heading = pr.tangent_heading;

  const double along = s.speed * std::cos(wrap_angle(s.heading - s.tangent_heading));
  s.wrong_way_time = along < 0.0 ? s.wrong_way_time + p.dt : 0.0;
  return {s, classify(s, track, p)};
}

inline constexpr int kRayCount = 288;
inline constexpr double kRayStepDeg = 1.25;
using RangeScan = std::array<double, kRayCount>;

inline double cast_ray(const Track& track, Vec2 origin, Vec2 dir, double range) {
  double best = range;
  for (const BoundaryShape& b : track.boundaries()) {
    double t = INFINITY;
    if (const auto* seg = std::get_if<std::pair<Vec2, Vec2>>(&b))
      t = ray_segment(origin, dir, seg->first, seg->second);
    else
      t = ray_arc(origin, dir, std::get<Arc>(b));
    best = std::min(best, t);
  }
  for (const OrientedBox& box : track.obstacle_boxes()) {
    if (norm(box.center - origin) - box.half_across - box.half_along > best) continue;
    best = std::min(best, ray_box(origin, dir, box));
  }
  return best;
}

/// 288 rays at heading + i * 1.25 deg; distance to the nearest obstacle or
/// road boundary, capped at the sensor range.
inline RangeScan sense_rays(const SimState& s, const Track& track, const VehicleParams& p = {}) {
  RangeScan out;
  for (int i = 0; i < kRayCount; ++i) {
    const double a = s.heading + deg_to_rad(kRayStepDeg * i);
    out[i] = cast_ray(track, s.position, unit_from_angle(a), p.ray_range);
  }
  return out;
}

struct ObstacleGaps {
  double front_right = 300.0;
  double front_left = 300.0;
  double back_right = 300.0;
  double back_left = 300.0;
};

/// Arc-length gaps (modulo the lap) to the nearest obstacle ahead and behind
/// in each lane, capped at `cap`.
inline ObstacleGaps nearest_obstacles(const SimState& s, const Track& track, double cap = 300.0) {
  ObstacleGaps g{cap, cap, cap, cap};
  const double L = track.total_length();
  for (const Obstacle& o : track.obstacles()) {
    const double ahead = wrap_positive(o.arc_length - s.sigma, L);
    const double behind = ahead == 0.0 ? 0.0 : L - ahead;
    double& front = o.lane == Lane::right ? g.front_right : g.front_left;
    double& back = o.lane == Lane::right ? g.back_right : g.back_left;
    front = std::min(front, ahead);
    back = std::min(back, behind);
  }
  return g;
}

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
};

/// Affine map from `range` to `target`; inputs are clamped to `range` first.
inline double scale(double value, Interval range, Interval target) {
  if (!(range.hi > range.lo)) throw ValidationError("degenerate scaling range");
  const double v = std::clamp(value, range.lo, range.hi);
  return target.lo + (v - range.lo) * (target.hi - target.lo) / (range.hi - range.lo);
}

inline double unscale(double value, Interval range, Interval target) {
  if (!(range.hi > range.lo) || !(target.hi > target.lo)) throw ValidationError("degenerate scaling range");
  return range.lo + (value - target.lo) * (range.hi - range.lo) / (target.hi - target.lo);
}

inline constexpr int kScalarCount = 11;
inline constexpr int kObservationSize = 2 * kScalarCount + kRayCount;

/// Physical scalar block of the observation, in state-table order:
/// steer (rad), torque, speed (km/h), heading relative to the road tangent
/// (rad), D, D - 3, D + 3, front-right, front-left, back-right, back-left gaps.
using ScalarBlock = std::array<double, kScalarCount>;

struct ScalarScaling {
  Interval range;
  Interval target;
};

inline const std::array<ScalarScaling, kScalarCount>& scalar_scaling() {
  static const std::array<ScalarScaling, kScalarCount> table = {{
      {{-deg_to_rad(25.0), deg_to_rad(25.0)}, {-1.0, 1.0}},
      {{-1.0, 1.0}, {-1.0, 1.0}},
      {{0.0, 100.0}, {0.0, 1.0}},
      {{-kPi, kPi}, {-1.0, 1.0}},
      {{-6.0, 6.0}, {-1.0, 1.0}},
      {{-9.0, 3.0}, {-1.0, 1.0 / 3.0}},
      {{-3.0, 9.0}, {-1.0 / 3.0, 1.0}},
      {{0.0, 300.0}, {0.0, 1.0}},
      {{0.0, 300.0}, {0.0, 1.0}},
      {{0.0, 300.0}, {0.0, 1.0}},
      {{0.0, 300.0}, {0.0, 1.0}},
  }};
  return table;
}

inline constexpr ScalarScaling kRangeScaling{{0.0, 300.0}, {0.0, 1.0}};

inline ScalarBlock scalar_block(const SimState& s, const Track& track) {
  const ObstacleGaps g = nearest_obstacles(s, track);
  return {s.steer,
          s.torque,
          ms_to_kmh(s.speed),
          wrap_angle(s.heading - s.tangent_heading),
          s.lateral,
          s.lateral - 3.0,
          s.lateral + 3.0,
          g.front_right,
          g.front_left,
          g.back_right,
          g.back_left};
}

using Observation = Eigen::VectorXd;

/// [scaled current scalars | scaled previous scalars | scaled ranges].
/// With `off_road` set, every range entry becomes -1.
inline Observation assemble_observation(std::span<const double> current, std::span<const double> previous,
                                        std::span<const double> ranges, bool off_road = false) {
  if (current.size() != kScalarCount || previous.size() != kScalarCount || ranges.size() != kRayCount)
    throw ValidationError("observation inputs must be 11 + 11 scalars and 288 ranges");
  Observation obs(kObservationSize);
  const auto& table = scalar_scaling();
  for (int i = 0; i < kScalarCount; ++i) {
    obs[i] = scale(current[i], table[i].range, table[i].target);
    obs[kScalarCount + i] = scale(previous[i], table[i].range, table[i].target);
  }
  for (int i = 0; i < kRayCount; ++i)
    obs[2 * kScalarCount + i] = off_road ? -1.0 : scale(ranges[i], kRangeScaling.range, kRangeScaling.target);
  return obs;
}

/// Stateful wrapper pairing the simulator with the two-frame observation
/// history. One instance per rollout worker.
class DrivingEnv {
 public:
  DrivingEnv(const Track& track, VehicleParams params = {}) : track_(&track), params_(params) {}

  const Track& track() const { return *track_; }
  const VehicleParams& params() const { return params_; }
  const SimState& state() const { return state_; }
  TerminationKind termination() const { return termination_; }

  Observation reset(std::mt19937_64& rng) { return reset_to(imitdrive::reset(*track_, rng)); }

  Observation reset_to(const SimState& s) {
    state_ = s;
    termination_ = TerminationKind::none;
    previous_ = scalar_block(state_, *track_);
    return observe();
  }

  Observation step(const Action& a) {
    const ScalarBlock before = scalar_block(state_, *track_);
    const StepResult r = imitdrive::step(*track_, state_, a, params_);
    state_ = r.state;
    termination_ = r.termination;
    previous_ = before;
    return observe();
  }

  Observation observe() const {
    const ScalarBlock cur = scalar_block(state_, *track_);
    const bool off = std::abs(state_.lateral) > track_->half_width();
    const RangeScan rays = off ? RangeScan{} : sense_rays(state_, *track_, params_);
    return assemble_observation(cur, previous_, rays, off);
  }

 private:
  const Track* track_;
  VehicleParams params_;
  SimState state_;
  ScalarBlock previous_{};
  TerminationKind termination_ = TerminationKind::none;
};

// Episode log: one CSV row per control step.
inline constexpr const char* kEpisodeLogHeader = "t,sigma,x,y,theta,V_kmh,D,psi_deg,tau,termination";

inline std::string episode_log_row(const SimState& s, TerminationKind term, double dt) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%s",
                s.time(dt), s.sigma, s.position.x, s.position.y, s.heading, ms_to_kmh(s.speed), s.lateral,
                rad_to_deg(s.steer), s.torque, to_string(term));
  return buf;
}

}  // namespace imitdrive
