#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "expert.hpp"
#include "gp.hpp"
#include "mdn.hpp"
#include "nn.hpp"
#include "ppo.hpp"
#include "reward.hpp"
#include "sim.hpp"
#include "track.hpp"

namespace imitdrive {

// ---------------------------------------------------------------------------
// Demo -> GP -> profile pipeline
// ---------------------------------------------------------------------------

enum class Variable { track_position, speed };

inline const char* to_string(Variable v) { return v == Variable::track_position ? "trackpos" : "speed"; }

inline Variable variable_from_string(const std::string& s) {
  if (s == "trackpos" || s == "D") return Variable::track_position;
  if (s == "speed" || s == "V") return Variable::speed;
  throw ValidationError("unknown variable '" + s + "' (expected trackpos or speed)");
}

struct Series {
  std::vector<double> sigma;
  std::vector<double> value;
};

/// (sigma, D) or (sigma, V km/h) pairs of every record.
inline Series demo_series(const DemoLog& log, Variable v) {
  Series s;
  for (const auto& r : log.records) {
    s.sigma.push_back(r.sigma);
    s.value.push_back(v == Variable::track_position ? r.lateral : r.speed_kmh);
  }
  return s;
}

struct BehaviorModels {
  GpModel lateral;
  GpModel speed;
};

inline BehaviorModels fit_behavior(const DemoLog& log, const FitOptions& opt = {}) {
  if (log.records.size() < 2) throw ValidationError("log has too few records to fit");
  const Series d = demo_series(log, Variable::track_position);
  const Series v = demo_series(log, Variable::speed);
  return {fit_with_tuned_noise(d.sigma, d.value, opt), fit_with_tuned_noise(v.sigma, v.value, opt)};
}

inline constexpr double kGridSpacing = 5.0;
inline constexpr int kSampleCount = 100;

inline ExpertProfile build_expert_profile(const BehaviorModels& m, double lap_length, int samples, std::uint64_t seed,
                                          const SampleOptions& opt = {}) {
  const auto grid = arc_grid(lap_length, kGridSpacing);
  std::mt19937_64 rng(seed);
  const auto sd = sample_trajectories(m.lateral, grid, samples, rng, opt);
  const auto sv = sample_trajectories(m.speed, grid, samples, rng, opt);
  return make_profile(lap_length, m.lateral, m.speed, grid, sd, sv);
}

// ---------------------------------------------------------------------------
// Policy rollouts
// ---------------------------------------------------------------------------

enum class ActionMode { mean_only, sampled };

inline const char* to_string(ActionMode m) { return m == ActionMode::mean_only ? "mean_only" : "sampled"; }

inline ActionMode action_mode_from_string(const std::string& s) {
  if (s == "mean_only" || s == "mean") return ActionMode::mean_only;
  if (s == "sampled") return ActionMode::sampled;
  throw ValidationError("unknown action mode '" + s + "' (expected mean_only or sampled)");
}

/// Policy wrapper tracking nothing but the networks and a generator.
class Policy {
 public:
  Policy(const PolicyNets& nets, ActionMode mode, std::uint64_t seed) : nets_(&nets), mode_(mode), rng_(seed) {}

  Action act(const Eigen::VectorXd& obs) {
    const Eigen::MatrixXd a = nets_->actor.predict(obs);
    const Eigen::MatrixXd m = nets_->mixing.predict(obs);
    const MdnDistribution d = mdn_from_outputs(a.col(0), m.col(0));
    return clamp_action(mode_ == ActionMode::mean_only ? mdn_dominant_mean(d) : mdn_sample(d, rng_));
  }

 private:
  const PolicyNets* nets_;
  ActionMode mode_;
  std::mt19937_64 rng_;
};

using TerminationCounts = std::map<std::string, int>;

struct RolloutOptions {
  int rounds = 7;
  double start_speed_kmh = 60.0;
  int max_consecutive_failures = 50;
};

struct RolloutResult {
  DemoLog log;  // one round per completed lap
  int episodes = 0;
  int failures = 0;
  TerminationCounts terminations;
};

/// Drives laps from arc-length 0 on the right-lane center. A termination
/// discards the partial lap and restarts; only whole laps are logged.
inline RolloutResult rollout(const PolicyNets& nets, const Track& track, ActionMode mode, std::uint64_t seed,
                             const RolloutOptions& opt = {}) {
  if (opt.rounds < 1) throw ValidationError("rounds must be >= 1");
  const VehicleParams vp;
  Policy policy(nets, mode, seed);
  DrivingEnv env(track, vp);
  RolloutResult r;
  r.log.driver = std::string("agent-") + to_string(mode);
  r.log.track_id = track.id();
  r.log.seed = seed;
  int consecutive = 0;
  const long lap_cap = static_cast<long>(track.total_length() / 0.5) + 1000;
  while (r.log.round_count() < opt.rounds) {
    ++r.episodes;
    SimState start = place_on_track(track, 0.0, track.lane_center(Lane::right), kmh_to_ms(opt.start_speed_kmh));
    Eigen::VectorXd obs = env.reset_to(start);
    std::vector<DemoRecord> lap{make_demo_record(r.log.round_count(), env.state(), TerminationKind::none, vp.dt)};
    int lap_seen = 0;
    bool failed = false;
    for (long k = 0; k < lap_cap * opt.rounds; ++k) {
      obs = env.step(policy.act(obs));
      const SimState& s = env.state();
      if (env.termination() != TerminationKind::none) {
        ++r.terminations[to_string(env.termination())];
        failed = true;
        break;
      }
      if (s.lap_count > lap_seen) {
        for (auto& rec : lap) r.log.records.push_back(rec);
        lap.clear();
        lap_seen = s.lap_count;
        consecutive = 0;
        if (r.log.round_count() >= opt.rounds) break;
      }
      if (lap.size() > static_cast<std::size_t>(lap_cap)) {
        ++r.terminations["lap_timeout"];
        failed = true;
        break;
      }
      lap.push_back(make_demo_record(r.log.round_count(), s, TerminationKind::none, vp.dt));
    }
    if (failed) {
      ++r.failures;
      if (++consecutive > opt.max_consecutive_failures) {
        std::string diag;
        for (const auto& [k, n] : r.terminations) diag += " " + k + "=" + std::to_string(n);
        throw ConfigurationError("rollout aborted after " + std::to_string(consecutive) +
                                 " consecutive failed episodes; terminations:" + diag);
      }
    }
  }
  // Times restart at zero in every round.
  double t0 = 0.0;
  int current = -1;
  for (auto& rec : r.log.records) {
    if (rec.round != current) {
      current = rec.round;
      t0 = rec.t;
    }
    rec.t -= t0;
  }
  return r;
}

struct SafetyStats {
  int episodes = 0;
  int completed = 0;
  int obstacles_encountered = 0;
  int collisions = 0;
  TerminationCounts terminations;

  double completion_rate() const { return episodes ? static_cast<double>(completed) / episodes : 0.0; }
  double collision_rate() const {
    return obstacles_encountered ? static_cast<double>(collisions) / obstacles_encountered : 0.0;
  }
};

struct SafetyOptions {
  int episodes = 20;
  int laps = 2;
  /// Reference-state starts (random arc-length and speed) when true,
  /// otherwise arc-length 0 at `start_speed_kmh`.
  bool reference_starts = true;
  double start_speed_kmh = 60.0;
};

/// Episodes of `laps` laps; counts completions, obstacles reached (passed or
/// hit) and collisions.
inline SafetyStats safety_run(const PolicyNets& nets, const Track& track, ActionMode mode, std::uint64_t seed,
                              const SafetyOptions& opt = {}) {
  if (opt.episodes < 1 || opt.laps < 1) throw ValidationError("episodes and laps must be >= 1");
  const VehicleParams vp;
  Policy policy(nets, mode, seed);
  std::mt19937_64 rng(seed ^ 0x5a17e5a17eULL);
  DrivingEnv env(track, vp);
  SafetyStats st;
  const double L = track.total_length();
  const long cap = opt.laps * (static_cast<long>(L / 0.5) + 1000);
  for (int e = 0; e < opt.episodes; ++e) {
    ++st.episodes;
    Eigen::VectorXd obs =
        opt.reference_starts
            ? env.reset(rng)
            : env.reset_to(place_on_track(track, 0.0, track.lane_center(Lane::right), kmh_to_ms(opt.start_speed_kmh)));
    const double p0 = env.state().progress;
    const double s0 = env.state().sigma;
    double reached = 0.0;  // furthest progress since start
    bool done = false;
    for (long k = 0; k < cap && !done; ++k) {
      obs = env.step(policy.act(obs));
      const SimState& s = env.state();
      reached = std::max(reached, s.progress - p0);
      if (env.termination() != TerminationKind::none) {
        ++st.terminations[to_string(env.termination())];
        if (env.termination() == TerminationKind::obstacle_collision) ++st.collisions;
        done = true;
      } else if (s.progress - p0 >= opt.laps * L) {
        ++st.completed;
        done = true;
      }
    }
    if (!done) ++st.terminations["timeout"];
    // Obstacles whose footprint the car's front reached along the way.
    for (const Obstacle& o : track.obstacles()) {
      const double first = wrap_positive(o.arc_length - o.half_along - s0, L);
      const double front = reached + 0.5 * vp.length;
      if (first <= front) st.obstacles_encountered += 1 + static_cast<int>(std::floor((front - first) / L));
    }
  }
  return st;
}

// ---------------------------------------------------------------------------
// Distribution comparison
// ---------------------------------------------------------------------------

struct Band {
  std::vector<double> mean;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<double> sd;  // predictive standard deviation
};

/// Posterior mean and 99% predictive band (latent variance plus noise).
inline Band predictive_band(const GpModel& m, const std::vector<double>& grid) {
  const Eigen::VectorXd g = Eigen::Map<const Eigen::VectorXd>(grid.data(), static_cast<Eigen::Index>(grid.size()));
  const auto p = m.posterior(g);
  Band b;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double sd = std::sqrt(p.variance[i] + m.noise_variance());
    b.mean.push_back(p.mean[i]);
    b.sd.push_back(sd);
    b.lower.push_back(p.mean[i] - kCi99 * sd);
    b.upper.push_back(p.mean[i] + kCi99 * sd);
  }
  return b;
}

struct VariableComparison {
  Band expert;
  Band agent;
  double mean_gap = 0.0;          // grid average of |agent mean - expert mean|
  double in_ci_fraction = 0.0;    // agent mean inside the expert band
  double ci_overlap = 0.0;        // grid average Jaccard overlap of the bands
  double expert_mean_sd = 0.0;
  double agent_mean_sd = 0.0;
};

inline VariableComparison compare_bands(const Band& expert, const Band& agent) {
  const std::size_t n = expert.mean.size();
  if (n == 0 || agent.mean.size() != n) throw ValidationError("bands must share a nonempty grid");
  VariableComparison c;
  c.expert = expert;
  c.agent = agent;
  int inside = 0;
  for (std::size_t i = 0; i < n; ++i) {
    c.mean_gap += std::abs(agent.mean[i] - expert.mean[i]);
    if (agent.mean[i] >= expert.lower[i] && agent.mean[i] <= expert.upper[i]) ++inside;
    const double inter = std::max(0.0, std::min(expert.upper[i], agent.upper[i]) - std::max(expert.lower[i], agent.lower[i]));
    const double uni = std::max(expert.upper[i], agent.upper[i]) - std::min(expert.lower[i], agent.lower[i]);
    c.ci_overlap += uni > 0.0 ? inter / uni : 1.0;
    c.expert_mean_sd += expert.sd[i];
    c.agent_mean_sd += agent.sd[i];
  }
  const auto dn = static_cast<double>(n);
  c.mean_gap /= dn;
  c.in_ci_fraction = inside / dn;
  c.ci_overlap /= dn;
  c.expert_mean_sd /= dn;
  c.agent_mean_sd /= dn;
  return c;
}

struct ComparisonReport {
  std::vector<double> grid;
  VariableComparison lateral;
  VariableComparison speed;
  std::optional<SafetyStats> safety;
};

inline ComparisonReport compare_models(const BehaviorModels& expert, const BehaviorModels& agent, double lap_length) {
  ComparisonReport r;
  r.grid = arc_grid(lap_length, kGridSpacing);
  r.lateral = compare_bands(predictive_band(expert.lateral, r.grid), predictive_band(agent.lateral, r.grid));
  r.speed = compare_bands(predictive_band(expert.speed, r.grid), predictive_band(agent.speed, r.grid));
  return r;
}

/// Fits agent GPs with the expert pipeline and compares on the 5 m grid.
inline ComparisonReport compare(const BehaviorModels& expert, const DemoLog& agent_log, double lap_length,
                                const FitOptions& opt = {}) {
  if (agent_log.records.empty()) throw ValidationError("agent log is empty");
  return compare_models(expert, fit_behavior(agent_log, opt), lap_length);
}

inline std::string format_report(const ComparisonReport& r, const std::string& title) {
  std::string out = title + "\n";
  char buf[256];
  for (const auto& [name, c] : {std::pair<const char*, const VariableComparison*>{"track position D [m]", &r.lateral},
                                {"speed V [km/h]", &r.speed}}) {
    std::snprintf(buf, sizeof buf,
                  "  %-22s mean gap %.3f  agent mean in expert CI %.3f  CI overlap %.3f  sd expert %.3f agent %.3f\n",
                  name, c->mean_gap, c->in_ci_fraction, c->ci_overlap, c->expert_mean_sd, c->agent_mean_sd);
    out += buf;
  }
  if (r.safety) {
    const SafetyStats& s = *r.safety;
    std::snprintf(buf, sizeof buf, "  episodes %d  completion %.3f  obstacles %d  collisions %d  collision rate %.4f\n",
                  s.episodes, s.completion_rate(), s.obstacles_encountered, s.collisions, s.collision_rate());
    out += buf;
    out += "  terminations:";
    if (s.terminations.empty()) out += " none";
    for (const auto& [k, n] : s.terminations) out += " " + k + "=" + std::to_string(n);
    out += "\n";
  }
  return out;
}

inline constexpr const char* kReportCsvHeader =
    "sigma,expert_D_mean,expert_D_lo,expert_D_hi,agent_D_mean,agent_D_lo,agent_D_hi,"
    "expert_V_mean,expert_V_lo,expert_V_hi,agent_V_mean,agent_V_lo,agent_V_hi";

inline std::string report_to_csv(const ComparisonReport& r) {
  std::string out = std::string(kReportCsvHeader) + "\n";
  for (std::size_t i = 0; i < r.grid.size(); ++i) {
    out += fmt_double(r.grid[i]);
    for (const Band* b : {&r.lateral.expert, &r.lateral.agent, &r.speed.expert, &r.speed.agent})
      out += "," + fmt_double(b->mean[i]) + "," + fmt_double(b->lower[i]) + "," + fmt_double(b->upper[i]);
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generalization
// ---------------------------------------------------------------------------

struct GeneralizationOptions {
  int rounds = 7;
  int safety_episodes = 10;
  int safety_laps = 1;
  ActionMode mode = ActionMode::mean_only;
  FitOptions fit;
};

struct RoadResult {
  RoadKind kind = RoadKind::alternating_50m;
  std::string track_id;
  SafetyStats safety;
  /// Present when the agent completed at least one lap.
  std::optional<ComparisonReport> comparison;
  std::string note;
};

/// Runs the policy on each generated road kind: safety statistics from
/// arc-length-0 starts, and a comparison against the scripted expert's GPs
/// on the same road when the agent manages whole laps.
inline std::vector<RoadResult> generalization_suite(const PolicyNets& nets, std::uint64_t seed,
                                                    const GeneralizationOptions& opt = {}) {
  std::vector<RoadResult> out;
  for (RoadKind kind : {RoadKind::alternating_50m, RoadKind::gaussian_spaced, RoadKind::gaussian_batched}) {
    RoadSpec spec;
    spec.kind = kind;
    spec.seed = seed;
    const Track road = generate_road(spec);
    RoadResult rr;
    rr.kind = kind;
    rr.track_id = road.id();
    SafetyOptions so;
    so.episodes = opt.safety_episodes;
    so.laps = opt.safety_laps;
    so.reference_starts = false;
    rr.safety = safety_run(nets, road, opt.mode, seed, so);
    try {
      RolloutOptions ro;
      ro.rounds = opt.rounds;
      const RolloutResult agent = rollout(nets, road, opt.mode, seed, ro);
      const DemoLog expert_log = collect_demos(road, opt.rounds, seed);
      ComparisonReport rep = compare(fit_behavior(expert_log, opt.fit), agent.log, road.total_length(), opt.fit);
      rep.safety = rr.safety;
      rr.comparison = rep;
    } catch (const ConfigurationError& e) {
      rr.note = e.what();
    }
    out.push_back(std::move(rr));
  }
  return out;
}

inline std::string format_generalization(const std::vector<RoadResult>& results) {
  std::string out = "road                      episodes completion obstacles collisions collision_rate\n";
  char buf[256];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%-25s %8d %10.3f %9d %10d %14.4f\n", r.track_id.c_str(), r.safety.episodes,
                  r.safety.completion_rate(), r.safety.obstacles_encountered, r.safety.collisions,
                  r.safety.collision_rate());
    out += buf;
  }
  for (const auto& r : results) {
    if (r.comparison) out += format_report(*r.comparison, r.track_id);
    else out += r.track_id + ": no comparison (" + r.note + ")\n";
  }
  return out;
}

}  // namespace imitdrive
