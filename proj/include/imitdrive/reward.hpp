#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "gp.hpp"
#include "sim.hpp"

namespace imitdrive {

enum class RewardMode { deterministic, stochastic };

struct RewardConfig {
  double c1 = 20.0;   // track position
  double c2 = 100.0;  // steering smoothness
  double c3 = 10.0;   // torque smoothness
  double termination_penalty = -100.0;
  RewardMode mode = RewardMode::deterministic;
};

/// A profile sampled on an arc-length grid spanning [0, lap_length].
struct GridSeries {
  std::vector<double> grid;
  std::vector<double> values;
};

/// Linear interpolation with sigma taken modulo the lap length.
inline double lookup(const GridSeries& series, double lap_length, double sigma) {
  if (series.grid.empty() || series.grid.size() != series.values.size())
    throw ValidationError("profile is empty or inconsistent");
  const double s = wrap_positive(sigma, lap_length);
  const auto& g = series.grid;
  auto it = std::upper_bound(g.begin(), g.end(), s);
  if (it == g.begin()) return series.values.front();
  if (it == g.end()) return series.values.back();
  const auto i = static_cast<std::size_t>(it - g.begin());
  const double w = (s - g[i - 1]) / (g[i] - g[i - 1]);
  if (w == 0.0) return series.values[i - 1];
  return series.values[i - 1] + w * (series.values[i] - series.values[i - 1]);
}

/// Expert mean profiles and sample banks (D in metres, V in km/h).
struct ExpertProfile {
  double lap_length = 0.0;
  GridSeries mean_lateral;
  GridSeries mean_speed;
  std::vector<GridSeries> lateral_bank;
  std::vector<GridSeries> speed_bank;
  int active = 0;

  std::size_t bank_size() const { return lateral_bank.size(); }

  /// Stochastic mode: pick the sample used for the whole next episode.
  void draw_active(std::mt19937_64& rng) {
    if (lateral_bank.empty() || lateral_bank.size() != speed_bank.size())
      throw ValidationError("sample banks are empty or of unequal size");
    std::uniform_int_distribution<int> pick(0, static_cast<int>(lateral_bank.size()) - 1);
    active = pick(rng);
  }
};

inline GridSeries series_from_sample(const TrajectorySample& s) { return {s.grid, s.values}; }

/// Mean profiles from the GP posteriors on `grid`, banks from the samples.
inline ExpertProfile make_profile(double lap_length, const GpModel& lateral, const GpModel& speed,
                                  const std::vector<double>& grid,
                                  const std::vector<TrajectorySample>& lateral_samples,
                                  const std::vector<TrajectorySample>& speed_samples) {
  ExpertProfile p;
  p.lap_length = lap_length;
  const Eigen::VectorXd g = Eigen::Map<const Eigen::VectorXd>(grid.data(), static_cast<Eigen::Index>(grid.size()));
  const auto md = lateral.posterior(g).mean;
  const auto mv = speed.posterior(g).mean;
  p.mean_lateral = {grid, std::vector<double>(md.data(), md.data() + md.size())};
  p.mean_speed = {grid, std::vector<double>(mv.data(), mv.data() + mv.size())};
  for (const auto& s : lateral_samples) p.lateral_bank.push_back(series_from_sample(s));
  for (const auto& s : speed_samples) p.speed_bank.push_back(series_from_sample(s));
  if (p.lateral_bank.size() != p.speed_bank.size()) throw ValidationError("sample banks must have equal size");
  return p;
}

/// Inputs of one reward evaluation.
struct RewardInput {
  double sigma = 0.0;
  double speed_kmh = 0.0;
  double lateral = 0.0;
  double steer = 0.0;       // command at t, [-1, 1]
  double prev_steer = 0.0;  // command at t-1
  double torque = 0.0;
  double prev_torque = 0.0;
  TerminationKind termination = TerminationKind::none;
};

inline RewardInput reward_input(const SimState& s, const Action& prev, TerminationKind term) {
  return {s.sigma, ms_to_kmh(s.speed), s.lateral, s.steer_cmd, prev.steering, s.torque, prev.torque, term};
}

/// (V_h - |V_h - V_a|) - c1 |D_h - D_a| - c2 |dpsi| - c3 |dtau|, or the
/// termination penalty.
inline double reward_from_targets(double v_target, double d_target, const RewardInput& in, const RewardConfig& cfg) {
  for (double v : {in.sigma, in.speed_kmh, in.lateral, in.steer, in.prev_steer, in.torque, in.prev_torque, v_target,
                   d_target})
    if (!std::isfinite(v)) throw NumericalError("non-finite reward input");
  if (in.termination != TerminationKind::none) return cfg.termination_penalty;
  return (v_target - std::abs(v_target - in.speed_kmh)) - cfg.c1 * std::abs(d_target - in.lateral) -
         cfg.c2 * std::abs(in.steer - in.prev_steer) - cfg.c3 * std::abs(in.torque - in.prev_torque);
}

inline double deterministic_reward(const RewardInput& in, const ExpertProfile& p, const RewardConfig& cfg) {
  return reward_from_targets(lookup(p.mean_speed, p.lap_length, in.sigma),
                             lookup(p.mean_lateral, p.lap_length, in.sigma), in, cfg);
}

/// Same form with sample `p.active` in place of the means.
inline double stochastic_reward(const RewardInput& in, const ExpertProfile& p, const RewardConfig& cfg) {
  if (p.lateral_bank.empty() || p.speed_bank.empty()) throw ValidationError("sample banks are empty");
  const auto j = static_cast<std::size_t>(p.active);
  if (j >= p.lateral_bank.size() || j >= p.speed_bank.size()) throw ValidationError("active sample out of range");
  return reward_from_targets(lookup(p.speed_bank[j], p.lap_length, in.sigma),
                             lookup(p.lateral_bank[j], p.lap_length, in.sigma), in, cfg);
}

inline double reward(const RewardInput& in, const ExpertProfile& p, const RewardConfig& cfg) {
  return cfg.mode == RewardMode::deterministic ? deterministic_reward(in, p, cfg) : stochastic_reward(in, p, cfg);
}

}  // namespace imitdrive
