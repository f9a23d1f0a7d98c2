#pragma once

#include <cmath>
#include <cstdlib>
#include <string>

#include <json.hpp>

#include "errors.hpp"
#include "eval.hpp"
#include "expert.hpp"
#include "gp.hpp"
#include "io.hpp"
#include "ppo.hpp"
#include "reward.hpp"
#include "sim.hpp"
#include "track.hpp"

namespace imitdrive {

/// Every tunable constant of the pipeline. Missing keys keep their defaults;
/// unknown keys are rejected.
struct Config {
  std::string track = "desk";  // desk | training | path to a track file
  VehicleParams vehicle;
  ExpertParams expert;
  int demo_rounds = 8;
  FitOptions fit;
  double grid_spacing = kGridSpacing;
  int samples = kSampleCount;
  SampleOptions sampling;
  RewardConfig reward;
  int hidden = 600;
  HeadInit head;
  PpoConfig ppo;
  long total_steps = 500000;
  int checkpoint_every = 10;
  int eval_rounds = 7;
  ActionMode eval_mode = ActionMode::mean_only;
  int eval_episodes = 20;
};

/// Environment variable naming a config file used when --config is absent.
inline constexpr const char* kConfigEnvVar = "IMITDRIVE_CONFIG";

namespace detail {

template <typename T>
void take(const nlohmann::json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

inline void reject_unknown(const nlohmann::json& obj, std::initializer_list<const char*> keys, const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw ValidationError("unknown config key '" + where + it.key() + "'");
  }
}

inline const nlohmann::json& section(const nlohmann::json& j, const char* key) {
  static const nlohmann::json empty = nlohmann::json::object();
  if (!j.contains(key)) return empty;
  if (!j.at(key).is_object()) throw ValidationError(std::string("config section '") + key + "' must be an object");
  return j.at(key);
}

}  // namespace detail

inline Config config_from_json(const nlohmann::json& j) {
  using detail::take;
  Config c;
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  try {
    detail::reject_unknown(j, {"track", "vehicle", "expert", "gp", "reward", "network", "ppo", "train", "eval"}, "");
    take(j, "track", c.track);

    const auto& v = detail::section(j, "vehicle");
    detail::reject_unknown(v, {"wheelbase", "steer_time_constant", "max_steer_deg", "max_accel", "max_brake",
                               "max_speed_kmh", "length", "width", "dt", "substeps"},
                           "vehicle.");
    take(v, "wheelbase", c.vehicle.wheelbase);
    take(v, "steer_time_constant", c.vehicle.steer_time_constant);
    if (v.contains("max_steer_deg")) c.vehicle.max_steer = deg_to_rad(v.at("max_steer_deg").get<double>());
    take(v, "max_accel", c.vehicle.max_accel);
    take(v, "max_brake", c.vehicle.max_brake);
    if (v.contains("max_speed_kmh")) c.vehicle.max_speed = kmh_to_ms(v.at("max_speed_kmh").get<double>());
    take(v, "length", c.vehicle.length);
    take(v, "width", c.vehicle.width);
    take(v, "dt", c.vehicle.dt);
    take(v, "substeps", c.vehicle.substeps);

    const auto& e = detail::section(j, "expert");
    detail::reject_unknown(e, {"rounds", "ramp_length", "clearance_before", "return_after", "lateral_accel",
                               "avoid_speed_factor", "ou_theta", "ou_sigma_lateral", "ou_sigma_speed_kmh"},
                           "expert.");
    take(e, "rounds", c.demo_rounds);
    take(e, "ramp_length", c.expert.ramp_length);
    take(e, "clearance_before", c.expert.clearance_before);
    take(e, "return_after", c.expert.return_after);
    take(e, "lateral_accel", c.expert.lateral_accel);
    take(e, "avoid_speed_factor", c.expert.avoid_speed_factor);
    take(e, "ou_theta", c.expert.ou_theta);
    take(e, "ou_sigma_lateral", c.expert.ou_sigma_lateral);
    take(e, "ou_sigma_speed_kmh", c.expert.ou_sigma_speed_kmh);

    const auto& g = detail::section(j, "gp");
    detail::reject_unknown(g, {"max_iterations", "tolerance", "max_points", "max_search_points", "grid_spacing",
                               "samples", "sample_noise", "max_attempts"},
                           "gp.");
    take(g, "max_iterations", c.fit.max_iterations);
    take(g, "tolerance", c.fit.tolerance);
    take(g, "max_points", c.fit.max_points);
    take(g, "max_search_points", c.fit.max_search_points);
    take(g, "grid_spacing", c.grid_spacing);
    take(g, "samples", c.samples);
    if (g.contains("sample_noise")) {
      const std::string s = g.at("sample_noise").get<std::string>();
      if (s == "correlated") c.sampling.noise = SampleNoise::correlated;
      else if (s == "white") c.sampling.noise = SampleNoise::white;
      else throw ValidationError("gp.sample_noise must be 'correlated' or 'white'");
    }
    take(g, "max_attempts", c.sampling.max_attempts);

    const auto& r = detail::section(j, "reward");
    detail::reject_unknown(r, {"c1", "c2", "c3", "termination_penalty", "mode"}, "reward.");
    take(r, "c1", c.reward.c1);
    take(r, "c2", c.reward.c2);
    take(r, "c3", c.reward.c3);
    take(r, "termination_penalty", c.reward.termination_penalty);
    if (r.contains("mode")) {
      const std::string m = r.at("mode").get<std::string>();
      if (m == "deterministic") c.reward.mode = RewardMode::deterministic;
      else if (m == "stochastic") c.reward.mode = RewardMode::stochastic;
      else throw ValidationError("reward.mode must be 'deterministic' or 'stochastic'");
    }

    const auto& n = detail::section(j, "network");
    detail::reject_unknown(n, {"hidden", "output_gain", "variance_bias"}, "network.");
    take(n, "hidden", c.hidden);
    take(n, "output_gain", c.head.output_gain);
    take(n, "variance_bias", c.head.variance_bias);

    const auto& p = detail::section(j, "ppo");
    detail::reject_unknown(p, {"gamma", "lambda", "clip", "value_coef", "entropy_coef", "epochs", "learning_rate",
                               "batch_size", "minibatch_size", "normalize_advantages", "reward_scale",
                               "entropy_draws"},
                           "ppo.");
    take(p, "gamma", c.ppo.gamma);
    take(p, "lambda", c.ppo.lambda);
    take(p, "clip", c.ppo.clip);
    take(p, "value_coef", c.ppo.value_coef);
    take(p, "entropy_coef", c.ppo.entropy_coef);
    take(p, "epochs", c.ppo.epochs);
    take(p, "learning_rate", c.ppo.learning_rate);
    take(p, "batch_size", c.ppo.batch_size);
    take(p, "minibatch_size", c.ppo.minibatch_size);
    take(p, "normalize_advantages", c.ppo.normalize_advantages);
    take(p, "reward_scale", c.ppo.reward_scale);
    take(p, "entropy_draws", c.ppo.entropy_draws);

    const auto& t = detail::section(j, "train");
    detail::reject_unknown(t, {"total_steps", "checkpoint_every"}, "train.");
    take(t, "total_steps", c.total_steps);
    take(t, "checkpoint_every", c.checkpoint_every);

    const auto& ev = detail::section(j, "eval");
    detail::reject_unknown(ev, {"rounds", "mode", "episodes"}, "eval.");
    take(ev, "rounds", c.eval_rounds);
    if (ev.contains("mode")) c.eval_mode = action_mode_from_string(ev.at("mode").get<std::string>());
    take(ev, "episodes", c.eval_episodes);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  if (c.hidden < 1) throw ValidationError("network.hidden must be >= 1");
  if (!(c.head.output_gain > 0.0) || !std::isfinite(c.head.variance_bias))
    throw ValidationError("network.output_gain must be positive and variance_bias finite");
  if (c.demo_rounds < 1) throw ValidationError("expert.rounds must be >= 1");
  if (c.samples < 1) throw ValidationError("gp.samples must be >= 1");
  if (!(c.grid_spacing > 0.0)) throw ValidationError("gp.grid_spacing must be positive");
  if (c.reward.c1 < 0.0 || c.reward.c2 < 0.0 || c.reward.c3 < 0.0)
    throw ValidationError("reward weights must be non-negative");
  if (c.total_steps < 1) throw ValidationError("train.total_steps must be >= 1");
  if (c.eval_rounds < 1 || c.eval_episodes < 1) throw ValidationError("eval rounds and episodes must be >= 1");
  c.ppo.validate();
  return c;
}

inline Config load_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

/// Explicit path, else $IMITDRIVE_CONFIG, else built-in defaults.
inline Config resolve_config(const std::string& explicit_path) {
  if (!explicit_path.empty()) return load_config(explicit_path);
  if (const char* env = std::getenv(kConfigEnvVar); env && *env) return load_config(env);
  return Config{};
}

inline Track resolve_track(const std::string& spec) {
  if (spec == "desk") return build_desk_track();
  if (spec == "training") return build_training_track();
  return load_track(spec);
}

}  // namespace imitdrive
