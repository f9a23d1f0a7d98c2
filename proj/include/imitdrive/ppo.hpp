#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "io.hpp"
#include "mdn.hpp"
#include "nn.hpp"
#include "reward.hpp"
#include "sim.hpp"

namespace imitdrive {

struct PpoConfig {
  double gamma = 0.98;
  double lambda = 0.95;
  double clip = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.005;
  int epochs = 5;
  double learning_rate = 3e-4;
  int batch_size = 512;
  int minibatch_size = 256;
  bool normalize_advantages = true;
  /// Rewards are multiplied by this before GAE; keeps critic targets O(10).
  double reward_scale = 0.01;
  int entropy_draws = kEntropyDraws;

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("gamma must lie in (0, 1]");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("lambda must lie in [0, 1]");
    if (!(clip > 0.0)) throw ValidationError("clip must be positive");
    if (value_coef < 0.0 || entropy_coef < 0.0) throw ValidationError("loss coefficients must be non-negative");
    if (epochs < 1) throw ValidationError("epochs must be at least 1");
    if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
    if (minibatch_size < 1 || batch_size < minibatch_size || batch_size % minibatch_size != 0)
      throw ValidationError("batch size must be a positive multiple of the minibatch size");
    if (!(reward_scale > 0.0)) throw ValidationError("reward scale must be positive");
    if (entropy_draws < 1) throw ValidationError("entropy draws must be positive");
  }
};

// ---------------------------------------------------------------------------
// Advantages
// ---------------------------------------------------------------------------

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// General form: next_values[t] is V(s_{t+1}); terminal[t] zeroes the
/// bootstrap; boundary[t] (terminal or truncated) stops the recursion.
inline GaeResult compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                             const std::vector<double>& next_values, const std::vector<bool>& terminal,
                             const std::vector<bool>& boundary, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || next_values.size() != n || terminal.size() != n || boundary.size() != n)
    throw ValidationError("GAE inputs must have equal lengths");
  GaeResult r;
  r.advantages.assign(n, 0.0);
  r.returns.assign(n, 0.0);
  double next_adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double keep = terminal[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * next_values[i] * keep - values[i];
    const double carry = boundary[i] ? 0.0 : next_adv;
    r.advantages[i] = delta + gamma * lambda * carry;
    r.returns[i] = r.advantages[i] + values[i];
    next_adv = r.advantages[i];
  }
  return r;
}

/// Single trajectory: V_{t+1} from `values`, `bootstrap` after the last step.
inline GaeResult compute_gae(const std::vector<double>& rewards, const std::vector<double>& values, double bootstrap,
                             const std::vector<bool>& done, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || done.size() != n) throw ValidationError("GAE inputs must have equal lengths");
  std::vector<double> next(n);
  for (std::size_t i = 0; i < n; ++i) next[i] = i + 1 < n ? values[i + 1] : bootstrap;
  return compute_gae(rewards, values, next, done, done, gamma, lambda);
}

inline void normalize(std::vector<double>& v) {
  if (v.size() < 2) return;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(v.size()));
  for (double& x : v) x = (x - mean) / (sd + 1e-8);
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

struct PpoBatch {
  Eigen::MatrixXd observations;  // obs_dim x m
  Eigen::Matrix2Xd actions;      // unclamped draws
  Eigen::VectorXd old_log_probs;
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;

  Eigen::Index size() const { return observations.cols(); }
};

struct PpoLoss {
  double total = 0.0;
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  DenseNet::Gradients actor, critic, mixing;
};

/// Per-sample clipped surrogate min(rho A, clip(rho, 1-eps, 1+eps) A).
inline double clipped_surrogate(double ratio, double advantage, double clip) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - clip, 1.0 + clip) * advantage);
}

/// L = -E[clipped surrogate] + c1 E[(V - R)^2] - c2 E[H]; gradients for all
/// three networks when `with_grad`.
inline PpoLoss ppo_loss(const PolicyNets& nets, const PpoBatch& b, const PpoConfig& cfg, const Eigen::Matrix2Xd& eps,
                        bool with_grad = true) {
  const Eigen::Index m = b.size();
  if (m == 0) throw ValidationError("empty PPO batch");
  const auto ta = nets.actor.forward(b.observations);
  const auto tm = nets.mixing.forward(b.observations);
  const auto tc = nets.critic.forward(b.observations);
  Eigen::MatrixXd d_actor = Eigen::MatrixXd::Zero(ta.output.rows(), m);
  Eigen::MatrixXd d_mixing = Eigen::MatrixXd::Zero(tm.output.rows(), m);
  Eigen::MatrixXd d_critic(1, m);
  const double inv_m = 1.0 / static_cast<double>(m);
  PpoLoss out;
  MdnGradient g_lp, g_h;
  int clipped = 0;
  for (Eigen::Index j = 0; j < m; ++j) {
    const MdnDistribution d = mdn_from_outputs(ta.output.col(j), tm.output.col(j));
    const Action a{b.actions(0, j), b.actions(1, j)};
    const double lp = mdn_log_prob(d, a, with_grad ? &g_lp : nullptr);
    const double ratio = std::exp(lp - b.old_log_probs[j]);
    if (!std::isfinite(ratio)) throw NumericalError("non-finite probability ratio at batch index " + std::to_string(j));
    const double adv = b.advantages[j];
    const double unclipped = ratio * adv;
    const double clipped_term = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv;
    const bool use_unclipped = unclipped <= clipped_term;
    if (!use_unclipped) ++clipped;
    out.policy -= std::min(unclipped, clipped_term) * inv_m;
    const double h = mdn_entropy(d, eps, with_grad ? &g_h : nullptr);
    out.entropy += h * inv_m;
    const double v = tc.output(0, j);
    const double err = v - b.returns[j];
    out.value += err * err * inv_m;
    if (with_grad) {
      MdnGradient g;
      if (use_unclipped) g.add(g_lp, -ratio * adv * inv_m);
      g.add(g_h, -cfg.entropy_coef * inv_m);
      scatter_gradient(g, d_actor.col(j), d_mixing.col(j));
      d_critic(0, j) = cfg.value_coef * 2.0 * err * inv_m;
    }
  }
  out.total = out.policy + cfg.value_coef * out.value - cfg.entropy_coef * out.entropy;
  out.clip_fraction = clipped * inv_m;
  if (!std::isfinite(out.total)) throw NumericalError("non-finite PPO loss");
  if (with_grad) {
    out.actor = nets.actor.backward(ta, d_actor);
    out.mixing = nets.mixing.backward(tm, d_mixing);
    out.critic = nets.critic.backward(tc, d_critic);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dynamic batch size
// ---------------------------------------------------------------------------

class BatchScheduler {
 public:
  BatchScheduler(int batch_size = 512, int minibatch_size = 256) : b_(batch_size), mb_(minibatch_size) {
    if (mb_ < 1 || b_ < mb_ || b_ % mb_ != 0)
      throw ValidationError("batch size must be a positive multiple of the minibatch size");
  }

  int batch_size() const { return b_; }
  int minibatch_size() const { return mb_; }
  long max_length() const { return max_length_; }

  /// Update trigger: memory holds a multiple of B transitions, or two rounds
  /// were completed.
  bool should_update(long memory_steps, bool completed_rounds) const {
    return completed_rounds || (memory_steps > 0 && memory_steps % b_ == 0);
  }

  /// Records an episode step count; grows B to twice the longest episode,
  /// rounded down to a multiple of MB.
  void observe_step(long step) {
    if (step < 1) throw ValidationError("step must be at least 1");
    if (step > max_length_) {
      max_length_ = step;
      const long rem = (2 * max_length_) % mb_;
      b_ = static_cast<int>(std::max<long>(b_, 2 * max_length_ - rem));
    }
  }

 private:
  int b_;
  int mb_;
  long max_length_ = 0;
};

// ---------------------------------------------------------------------------
// Environments
// ---------------------------------------------------------------------------

struct EnvStep {
  Eigen::VectorXd observation;
  double reward = 0.0;
  bool terminal = false;          // entered the termination set
  bool completed_rounds = false;  // finished the required laps
  TerminationKind termination = TerminationKind::none;
};

class RlEnvironment {
 public:
  virtual ~RlEnvironment() = default;
  virtual int observation_size() const = 0;
  virtual Eigen::VectorXd reset(std::mt19937_64& rng) = 0;
  virtual EnvStep step(const Action& a) = 0;
};

/// Driving simulator with the imitation reward; an episode ends on
/// termination or after `laps` completed laps.
class DrivingTask : public RlEnvironment {
 public:
  DrivingTask(const Track& track, ExpertProfile profile, RewardConfig reward, int laps = 2)
      : env_(track), profile_(std::move(profile)), reward_(reward), laps_(laps) {
    if (laps < 1) throw ValidationError("laps must be at least 1");
    if (std::abs(profile_.lap_length - track.total_length()) > 1e-6 * track.total_length())
      throw ValidationError("expert profile lap length does not match the track");
  }

  int observation_size() const override { return kObservationSize; }

  Eigen::VectorXd reset(std::mt19937_64& rng) override {
    Eigen::VectorXd obs = env_.reset(rng);
    if (reward_.mode == RewardMode::stochastic) profile_.draw_active(rng);
    prev_ = {env_.state().steer_cmd, env_.state().torque};
    start_progress_ = env_.state().progress;
    return obs;
  }

  EnvStep step(const Action& a) override {
    EnvStep r;
    r.observation = env_.step(a);
    const SimState& s = env_.state();
    r.termination = env_.termination();
    r.terminal = r.termination != TerminationKind::none;
    r.reward = imitdrive::reward(reward_input(s, prev_, r.termination), profile_, reward_);
    r.completed_rounds =
        !r.terminal && s.progress - start_progress_ >= laps_ * env_.track().total_length();
    prev_ = {s.steer_cmd, s.torque};
    return r;
  }

  const DrivingEnv& env() const { return env_; }
  const ExpertProfile& profile() const { return profile_; }

 private:
  DrivingEnv env_;
  ExpertProfile profile_;
  RewardConfig reward_;
  int laps_;
  Action prev_;
  double start_progress_ = 0.0;
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct UpdateMetrics {
  int update = 0;
  long steps = 0;
  int batch_size = 0;
  double mean_return = 0.0;
  double mean_ep_len = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  int episodes = 0;
  int completed = 0;
};

inline constexpr const char* kMetricsHeader = "update,steps,B,mean_return,mean_ep_len,policy_loss,value_loss,entropy";

inline std::string metrics_row(const UpdateMetrics& m) {
  return std::to_string(m.update) + "," + std::to_string(m.steps) + "," + std::to_string(m.batch_size) + "," +
         fmt_double(m.mean_return) + "," + fmt_double(m.mean_ep_len) + "," + fmt_double(m.policy_loss) + "," +
         fmt_double(m.value_loss) + "," + fmt_double(m.entropy);
}

inline std::string metrics_to_csv(const std::vector<UpdateMetrics>& ms) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& m : ms) out += metrics_row(m) + "\n";
  return out;
}

struct TrainOptions {
  long total_steps = 500000;
  std::uint64_t seed = 0;
  /// Safety cap on a single episode; reaching it truncates with bootstrap.
  long max_episode_steps = 100000;
  /// Called after every update; returning false stops training.
  std::function<bool(const UpdateMetrics&, const PolicyNets&)> on_update;
};

struct TrainResult {
  std::vector<UpdateMetrics> metrics;
  long steps = 0;
  int final_batch_size = 0;
};

class TrainingDiverged : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

namespace detail {

struct Memory {
  std::vector<Eigen::VectorXd> obs;
  std::vector<Action> actions;
  std::vector<double> log_probs, rewards, values, next_values;
  std::vector<bool> terminal, boundary;

  std::size_t size() const { return obs.size(); }
  void clear() { *this = Memory{}; }
};

struct PolicyOutput {
  MdnDistribution dist;
  double value = 0.0;
};

inline PolicyOutput evaluate_policy(const PolicyNets& nets, const Eigen::VectorXd& obs) {
  const Eigen::MatrixXd a = nets.actor.predict(obs);
  const Eigen::MatrixXd m = nets.mixing.predict(obs);
  const Eigen::MatrixXd v = nets.critic.predict(obs);
  return {mdn_from_outputs(a.col(0), m.col(0)), v(0, 0)};
}

}  // namespace detail

/// One PPO update over the collected memory: GAE, then `epochs` passes of
/// shuffled minibatches with a joint Adam step per minibatch.
inline void ppo_update(PolicyNets& nets, Adam& adam, const detail::Memory& mem, const PpoConfig& cfg, int minibatch,
                       const Eigen::Matrix2Xd& eps, std::mt19937_64& rng, UpdateMetrics& metrics) {
  GaeResult gae =
      compute_gae(mem.rewards, mem.values, mem.next_values, mem.terminal, mem.boundary, cfg.gamma, cfg.lambda);
  if (cfg.normalize_advantages) normalize(gae.advantages);
  const auto n = static_cast<Eigen::Index>(mem.size());
  const Eigen::Index obs_dim = mem.obs.front().size();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  double pl = 0.0, vl = 0.0, ent = 0.0;
  int count = 0;
  for (int e = 0; e < cfg.epochs; ++e) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (Eigen::Index start = 0; start < n; start += minibatch) {
      const Eigen::Index m = std::min<Eigen::Index>(minibatch, n - start);
      PpoBatch b;
      b.observations.resize(obs_dim, m);
      b.actions.resize(2, m);
      b.old_log_probs.resize(m);
      b.advantages.resize(m);
      b.returns.resize(m);
      for (Eigen::Index j = 0; j < m; ++j) {
        const auto i = static_cast<std::size_t>(idx[static_cast<std::size_t>(start + j)]);
        b.observations.col(j) = mem.obs[i];
        b.actions(0, j) = mem.actions[i].steering;
        b.actions(1, j) = mem.actions[i].torque;
        b.old_log_probs[j] = mem.log_probs[i];
        b.advantages[j] = gae.advantages[i];
        b.returns[j] = gae.returns[i];
      }
      PpoLoss loss = ppo_loss(nets, b, cfg, eps, true);
      adam.step({&nets.actor, &nets.critic, &nets.mixing}, {loss.actor, loss.critic, loss.mixing});
      pl += loss.policy;
      vl += loss.value;
      ent += loss.entropy;
      ++count;
    }
  }
  metrics.policy_loss = pl / count;
  metrics.value_loss = vl / count;
  metrics.entropy = ent / count;
}

/// PPO with dynamic batch sizing. Episodes start from reference states; the
/// environment draws the per-episode expert sample in stochastic mode.
inline TrainResult train(PolicyNets& nets, RlEnvironment& env, const PpoConfig& cfg, const TrainOptions& opt) {
  cfg.validate();
  if (nets.actor.input_dim() != env.observation_size())
    throw ValidationError("network input width " + std::to_string(nets.actor.input_dim()) +
                          " does not match observation size " + std::to_string(env.observation_size()));
  std::mt19937_64 rng(opt.seed);
  std::mt19937_64 env_rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
  std::mt19937_64 shuffle_rng(opt.seed ^ 0xc2b2ae3d27d4eb4fULL);
  const Eigen::Matrix2Xd eps = entropy_draws(cfg.entropy_draws);
  Adam adam(AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});
  BatchScheduler sched(cfg.batch_size, cfg.minibatch_size);
  TrainResult result;
  detail::Memory mem;

  Eigen::VectorXd obs = env.reset(env_rng);
  long ep_step = 0;
  double ep_return = 0.0;
  std::vector<double> ep_returns, ep_lengths;
  int completed = 0;

  while (result.steps < opt.total_steps) {
    const detail::PolicyOutput po = detail::evaluate_policy(nets, obs);
    const Action raw = mdn_sample(po.dist, rng);
    const double lp = mdn_log_prob(po.dist, raw);
    const EnvStep st = env.step(clamp_action(raw));
    ++ep_step;
    ++result.steps;
    ep_return += st.reward;

    mem.obs.push_back(obs);
    mem.actions.push_back(raw);
    mem.log_probs.push_back(lp);
    mem.rewards.push_back(st.reward * cfg.reward_scale);
    mem.values.push_back(po.value);
    mem.terminal.push_back(st.terminal);
    mem.next_values.push_back(0.0);
    mem.boundary.push_back(false);
    if (mem.size() >= 2 && !mem.boundary[mem.size() - 2]) mem.next_values[mem.size() - 2] = po.value;

    const bool update = sched.should_update(static_cast<long>(mem.size()), st.completed_rounds);
    if (!update) sched.observe_step(ep_step);
    if (st.completed_rounds) ++completed;
    const bool episode_over = st.terminal || st.completed_rounds || update || ep_step >= opt.max_episode_steps;
    if (episode_over) {
      mem.boundary.back() = true;
      if (!st.terminal) mem.next_values.back() = detail::evaluate_policy(nets, st.observation).value;
      ep_returns.push_back(ep_return);
      ep_lengths.push_back(static_cast<double>(ep_step));
    }

    if (update) {
      UpdateMetrics m;
      m.update = static_cast<int>(result.metrics.size()) + 1;
      m.steps = result.steps;
      m.batch_size = sched.batch_size();
      m.episodes = static_cast<int>(ep_returns.size());
      m.completed = completed;
      m.mean_return = std::accumulate(ep_returns.begin(), ep_returns.end(), 0.0) / m.episodes;
      m.mean_ep_len = std::accumulate(ep_lengths.begin(), ep_lengths.end(), 0.0) / m.episodes;
      const PolicyNets last_good = nets;
      try {
        ppo_update(nets, adam, mem, cfg, sched.minibatch_size(), eps, shuffle_rng, m);
      } catch (const NumericalError& e) {
        nets = last_good;
        throw TrainingDiverged(std::string("training diverged at update ") + std::to_string(m.update) + ": " +
                               e.what());
      }
      result.metrics.push_back(m);
      mem.clear();
      ep_returns.clear();
      ep_lengths.clear();
      completed = 0;
      if (opt.on_update && !opt.on_update(m, nets)) break;
    }
    if (episode_over) {
      obs = env.reset(env_rng);
      ep_step = 0;
      ep_return = 0.0;
    } else {
      obs = st.observation;
    }
  }
  result.final_batch_size = sched.batch_size();
  return result;
}

}  // namespace imitdrive
