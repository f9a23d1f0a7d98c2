#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "errors.hpp"
#include "geometry.hpp"
#include "nn.hpp"
#include "sim.hpp"

namespace imitdrive {

/// Three diagonal 2-d Gaussians over (steering, torque).
struct MdnDistribution {
  using Arr = std::array<double, kMixtureComponents>;
  Arr weight{};
  Arr mean_steer{};
  Arr mean_torque{};
  Arr var_steer{};
  Arr var_torque{};
};

/// Gradient of a scalar w.r.t. every distribution parameter and the action.
struct MdnGradient {
  MdnDistribution::Arr weight{};
  MdnDistribution::Arr mean_steer{};
  MdnDistribution::Arr mean_torque{};
  MdnDistribution::Arr var_steer{};
  MdnDistribution::Arr var_torque{};
  double steer = 0.0;
  double torque = 0.0;

  void add(const MdnGradient& o, double scale = 1.0) {
    for (int k = 0; k < kMixtureComponents; ++k) {
      weight[k] += scale * o.weight[k];
      mean_steer[k] += scale * o.mean_steer[k];
      mean_torque[k] += scale * o.mean_torque[k];
      var_steer[k] += scale * o.var_steer[k];
      var_torque[k] += scale * o.var_torque[k];
    }
    steer += scale * o.steer;
    torque += scale * o.torque;
  }
};

/// Actor rows: 0..2 steering means, 3..5 torque means, 6..8 steering
/// variances, 9..11 torque variances. Mixing rows: weights.
inline MdnDistribution mdn_from_outputs(const Eigen::Ref<const Eigen::VectorXd>& actor,
                                        const Eigen::Ref<const Eigen::VectorXd>& mixing) {
  constexpr int K = kMixtureComponents;
  if (actor.size() != 4 * K || mixing.size() != K) throw ValidationError("MDN head has the wrong size");
  MdnDistribution d;
  for (int k = 0; k < K; ++k) {
    d.weight[k] = mixing[k];
    d.mean_steer[k] = actor[k];
    d.mean_torque[k] = actor[K + k];
    d.var_steer[k] = actor[2 * K + k];
    d.var_torque[k] = actor[3 * K + k];
  }
#ifndef NDEBUG
  double sum = 0.0;
  for (int k = 0; k < K; ++k) {
    sum += d.weight[k];
    if (d.weight[k] < 0.0 || !(d.var_steer[k] > 0.0) || d.var_steer[k] > 1.0 / 16.0 || !(d.var_torque[k] > 0.0) ||
        d.var_torque[k] > 1.0 / 16.0)
      throw NumericalError("MDN parameters outside their ranges");
  }
  if (std::abs(sum - 1.0) > 1e-9) throw NumericalError("MDN weights are not on the simplex");
#endif
  return d;
}

/// Writes an MDN gradient into the actor/mixing output-gradient columns.
inline void scatter_gradient(const MdnGradient& g, Eigen::Ref<Eigen::VectorXd> d_actor,
                             Eigen::Ref<Eigen::VectorXd> d_mixing) {
  constexpr int K = kMixtureComponents;
  for (int k = 0; k < K; ++k) {
    d_mixing[k] = g.weight[k];
    d_actor[k] = g.mean_steer[k];
    d_actor[K + k] = g.mean_torque[k];
    d_actor[2 * K + k] = g.var_steer[k];
    d_actor[3 * K + k] = g.var_torque[k];
  }
}

inline double gaussian_log_density(double x, double mean, double var) {
  const double e = x - mean;
  return -0.5 * std::log(kTwoPi * var) - 0.5 * e * e / var;
}

/// log sum_k alpha_k N(a; mu_k, diag(var_k)); fills `grad` when given.
inline double mdn_log_prob(const MdnDistribution& d, const Action& a, MdnGradient* grad = nullptr) {
  if (!std::isfinite(a.steering) || !std::isfinite(a.torque)) throw NumericalError("non-finite action");
  constexpr int K = kMixtureComponents;
  std::array<double, K> l{};
  double top = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < K; ++k) {
    l[k] = (d.weight[k] > 0.0 ? std::log(d.weight[k]) : -std::numeric_limits<double>::infinity()) +
           gaussian_log_density(a.steering, d.mean_steer[k], d.var_steer[k]) +
           gaussian_log_density(a.torque, d.mean_torque[k], d.var_torque[k]);
    top = std::max(top, l[k]);
  }
  double sum = 0.0;
  for (int k = 0; k < K; ++k) sum += std::exp(l[k] - top);
  const double lse = top + std::log(sum);
  if (grad) {
    *grad = MdnGradient{};
    for (int k = 0; k < K; ++k) {
      const double r = std::exp(l[k] - lse);
      const double es = a.steering - d.mean_steer[k];
      const double et = a.torque - d.mean_torque[k];
      grad->weight[k] = d.weight[k] > 0.0 ? r / d.weight[k] : 0.0;
      grad->mean_steer[k] = r * es / d.var_steer[k];
      grad->mean_torque[k] = r * et / d.var_torque[k];
      grad->var_steer[k] = r * 0.5 * (es * es / (d.var_steer[k] * d.var_steer[k]) - 1.0 / d.var_steer[k]);
      grad->var_torque[k] = r * 0.5 * (et * et / (d.var_torque[k] * d.var_torque[k]) - 1.0 / d.var_torque[k]);
      grad->steer -= r * es / d.var_steer[k];
      grad->torque -= r * et / d.var_torque[k];
    }
  }
  return lse;
}

inline int dominant_component(const MdnDistribution& d) {
  return static_cast<int>(std::max_element(d.weight.begin(), d.weight.end()) - d.weight.begin());
}

/// Mean of the highest-weight component.
inline Action mdn_dominant_mean(const MdnDistribution& d) {
  const int k = dominant_component(d);
  return {d.mean_steer[k], d.mean_torque[k]};
}

/// Unclamped draw: component from the weights, then one Gaussian per axis.
inline Action mdn_sample(const MdnDistribution& d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  const double pick = u(rng);
  int k = kMixtureComponents - 1;
  double acc = 0.0;
  for (int i = 0; i < kMixtureComponents; ++i) {
    acc += d.weight[i];
    if (pick < acc) {
      k = i;
      break;
    }
  }
  while (k > 0 && d.weight[k] <= 0.0) --k;
  const double zs = n(rng);
  const double zt = n(rng);
  return {d.mean_steer[k] + std::sqrt(d.var_steer[k]) * zs, d.mean_torque[k] + std::sqrt(d.var_torque[k]) * zt};
}

inline Action clamp_action(const Action& a) {
  return {std::clamp(a.steering, -1.0, 1.0), std::clamp(a.torque, -1.0, 1.0)};
}

/// Mixture mean (steering, torque).
inline Action mdn_mean(const MdnDistribution& d) {
  Action m;
  for (int k = 0; k < kMixtureComponents; ++k) {
    m.steering += d.weight[k] * d.mean_steer[k];
    m.torque += d.weight[k] * d.mean_torque[k];
  }
  return m;
}

inline constexpr int kEntropyDraws = 256;
inline constexpr std::uint64_t kEntropySeed = 0x0e7a0b5eedULL;

/// Fixed standard-normal pairs (2 x n) reused by every entropy estimate.
inline Eigen::Matrix2Xd entropy_draws(int n = kEntropyDraws, std::uint64_t seed = kEntropySeed) {
  if (n <= 0) throw ValidationError("entropy draw count must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::Matrix2Xd e(2, n);
  for (int i = 0; i < n; ++i) {
    e(0, i) = z(rng);
    e(1, i) = z(rng);
  }
  return e;
}

/// H = -sum_k alpha_k mean_i log p(mu_k + sqrt(var_k) * eps_i), with the
/// draws pushed through each component. Differentiable in all parameters.
inline double mdn_entropy(const MdnDistribution& d, const Eigen::Matrix2Xd& eps, MdnGradient* grad = nullptr) {
  const auto n = static_cast<double>(eps.cols());
  double h = 0.0;
  if (grad) *grad = MdnGradient{};
  MdnGradient g;
  for (int k = 0; k < kMixtureComponents; ++k) {
    const double ss = std::sqrt(d.var_steer[k]);
    const double st = std::sqrt(d.var_torque[k]);
    double mean_lp = 0.0;
    for (Eigen::Index i = 0; i < eps.cols(); ++i) {
      const Action a{d.mean_steer[k] + ss * eps(0, i), d.mean_torque[k] + st * eps(1, i)};
      const double lp = mdn_log_prob(d, a, grad ? &g : nullptr);
      mean_lp += lp;
      if (grad) {
        const double w = -d.weight[k] / n;
        grad->add(g, w);
        grad->mean_steer[k] += w * g.steer;
        grad->mean_torque[k] += w * g.torque;
        grad->var_steer[k] += w * g.steer * eps(0, i) / (2.0 * ss);
        grad->var_torque[k] += w * g.torque * eps(1, i) / (2.0 * st);
      }
    }
    mean_lp /= n;
    h -= d.weight[k] * mean_lp;
    if (grad) grad->weight[k] -= mean_lp;
  }
  if (grad) grad->steer = grad->torque = 0.0;
  return h;
}

}  // namespace imitdrive
