#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "errors.hpp"
#include "geometry.hpp"
#include "io.hpp"

namespace imitdrive {

/// Rational quadratic kernel hyperparameters.
struct RqParams {
  double signal_variance = 1.0;
  double length_scale = 1.0;
  double alpha = 1.0;

  bool valid() const { return signal_variance > 0.0 && length_scale > 0.0 && alpha > 0.0; }
};

/// sf2 * (1 + r^2 / (2 alpha l^2))^(-alpha)
inline double rq_kernel(double x, double xp, const RqParams& p) {
  const double r = x - xp;
  return p.signal_variance * std::pow(1.0 + r * r / (2.0 * p.alpha * p.length_scale * p.length_scale), -p.alpha);
}

inline Eigen::MatrixXd rq_gram(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const RqParams& p) {
  Eigen::MatrixXd k(a.size(), b.size());
  for (Eigen::Index j = 0; j < b.size(); ++j)
    for (Eigen::Index i = 0; i < a.size(); ++i) k(i, j) = rq_kernel(a[i], b[j], p);
  return k;
}

/// Diagonal jitter relative to the signal variance.
inline constexpr double kJitter = 1e-8;
/// Two-sided 99% Gaussian multiplier.
inline constexpr double kCi99 = 2.576;

struct LmlResult {
  double value = 0.0;
  /// d LML / d log(signal_variance, length_scale, alpha)
  Eigen::Vector3d grad = Eigen::Vector3d::Zero();
};

/// Log marginal likelihood of zero-mean targets `y` under K + (noise +
/// jitter) I, with analytic gradients in log-parameter space.
inline LmlResult log_marginal_likelihood(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const RqParams& p,
                                         double noise_variance, bool with_grad = true) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd k = rq_gram(x, x, p);
  const double diag = noise_variance + kJitter * p.signal_variance;
  Eigen::MatrixXd c = k;
  c.diagonal().array() += diag;
  Eigen::LLT<Eigen::MatrixXd> llt(c);
  if (llt.info() != Eigen::Success) throw NumericalError("kernel matrix is not positive definite");
  const Eigen::VectorXd alpha = llt.solve(y);
  const Eigen::MatrixXd& l = llt.matrixLLT();
  LmlResult out;
  out.value = -0.5 * y.dot(alpha) - l.diagonal().array().log().sum() - 0.5 * static_cast<double>(n) * std::log(kTwoPi);
  if (!std::isfinite(out.value)) throw NumericalError("non-finite log marginal likelihood");
  if (!with_grad) return out;

  // W = alpha alpha^T - C^{-1};  dLML/dtheta = 0.5 * sum(W .* dC/dtheta)
  Eigen::MatrixXd w = llt.solve(Eigen::MatrixXd::Identity(n, n));
  w = alpha * alpha.transpose() - w;
  const double l2 = p.length_scale * p.length_scale;
  double g_sf = 0.0, g_l = 0.0, g_a = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double r2 = (x[i] - x[j]) * (x[i] - x[j]);
      const double u = 1.0 + r2 / (2.0 * p.alpha * l2);
      const double kij = k(i, j);
      const double wij = w(i, j);
      g_sf += wij * kij;
      g_l += wij * kij * r2 / (l2 * u);
      g_a += wij * kij * (-p.alpha * std::log(u) + r2 / (2.0 * l2 * u));
    }
  }
  g_sf += w.diagonal().sum() * kJitter * p.signal_variance;
  out.grad = Eigen::Vector3d(0.5 * g_sf, 0.5 * g_l, 0.5 * g_a);
  return out;
}

/// Exact GP over arc-length with a constant prior mean and cached Cholesky
/// factor of K + (noise + jitter) I.
class GpModel {
 public:
  GpModel() = default;
  GpModel(Eigen::VectorXd x, Eigen::VectorXd y, RqParams kernel, double noise_variance,
          std::optional<double> prior_mean = std::nullopt)
      : x_(std::move(x)), y_(std::move(y)), kernel_(kernel), noise_variance_(noise_variance) {
    if (x_.size() != y_.size() || x_.size() < 1) throw ValidationError("GP needs matching, nonempty inputs");
    prior_mean_ = prior_mean ? *prior_mean : y_.mean();
    refactor();
  }

  const Eigen::VectorXd& inputs() const { return x_; }
  const Eigen::VectorXd& targets() const { return y_; }
  const RqParams& kernel() const { return kernel_; }
  double noise_variance() const { return noise_variance_; }
  double prior_mean() const { return prior_mean_; }

  void set_kernel(const RqParams& k) {
    kernel_ = k;
    refactor();
  }
  void set_noise_variance(double v) {
    noise_variance_ = v;
    refactor();
  }

  double log_marginal_likelihood() const {
    return imitdrive::log_marginal_likelihood(x_, centered(), kernel_, noise_variance_, false).value;
  }

  /// Posterior mean and latent variance (noise excluded).
  struct Prediction {
    Eigen::VectorXd mean;
    Eigen::VectorXd variance;
  };

  Prediction posterior(const Eigen::VectorXd& xs) const {
    const Eigen::MatrixXd ks = rq_gram(x_, xs, kernel_);
    Prediction p;
    p.mean = (ks.transpose() * alpha_).array() + prior_mean_;
    const Eigen::MatrixXd v = llt_.matrixL().solve(ks);
    p.variance = (kernel_.signal_variance - v.colwise().squaredNorm().transpose().array()).max(0.0);
    return p;
  }

  /// Latent posterior covariance on `xs`.
  Eigen::MatrixXd posterior_covariance(const Eigen::VectorXd& xs) const {
    const Eigen::MatrixXd ks = rq_gram(x_, xs, kernel_);
    const Eigen::MatrixXd v = llt_.matrixL().solve(ks);
    Eigen::MatrixXd cov = rq_gram(xs, xs, kernel_) - v.transpose() * v;
    return 0.5 * (cov + cov.transpose());
  }

 private:
  Eigen::VectorXd centered() const { return y_.array() - prior_mean_; }

  void refactor() {
    if (!kernel_.valid() || !(noise_variance_ > 0.0)) throw ValidationError("GP parameters must be positive");
    Eigen::MatrixXd c = rq_gram(x_, x_, kernel_);
    c.diagonal().array() += noise_variance_ + kJitter * kernel_.signal_variance;
    llt_.compute(c);
    if (llt_.info() != Eigen::Success) throw NumericalError("GP factorization failed");
    alpha_ = llt_.solve(centered());
  }

  Eigen::VectorXd x_, y_;
  RqParams kernel_;
  double noise_variance_ = 1e-6;
  double prior_mean_ = 0.0;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
};

/// At most `cap` points: one per non-empty equal-width arc-length bin (the
/// bin's middle point in sorted order). Deterministic.
inline std::vector<std::size_t> stratified_subsample(const std::vector<double>& x, std::size_t cap) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  if (x.size() <= cap) return idx;
  const double lo = x[idx.front()], hi = x[idx.back()];
  const double width = (hi - lo) / static_cast<double>(cap);
  std::vector<std::size_t> out;
  std::size_t i = 0;
  for (std::size_t b = 0; b < cap && i < idx.size(); ++b) {
    const double edge = (b + 1 == cap) ? INFINITY : lo + width * static_cast<double>(b + 1);
    const std::size_t begin = i;
    while (i < idx.size() && x[idx[i]] < edge) ++i;
    if (i > begin) out.push_back(idx[begin + (i - begin) / 2]);
  }
  return out;
}

struct FitOptions {
  /// Fixed during hyperparameter search; tune_noise sets the final value.
  double noise_variance = 1e-2;
  int max_iterations = 200;
  double tolerance = 1e-6;
  /// Cap on the training set kept in the model.
  std::size_t max_points = 2000;
  /// Cap on the subsample used for hyperparameter search.
  std::size_t max_search_points = 300;
  /// Initializations as (signal variance / var(y), length-scale / input span, alpha).
  std::vector<std::array<double, 3>> inits = {
      {1.0, 0.01, 1.0}, {1.0, 0.03, 0.5}, {1.0, 0.1, 2.0}, {0.5, 0.3, 1.0}, {2.0, 0.05, 5.0}};
};

struct FitReport {
  GpModel model;
  double lml = 0.0;                 // at the optimum, on the search subsample
  std::vector<double> init_lml;     // at each initialization
  std::vector<double> final_lml;    // after ascent from each initialization
  int iterations = 0;
};

/// Maximizes the log marginal likelihood over (sf2, l, alpha) by gradient
/// ascent (BFGS directions, backtracking) in log space from each
/// initialization, keeping the best.
inline FitReport fit(const std::vector<double>& xs, const std::vector<double>& ys, const FitOptions& opt = {}) {
  if (xs.size() != ys.size() || xs.size() < 2) throw ValidationError("GP fit needs >= 2 matching points");
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) throw ValidationError("GP inputs must be finite");
  if (!(opt.noise_variance > 0.0)) throw ValidationError("noise variance must be positive");

  auto gather = [&](const std::vector<std::size_t>& idx, Eigen::VectorXd& x, Eigen::VectorXd& y) {
    x.resize(static_cast<Eigen::Index>(idx.size()));
    y.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      x[static_cast<Eigen::Index>(i)] = xs[idx[i]];
      y[static_cast<Eigen::Index>(i)] = ys[idx[i]];
    }
  };
  Eigen::VectorXd x_model, y_model, x_search, y_search;
  gather(stratified_subsample(xs, opt.max_points), x_model, y_model);
  gather(stratified_subsample(xs, opt.max_search_points), x_search, y_search);

  const double mean = y_model.mean();
  const Eigen::VectorXd yc = y_search.array() - mean;
  const double var_y = std::max(1e-12, (y_model.array() - mean).square().mean());
  const double span = std::max(1e-9, x_model.maxCoeff() - x_model.minCoeff());

  const Eigen::Vector3d lo(std::log(var_y * 1e-6), std::log(span * 1e-4), std::log(1e-3));
  const Eigen::Vector3d hi(std::log(var_y * 1e4), std::log(span * 10.0), std::log(1e3));
  auto params_of = [](const Eigen::Vector3d& t) { return RqParams{std::exp(t[0]), std::exp(t[1]), std::exp(t[2])}; };

  FitReport report;
  double best = -INFINITY;
  Eigen::Vector3d best_theta = Eigen::Vector3d::Zero();
  auto eval = [&](const Eigen::Vector3d& t, LmlResult& out) {
    try {
      out = log_marginal_likelihood(x_search, yc, params_of(t), opt.noise_variance);
      return true;
    } catch (const NumericalError&) {
      return false;
    }
  };
  for (const auto& init : opt.inits) {
    Eigen::Vector3d theta(std::log(init[0] * var_y), std::log(init[1] * span), std::log(init[2]));
    theta = theta.cwiseMax(lo).cwiseMin(hi);
    LmlResult cur;
    if (!eval(theta, cur)) throw NumericalError("log marginal likelihood undefined at an initialization");
    report.init_lml.push_back(cur.value);
    // Quasi-Newton (BFGS) ascent with backtracking; steps capped at 2 in log space.
    Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
    for (int it = 0; it < opt.max_iterations; ++it) {
      ++report.iterations;
      Eigen::Vector3d dir = h * cur.grad;
      if (dir.dot(cur.grad) <= 0.0) {
        h.setIdentity();
        dir = cur.grad;
      }
      if (dir.norm() > 2.0) dir *= 2.0 / dir.norm();
      double t = 1.0;
      LmlResult next;
      Eigen::Vector3d cand;
      bool accepted = false;
      for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
        cand = (theta + t * dir).cwiseMax(lo).cwiseMin(hi);
        if (eval(cand, next) && next.value >= cur.value + 1e-4 * cur.grad.dot(cand - theta)) {
          accepted = true;
          break;
        }
      }
      if (!accepted || next.value <= cur.value) break;
      const Eigen::Vector3d sv = cand - theta;
      const Eigen::Vector3d yv = cur.grad - next.grad;  // gradient of -LML changes by -yv
      const double gain = next.value - cur.value;
      theta = cand;
      cur = next;
      const double sy = sv.dot(yv);
      if (sy > 1e-12) {
        const double rho = 1.0 / sy;
        const Eigen::Matrix3d i3 = Eigen::Matrix3d::Identity();
        h = (i3 - rho * sv * yv.transpose()) * h * (i3 - rho * yv * sv.transpose()) + rho * sv * sv.transpose();
      }
      if (gain < opt.tolerance) break;
    }
    report.final_lml.push_back(cur.value);
    if (cur.value > best) {
      best = cur.value;
      best_theta = theta;
    }
  }
  report.lml = best;
  report.model = GpModel(x_model, y_model, params_of(best_theta), opt.noise_variance, mean);
  return report;
}

/// Candidate noise variances: 1e-6 to 1e2 in steps of sqrt(10).
inline std::vector<double> noise_grid() {
  std::vector<double> g;
  for (int k = 0; k <= 16; ++k) g.push_back(std::pow(10.0, -6.0 + 0.5 * k));
  return g;
}

struct NoiseTuning {
  double noise_variance = 0.0;
  double coverage = 0.0;
};

/// Fraction of (x, y) inside mean +/- 2.576 sqrt(latent var + noise).
inline double ci_coverage(const GpModel::Prediction& pred, const Eigen::VectorXd& y, double noise_variance) {
  Eigen::Index inside = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (std::abs(y[i] - pred.mean[i]) <= kCi99 * std::sqrt(pred.variance[i] + noise_variance)) ++inside;
  return static_cast<double>(inside) / static_cast<double>(y.size());
}

/// Smallest grid noise variance for which at least 99% of the raw points
/// fall inside the predictive 99% band of `model`.
inline NoiseTuning tune_noise(const GpModel& model, const std::vector<double>& xs, const std::vector<double>& ys,
                              double required = 0.99) {
  if (xs.size() != ys.size() || xs.empty()) throw ValidationError("tune_noise needs matching nonempty data");
  const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(xs.data(), static_cast<Eigen::Index>(xs.size()));
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
  GpModel::Prediction pred;
  // Chunked to bound the size of the cross-covariance block.
  pred.mean.resize(x.size());
  pred.variance.resize(x.size());
  const Eigen::Index chunk = 2048;
  for (Eigen::Index b = 0; b < x.size(); b += chunk) {
    const Eigen::Index m = std::min(chunk, x.size() - b);
    const auto p = model.posterior(x.segment(b, m));
    pred.mean.segment(b, m) = p.mean;
    pred.variance.segment(b, m) = p.variance;
  }
  double best_cov = 0.0;
  for (double nv : noise_grid()) {
    const double cov = ci_coverage(pred, y, nv);
    best_cov = std::max(best_cov, cov);
    if (cov >= required) return {nv, cov};
  }
  throw NumericalError("no noise variance reaches " + fmt_double(required) + " coverage (best " +
                       fmt_double(best_cov) + ")");
}

/// Fit with a provisional noise, tune the noise, refit the kernel under the
/// tuned noise and tune once more.
inline GpModel fit_with_tuned_noise(const std::vector<double>& xs, const std::vector<double>& ys,
                                    FitOptions opt = {}) {
  const double mean = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(ys.size());
  double var = 0.0;
  for (double v : ys) var += (v - mean) * (v - mean);
  var /= static_cast<double>(ys.size());
  opt.noise_variance = std::max(1e-6, 0.1 * var);
  FitReport first = fit(xs, ys, opt);
  opt.noise_variance = tune_noise(first.model, xs, ys).noise_variance;
  FitReport second = fit(xs, ys, opt);
  GpModel model = second.model;
  model.set_noise_variance(tune_noise(model, xs, ys).noise_variance);
  return model;
}

/// Grid over [0, length]: multiples of `spacing`, with `length` appended
/// when it is not itself a multiple.
inline std::vector<double> arc_grid(double length, double spacing) {
  if (!(spacing > 0.0) || !(length > 0.0)) throw ValidationError("grid needs positive length and spacing");
  std::vector<double> g;
  const auto n = static_cast<long>(std::floor(length / spacing + 1e-9));
  for (long k = 0; k <= n; ++k) g.push_back(static_cast<double>(k) * spacing);
  if (length - g.back() > 1e-9) g.push_back(length);
  return g;
}

struct TrajectorySample {
  int index = 0;
  std::vector<double> grid;
  std::vector<double> values;
};

enum class SampleNoise {
  /// Noise part of the covariance shares the kernel's correlation shape.
  correlated,
  /// Noise enters as sigma_n^2 I.
  white
};

struct SampleOptions {
  SampleNoise noise = SampleNoise::correlated;
  bool reject_outside_ci = true;
  long max_attempts = 100000;
};

/// Joint predictive distribution on a grid: mean, covariance factor and the
/// pointwise 99% half-widths.
struct GridPredictive {
  Eigen::VectorXd mean;
  Eigen::MatrixXd factor;  // lower-triangular L with L L^T = covariance
  Eigen::VectorXd half_width;
};

inline GridPredictive grid_predictive(const GpModel& model, const std::vector<double>& grid, SampleNoise noise) {
  const Eigen::VectorXd g = Eigen::Map<const Eigen::VectorXd>(grid.data(), static_cast<Eigen::Index>(grid.size()));
  GridPredictive out;
  out.mean = model.posterior(g).mean;
  Eigen::MatrixXd cov = model.posterior_covariance(g);
  if (noise == SampleNoise::white) {
    cov.diagonal().array() += model.noise_variance();
  } else {
    cov += model.noise_variance() / model.kernel().signal_variance * rq_gram(g, g, model.kernel());
  }
  out.half_width = kCi99 * cov.diagonal().array().max(0.0).sqrt();
  double jitter = kJitter * model.kernel().signal_variance;
  for (int attempt = 0; attempt < 12; ++attempt) {
    Eigen::MatrixXd c = cov;
    c.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(c);
    if (llt.info() == Eigen::Success) {
      out.factor = llt.matrixL();
      return out;
    }
    jitter *= 10.0;
  }
  throw NumericalError("predictive covariance is not positive definite");
}

/// Draws `n` joint samples on `grid`, rejecting any that leave the pointwise
/// 99% band. Deterministic for a given generator state.
inline std::vector<TrajectorySample> sample_trajectories(const GpModel& model, const std::vector<double>& grid, int n,
                                                         std::mt19937_64& rng, const SampleOptions& opt = {}) {
  if (n < 1) throw ValidationError("sample count must be >= 1");
  if (grid.empty()) throw ValidationError("sample grid is empty");
  const GridPredictive pred = grid_predictive(model, grid, opt.noise);
  std::normal_distribution<double> n01(0.0, 1.0);
  const Eigen::Index m = static_cast<Eigen::Index>(grid.size());
  std::vector<TrajectorySample> out;
  Eigen::VectorXd z(m);
  long attempts = 0;
  while (static_cast<int>(out.size()) < n) {
    if (attempts >= opt.max_attempts)
      throw NumericalError("trajectory sampling acceptance rate " +
                           fmt_double(static_cast<double>(out.size()) / static_cast<double>(attempts)) +
                           " over " + std::to_string(attempts) + " attempts");
    ++attempts;
    for (Eigen::Index i = 0; i < m; ++i) z[i] = n01(rng);
    const Eigen::VectorXd dev = pred.factor.triangularView<Eigen::Lower>() * z;
    if (opt.reject_outside_ci && (dev.array().abs() > pred.half_width.array()).any()) continue;
    TrajectorySample s;
    s.index = static_cast<int>(out.size());
    s.grid = grid;
    s.values.resize(grid.size());
    for (Eigen::Index i = 0; i < m; ++i) s.values[static_cast<std::size_t>(i)] = pred.mean[i] + dev[i];
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model file (JSON):
//   {"format": "imitdrive-gp", "version": 1, "variable": "trackpos"|"speed",
//    "track_id": str, "lap_length": m,
//    "kernel": {"signal_variance", "length_scale", "alpha"},
//    "noise_variance": v, "prior_mean": m, "inputs": [...], "targets": [...]}
// Samples file (CSV): header "j,sigma,value", one row per (sample, grid point).
// ---------------------------------------------------------------------------

struct GpModelFile {
  std::string variable;
  std::string track_id;
  double lap_length = 0.0;
  GpModel model;
};

inline std::string gp_model_to_json(const GpModelFile& f) {
  nlohmann::json j;
  j["format"] = "imitdrive-gp";
  j["version"] = 1;
  j["variable"] = f.variable;
  j["track_id"] = f.track_id;
  j["lap_length"] = f.lap_length;
  const RqParams& k = f.model.kernel();
  j["kernel"] = {{"signal_variance", k.signal_variance}, {"length_scale", k.length_scale}, {"alpha", k.alpha}};
  j["noise_variance"] = f.model.noise_variance();
  j["prior_mean"] = f.model.prior_mean();
  j["inputs"] = std::vector<double>(f.model.inputs().data(), f.model.inputs().data() + f.model.inputs().size());
  j["targets"] = std::vector<double>(f.model.targets().data(), f.model.targets().data() + f.model.targets().size());
  return j.dump(1) + "\n";
}

inline GpModelFile gp_model_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format").get<std::string>() != "imitdrive-gp") throw ValidationError("not a GP model file");
    if (j.at("version").get<int>() != 1) throw ValidationError("unsupported GP model version");
    GpModelFile f;
    f.variable = j.at("variable").get<std::string>();
    f.track_id = j.at("track_id").get<std::string>();
    f.lap_length = j.at("lap_length").get<double>();
    const auto& k = j.at("kernel");
    RqParams p{k.at("signal_variance").get<double>(), k.at("length_scale").get<double>(), k.at("alpha").get<double>()};
    auto x = j.at("inputs").get<std::vector<double>>();
    auto y = j.at("targets").get<std::vector<double>>();
    f.model = GpModel(Eigen::Map<Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size())),
                      Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size())), p,
                      j.at("noise_variance").get<double>(), j.at("prior_mean").get<double>());
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed GP model file: ") + e.what());
  }
}

inline std::string samples_to_csv(const std::vector<TrajectorySample>& samples) {
  std::string out = "j,sigma,value\n";
  for (const auto& s : samples)
    for (std::size_t i = 0; i < s.grid.size(); ++i)
      out += std::to_string(s.index) + "," + fmt_double(s.grid[i]) + "," + fmt_double(s.values[i]) + "\n";
  return out;
}

inline std::vector<TrajectorySample> samples_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || std::string(trim(line)) != "j,sigma,value")
    throw ValidationError("samples file must start with header 'j,sigma,value'");
  std::vector<TrajectorySample> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 3) throw ValidationError("samples line " + std::to_string(lineno) + ": expected 3 fields");
    const long j = parse_long(f[0], "j");
    if (j < 0) throw ValidationError("negative sample index");
    if (static_cast<std::size_t>(j) >= out.size()) out.resize(static_cast<std::size_t>(j) + 1);
    auto& s = out[static_cast<std::size_t>(j)];
    s.index = static_cast<int>(j);
    s.grid.push_back(parse_double(f[1], "sigma"));
    s.values.push_back(parse_double(f[2], "value"));
  }
  for (const auto& s : out)
    if (s.grid.empty() || s.grid != out.front().grid) throw ValidationError("samples do not share one grid");
  return out;
}

}  // namespace imitdrive
