#include <gtest/gtest.h>

#include <imitdrive/mdn.hpp>

#include <cmath>

using namespace imitdrive;

namespace {

MdnDistribution identical(double ms, double mt, double v) {
  MdnDistribution d;
  for (int k = 0; k < kMixtureComponents; ++k) {
    d.weight[k] = 1.0 / 3.0;
    d.mean_steer[k] = ms;
    d.mean_torque[k] = mt;
    d.var_steer[k] = v;
    d.var_torque[k] = v;
  }
  return d;
}

MdnDistribution mixed() {
  MdnDistribution d;
  d.weight = {0.5, 0.3, 0.2};
  d.mean_steer = {-0.4, 0.1, 0.5};
  d.mean_torque = {0.3, -0.2, 0.0};
  d.var_steer = {0.01, 0.03, 0.02};
  d.var_torque = {0.02, 0.01, 0.05};
  return d;
}

}  // namespace

TEST(MdnLogProb, IdenticalComponentsAtMean) {
  const auto d = identical(0.2, -0.1, 1.0 / 16.0);
  EXPECT_NEAR(mdn_log_prob(d, {0.2, -0.1}), -std::log(kTwoPi / 16.0), 1e-12);
  EXPECT_NEAR(mdn_log_prob(d, {0.2, -0.1}), 0.9348, 1e-4);
}

TEST(MdnLogProb, CollapsesToSingleGaussian) {
  const auto d = identical(0.1, 0.3, 0.02);
  const Action a{0.25, 0.1};
  EXPECT_NEAR(mdn_log_prob(d, a), gaussian_log_density(0.25, 0.1, 0.02) + gaussian_log_density(0.1, 0.3, 0.02),
              1e-12);
}

TEST(MdnLogProb, IntegratesToOne) {
  const auto d = mixed();
  const int n = 600;
  const double lo = -2.0, hi = 2.0, h = (hi - lo) / n;
  double mass = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) mass += std::exp(mdn_log_prob(d, {lo + (i + 0.5) * h, lo + (j + 0.5) * h})) * h * h;
  EXPECT_NEAR(mass, 1.0, 0.01);
}

TEST(MdnLogProb, GradientMatchesFiniteDifferences) {
  const MdnDistribution d = mixed();
  const Action a{0.05, 0.1};
  MdnGradient g;
  mdn_log_prob(d, a, &g);
  const double h = 1e-7;
  auto fd = [&](auto mutate) {
    MdnDistribution p = d, m = d;
    mutate(p, h);
    mutate(m, -h);
    return (mdn_log_prob(p, a) - mdn_log_prob(m, a)) / (2 * h);
  };
  for (int k = 0; k < kMixtureComponents; ++k) {
    EXPECT_NEAR(g.mean_steer[k], fd([k](MdnDistribution& x, double e) { x.mean_steer[k] += e; }), 1e-5);
    EXPECT_NEAR(g.mean_torque[k], fd([k](MdnDistribution& x, double e) { x.mean_torque[k] += e; }), 1e-5);
    EXPECT_NEAR(g.var_steer[k], fd([k](MdnDistribution& x, double e) { x.var_steer[k] += e; }), 1e-4);
    EXPECT_NEAR(g.var_torque[k], fd([k](MdnDistribution& x, double e) { x.var_torque[k] += e; }), 1e-4);
    EXPECT_NEAR(g.weight[k], fd([k](MdnDistribution& x, double e) { x.weight[k] += e; }), 1e-5);
  }
  const double ds = (mdn_log_prob(d, {a.steering + h, a.torque}) - mdn_log_prob(d, {a.steering - h, a.torque})) / (2 * h);
  EXPECT_NEAR(g.steer, ds, 1e-5);
}

TEST(MdnSample, MeanMatchesMixtureMean) {
  const auto d = mixed();
  std::mt19937_64 rng(4);
  const int n = 200000;
  double s = 0.0, t = 0.0;
  for (int i = 0; i < n; ++i) {
    const Action a = mdn_sample(d, rng);
    s += a.steering;
    t += a.torque;
  }
  const Action m = mdn_mean(d);
  EXPECT_NEAR(s / n, m.steering, 0.005);
  EXPECT_NEAR(t / n, m.torque, 0.005);
}

TEST(MdnSample, DeterministicForSeed) {
  const auto d = mixed();
  std::mt19937_64 a(9), b(9);
  for (int i = 0; i < 20; ++i) {
    const Action x = mdn_sample(d, a), y = mdn_sample(d, b);
    EXPECT_EQ(x.steering, y.steering);
    EXPECT_EQ(x.torque, y.torque);
  }
}

TEST(MdnDominantMean, PicksHighestWeight) {
  const auto d = mixed();
  const Action a = mdn_dominant_mean(d);
  EXPECT_EQ(a.steering, -0.4);
  EXPECT_EQ(a.torque, 0.3);
}

TEST(MdnFromOutputs, LayoutAndValidation) {
  Eigen::VectorXd actor(12), mix(3);
  for (int i = 0; i < 12; ++i) actor[i] = i < 6 ? 0.1 * i : 0.01 * (i - 5);
  mix << 0.2, 0.3, 0.5;
  const auto d = mdn_from_outputs(actor, mix);
  EXPECT_EQ(d.mean_steer[1], 0.1);
  EXPECT_EQ(d.mean_torque[0], 0.30000000000000004);
  EXPECT_EQ(d.var_steer[0], 0.01);
  EXPECT_EQ(d.var_torque[2], 0.06);
  EXPECT_EQ(d.weight[2], 0.5);
  EXPECT_THROW(mdn_from_outputs(Eigen::VectorXd::Zero(11), mix), ValidationError);
}

TEST(MdnEntropy, SingleGaussianClosedForm) {
  const auto d = identical(0.0, 0.0, 0.04);
  const double exact = 1.0 + std::log(kTwoPi * 0.04);
  EXPECT_NEAR(mdn_entropy(d, entropy_draws(4096)), exact, 0.05);
}

TEST(MdnEntropy, IncreasesWithVariance) {
  const auto eps = entropy_draws();
  double last = -1e9;
  for (double v : {0.001, 0.005, 0.01, 0.03, 0.0625}) {
    const double h = mdn_entropy(identical(0.0, 0.0, v), eps);
    EXPECT_GT(h, last);
    last = h;
  }
}

TEST(MdnEntropy, GradientMatchesFiniteDifferences) {
  const auto d = mixed();
  const auto eps = entropy_draws(64);
  MdnGradient g;
  mdn_entropy(d, eps, &g);
  const double h = 1e-7;
  auto fd = [&](auto mutate) {
    MdnDistribution p = d, m = d;
    mutate(p, h);
    mutate(m, -h);
    return (mdn_entropy(p, eps) - mdn_entropy(m, eps)) / (2 * h);
  };
  for (int k = 0; k < kMixtureComponents; ++k) {
    EXPECT_NEAR(g.mean_steer[k], fd([k](MdnDistribution& x, double e) { x.mean_steer[k] += e; }), 1e-5);
    EXPECT_NEAR(g.var_steer[k], fd([k](MdnDistribution& x, double e) { x.var_steer[k] += e; }), 1e-3);
    EXPECT_NEAR(g.var_torque[k], fd([k](MdnDistribution& x, double e) { x.var_torque[k] += e; }), 1e-3);
    EXPECT_NEAR(g.weight[k], fd([k](MdnDistribution& x, double e) { x.weight[k] += e; }), 1e-5);
  }
}

TEST(ClampAction, ClampsEachAxis) {
  const Action a = clamp_action({1.7, -3.0});
  EXPECT_EQ(a.steering, 1.0);
  EXPECT_EQ(a.torque, -1.0);
}
