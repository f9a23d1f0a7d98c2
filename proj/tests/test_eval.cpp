#include <gtest/gtest.h>

#include <imitdrive/eval.hpp>

#include <cmath>

using namespace imitdrive;

namespace {

GpModel toy_model(double offset) {
  Eigen::VectorXd x(30), y(30);
  for (int i = 0; i < 30; ++i) {
    x[i] = i * 20.0;
    y[i] = 60.0 + 10.0 * std::sin(i / 4.0) + offset;
  }
  return GpModel(x, y, {50.0, 40.0, 1.0}, 1.0);
}

// Constant output: steering `steer`, torque `torque`, tight variance.
PolicyNets constant_policy(int input_dim, double steer, double torque) {
  PolicyNets p = build_policy_networks(input_dim, 8, 1);
  for (DenseNet* n : {&p.actor, &p.mixing}) n->layers().back().weights.setZero();
  auto& b = p.actor.layers().back().biases;
  auto inv_softsign = [](double y) { return y / (1.0 - std::abs(y)); };
  b.head(3).setConstant(inv_softsign(steer));
  b.segment(3, 3).setConstant(inv_softsign(torque));
  b.tail(6).setConstant(-5.0);
  return p;
}

}  // namespace

TEST(Compare, SelfComparisonIsPerfect) {
  const BehaviorModels m{toy_model(0.0), toy_model(0.0)};
  const ComparisonReport r = compare_models(m, m, 580.0);
  for (const auto* c : {&r.lateral, &r.speed}) {
    EXPECT_EQ(c->mean_gap, 0.0);
    EXPECT_EQ(c->in_ci_fraction, 1.0);
    EXPECT_NEAR(c->ci_overlap, 1.0, 1e-12);
    EXPECT_NEAR(c->expert_mean_sd, c->agent_mean_sd, 1e-12);
  }
}

TEST(Compare, ConstantOffsetGap) {
  const BehaviorModels expert{toy_model(0.0), toy_model(0.0)};
  const BehaviorModels agent{toy_model(0.0), toy_model(5.0)};
  const ComparisonReport r = compare_models(expert, agent, 580.0);
  EXPECT_NEAR(r.speed.mean_gap, 5.0, 0.1);
  EXPECT_EQ(r.lateral.mean_gap, 0.0);
  EXPECT_GE(r.speed.in_ci_fraction, 0.0);
  EXPECT_LE(r.speed.in_ci_fraction, 1.0);
  EXPECT_GT(r.speed.ci_overlap, 0.0);
  EXPECT_LT(r.speed.ci_overlap, 1.0);
}

TEST(Compare, ReportFormats) {
  const BehaviorModels m{toy_model(0.0), toy_model(0.0)};
  ComparisonReport r = compare_models(m, m, 100.0);
  const std::string csv = report_to_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kReportCsvHeader);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(r.grid.size()) + 1);
  r.safety = SafetyStats{4, 3, 10, 1, {{"obstacle_collision", 1}}};
  const std::string txt = format_report(r, "title");
  EXPECT_NE(txt.find("collision rate 0.1000"), std::string::npos) << txt;
  EXPECT_NE(txt.find("mean gap 0.000"), std::string::npos);
}

TEST(Compare, MismatchedBandsRejected) {
  EXPECT_THROW(compare_bands(Band{}, Band{}), ValidationError);
}

TEST(ExpertProfile, BuiltFromDemoFits) {
  const Track t = build_desk_track();
  const DemoLog log = collect_demos(t, 3, 2);
  FitOptions fo;
  fo.max_points = 400;
  const BehaviorModels m = fit_behavior(log, fo);
  const ExpertProfile p = build_expert_profile(m, t.total_length(), 5, 3);
  EXPECT_EQ(p.bank_size(), 5u);
  EXPECT_EQ(p.mean_lateral.grid.size(), arc_grid(t.total_length(), kGridSpacing).size());
  // Expert mostly keeps right.
  double s = 0.0;
  for (double d : p.mean_lateral.values) s += d;
  EXPECT_GT(s / static_cast<double>(p.mean_lateral.values.size()), 1.0);
}

TEST(Safety, RandomPolicyRarelyCompletes) {
  const PolicyNets nets = build_policy_networks(kObservationSize, 16, 3);
  SafetyOptions so;
  so.episodes = 10;
  const SafetyStats st = safety_run(nets, build_desk_track(), ActionMode::sampled, 4, so);
  EXPECT_EQ(st.episodes, 10);
  EXPECT_LE(st.completion_rate(), 0.1);
  EXPECT_GE(st.collision_rate(), 0.0);
  EXPECT_LE(st.collision_rate(), 1.0);
}

TEST(Safety, NeverSteerHitsObstacleOnAlternatingRoad) {
  RoadSpec spec;
  spec.kind = RoadKind::alternating_50m;
  const Track road = generate_road(spec);
  const PolicyNets nets = constant_policy(kObservationSize, 0.0, 0.2);
  SafetyOptions so;
  so.episodes = 2;
  so.laps = 1;
  so.reference_starts = false;
  const SafetyStats st = safety_run(nets, road, ActionMode::mean_only, 1, so);
  EXPECT_EQ(st.completed, 0);
  EXPECT_EQ(st.collisions, 2);
  EXPECT_GE(st.obstacles_encountered, 2);
}

TEST(Rollout, MeanOnlyIsDeterministicAndAbortsWhenFailing) {
  const PolicyNets nets = build_policy_networks(kObservationSize, 8, 5);
  RolloutOptions ro;
  ro.rounds = 1;
  ro.max_consecutive_failures = 3;
  auto attempt = [&] {
    try {
      rollout(nets, build_desk_track(), ActionMode::mean_only, 1, ro);
      return std::string("completed");
    } catch (const ConfigurationError& e) {
      return std::string(e.what());
    }
  };
  const std::string a = attempt(), b = attempt();
  EXPECT_EQ(a, b);
  EXPECT_NE(a.find("consecutive failed episodes"), std::string::npos) << a;
}

TEST(Rollout, SafetyRunDeterministic) {
  const PolicyNets nets = build_policy_networks(kObservationSize, 8, 6);
  SafetyOptions so;
  so.episodes = 3;
  const auto a = safety_run(nets, build_desk_track(), ActionMode::sampled, 2, so);
  const auto b = safety_run(nets, build_desk_track(), ActionMode::sampled, 2, so);
  EXPECT_EQ(a.terminations, b.terminations);
  EXPECT_EQ(a.obstacles_encountered, b.obstacles_encountered);
}

TEST(Modes, ParseNames) {
  EXPECT_EQ(action_mode_from_string("sampled"), ActionMode::sampled);
  EXPECT_EQ(action_mode_from_string("mean_only"), ActionMode::mean_only);
  EXPECT_THROW(action_mode_from_string("greedy"), ValidationError);
  EXPECT_EQ(variable_from_string("trackpos"), Variable::track_position);
  EXPECT_THROW(variable_from_string("x"), ValidationError);
}
