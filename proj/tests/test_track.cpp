#include <gtest/gtest.h>

#include <imitdrive/track.hpp>

#include <cmath>
#include <map>
#include <random>

using namespace imitdrive;

TEST(TrainingTrack, LengthWithinRange) {
  const Track t = build_training_track();
  EXPECT_GE(t.total_length(), 4600.0);
  EXPECT_LE(t.total_length(), 4800.0);
  EXPECT_DOUBLE_EQ(t.lane_width(), 6.0);
  EXPECT_DOUBLE_EQ(t.half_width(), 6.0);
}

TEST(TrainingTrack, ObstacleCountsPerLane) {
  const Track t = build_training_track();
  int right = 0, left = 0;
  for (const auto& o : t.obstacles()) (o.lane == Lane::right ? right : left)++;
  EXPECT_EQ(right, 9);
  EXPECT_EQ(left, 8);
}

TEST(TrainingTrack, LoopIsClosed) {
  const Track t = build_training_track();
  const Vec2 a = t.centerline_point(0.0);
  const Vec2 b = t.centerline_point(t.total_length());
  EXPECT_NEAR(a.x, b.x, 1e-9);
  EXPECT_NEAR(a.y, b.y, 1e-9);
}

TEST(TrainingTrack, SegmentLengthsSumToTotal) {
  const Track t = build_training_track();
  double sum = 0.0;
  for (double l : t.segment_lengths()) sum += l;
  EXPECT_NEAR(sum, t.total_length(), 1e-9);
}

TEST(DeskTrack, ShortLoopWithThreeObstacles) {
  const Track t = build_desk_track();
  EXPECT_NEAR(t.total_length(), 600.0, 1e-6);
  EXPECT_EQ(t.obstacles().size(), 3u);
}

TEST(Projection, PointOnCenterline) {
  const Track t = build_training_track();
  for (double s : {0.0, 123.4, 1000.0, 2500.5, 4000.0}) {
    const Projection p = t.project(t.centerline_point(s));
    EXPECT_NEAR(p.arc_length, s, 1e-6 * t.total_length());
    EXPECT_NEAR(p.lateral, 0.0, 1e-9);
    EXPECT_NEAR(std::remainder(p.tangent_heading - t.tangent_heading(s), 2 * kPi), 0.0, 1e-9);
  }
}

TEST(Projection, SignedLateralOnStraight) {
  const Track t = build_training_track();
  // The first piece is a straight.
  ASSERT_EQ(t.pieces().front().curvature, 0.0);
  const double s = 0.5 * t.pieces().front().length;
  EXPECT_NEAR(t.project(t.point_at(s, 3.0)).lateral, 3.0, 1e-9);
  EXPECT_NEAR(t.project(t.point_at(s, -6.0)).lateral, -6.0, 1e-9);
}

TEST(Projection, RightIsPositive) {
  // Straight heading +x: right of the centerline is -y.
  const Track t("line", {{100, 0}, {kPi * 50, 1.0 / 50}, {100, 0}, {kPi * 50, 1.0 / 50}}, 6.0, {});
  const Projection p = t.project({50.0, -2.0});
  EXPECT_NEAR(p.lateral, 2.0, 1e-9);
  EXPECT_NEAR(p.arc_length, 50.0, 1e-9);
}

TEST(Projection, FarPointIsOutOfDomain) {
  const Track t = build_desk_track();
  const Vec2 c = t.centerline_point(10.0);
  EXPECT_THROW(t.project({c.x + 500.0, c.y + 500.0}), std::domain_error);
}

TEST(Projection, RoundTripProperty) {
  const Track t = build_training_track();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, t.total_length());
  for (int i = 0; i < 300; ++i) {
    const double s = u(rng);
    const double back = t.project(t.centerline_point(s)).arc_length;
    double diff = std::abs(back - s);
    diff = std::min(diff, t.total_length() - diff);
    EXPECT_LE(diff, 1e-6 * t.total_length());
  }
}

TEST(GenerateRoad, AlternatingCount) {
  RoadSpec spec;
  spec.kind = RoadKind::alternating_50m;
  spec.length = 1000.0;
  const Track t = generate_road(spec);
  ASSERT_EQ(t.obstacles().size(), 20u);
  for (std::size_t i = 1; i < t.obstacles().size(); ++i) {
    EXPECT_NE(t.obstacles()[i].lane, t.obstacles()[i - 1].lane);
    EXPECT_NEAR(t.obstacles()[i].arc_length - t.obstacles()[i - 1].arc_length, 50.0, 1e-9);
  }
}

TEST(GenerateRoad, DefaultLength) {
  RoadSpec spec;
  spec.kind = RoadKind::gaussian_spaced;
  EXPECT_NEAR(generate_road(spec).total_length(), 3140.0, 1e-6);
}

TEST(GenerateRoad, GaussianSpacedDeterministic) {
  RoadSpec spec;
  spec.kind = RoadKind::gaussian_spaced;
  spec.seed = 42;
  const Track a = generate_road(spec), b = generate_road(spec);
  ASSERT_EQ(a.obstacles().size(), b.obstacles().size());
  for (std::size_t i = 0; i < a.obstacles().size(); ++i) EXPECT_EQ(a.obstacles()[i], b.obstacles()[i]);
  spec.seed = 43;
  const Track c = generate_road(spec);
  EXPECT_FALSE(c.obstacles().size() == a.obstacles().size() &&
               std::equal(a.obstacles().begin(), a.obstacles().end(), c.obstacles().begin()));
}

TEST(GenerateRoad, GaussianSpacedGapsAboveFloor) {
  RoadSpec spec;
  spec.kind = RoadKind::gaussian_spaced;
  spec.seed = 5;
  const Track t = generate_road(spec);
  ASSERT_GT(t.obstacles().size(), 10u);
  double sum = 0.0;
  for (std::size_t i = 1; i < t.obstacles().size(); ++i) {
    const double gap = t.obstacles()[i].arc_length - t.obstacles()[i - 1].arc_length;
    EXPECT_GT(gap, 20.0);
    sum += gap;
  }
  EXPECT_NEAR(sum / static_cast<double>(t.obstacles().size() - 1), 100.0, 10.0);
}

TEST(GenerateRoad, BatchedRunLengths) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    RoadSpec spec;
    spec.kind = RoadKind::gaussian_batched;
    spec.seed = seed;
    const Track t = generate_road(spec);
    std::map<int, int> runs;
    std::map<int, Lane> lanes;
    for (const auto& o : t.obstacles()) {
      ASSERT_GE(o.group, 0);
      ++runs[o.group];
      if (lanes.count(o.group)) EXPECT_EQ(lanes[o.group], o.lane);
      lanes[o.group] = o.lane;
    }
    for (const auto& [g, n] : runs) {
      EXPECT_GE(n, 2);
      EXPECT_LE(n, 4);
    }
  }
}

TEST(GenerateRoad, RejectsBadSpecs) {
  RoadSpec spec;
  spec.kind = RoadKind::gaussian_spaced;
  spec.spacing_std = 0.0;
  EXPECT_THROW(generate_road(spec), ValidationError);
  spec.spacing_std = 10.0;
  spec.length = 150.0;
  EXPECT_THROW(generate_road(spec), ValidationError);
}

TEST(Obstacles, FootprintStaysInLane) {
  for (const Track& t : {build_training_track(), build_desk_track()}) {
    for (const auto& o : t.obstacles()) {
      const double c = t.lane_center(o.lane);
      const double lo = c - o.half_across, hi = c + o.half_across;
      if (o.lane == Lane::right) EXPECT_GT(lo, 0.0);
      else EXPECT_LT(hi, 0.0);
      EXPECT_LE(std::max(std::abs(lo), std::abs(hi)), t.half_width());
    }
  }
}

TEST(TrackFile, RoundTrip) {
  RoadSpec spec;
  spec.kind = RoadKind::gaussian_batched;
  spec.seed = 9;
  const Track t = generate_road(spec);
  const Track u = track_from_json(track_to_json(t));
  EXPECT_EQ(u.id(), t.id());
  EXPECT_NEAR(u.total_length(), t.total_length(), 1e-9);
  ASSERT_EQ(u.obstacles().size(), t.obstacles().size());
  for (std::size_t i = 0; i < t.obstacles().size(); ++i) EXPECT_EQ(u.obstacles()[i], t.obstacles()[i]);
  for (double s : {0.0, 777.0, 2000.0}) {
    EXPECT_NEAR(u.centerline_point(s).x, t.centerline_point(s).x, 1e-9);
    EXPECT_NEAR(u.centerline_point(s).y, t.centerline_point(s).y, 1e-9);
  }
}

TEST(TrackFile, RejectsMalformed) {
  EXPECT_THROW(track_from_json(nlohmann::json::parse(R"({"format":"nope"})")), ValidationError);
}
