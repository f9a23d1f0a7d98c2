#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "geometry.hpp"

namespace imitdrive {

enum class Lane { left, right };

inline const char* to_string(Lane lane) { return lane == Lane::left ? "left" : "right"; }

inline Lane lane_from_string(const std::string& s) {
  if (s == "left") return Lane::left;
  if (s == "right") return Lane::right;
  throw ValidationError("unknown lane '" + s + "'");
}

/// A static barricade centered on a lane center. `half_along` runs with the
/// road tangent, `half_across` across the lane. `group` ties obstacles placed
/// as one batch together (-1 for single placements).
struct Obstacle {
  double arc_length = 0.0;
  Lane lane = Lane::right;
  double half_along = 0.5;
  double half_across = 1.25;
  int group = -1;

  bool operator==(const Obstacle&) const = default;
};

/// Constant-curvature piece of centerline. curvature == 0 is a straight;
/// positive curvature turns left.
struct Piece {
  double length = 0.0;
  double curvature = 0.0;
};

/// Road boundary primitive used by the range sensor.
using BoundaryShape = std::variant<std::pair<Vec2, Vec2>, Arc>;

struct Projection {
  double arc_length = 0.0;
  double lateral = 0.0;  // positive toward the right boundary
  double tangent_heading = 0.0;
  double distance = 0.0;
};

/// Closed-loop road: a chain of straights and circular arcs driven in the
/// direction of increasing arc-length. Immutable after construction.
class Track {
 public:
  static constexpr double kProjectionDomain = 50.0;

  Track() = default;

  Track(std::string id, std::vector<Piece> pieces, double lane_width,
        std::vector<Obstacle> obstacles, Vec2 start = {}, double start_heading = 0.0)
      : id_(std::move(id)), lane_width_(lane_width), start_(start), start_heading_(start_heading) {
    if (pieces.empty()) throw ValidationError("track needs at least one piece");
    if (!(lane_width > 0.0)) throw ValidationError("lane width must be positive");
    Vec2 p = start;
    double h = start_heading;
    double s = 0.0;
    for (const Piece& pc : pieces) {
      if (!(pc.length > 0.0)) throw ValidationError("piece length must be positive");
      if (pc.curvature != 0.0 && 1.0 / std::abs(pc.curvature) <= lane_width)
        throw ValidationError("arc radius must exceed the road half-width");
      Segment seg{pc, p, h, s};
      p = seg.point(pc.length);
      h = seg.heading(pc.length);
      s += pc.length;
      segments_.push_back(seg);
    }
    total_length_ = s;
    if (norm(p - start) > 1e-6 * total_length_ ||
        std::abs(wrap_angle(h - start_heading)) > 1e-9)
      throw ValidationError("track centerline does not close");
    for (const Obstacle& o : obstacles) add_obstacle(o);
    std::sort(obstacles_.begin(), obstacles_.end(),
              [](const Obstacle& a, const Obstacle& b) { return a.arc_length < b.arc_length; });
    for (const Obstacle& o : obstacles_) obstacle_boxes_.push_back(obstacle_box(o));
    build_boundaries();
  }

  const std::string& id() const { return id_; }
  double total_length() const { return total_length_; }
  double lane_width() const { return lane_width_; }
  /// Centerline to boundary distance.
  double half_width() const { return lane_width_; }
  double lane_center(Lane lane) const { return lane == Lane::right ? lane_width_ / 2 : -lane_width_ / 2; }
  std::span<const Obstacle> obstacles() const { return obstacles_; }
  const std::vector<BoundaryShape>& boundaries() const { return boundaries_; }
  /// Footprints in the same order as obstacles().
  const std::vector<OrientedBox>& obstacle_boxes() const { return obstacle_boxes_; }

  std::vector<Piece> pieces() const {
    std::vector<Piece> out;
    for (const auto& s : segments_) out.push_back(s.piece);
    return out;
  }
  std::vector<double> segment_lengths() const {
    std::vector<double> out;
    for (const auto& s : segments_) out.push_back(s.piece.length);
    return out;
  }
  Vec2 start() const { return start_; }
  double start_heading() const { return start_heading_; }

  Vec2 centerline_point(double s) const {
    const auto [seg, u] = locate(s);
    return seg->point(u);
  }
  double tangent_heading(double s) const {
    const auto [seg, u] = locate(s);
    return wrap_angle(seg->heading(u));
  }
  double curvature(double s) const { return locate(s).first->piece.curvature; }

  /// Largest |curvature| over [s, s + ahead].
  double max_curvature_ahead(double s, double ahead) const {
    double k = std::abs(curvature(s));
    const double s0 = wrap_positive(s, total_length_);
    for (const auto& seg : segments_) {
      double d = seg.s0 - s0;
      if (d < 0.0) d += total_length_;
      if (d <= ahead) k = std::max(k, std::abs(seg.piece.curvature));
    }
    return k;
  }

  /// Point at arc-length s and signed lateral offset (positive right).
  Vec2 point_at(double s, double lateral) const {
    const auto [seg, u] = locate(s);
    return seg->point(u) + right_normal(seg->heading(u)) * lateral;
  }

  /// Nearest-point projection onto the centerline. Ties go to the smaller
  /// arc-length. Throws std::domain_error beyond 50 m from the centerline.
  Projection project(Vec2 p) const {
    Projection best;
    best.distance = INFINITY;
    for (const auto& seg : segments_) {
      const double u = seg.nearest_param(p);
      const Vec2 c = seg.point(u);
      const double d = norm(p - c);
      if (d < best.distance - 1e-12) {
        const double h = seg.heading(u);
        best.distance = d;
        best.arc_length = seg.s0 + u;
        best.lateral = dot(p - c, right_normal(h));
        best.tangent_heading = wrap_angle(h);
      }
    }
    if (best.distance > kProjectionDomain)
      throw std::domain_error("point is farther than 50 m from the centerline");
    if (best.arc_length >= total_length_) best.arc_length -= total_length_;
    if (best.arc_length < 0.0) best.arc_length = 0.0;
    return best;
  }

  OrientedBox obstacle_box(const Obstacle& o) const {
    return OrientedBox{point_at(o.arc_length, lane_center(o.lane)), tangent_heading(o.arc_length),
                       o.half_along, o.half_across};
  }

  std::vector<Vec2> sample_centerline(double spacing) const {
    std::vector<Vec2> out;
    const auto n = static_cast<std::size_t>(std::ceil(total_length_ / spacing));
    for (std::size_t i = 0; i < n; ++i) out.push_back(centerline_point(total_length_ * i / n));
    return out;
  }

 private:
  struct Segment {
    Piece piece;
    Vec2 start;
    double start_heading;
    double s0;

    double heading(double u) const { return start_heading + piece.curvature * u; }

    Vec2 point(double u) const {
      const double k = piece.curvature;
      if (k == 0.0) return start + unit_from_angle(start_heading) * u;
      const double h1 = start_heading + k * u;
      return start + Vec2{std::sin(h1) - std::sin(start_heading),
                          -std::cos(h1) + std::cos(start_heading)} * (1.0 / k);
    }

    Vec2 arc_center() const {
      return start + Vec2{-std::sin(start_heading), std::cos(start_heading)} * (1.0 / piece.curvature);
    }

    double nearest_param(Vec2 p) const {
      const double k = piece.curvature;
      if (k == 0.0)
        return std::clamp(dot(p - start, unit_from_angle(start_heading)), 0.0, piece.length);
      const Vec2 q = p - arc_center();
      // Position angle of the arc start seen from its center.
      const double phi0 = (k > 0.0) ? start_heading - kPi / 2 : start_heading + kPi / 2;
      const double phi = std::atan2(q.y, q.x);
      const double rel = wrap_positive(k > 0.0 ? phi - phi0 : phi0 - phi, kTwoPi);
      const double sweep = std::abs(k) * piece.length;
      if (rel <= sweep) return rel / std::abs(k);
      return (rel - sweep < kTwoPi - rel) ? piece.length : 0.0;
    }
  };

  std::pair<const Segment*, double> locate(double s) const {
    s = wrap_positive(s, total_length_);
    auto it = std::upper_bound(segments_.begin(), segments_.end(), s,
                               [](double v, const Segment& seg) { return v < seg.s0; });
    const Segment* seg = &*(it - 1);
    return {seg, s - seg->s0};
  }

  void add_obstacle(Obstacle o) {
    if (!(o.arc_length >= 0.0 && o.arc_length < total_length_))
      throw ValidationError("obstacle arc-length outside [0, total_length)");
    const double c = std::abs(lane_center(o.lane));
    if (o.half_across <= 0.0 || o.half_along <= 0.0 || c - o.half_across < 0.0 ||
        c + o.half_across > lane_width_)
      throw ValidationError("obstacle footprint leaves its lane");
    obstacles_.push_back(o);
  }

  void build_boundaries() {
    for (const auto& seg : segments_) {
      for (double d : {-half_width(), half_width()}) {
        if (seg.piece.curvature == 0.0) {
          const Vec2 n = right_normal(seg.start_heading);
          boundaries_.emplace_back(std::pair{seg.point(0.0) + n * d, seg.point(seg.piece.length) + n * d});
        } else {
          const double k = seg.piece.curvature;
          const double rho = 1.0 / k;
          Arc arc;
          arc.center = seg.arc_center();
          // p - center = -(rho + d) * left_normal(h)
          arc.radius = std::abs(rho + d);
          const double phi0 = seg.start_heading - kPi / 2;
          arc.start_angle = (rho + d > 0.0) ? phi0 : phi0 + kPi;
          arc.sweep = k * seg.piece.length;
          boundaries_.emplace_back(arc);
        }
      }
    }
  }

  std::string id_;
  double lane_width_ = 6.0;
  Vec2 start_{};
  double start_heading_ = 0.0;
  double total_length_ = 0.0;
  std::vector<Segment> segments_;
  std::vector<Obstacle> obstacles_;
  std::vector<BoundaryShape> boundaries_;
  std::vector<OrientedBox> obstacle_boxes_;
};

/// Builds a convex loop of n straights and n left arcs, each arc turning
/// 2*pi/n (n divisible by 4). Straight lengths are lengthened on the side
/// opposite the closure error so the loop closes, then everything is scaled
/// to `target_length`.
inline std::vector<Piece> regular_turn_loop(const std::vector<double>& radii,
                                            std::vector<double> straights, double target_length) {
  const std::size_t n = radii.size();
  if (n < 4 || n % 4 != 0 || straights.size() != n)
    throw ValidationError("regular_turn_loop needs 4k radii and matching straights");
  const double turn = kTwoPi / static_cast<double>(n);
  auto closure_error = [&](const std::vector<double>& st) {
    Vec2 p{};
    double h = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      p += unit_from_angle(h) * st[i];
      const double r = radii[i];
      p += Vec2{std::sin(h + turn) - std::sin(h), -std::cos(h + turn) + std::cos(h)} * r;
      h += turn;
    }
    return p;
  };
  const Vec2 e = closure_error(straights);
  if (e.x > 0.0) straights[n / 2] += e.x; else straights[0] -= e.x;
  if (e.y > 0.0) straights[3 * n / 4] += e.y; else straights[n / 4] -= e.y;

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += straights[i] + radii[i] * turn;
  const double scale = target_length / total;
  std::vector<Piece> pieces;
  for (std::size_t i = 0; i < n; ++i) {
    if (straights[i] > 0.0) pieces.push_back({straights[i] * scale, 0.0});
    pieces.push_back({radii[i] * scale * turn, 1.0 / (radii[i] * scale)});
  }
  return pieces;
}

/// Committed geometry of the 4.7 km training loop.
struct TrainingTrackConfig {
  static constexpr double kLength = 4700.0;
  static constexpr double kLaneWidth = 6.0;
  static constexpr double kRadii[8] = {110, 200, 80, 140, 175, 95, 160, 85};
  static constexpr double kStraights[8] = {560, 330, 430, 240, 470, 280, 380, 190};
  /// Obstacle arc-lengths (m): nine in the right lane, eight in the left.
  static constexpr std::pair<double, Lane> kObstacles[17] = {
      {250.0, Lane::right},  {520.0, Lane::left},   {820.0, Lane::right},  {1090.0, Lane::left},
      {1370.0, Lane::right}, {1650.0, Lane::right}, {1930.0, Lane::left},  {2200.0, Lane::right},
      {2480.0, Lane::left},  {2760.0, Lane::right}, {3040.0, Lane::left},  {3310.0, Lane::right},
      {3580.0, Lane::right}, {3850.0, Lane::left},  {4120.0, Lane::right}, {4380.0, Lane::left},
      {4620.0, Lane::left}};
};

inline Track build_training_track() {
  using C = TrainingTrackConfig;
  std::vector<double> radii(std::begin(C::kRadii), std::end(C::kRadii));
  std::vector<double> straights(std::begin(C::kStraights), std::end(C::kStraights));
  std::vector<Obstacle> obstacles;
  for (const auto& [s, lane] : C::kObstacles) obstacles.push_back(Obstacle{s, lane});
  return Track("training", regular_turn_loop(radii, straights, C::kLength), C::kLaneWidth,
               std::move(obstacles));
}

/// Small 600 m loop with three obstacles used for desk-scale experiments.
inline Track build_desk_track() {
  const std::vector<double> radii = {50, 50, 50, 50};
  const std::vector<double> straights = {130, 25, 130, 25};
  auto pieces = regular_turn_loop(radii, straights, 600.0);
  // pieces: straight, arc, straight, arc, straight, arc, straight, arc
  const double long_straight = pieces[0].length;
  const double s2 = pieces[0].length + pieces[1].length + pieces[2].length + pieces[3].length;
  std::vector<Obstacle> obstacles = {
      Obstacle{0.6 * long_straight, Lane::right},
      Obstacle{s2 + 0.15 * long_straight, Lane::left},
      Obstacle{s2 + 0.8 * long_straight, Lane::right},
  };
  return Track("desk", std::move(pieces), 6.0, std::move(obstacles));
}

enum class RoadKind { training, alternating_50m, gaussian_spaced, gaussian_batched };

inline const char* to_string(RoadKind k) {
  switch (k) {
    case RoadKind::training: return "training";
    case RoadKind::alternating_50m: return "alternating_50m";
    case RoadKind::gaussian_spaced: return "gaussian_spaced";
    case RoadKind::gaussian_batched: return "gaussian_batched";
  }
  return "?";
}

inline RoadKind road_kind_from_string(const std::string& s) {
  for (RoadKind k : {RoadKind::training, RoadKind::alternating_50m, RoadKind::gaussian_spaced,
                     RoadKind::gaussian_batched})
    if (s == to_string(k)) return k;
  throw ValidationError("unknown road kind '" + s + "'");
}

struct RoadSpec {
  RoadKind kind = RoadKind::alternating_50m;
  double length = 3140.0;
  std::uint64_t seed = 0;
  double spacing_mean = 100.0;
  double spacing_std = 10.0;
  int batch_min = 2;
  int batch_max = 4;
  /// Spacing between consecutive obstacles of one batch.
  double batch_gap = 6.0;
};

/// Curvy-and-straight loop of arbitrary length for generalization roads.
inline std::vector<Piece> generalization_loop(double length) {
  const std::vector<double> radii = {70, 120, 60, 150, 90, 65, 130, 75};
  const std::vector<double> straights = {320, 150, 260, 90, 300, 120, 220, 100};
  return regular_turn_loop(radii, straights, length);
}

/// Procedural road; a pure function of the spec (seed included).
inline Track generate_road(const RoadSpec& spec) {
  if (spec.kind == RoadKind::training) return build_training_track();
  if (!(spec.length >= 200.0)) throw ValidationError("road length must be at least 200 m");
  if (!(spec.spacing_mean > 0.0)) throw ValidationError("spacing_mean must be positive");
  if (!(spec.spacing_std > 0.0)) throw ValidationError("spacing_std must be positive");
  if (spec.kind == RoadKind::gaussian_batched &&
      (spec.batch_min < 2 || spec.batch_max > 4 || spec.batch_min > spec.batch_max))
    throw ValidationError("batch range must lie within [2, 4]");

  const double L = spec.length;
  std::mt19937_64 rng(spec.seed);
  std::vector<Obstacle> obstacles;
  constexpr double kMinGap = 20.0;

  switch (spec.kind) {
    case RoadKind::alternating_50m: {
      const auto n = static_cast<int>(std::floor(L / 50.0));
      for (int k = 0; k < n; ++k)
        obstacles.push_back(Obstacle{25.0 + 50.0 * k, k % 2 == 0 ? Lane::right : Lane::left});
      break;
    }
    case RoadKind::gaussian_spaced:
    case RoadKind::gaussian_batched: {
      std::normal_distribution<double> gap(spec.spacing_mean, spec.spacing_std);
      std::bernoulli_distribution coin(0.5);
      std::uniform_int_distribution<int> run(spec.batch_min, spec.batch_max);
      auto draw_gap = [&] {
        double g = gap(rng);
        while (g <= kMinGap) g = gap(rng);
        return g;
      };
      const bool batched = spec.kind == RoadKind::gaussian_batched;
      double s = draw_gap();
      int group = 0;
      while (true) {
        const Lane lane = coin(rng) ? Lane::right : Lane::left;
        const int count = batched ? run(rng) : 1;
        const double extent = (count - 1) * spec.batch_gap;
        if (s + extent > L - kMinGap) break;
        for (int i = 0; i < count; ++i)
          obstacles.push_back(Obstacle{s + i * spec.batch_gap, lane, 0.5, 1.25, batched ? group : -1});
        ++group;
        s += extent + draw_gap();
      }
      break;
    }
    case RoadKind::training: break;
  }
  return Track(std::string(to_string(spec.kind)) + "-" + std::to_string(spec.seed), generalization_loop(L),
               6.0, std::move(obstacles));
}

// ---------------------------------------------------------------------------
// Track file: JSON document
//   {"format": "imitdrive-track", "version": 1, "id": str, "lane_width": m,
//    "start": [x, y], "start_heading": rad,
//    "pieces": [{"length": m, "curvature": 1/m}, ...],
//    "centerline": [[x, y], ...]   (1 m resampling, informational),
//    "obstacles": [{"arc_length": m, "lane": "left"|"right",
//                   "half_along": m, "half_across": m, "group": int}, ...]}
// ---------------------------------------------------------------------------

inline nlohmann::json track_to_json(const Track& t) {
  nlohmann::json j;
  j["format"] = "imitdrive-track";
  j["version"] = 1;
  j["id"] = t.id();
  j["lane_width"] = t.lane_width();
  j["total_length"] = t.total_length();
  j["start"] = {t.start().x, t.start().y};
  j["start_heading"] = t.start_heading();
  j["pieces"] = nlohmann::json::array();
  for (const Piece& p : t.pieces()) j["pieces"].push_back({{"length", p.length}, {"curvature", p.curvature}});
  j["centerline"] = nlohmann::json::array();
  for (const Vec2& p : t.sample_centerline(1.0)) j["centerline"].push_back({p.x, p.y});
  j["obstacles"] = nlohmann::json::array();
  for (const Obstacle& o : t.obstacles())
    j["obstacles"].push_back({{"arc_length", o.arc_length},
                              {"lane", to_string(o.lane)},
                              {"half_along", o.half_along},
                              {"half_across", o.half_across},
                              {"group", o.group}});
  return j;
}

inline Track track_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "imitdrive-track") throw ValidationError("not a track file");
    if (j.at("version").get<int>() != 1) throw ValidationError("unsupported track file version");
    std::vector<Piece> pieces;
    for (const auto& p : j.at("pieces"))
      pieces.push_back({p.at("length").get<double>(), p.at("curvature").get<double>()});
    std::vector<Obstacle> obstacles;
    for (const auto& o : j.at("obstacles"))
      obstacles.push_back(Obstacle{o.at("arc_length").get<double>(),
                                   lane_from_string(o.at("lane").get<std::string>()),
                                   o.value("half_along", 0.5), o.value("half_across", 1.25),
                                   o.value("group", -1)});
    const auto& st = j.at("start");
    return Track(j.at("id").get<std::string>(), std::move(pieces), j.at("lane_width").get<double>(),
                 std::move(obstacles), Vec2{st.at(0).get<double>(), st.at(1).get<double>()},
                 j.at("start_heading").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed track file: ") + e.what());
  }
}

inline Track load_track(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open track file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed track file " + path + ": " + e.what());
  }
  return track_from_json(j);
}

}  // namespace imitdrive
