#pragma once

// 2D world model, LiDAR ray casting and landmark sensing.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "sirenmap/belief_update.hpp"
#include "sirenmap/errors.hpp"
#include "sirenmap/grid.hpp"
#include "sirenmap/layer_io.hpp"

namespace sirenmap {

/// Generator for one (seed, stream) pair.
inline std::mt19937_64 seeded_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

struct Segment {
  Point2 a = Point2::Zero();
  Point2 b = Point2::Zero();
};

struct Landmark {
  int id = 0;
  Point2 position = Point2::Zero();
};

struct Extent {
  Point2 min = Point2::Zero();
  Point2 max = Point2::Zero();
  bool contains(const Point2& p) const {
    return p.x() >= min.x() && p.y() >= min.y() && p.x() <= max.x() && p.y() <= max.y();
  }
};

struct WorldModel {
  std::vector<Segment> walls;
  std::vector<Landmark> landmarks;
  Extent extent;

  void validate() const {
    if (!(extent.max.array() > extent.min.array()).all()) throw InvalidArgument("world extent is empty");
    for (const auto& w : walls)
      if (!w.a.allFinite() || !w.b.allFinite()) throw InvalidArgument("wall endpoints must be finite");
    for (const auto& l : landmarks)
      if (!extent.contains(l.position))
        throw InvalidArgument("landmark " + std::to_string(l.id) + " lies outside the extent");
  }

  std::optional<Landmark> landmark(int id) const {
    for (const auto& l : landmarks)
      if (l.id == id) return l;
    return std::nullopt;
  }
};

/// Start position plus landmarks removed for one named layout.
struct Layout {
  std::string start;
  std::vector<int> removed_landmarks;
};

/// A world plus its named starts, layouts and an optional scripted path.
struct WorldFixture {
  std::string name;
  WorldModel world;
  std::map<std::string, Point2> starts;
  std::map<std::string, Layout> layouts;
  std::vector<Point2> scripted_path;

  /// World with the layout's landmarks removed, and its start point.
  std::pair<WorldModel, Point2> apply_layout(const std::string& layout) const {
    const auto it = layouts.find(layout);
    if (it == layouts.end()) throw InvalidArgument("fixture " + name + " has no layout " + layout);
    const auto st = starts.find(it->second.start);
    if (st == starts.end()) throw MalformedFile("layout " + layout + " names unknown start " + it->second.start);
    WorldModel w = world;
    std::erase_if(w.landmarks, [&](const Landmark& l) {
      return std::find(it->second.removed_landmarks.begin(), it->second.removed_landmarks.end(), l.id) !=
             it->second.removed_landmarks.end();
    });
    return {std::move(w), st->second};
  }
};

namespace detail {
inline Point2 json_point(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2) throw MalformedFile("expected [x, y]");
  return {j[0].get<double>(), j[1].get<double>()};
}
}  // namespace detail

inline WorldFixture parse_world(const nlohmann::json& j) {
  WorldFixture f;
  try {
    f.name = j.value("name", std::string("world"));
    for (const auto& w : j.at("walls")) {
      if (!w.is_array() || w.size() != 4) throw MalformedFile("wall must be [x1, y1, x2, y2]");
      f.world.walls.push_back({{w[0].get<double>(), w[1].get<double>()}, {w[2].get<double>(), w[3].get<double>()}});
    }
    for (const auto& l : j.at("landmarks"))
      f.world.landmarks.push_back({l.at("id").get<int>(), {l.at("x").get<double>(), l.at("y").get<double>()}});
    const auto& e = j.at("extent");
    f.world.extent = {detail::json_point(e.at("min")), detail::json_point(e.at("max"))};
    if (j.contains("starts"))
      for (const auto& [k, v] : j.at("starts").items()) f.starts[k] = detail::json_point(v);
    if (j.contains("layouts"))
      for (const auto& [k, v] : j.at("layouts").items())
        f.layouts[k] = {v.at("start").get<std::string>(), v.value("removed_landmarks", std::vector<int>{})};
    if (j.contains("scripted_path"))
      for (const auto& p : j.at("scripted_path")) f.scripted_path.push_back(detail::json_point(p));
  } catch (const nlohmann::json::exception& e) {
    throw MalformedFile(std::string("world file: ") + e.what());
  }
  try {
    f.world.validate();
  } catch (const InvalidArgument& e) {
    throw MalformedFile(std::string("world file: ") + e.what());
  }
  return f;
}

inline WorldFixture load_world(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw FixtureMissing("world fixture not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw MalformedFile(path.string() + ": " + e.what());
  }
  return parse_world(j);
}

struct LidarSpec {
  double max_range = 5.0;
  double angular_resolution = 0.5 * std::numbers::pi / 180.0;
  double coverage = 2.0 * std::numbers::pi;
  double range_noise_std = 0.02;
  double bearing_noise_std = 0.1 * std::numbers::pi / 180.0;

  void validate() const {
    if (!(max_range > 0.0)) throw InvalidArgument("max_range must be positive");
    if (!(angular_resolution > 0.0) || angular_resolution > coverage)
      throw InvalidArgument("angular resolution must lie in (0, coverage]");
    if (range_noise_std < 0.0 || bearing_noise_std < 0.0) throw InvalidArgument("noise std must be >= 0");
  }
  int beam_count() const { return std::max(1, static_cast<int>(std::lround(coverage / angular_resolution))); }
  /// Bearing of beam j relative to the heading.
  double beam_bearing(int j) const { return -coverage / 2.0 + j * angular_resolution; }
};

/// Distance along the ray p + t*dir (|dir| = 1) to segment s, if hit.
inline std::optional<double> ray_segment(const Point2& p, const Point2& dir, const Segment& s) {
  const Point2 e = s.b - s.a;
  const double den = dir.x() * e.y() - dir.y() * e.x();
  if (std::abs(den) < 1e-15) return std::nullopt;
  const Point2 w = s.a - p;
  const double t = (w.x() * e.y() - w.y() * e.x()) / den;
  const double u = (w.x() * dir.y() - w.y() * dir.x()) / den;
  if (t < 0.0 || u < 0.0 || u > 1.0) return std::nullopt;
  return t;
}

/// Nearest wall distance along a ray, or infinity.
inline double cast_ray(const WorldModel& world, const Point2& p, double angle) {
  const Point2 dir(std::cos(angle), std::sin(angle));
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : world.walls)
    if (auto t = ray_segment(p, dir, s)) best = std::min(best, *t);
  return best;
}

/// True when the open segment p -> q crosses or touches a wall.
inline bool segment_blocked(const WorldModel& world, const Point2& p, const Point2& q) {
  const Point2 d = q - p;
  const double len = d.norm();
  if (len == 0.0) return false;
  const Point2 dir = d / len;
  for (const auto& s : world.walls)
    if (auto t = ray_segment(p, dir, s); t && *t <= len) return true;
  return false;
}

/// One LiDAR scan from `pose` = (x, y, phi). With zero noise the ranges are
/// exact wall distances; beams without a wall inside max_range return
/// max_range with hit = false.
template <class Rng>
std::vector<Beam> raycast_scan(const WorldModel& world, const Eigen::Vector3d& pose, const LidarSpec& spec,
                               Rng& rng) {
  spec.validate();
  const Point2 p = pose.head<2>();
  if (!world.extent.contains(p)) throw OutOfBounds(p.x(), p.y());
  std::normal_distribution<double> n01(0.0, 1.0);
  const int n = spec.beam_count();
  std::vector<Beam> scan;
  scan.reserve(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    const double bearing = spec.beam_bearing(j);
    const double r = cast_ray(world, p, pose[2] + bearing);
    Beam b;
    if (r <= spec.max_range) {
      double nr = r;
      double nb = bearing;
      if (spec.range_noise_std > 0.0) nr += spec.range_noise_std * n01(rng);
      if (spec.bearing_noise_std > 0.0) nb += spec.bearing_noise_std * n01(rng);
      b.measurement = {std::max(0.0, nr), nb};
      b.hit = true;
    } else {
      b.measurement = {spec.max_range, bearing};
      b.hit = false;
    }
    scan.push_back(b);
  }
  return scan;
}

struct LandmarkObservation {
  int id = 0;
  Eigen::VectorXd z;  ///< landmark - robot + v
};

/// Landmarks within max_range and not occluded by walls.
inline std::vector<int> visible_landmarks(const WorldModel& world, const Point2& p, double max_range) {
  std::vector<int> ids;
  for (const auto& l : world.landmarks)
    if ((l.position - p).norm() <= max_range && !segment_blocked(world, p, l.position)) ids.push_back(l.id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

/// Relative position measurements of the visible landmarks, noise ~ N(0, R).
template <class Rng>
std::vector<LandmarkObservation> observe_landmarks(const WorldModel& world, const Point2& p, double max_range,
                                                   const Eigen::Matrix2d& R, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  const Eigen::Matrix2d L = R.llt().matrixL();
  std::vector<LandmarkObservation> out;
  for (int id : visible_landmarks(world, p, max_range)) {
    const Eigen::Vector2d v(n01(rng), n01(rng));
    out.push_back({id, (world.landmark(id)->position - p + L * v).eval()});
  }
  return out;
}

/// Rasterizes walls into an occupancy-style mask (1 = wall cell).
inline std::vector<char> rasterize_walls(const WorldModel& world, const GridGeometry& g) {
  std::vector<char> mask(g.size(), 0);
  for (const auto& w : world.walls) {
    const double len = (w.b - w.a).norm();
    const int steps = std::max(1, static_cast<int>(std::ceil(len / (0.25 * g.resolution))));
    for (int i = 0; i <= steps; ++i) {
      const Point2 q = w.a + (w.b - w.a) * (static_cast<double>(i) / steps);
      const CellIndex c = g.cell_unchecked(q);
      if (g.contains(c)) mask[g.index(c)] = 1;
    }
  }
  return mask;
}

/// Cells reachable from `start` without crossing a wall, by 4-connected flood
/// fill over the rasterized free space inside the extent.
inline std::vector<char> reachable_cells(const WorldModel& world, const GridGeometry& g, const Point2& start) {
  const auto walls = rasterize_walls(world, g);
  std::vector<char> seen(g.size(), 0);
  const CellIndex s = world_to_cell(g, start);
  std::vector<std::size_t> stack{g.index(s)};
  seen[g.index(s)] = 1;
  while (!stack.empty()) {
    const CellIndex c = g.cell_of(stack.back());
    stack.pop_back();
    const CellIndex nbs[4] = {{c.col + 1, c.row}, {c.col - 1, c.row}, {c.col, c.row + 1}, {c.col, c.row - 1}};
    for (const auto& n : nbs) {
      if (!g.contains(n)) continue;
      const std::size_t j = g.index(n);
      if (seen[j] || walls[j] || !world.extent.contains(g.cell_to_world(n))) continue;
      seen[j] = 1;
      stack.push_back(j);
    }
  }
  return seen;
}

}  // namespace sirenmap
