#pragma once

// Scenario configuration, the closed exploration loop, batch execution,
// aggregation and run exports.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "sirenmap/belief_update.hpp"
#include "sirenmap/errors.hpp"
#include "sirenmap/grid.hpp"
#include "sirenmap/kf_slam.hpp"
#include "sirenmap/layer_io.hpp"
#include "sirenmap/planning.hpp"
#include "sirenmap/sim.hpp"
#include "sirenmap/stats.hpp"
#include "sirenmap/uncertainty.hpp"

#ifndef SIRENMAP_DATA_DIR
#define SIRENMAP_DATA_DIR "data"
#endif

namespace sirenmap {

/// Shortest round-trip decimal form.
inline std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::filesystem::path default_fixture_dir() { return std::filesystem::path(SIRENMAP_DATA_DIR) / "worlds"; }

struct ScenarioConfig {
  std::string world_fixture = "warehouse";
  std::string layout = "L3";
  int pps = 4;
  std::optional<double> sigma_max;  ///< defaults per PPS
  bool sigma_max_override = false;
  double T_h = 0.2;
  double sigma0 = 0.1;
  double s = 0.1;
  double kappa = 0.5;
  std::vector<std::uint64_t> seeds;
  int repeats = 5;
  std::uint64_t seed = 7;
  int iteration_cap = 5000;
  double resolution = 0.1;
  double grid_margin = 2.0;
  double step_max = 0.5;
  double heading_var = 1e-4;
  double process_noise = 0.01;
  double measurement_noise = 0.01;
  double obstacle_clearance = 0.5;
  std::size_t min_cluster_size = 4;
  int replan_check = 10;
  bool truth_noise = true;
  LidarSpec lidar;
  PlannerParams planner;
  unsigned workers = 0;
  std::filesystem::path fixture_dir = default_fixture_dir();

  double effective_sigma_max() const {
    if (sigma_max) return *sigma_max;
    return pps == 3 ? 0.6 : 1.0;
  }
  FrontierKind frontier_kind() const { return pps >= 3 ? FrontierKind::UF : FrontierKind::CF; }
  PlannerKind planner_kind() const { return pps == 1 ? PlannerKind::greedy_rrt : PlannerKind::rrt_star_uncertainty; }

  std::vector<std::uint64_t> run_seeds() const {
    if (!seeds.empty()) return seeds;
    std::vector<std::uint64_t> out;
    for (int i = 0; i < repeats; ++i) out.push_back(seed + static_cast<std::uint64_t>(i));
    return out;
  }

  void validate() const {
    if (pps < 1 || pps > 4) throw InvalidArgument("pps must be 1..4");
    if (repeats < 1 && seeds.empty()) throw InvalidArgument("repeats must be >= 1");
    if (!sigma_max_override && sigma_max) {
      if (pps == 3 && *sigma_max != 0.6) throw InvalidArgument("PPS3 runs with sigma_max = 0.6 (set sigma_max_override)");
      if (pps == 4 && *sigma_max != 1.0) throw InvalidArgument("PPS4 runs with sigma_max = 1.0 (set sigma_max_override)");
    }
    if (!(effective_sigma_max() > 0.0) || !(T_h > 0.0) || !(sigma0 > 0.0) || !(s > 0.0))
      throw InvalidArgument("sigma_max, T_h, sigma0 and s must be positive");
    if (!(kappa >= 0.0 && kappa <= 1.0)) throw InvalidArgument("kappa must lie in [0, 1]");
    if (iteration_cap < 1 || !(resolution > 0.0) || !(step_max > 0.0) || replan_check < 1)
      throw InvalidArgument("iteration_cap, resolution, step_max and replan_check must be positive");
    lidar.validate();
    planner.validate();
  }

  PriorConstants prior() const {
    const double sm = effective_sigma_max();
    return derive_prior({Eigen::Vector2d(sm, sm), RectangleSpec{s, s}, kappa});
  }

  NoiseParams noise() const {
    NoiseParams n;
    n.Q = process_noise * Eigen::Matrix2d::Identity();
    n.R = measurement_noise * Eigen::Matrix2d::Identity();
    n.P0 = sigma0 * sigma0 * Eigen::Matrix2d::Identity();
    return n;
  }

  nlohmann::json to_json() const {
    return {{"fixture", world_fixture},
            {"layout", layout},
            {"pps", pps},
            {"sigma_max", effective_sigma_max()},
            {"T_h", T_h},
            {"sigma0", sigma0},
            {"s", s},
            {"kappa", kappa},
            {"iteration_cap", iteration_cap},
            {"resolution", resolution},
            {"step_max", step_max},
            {"heading_var", heading_var},
            {"process_noise", process_noise},
            {"measurement_noise", measurement_noise},
            {"obstacle_clearance", obstacle_clearance},
            {"min_cluster_size", min_cluster_size},
            {"truth_noise", truth_noise},
            {"lidar",
             {{"max_range", lidar.max_range},
              {"angular_resolution", lidar.angular_resolution},
              {"coverage", lidar.coverage},
              {"range_noise_std", lidar.range_noise_std},
              {"bearing_noise_std", lidar.bearing_noise_std}}},
            {"planner",
             {{"Q_tilde", planner.Q_tilde},
              {"step_length", planner.step_length},
              {"rewire_radius", planner.rewire_radius},
              {"max_iterations", planner.max_iterations},
              {"goal_tolerance", planner.goal_tolerance},
              {"robot_radius", planner.robot_radius}}}};
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw InvalidArgument("bad number for " + key + ": '" + v + "'");
  return out;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw InvalidArgument("bad integer for " + key + ": '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InvalidArgument("bad boolean for " + key + ": '" + v + "'");
}

}  // namespace detail

/// Applies one `key = value` setting.
inline void apply_setting(ScenarioConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  constexpr double deg = std::numbers::pi / 180.0;
  if (key == "fixture") c.world_fixture = value;
  else if (key == "layout") c.layout = value;
  else if (key == "pps") c.pps = static_cast<int>(parse_int(key, value));
  else if (key == "sigma_max") c.sigma_max = parse_double(key, value);
  else if (key == "sigma_max_override") c.sigma_max_override = parse_bool(key, value);
  else if (key == "T_h") c.T_h = parse_double(key, value);
  else if (key == "sigma0") c.sigma0 = parse_double(key, value);
  else if (key == "s") c.s = parse_double(key, value);
  else if (key == "kappa") c.kappa = parse_double(key, value);
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "repeats") c.repeats = static_cast<int>(parse_int(key, value));
  else if (key == "seeds") {
    c.seeds.clear();
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!trim(item).empty()) c.seeds.push_back(static_cast<std::uint64_t>(parse_int(key, trim(item))));
  } else if (key == "iteration_cap") c.iteration_cap = static_cast<int>(parse_int(key, value));
  else if (key == "resolution") c.resolution = parse_double(key, value);
  else if (key == "grid_margin") c.grid_margin = parse_double(key, value);
  else if (key == "step_max") c.step_max = parse_double(key, value);
  else if (key == "heading_var") c.heading_var = parse_double(key, value);
  else if (key == "process_noise") c.process_noise = parse_double(key, value);
  else if (key == "measurement_noise") c.measurement_noise = parse_double(key, value);
  else if (key == "obstacle_clearance") c.obstacle_clearance = parse_double(key, value);
  else if (key == "min_cluster_size") c.min_cluster_size = static_cast<std::size_t>(parse_int(key, value));
  else if (key == "replan_check") c.replan_check = static_cast<int>(parse_int(key, value));
  else if (key == "truth_noise") c.truth_noise = parse_bool(key, value);
  else if (key == "lidar_max_range") c.lidar.max_range = parse_double(key, value);
  else if (key == "lidar_resolution_deg") c.lidar.angular_resolution = parse_double(key, value) * deg;
  else if (key == "lidar_range_noise") c.lidar.range_noise_std = parse_double(key, value);
  else if (key == "lidar_bearing_noise_deg") c.lidar.bearing_noise_std = parse_double(key, value) * deg;
  else if (key == "Q_tilde") c.planner.Q_tilde = parse_double(key, value);
  else if (key == "step_length") c.planner.step_length = parse_double(key, value);
  else if (key == "rewire_radius") c.planner.rewire_radius = parse_double(key, value);
  else if (key == "max_iterations") c.planner.max_iterations = static_cast<int>(parse_int(key, value));
  else if (key == "goal_tolerance") c.planner.goal_tolerance = parse_double(key, value);
  else if (key == "robot_radius") c.planner.robot_radius = parse_double(key, value);
  else if (key == "workers") c.workers = static_cast<unsigned>(parse_int(key, value));
  else if (key == "fixture_dir") c.fixture_dir = value;
  else throw InvalidArgument("unknown config key '" + key + "'");
}

/// Key-value config text: one `key = value` per line, `#` starts a comment.
inline ScenarioConfig parse_config(std::string_view text, ScenarioConfig base = {}) {
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw InvalidArgument("config line " + std::to_string(lineno) + ": expected key = value");
    apply_setting(base, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
  }
  return base;
}

inline GridGeometry world_geometry(const WorldModel& w, double resolution, double margin) {
  const Point2 origin = w.extent.min - Point2(margin, margin);
  const Point2 span = w.extent.max - w.extent.min + Point2(2 * margin, 2 * margin);
  return GridGeometry(resolution, origin, static_cast<int>(std::ceil(span.x() / resolution - 1e-9)),
                      static_cast<int>(std::ceil(span.y() / resolution - 1e-9)));
}

struct AgentOptions {
  LidarSpec lidar;
  NoiseParams noise;
  double heading_var = 1e-4;
  double step_max = 0.5;
  bool truth_noise = true;
  FovOptions fov;
};

/// Simulated robot with its KF-SLAM state and DP/occupancy maps.
class Agent {
 public:
  Agent(WorldModel world, const Point2& start, const GridGeometry& geometry, PriorConstants prior,
        AgentOptions opt, std::uint64_t seed)
      : world_(std::move(world)),
        prior_(std::move(prior)),
        opt_(std::move(opt)),
        truth_(start),
        kf_(kf_init(start, opt_.noise)),
        dp_(make_dp_grid(geometry, prior_)),
        occ_(make_occupancy_grid(geometry)),
        rng_(seeded_rng(seed, 0x51e4)) {
    opt_.fov.sensor_noise = Eigen::Vector2d(opt_.lidar.range_noise_std * opt_.lidar.range_noise_std,
                                            opt_.lidar.bearing_noise_std * opt_.lidar.bearing_noise_std)
                                .asDiagonal();
    if (!(opt_.fov.sensor_noise.diagonal().array() > 0.0).all())
      opt_.fov.sensor_noise = opt_.fov.sensor_noise + 1e-12 * Eigen::Matrix2d::Identity();
  }

  /// Landmark observation, KF update and one map update.
  void sense() {
    const auto obs = observe_landmarks(world_, truth_, opt_.lidar.max_range, opt_.noise.R, rng_);
    kf_ = kf_update(std::move(kf_), obs, opt_.noise);
    if (!obs.empty()) d_odo_ = 0.0;
    const auto scan = raycast_scan(world_, Eigen::Vector3d(truth_.x(), truth_.y(), heading_), opt_.lidar, rng_);
    apply_fov(dp_, occ_, pose_belief(kf_, heading_, opt_.heading_var), scan, prior_, opt_.fov);
    ++updates_;
  }

  /// Commands a planar displacement. Returns false if a wall blocked it.
  bool step(const Eigen::Vector2d& cmd) {
    if (cmd.norm() > 1e-12) heading_ = std::atan2(cmd.y(), cmd.x());
    Eigen::Vector2d w = Eigen::Vector2d::Zero();
    if (opt_.truth_noise) {
      std::normal_distribution<double> n01(0.0, 1.0);
      const Eigen::Matrix2d L = opt_.noise.Q.llt().matrixL();
      w = L * Eigen::Vector2d(n01(rng_), n01(rng_));
    }
    const Point2 next = truth_ + cmd + w;
    const bool blocked = !world_.extent.contains(next) || segment_blocked(world_, truth_, next);
    const Eigen::Vector2d u = blocked ? Eigen::Vector2d(-w) : cmd;
    if (!blocked) truth_ = next;
    kf_ = kf_predict(std::move(kf_), u, opt_.noise);
    d_odo_ += u.norm();
    return !blocked;
  }

  const WorldModel& world() const { return world_; }
  const PriorConstants& prior() const { return prior_; }
  const Point2& truth() const { return truth_; }
  double heading() const { return heading_; }
  const KfState& kf() const { return kf_; }
  const GridLayer& dp() const { return dp_; }
  const GridLayer& occupancy_layer() const { return occ_; }
  double d_odo() const { return d_odo_; }
  int updates() const { return updates_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  WorldModel world_;
  PriorConstants prior_;
  AgentOptions opt_;
  Point2 truth_;
  double heading_ = 0.0;
  KfState kf_;
  GridLayer dp_;
  GridLayer occ_;
  std::mt19937_64 rng_;
  double d_odo_ = 0.0;
  int updates_ = 0;
};

inline AgentOptions agent_options(const ScenarioConfig& c) {
  AgentOptions o;
  o.lidar = c.lidar;
  o.noise = c.noise();
  o.heading_var = c.heading_var;
  o.step_max = c.step_max;
  o.truth_noise = c.truth_noise;
  return o;
}

struct TrajectorySample {
  int t = 0;
  double x = 0.0;
  double y = 0.0;
  double phi = 0.0;
};

struct FrontierEvent {
  int tick = 0;
  std::size_t uf_clusters = 0;
  std::size_t cf_clusters = 0;
  std::optional<Point2> target;
  double path_cost = 0.0;
};

struct RunRecord {
  ScenarioConfig config;
  std::uint64_t seed = 0;
  std::vector<TrajectorySample> trajectory;
  std::vector<double> siren_trace;
  GridLayer dp;
  GridLayer um;
  GridLayer occupancy;
  std::vector<FrontierEvent> frontier_history;
  std::string stopping_reason;
  std::string error;
  double wall_clock_s = 0.0;
  std::vector<std::pair<int, double>> landmark_sigmas;  ///< (id, sigma~_l)
  int ticks = 0;
  double final_siren = 0.0;
  double coverage = 0.0;
  std::size_t unexplored_reachable = 0;
  std::size_t explored_cells = 0;

  double median_landmark_sigma() const {
    std::vector<double> v;
    for (const auto& [id, s] : landmark_sigmas) v.push_back(s);
    return v.empty() ? std::numeric_limits<double>::quiet_NaN() : median(v);
  }
  /// Median UM over explored cells.
  double median_um() const {
    std::vector<double> v;
    for (std::size_t i = 0; i < dp.size(); ++i)
      if (dp.values[i] != config.prior().ell_beta) v.push_back(um.values[i]);
    return v.empty() ? std::numeric_limits<double>::quiet_NaN() : median(v);
  }
};

namespace detail {

inline FrontierSet frontiers_for(const Agent& a, FrontierKind kind, const ScenarioConfig& c) {
  FrontierParams fp = FrontierParams::from_prior(a.prior(), c.T_h);
  fp.obstacle_clearance = c.obstacle_clearance;
  fp.min_cluster_size = c.min_cluster_size;
  if (kind == FrontierKind::UF)
    return extract_uncertainty_frontiers(build_uncertainty_map(a.dp(), a.prior()), a.occupancy_layer(), fp);
  return extract_classical_frontiers(a.occupancy_layer(), fp);
}

inline bool target_alive(const FrontierSet& fs, FrontierKind kind, const Point2& target, const GridGeometry& g,
                         double radius) {
  for (const auto& cl : fs.clusters(kind))
    for (std::size_t i : cl.cells)
      if ((g.cell_to_world(g.cell_of(i)) - target).norm() <= radius) return true;
  return false;
}

// Advances up to `budget` meters along `path` from `from`, consuming nodes.
inline Point2 follow(const Path& path, std::size_t& next, Point2 from, double budget) {
  while (next < path.nodes.size() && budget > 1e-12) {
    const Eigen::Vector2d seg = path.nodes[next].position - from;
    const double len = seg.norm();
    if (len <= budget) {
      from = path.nodes[next].position;
      budget -= len;
      ++next;
    } else {
      from += seg * (budget / len);
      budget = 0.0;
    }
  }
  return from;
}

}  // namespace detail

/// One closed-loop exploration run: sense, update KF and maps, select an
/// objective, plan and move, until no objective is reachable or the cap.
inline RunRecord run_single(const ScenarioConfig& config, const WorldFixture& fixture, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.config = config;
  rec.seed = seed;
  const PriorConstants prior = config.prior();
  auto [world, start] = fixture.apply_layout(config.layout);
  const GridGeometry geom = world_geometry(world, config.resolution, config.grid_margin);
  Agent agent(world, start, geom, prior, agent_options(config), seed);
  const SirenParams sp = SirenParams::from_prior(prior);
  const FrontierKind kind = config.frontier_kind();
  const PlannerKind planner = config.planner_kind();
  auto record_tick = [&](int t) {
    rec.trajectory.push_back({t, agent.truth().x(), agent.truth().y(), agent.heading()});
    rec.siren_trace.push_back(siren(agent.dp(), prior, sp).total);
  };

  try {
    agent.sense();
    record_tick(0);
    std::optional<Selection> current;
    std::size_t next = 1;
    std::vector<Point2> done;
    int since_check = 0;
    int blocked_streak = 0;
    int tick = 0;
    rec.stopping_reason = "iteration_cap";
    while (tick < config.iteration_cap) {
      bool need_plan = !current || next >= current->path.nodes.size();
      if (current && next >= current->path.nodes.size()) done.push_back(current->objective.target);
      if (!need_plan && since_check >= config.replan_check) {
        since_check = 0;
        const auto fs = detail::frontiers_for(agent, kind, config);
        need_plan = !detail::target_alive(fs, kind, current->objective.target, geom,
                                          config.planner.goal_tolerance + 2 * geom.resolution);
      }
      if (need_plan) {
        const auto fs = detail::frontiers_for(agent, kind, config);
        FreeSpace space = FreeSpace::from_occupancy(agent.occupancy_layer(), config.planner.robot_radius);
        space.exempt_center = agent.kf().robot();
        space.exempt_radius = config.planner.robot_radius + geom.resolution;
        const VisibilityOracle oracle = planner == PlannerKind::rrt_star_uncertainty
                                            ? belief_visibility(agent.kf(), agent.occupancy_layer(),
                                                                config.lidar.max_range)
                                            : VisibilityOracle{};
        PlannerParams pp = config.planner;
        pp.cell_size = config.resolution;
        pp.seed = seed * 1000003ull + static_cast<std::uint64_t>(tick);
        current = select_objective(fs, {agent.kf().robot(), agent.d_odo(), 0.0}, kind, space, oracle, planner, pp,
                                   done, 1.0);
        FrontierEvent ev{tick, fs.uf_clusters.size(), fs.cf_clusters.size(), std::nullopt, 0.0};
        if (current) {
          ev.target = current->objective.target;
          ev.path_cost = current->path.cost;
        }
        rec.frontier_history.push_back(ev);
        if (!current) {
          rec.stopping_reason = "no_objectives";
          break;
        }
        next = 1;
        since_check = 0;
        if (current->path.nodes.size() <= 1) {
          done.push_back(current->objective.target);
          current.reset();
          continue;
        }
      }
      const Point2 from = agent.kf().robot();
      const Point2 to = detail::follow(current->path, next, from, config.step_max);
      const bool moved = agent.step(to - from);
      agent.sense();
      ++tick;
      ++since_check;
      record_tick(tick);
      if (!moved) {
        if (++blocked_streak >= 3) {
          done.push_back(current->objective.target);
          blocked_streak = 0;
        }
        current.reset();
      } else {
        blocked_streak = 0;
      }
    }
    rec.ticks = tick;
  } catch (const Error& e) {
    rec.stopping_reason = "error";
    rec.error = std::string(e.kind()) + ": " + e.what();
  }

  rec.dp = agent.dp();
  rec.occupancy = agent.occupancy_layer();
  rec.um = build_uncertainty_map(rec.dp, prior);
  const auto rep = siren(rec.dp, prior, sp);
  rec.final_siren = rep.total;
  rec.explored_cells = rep.explored_cells;
  for (const auto& [id, off] : agent.kf().landmark_registry) rec.landmark_sigmas.emplace_back(id, agent.kf().landmark_sigma(id));
  const auto reach = reachable_cells(world, geom, start);
  std::size_t total = 0, seen = 0;
  for (std::size_t i = 0; i < reach.size(); ++i) {
    if (!reach[i]) continue;
    ++total;
    if (rec.dp.values[i] != prior.ell_beta) ++seen;
  }
  rec.coverage = total ? static_cast<double>(seen) / static_cast<double>(total) : 0.0;
  rec.unexplored_reachable = total - seen;
  rec.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

inline WorldFixture load_fixture(const ScenarioConfig& c) {
  return load_world(c.fixture_dir / (c.world_fixture + ".json"));
}

/// Runs every job on a pool of worker threads; results keep job order.
template <class Job, class Fn>
auto parallel_map(const std::vector<Job>& jobs, unsigned workers, Fn fn) {
  using R = decltype(fn(jobs.front()));
  std::vector<std::optional<R>> slots(jobs.size());
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(1, jobs.size())));
  std::atomic<std::size_t> cursor{0};
  auto worker = [&] {
    for (std::size_t i = cursor++; i < jobs.size(); i = cursor++) slots[i].emplace(fn(jobs[i]));
  };
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  std::vector<R> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

/// All seeds of one configuration.
inline std::vector<RunRecord> run_scenario(const ScenarioConfig& config) {
  config.validate();
  const WorldFixture fixture = load_fixture(config);
  return parallel_map(config.run_seeds(), config.workers,
                      [&](std::uint64_t s) { return run_single(config, fixture, s); });
}

/// Several configurations, flattened into one job list.
inline std::vector<RunRecord> run_batch(const std::vector<ScenarioConfig>& configs, unsigned workers = 0) {
  std::map<std::string, WorldFixture> fixtures;
  std::vector<std::pair<std::size_t, std::uint64_t>> jobs;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    configs[i].validate();
    const auto key = (configs[i].fixture_dir / configs[i].world_fixture).string();
    if (!fixtures.count(key)) fixtures.emplace(key, load_fixture(configs[i]));
    for (auto s : configs[i].run_seeds()) jobs.emplace_back(i, s);
  }
  return parallel_map(jobs, workers, [&](const std::pair<std::size_t, std::uint64_t>& j) {
    const auto& c = configs[j.first];
    return run_single(c, fixtures.at((c.fixture_dir / c.world_fixture).string()), j.second);
  });
}

/// Drives the agent along fixed waypoints without planning, sensing after
/// every step. Used for scripted frontier scenes.
inline Agent follow_waypoints(const WorldModel& world, const std::vector<Point2>& waypoints, const GridGeometry& geom,
                              const PriorConstants& prior, const AgentOptions& opt, std::uint64_t seed) {
  if (waypoints.empty()) throw InvalidArgument("scripted path is empty");
  Agent agent(world, waypoints.front(), geom, prior, opt, seed);
  agent.sense();
  Path path;
  for (const auto& w : waypoints) {
    PlanNode n;
    n.position = w;
    path.nodes.push_back(n);
  }
  std::size_t next = 1;
  while (next < path.nodes.size()) {
    const Point2 from = agent.kf().robot();
    const Point2 to = detail::follow(path, next, from, opt.step_max);
    agent.step(to - from);
    agent.sense();
  }
  return agent;
}

struct GroupKey {
  std::string layout;
  int pps = 0;
  friend bool operator<(const GroupKey& a, const GroupKey& b) {
    return std::tie(a.layout, a.pps) < std::tie(b.layout, b.pps);
  }
};

/// Final-SiREn box statistics per (layout, pps).
inline std::map<GroupKey, BoxStats> aggregate_boxplots(const std::vector<RunRecord>& records) {
  std::map<GroupKey, std::vector<double>> groups;
  for (const auto& r : records)
    if (r.stopping_reason != "error") groups[{r.config.layout, r.config.pps}].push_back(r.final_siren);
  if (groups.empty()) throw EmptyGroup("no completed runs to aggregate");
  std::map<GroupKey, BoxStats> out;
  for (const auto& [k, v] : groups) out[k] = box_stats(v);
  return out;
}

inline std::string boxplot_csv(const std::map<GroupKey, BoxStats>& table) {
  std::string s = "# quantiles: linear interpolation (type 7)\nlayout,pps,n,min,q1,median,q3,max\n";
  for (const auto& [k, b] : table)
    s += k.layout + "," + std::to_string(k.pps) + "," + std::to_string(b.n) + "," + fmt(b.min) + "," + fmt(b.q1) +
         "," + fmt(b.median) + "," + fmt(b.q3) + "," + fmt(b.max) + "\n";
  return s;
}

/// Median UM over explored cells regressed on median landmark sigma~_l.
inline RegressionFit fit_landmark_um(const std::vector<RunRecord>& records) {
  std::vector<double> x, y;
  for (const auto& r : records) {
    if (r.landmark_sigmas.empty() || r.stopping_reason == "error") continue;
    x.push_back(r.median_landmark_sigma());
    y.push_back(r.median_um());
  }
  if (x.size() < 3) throw InsufficientData("landmark-UM fit needs >= 3 records with landmarks");
  return linear_fit(x, y);
}

inline std::string regression_csv(const RegressionFit& f) {
  return "slope,intercept,pearson_r,r_squared,n\n" + fmt(f.slope) + "," + fmt(f.intercept) + "," + fmt(f.pearson_r) +
         "," + fmt(f.r_squared) + "," + std::to_string(f.n) + "\n";
}

inline std::string summary_header() {
  return "fixture,layout,pps,sigma_max,seed,stopping_reason,ticks,map_updates,final_siren,coverage,"
         "unexplored_reachable,explored_cells,median_landmark_sigma,median_um\n";
}

inline std::string summary_row(const RunRecord& r) {
  return r.config.world_fixture + "," + r.config.layout + "," + std::to_string(r.config.pps) + "," +
         fmt(r.config.effective_sigma_max()) + "," + std::to_string(r.seed) + "," + r.stopping_reason + "," +
         std::to_string(r.ticks) + "," + std::to_string(r.siren_trace.size()) + "," + fmt(r.final_siren) + "," +
         fmt(r.coverage) + "," + std::to_string(r.unexplored_reachable) + "," + std::to_string(r.explored_cells) +
         "," + fmt(r.median_landmark_sigma()) + "," + fmt(r.median_um()) + "\n";
}

inline std::string run_dir_name(const RunRecord& r) {
  return r.config.world_fixture + "_" + r.config.layout + "_pps" + std::to_string(r.config.pps) + "_seed" +
         std::to_string(r.seed);
}

inline nlohmann::json record_json(const RunRecord& r) {
  nlohmann::json lm = nlohmann::json::array();
  for (const auto& [id, s] : r.landmark_sigmas) lm.push_back({{"id", id}, {"sigma", s}});
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& e : r.frontier_history) {
    nlohmann::json h = {{"tick", e.tick}, {"uf_clusters", e.uf_clusters}, {"cf_clusters", e.cf_clusters}};
    if (e.target) {
      h["target"] = {e.target->x(), e.target->y()};
      h["path_cost"] = e.path_cost;
    }
    hist.push_back(h);
  }
  return {{"seed", r.seed},
          {"stopping_reason", r.stopping_reason},
          {"error", r.error},
          {"ticks", r.ticks},
          {"map_updates", r.siren_trace.size()},
          {"wall_clock_s", r.wall_clock_s},
          {"final_siren", r.final_siren},
          {"coverage", r.coverage},
          {"unexplored_reachable", r.unexplored_reachable},
          {"explored_cells", r.explored_cells},
          {"landmarks", lm},
          {"frontier_history", hist}};
}

/// Writes one run directory.
inline void write_run(const RunRecord& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "config.json", r.config.to_json().dump(2) + "\n");
  std::string traj = "t,x,y,phi\n";
  for (const auto& s : r.trajectory)
    traj += std::to_string(s.t) + "," + fmt(s.x) + "," + fmt(s.y) + "," + fmt(s.phi) + "\n";
  write_file_atomic(dir / "trajectory.csv", traj);
  std::string tr = "update,siren\n";
  for (std::size_t i = 0; i < r.siren_trace.size(); ++i) tr += std::to_string(i) + "," + fmt(r.siren_trace[i]) + "\n";
  write_file_atomic(dir / "siren_trace.csv", tr);
  save_layer(r.dp, dir / "dp");
  save_layer(r.um, dir / "um");
  save_layer(r.occupancy, dir / "occupancy");
  write_file_atomic(dir / "record.json", record_json(r).dump(2) + "\n");
}

/// Run directories plus `summary.csv` (one row per run, no timing fields).
inline void write_batch(const std::vector<RunRecord>& records, const std::filesystem::path& out) {
  std::string summary = summary_header();
  for (const auto& r : records) {
    write_run(r, out / run_dir_name(r));
    summary += summary_row(r);
  }
  write_file_atomic(out / "summary.csv", summary);
}

}  // namespace sirenmap
