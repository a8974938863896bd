#pragma once

// Frontier objective selection, greedy RRT and the landmark-aware RRT*.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "json.hpp"

#include "sirenmap/belief_update.hpp"
#include "sirenmap/errors.hpp"
#include "sirenmap/grid.hpp"
#include "sirenmap/kf_slam.hpp"
#include "sirenmap/uncertainty.hpp"

namespace sirenmap {

struct PlannerParams {
  double cell_size = 0.1;
  double Q_tilde = 0.01;
  double step_length = 0.25;
  double rewire_radius = 1.0;
  int max_iterations = 3000;
  double goal_tolerance = 0.3;
  std::uint64_t seed = 1;
  double robot_radius = 0.25;
  double goal_bias = 0.2;
  /// Clusters probed per selection round, nearest first.
  std::size_t probe_batch = 6;
  /// RRT* keeps refining until this multiple of the iteration at which the
  /// last target was first reached.
  double refine_factor = 1.5;

  void validate() const {
    if (!(cell_size > 0.0 && Q_tilde > 0.0 && step_length > 0.0 && rewire_radius > 0.0 &&
          goal_tolerance > 0.0 && max_iterations > 0 && robot_radius >= 0.0 && probe_batch > 0))
      throw InvalidArgument("planner parameters must be positive");
    if (!(goal_bias >= 0.0 && goal_bias <= 1.0)) throw InvalidArgument("goal_bias must lie in [0, 1]");
    if (!(refine_factor >= 1.0)) throw InvalidArgument("refine_factor must be >= 1");
  }
};

struct LandmarkSighting {
  int id = 0;
  double sigma = 0.0;  ///< believed geometric-mean sigma of the landmark
};

/// Landmarks visible from a point, sorted by id.
using VisibilityOracle = std::function<std::vector<LandmarkSighting>(const Point2&)>;

struct PlanNode {
  Point2 position = Point2::Zero();
  int parent = -1;
  double d = 0.0;
  double d_odo = 0.0;
  double sigma_l = 0.0;
  double cost = 0.0;
};

inline double plan_cost(double d, double d_odo, double sigma_l, const PlannerParams& p) {
  return d + d_odo + 2.0 * sigma_l / (p.cell_size * p.Q_tilde);
}

/// Child of `parent` at `child`, given the landmarks visible there.
inline PlanNode node_cost(const PlanNode& parent, const Point2& child, const std::vector<LandmarkSighting>& visible,
                          const PlannerParams& params) {
  PlanNode n;
  n.position = child;
  const double seg = (child - parent.position).norm();
  n.d = parent.d + seg;
  n.d_odo = parent.d_odo + seg;
  n.sigma_l = parent.sigma_l;
  if (!visible.empty()) {
    n.d_odo = 0.0;
    n.sigma_l = visible.back().sigma;
  }
  n.cost = plan_cost(n.d, n.d_odo, n.sigma_l, params);
  return n;
}

inline PlanNode node_cost(const PlanNode& parent, const Point2& child, const VisibilityOracle& oracle,
                          const PlannerParams& params) {
  return node_cost(parent, child, oracle ? oracle(child) : std::vector<LandmarkSighting>{}, params);
}

/// Traversable space derived from an occupancy layer: known-free cells
/// farther than robot_radius from any occupied cell. Points within
/// `exempt_radius` of `exempt_center` only need to be known free.
struct FreeSpace {
  GridGeometry geometry;
  std::vector<char> known_free;
  std::vector<char> clear;
  std::vector<std::size_t> clear_cells;
  Point2 exempt_center = Point2::Zero();
  double exempt_radius = 0.0;

  static FreeSpace from_occupancy(const GridLayer& occupancy_grid, double robot_radius) {
    if (occupancy_grid.semantic != LayerSemantic::occupancy)
      throw InvalidArgument("free space needs an occupancy layer");
    FreeSpace fs;
    fs.geometry = occupancy_grid.geometry;
    const auto n = occupancy_grid.size();
    fs.known_free.assign(n, 0);
    fs.clear.assign(n, 0);
    std::vector<char> occ(n);
    for (std::size_t i = 0; i < n; ++i) occ[i] = occupancy_grid.values[i] == occupancy::occupied;
    const auto dist = distance_to_mask(fs.geometry, occ);
    for (std::size_t i = 0; i < n; ++i) {
      fs.known_free[i] = occupancy_grid.values[i] == occupancy::free;
      fs.clear[i] = fs.known_free[i] && dist[i] > robot_radius;
      if (fs.clear[i]) fs.clear_cells.push_back(i);
    }
    return fs;
  }

  bool point_ok(const Point2& p) const {
    const CellIndex c = geometry.cell_unchecked(p);
    if (!geometry.contains(c)) return false;
    const std::size_t i = geometry.index(c);
    if (clear[i]) return true;
    return known_free[i] && (p - exempt_center).norm() <= exempt_radius;
  }

  bool segment_ok(const Point2& a, const Point2& b) const {
    const double len = (b - a).norm();
    const int steps = std::max(1, static_cast<int>(std::ceil(len / (0.5 * geometry.resolution))));
    for (int i = 0; i <= steps; ++i)
      if (!point_ok(a + (b - a) * (static_cast<double>(i) / steps))) return false;
    return true;
  }
};

enum class PlannerKind { greedy_rrt, rrt_star_uncertainty };

struct Path {
  std::vector<PlanNode> nodes;  ///< root first; empty when start already meets the goal
  double cost = 0.0;
  double length = 0.0;
  bool empty() const { return nodes.empty(); }
};

struct Objective {
  FrontierKind kind = FrontierKind::CF;
  Point2 target = Point2::Zero();  ///< cluster cell nearest the centroid
  FrontierCluster cluster;
};

/// Start state of a plan: position, referenceless distance so far and the
/// last landmark sigma (zero at the start of every plan).
struct PlanStart {
  Point2 position = Point2::Zero();
  double d_odo = 0.0;
  double sigma_l = 0.0;
};

struct PlanTree {
  std::vector<PlanNode> nodes;
  std::vector<std::vector<int>> children;
  std::vector<std::vector<LandmarkSighting>> sightings;
};

namespace detail {

inline Path extract_path(const PlanTree& tree, int goal) {
  Path p;
  for (int i = goal; i >= 0; i = tree.nodes[static_cast<std::size_t>(i)].parent)
    p.nodes.push_back(tree.nodes[static_cast<std::size_t>(i)]);
  std::reverse(p.nodes.begin(), p.nodes.end());
  p.cost = p.nodes.back().cost;
  p.length = p.nodes.back().d;
  return p;
}

// Recomputes the subtree under `root` after its state changed. Returns false
// (and leaves the tree untouched) if any descendant's cost would increase.
inline bool try_propagate(PlanTree& tree, int root, const PlanNode& new_root_state, const PlannerParams& params) {
  std::vector<std::pair<int, PlanNode>> updates{{root, new_root_state}};
  for (std::size_t k = 0; k < updates.size(); ++k) {
    const auto [idx, state] = updates[k];
    for (int ch : tree.children[static_cast<std::size_t>(idx)]) {
      PlanNode n = node_cost(state, tree.nodes[static_cast<std::size_t>(ch)].position,
                             tree.sightings[static_cast<std::size_t>(ch)], params);
      n.parent = idx;
      if (n.cost > tree.nodes[static_cast<std::size_t>(ch)].cost) return false;
      updates.emplace_back(ch, n);
    }
  }
  const int old_parent = tree.nodes[static_cast<std::size_t>(root)].parent;
  if (old_parent != new_root_state.parent) {
    auto& sib = tree.children[static_cast<std::size_t>(old_parent)];
    sib.erase(std::find(sib.begin(), sib.end(), root));
    tree.children[static_cast<std::size_t>(new_root_state.parent)].push_back(root);
  }
  for (const auto& [idx, n] : updates) tree.nodes[static_cast<std::size_t>(idx)] = n;
  return true;
}

}  // namespace detail

struct ProbeResult {
  PlanTree tree;
  std::vector<std::optional<Path>> paths;  ///< one per target
  int iterations = 0;
};

/// Grows one tree from `start` toward all `targets` with a shared iteration
/// budget. Greedy RRT keeps the first branch reaching each target; RRT*
/// chooses parents and rewires by node_cost and returns the cheapest node
/// inside each goal region.
inline ProbeResult probe_targets(const PlanStart& start, const std::vector<Point2>& targets, const FreeSpace& space,
                                 const VisibilityOracle& oracle, PlannerKind kind, const PlannerParams& params) {
  params.validate();
  ProbeResult res;
  res.paths.assign(targets.size(), std::nullopt);
  if (targets.empty()) return res;
  PlanTree& tree = res.tree;
  PlanNode root;
  root.position = start.position;
  root.d_odo = start.d_odo;
  root.sigma_l = start.sigma_l;
  root.cost = plan_cost(0.0, root.d_odo, root.sigma_l, params);
  tree.nodes.push_back(root);
  tree.children.emplace_back();
  tree.sightings.emplace_back();

  const double tol = params.goal_tolerance;
  std::vector<int> first_goal(targets.size(), -1);
  std::size_t reached = 0;
  for (std::size_t t = 0; t < targets.size(); ++t)
    if ((targets[t] - start.position).norm() <= tol) {
      res.paths[t] = Path{};
      first_goal[t] = 0;
      ++reached;
    }
  if (reached == targets.size()) return res;
  if (space.clear_cells.empty()) return res;

  std::mt19937_64 rng = seeded_rng(params.seed, 0x9e37);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_cell(0, space.clear_cells.size() - 1);
  const auto& g = space.geometry;
  std::size_t bias_cursor = 0;
  int all_reached_at = -1;

  for (int it = 0; it < params.max_iterations; ++it) {
    res.iterations = it + 1;
    if (all_reached_at >= 0 &&
        (kind == PlannerKind::greedy_rrt || it >= std::ceil(params.refine_factor * all_reached_at)))
      break;
    Point2 sample;
    if (u01(rng) < params.goal_bias) {
      std::size_t t = bias_cursor++ % targets.size();
      if (kind == PlannerKind::greedy_rrt)
        for (std::size_t k = 0; k < targets.size() && first_goal[t] >= 0; ++k) t = (t + 1) % targets.size();
      sample = targets[t];
    } else {
      const CellIndex c = g.cell_of(space.clear_cells[pick_cell(rng)]);
      sample = g.cell_to_world(c) + g.resolution * Point2(u01(rng) - 0.5, u01(rng) - 0.5);
    }
    int nearest = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
      const double dd = (tree.nodes[i].position - sample).squaredNorm();
      if (dd < best_d) {
        best_d = dd;
        nearest = static_cast<int>(i);
      }
    }
    const Point2 from = tree.nodes[static_cast<std::size_t>(nearest)].position;
    const double dist = std::sqrt(best_d);
    if (dist < 1e-9) continue;
    const Point2 x_new = dist <= params.step_length ? sample : Point2(from + (sample - from) * (params.step_length / dist));
    if (!space.segment_ok(from, x_new)) continue;
    std::vector<LandmarkSighting> vis = oracle ? oracle(x_new) : std::vector<LandmarkSighting>{};

    PlanNode node = node_cost(tree.nodes[static_cast<std::size_t>(nearest)], x_new, vis, params);
    node.parent = nearest;
    std::vector<int> near;
    if (kind == PlannerKind::rrt_star_uncertainty) {
      const double r2 = params.rewire_radius * params.rewire_radius;
      for (std::size_t i = 0; i < tree.nodes.size(); ++i)
        if ((tree.nodes[i].position - x_new).squaredNorm() <= r2) near.push_back(static_cast<int>(i));
      for (int i : near) {
        if (i == nearest) continue;
        const PlanNode cand = node_cost(tree.nodes[static_cast<std::size_t>(i)], x_new, vis, params);
        if (cand.cost < node.cost && space.segment_ok(tree.nodes[static_cast<std::size_t>(i)].position, x_new)) {
          node = cand;
          node.parent = i;
        }
      }
    }
    const int new_idx = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back(node);
    tree.children.emplace_back();
    tree.sightings.push_back(std::move(vis));
    tree.children[static_cast<std::size_t>(node.parent)].push_back(new_idx);

    if (kind == PlannerKind::rrt_star_uncertainty) {
      std::vector<char> ancestor(tree.nodes.size(), 0);
      for (int a = node.parent; a >= 0; a = tree.nodes[static_cast<std::size_t>(a)].parent)
        ancestor[static_cast<std::size_t>(a)] = 1;
      for (int i : near) {
        if (ancestor[static_cast<std::size_t>(i)]) continue;
        const auto& ni = tree.nodes[static_cast<std::size_t>(i)];
        PlanNode cand = node_cost(tree.nodes[static_cast<std::size_t>(new_idx)], ni.position,
                                  tree.sightings[static_cast<std::size_t>(i)], params);
        cand.parent = new_idx;
        if (cand.cost < ni.cost && space.segment_ok(x_new, ni.position))
          detail::try_propagate(tree, i, cand, params);
      }
    }

    for (std::size_t t = 0; t < targets.size(); ++t)
      if (first_goal[t] < 0 && (x_new - targets[t]).norm() <= tol) {
        first_goal[t] = new_idx;
        if (++reached == targets.size()) all_reached_at = it + 1;
      }
  }

  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (first_goal[t] <= 0) continue;
    int goal = first_goal[t];
    if (kind == PlannerKind::rrt_star_uncertainty) {
      for (std::size_t i = 1; i < tree.nodes.size(); ++i)
        if ((tree.nodes[i].position - targets[t]).norm() <= tol &&
            tree.nodes[i].cost < tree.nodes[static_cast<std::size_t>(goal)].cost)
          goal = static_cast<int>(i);
    }
    res.paths[t] = detail::extract_path(tree, goal);
  }
  return res;
}

/// Plain RRT; returns the first branch that reaches the goal region.
inline Path plan_greedy_rrt(const Point2& start, const Objective& goal, const FreeSpace& space,
                            const PlannerParams& params) {
  auto res = probe_targets({start, 0.0, 0.0}, {goal.target}, space, {}, PlannerKind::greedy_rrt, params);
  if (!res.paths[0]) throw NoPathFound("greedy RRT found no path within " + std::to_string(params.max_iterations) +
                                       " iterations");
  return *res.paths[0];
}

/// RRT* minimizing d + d_odo + 2 sigma_l / (c Q~).
inline Path plan_rrt_star_uncertainty(const PlanStart& start, const Objective& goal, const FreeSpace& space,
                                      const VisibilityOracle& oracle, const PlannerParams& params) {
  auto res = probe_targets(start, {goal.target}, space, oracle, PlannerKind::rrt_star_uncertainty, params);
  if (!res.paths[0]) throw NoPathFound("RRT* found no path within " + std::to_string(params.max_iterations) +
                                       " iterations");
  return *res.paths[0];
}

/// Visibility as the agent believes it: KF landmark means within range and
/// not occluded by occupied cells of the current map.
inline VisibilityOracle belief_visibility(const KfState& kf, const GridLayer& occupancy_grid, double max_range) {
  struct Entry {
    int id;
    Point2 mean;
    double sigma;
  };
  std::vector<Entry> entries;
  for (const auto& [id, off] : kf.landmark_registry) entries.push_back({id, kf.X.segment<2>(off), kf.landmark_sigma(id)});
  return [entries = std::move(entries), &occupancy_grid, max_range](const Point2& p) {
    std::vector<LandmarkSighting> out;
    const auto& g = occupancy_grid.geometry;
    const CellIndex pc = g.cell_unchecked(p);
    for (const auto& e : entries) {
      if ((e.mean - p).norm() > max_range) continue;
      const auto line = grid_line(pc, g.cell_unchecked(e.mean));
      bool blocked = false;
      // The landmark's own cell and its neighbor sit on the wall.
      for (std::size_t i = 0; i + 2 < line.size(); ++i)
        if (g.contains(line[i]) && occupancy_grid[line[i]] == occupancy::occupied) {
          blocked = true;
          break;
        }
      if (!blocked) out.push_back({e.id, e.sigma});
    }
    return out;
  };
}

/// Cluster cell nearest the centroid, preferring traversable cells.
inline Point2 cluster_target(const FrontierCluster& c, const FreeSpace& space) {
  const auto& g = space.geometry;
  Point2 best = c.centroid;
  double best_d = std::numeric_limits<double>::infinity();
  bool best_ok = false;
  for (std::size_t i : c.cells) {
    const Point2 p = g.cell_to_world(g.cell_of(i));
    const bool ok = space.point_ok(p);
    const double d = (p - c.centroid).squaredNorm();
    if ((ok && !best_ok) || (ok == best_ok && d < best_d)) {
      best = p;
      best_d = d;
      best_ok = ok;
    }
  }
  return best;
}

struct Selection {
  Objective objective;
  Path path;
};

/// Cheapest reachable cluster of `kind`. Clusters are probed in batches of
/// `probe_batch`, nearest first; a batch with a reachable cluster ends the
/// search. Clusters whose target lies within `exclusion_radius` of an
/// excluded point are skipped.
inline std::optional<Selection> select_objective(const FrontierSet& frontiers, const PlanStart& agent,
                                                 FrontierKind kind, const FreeSpace& space,
                                                 const VisibilityOracle& oracle, PlannerKind planner,
                                                 const PlannerParams& params,
                                                 const std::vector<Point2>& excluded = {},
                                                 double exclusion_radius = 0.0) {
  const auto& clusters = frontiers.clusters(kind);
  struct Cand {
    std::size_t cluster;
    Point2 target;
    double dist;
  };
  std::vector<Cand> cands;
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    const Point2 t = cluster_target(clusters[i], space);
    const bool skip = std::any_of(excluded.begin(), excluded.end(),
                                  [&](const Point2& e) { return (e - t).norm() <= exclusion_radius; });
    if (!skip) cands.push_back({i, t, (t - agent.position).norm()});
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.dist < b.dist; });
  for (std::size_t begin = 0; begin < cands.size(); begin += params.probe_batch) {
    const std::size_t end = std::min(cands.size(), begin + params.probe_batch);
    std::vector<Point2> targets;
    for (std::size_t k = begin; k < end; ++k) targets.push_back(cands[k].target);
    PlannerParams p = params;
    p.seed = params.seed + begin;
    const auto res = probe_targets(agent, targets, space, oracle, planner, p);
    std::optional<std::size_t> best;
    for (std::size_t k = 0; k < targets.size(); ++k) {
      if (!res.paths[k]) continue;
      const double cost = planner == PlannerKind::greedy_rrt ? res.paths[k]->length : res.paths[k]->cost;
      const double best_cost = best ? (planner == PlannerKind::greedy_rrt ? res.paths[*best]->length
                                                                          : res.paths[*best]->cost)
                                    : std::numeric_limits<double>::infinity();
      if (cost < best_cost) best = k;
    }
    if (best) {
      const auto& c = cands[begin + *best];
      return Selection{{kind, c.target, clusters[c.cluster]}, *res.paths[*best]};
    }
  }
  return std::nullopt;
}

/// True when no objective of `kind` is reachable.
inline bool stopping_criterion(const FrontierSet& frontiers, const PlanStart& agent, FrontierKind kind,
                               const FreeSpace& space, const VisibilityOracle& oracle, PlannerKind planner,
                               const PlannerParams& params) {
  return !select_objective(frontiers, agent, kind, space, oracle, planner, params).has_value();
}

inline nlohmann::json to_json(const Path& p) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : p.nodes)
    nodes.push_back({{"x", n.position.x()},
                     {"y", n.position.y()},
                     {"d", n.d},
                     {"d_odo", n.d_odo},
                     {"sigma_l", n.sigma_l},
                     {"cost", n.cost}});
  return {{"cost", p.cost}, {"length", p.length}, {"nodes", nodes}};
}

}  // namespace sirenmap
