#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "sirenmap/experiment.hpp"
#include "sirenmap/kf_slam.hpp"
#include "sirenmap/planning.hpp"
#include "sirenmap/sim.hpp"

namespace fs = std::filesystem;
using namespace sirenmap;

namespace {

WorldModel box_room(double w, double h) {
  WorldModel m;
  m.walls = {{{0, 0}, {w, 0}}, {{w, 0}, {w, h}}, {{w, h}, {0, h}}, {{0, h}, {0, 0}}};
  m.extent = {{0, 0}, {w, h}};
  return m;
}

// Brute-force ray-segment oracle: solve p + t d = a + u (b - a) directly.
double oracle_range(const WorldModel& w, const Point2& p, double ang) {
  const Point2 d(std::cos(ang), std::sin(ang));
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : w.walls) {
    Eigen::Matrix2d m;
    m.col(0) = d;
    m.col(1) = s.a - s.b;
    if (std::abs(m.determinant()) < 1e-14) continue;
    const Eigen::Vector2d tu = m.colPivHouseholderQr().solve(s.a - p);
    if (tu[0] >= 0.0 && tu[1] >= 0.0 && tu[1] <= 1.0) best = std::min(best, tu[0]);
  }
  return best;
}

std::string run_command(const std::string& cmd, int& status) {
  std::string out;
  FILE* f = popen((cmd + " 2>&1").c_str(), "r");
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, f)) out.append(buf, n);
  status = pclose(f);
  return out;
}

// Occupancy grid with every cell free except the given occupied boxes and a
// one-cell border.
GridLayer free_grid(const GridGeometry& g, const std::vector<std::pair<Point2, Point2>>& blocks = {}) {
  GridLayer occ(g, LayerSemantic::occupancy, occupancy::free);
  for (int r = 0; r < g.height; ++r)
    for (int c = 0; c < g.width; ++c) {
      const Point2 p = g.cell_to_world({c, r});
      bool blocked = r == 0 || c == 0 || r == g.height - 1 || c == g.width - 1;
      for (const auto& [lo, hi] : blocks)
        blocked = blocked || (p.x() >= lo.x() && p.x() <= hi.x() && p.y() >= lo.y() && p.y() <= hi.y());
      if (blocked) occ.at(c, r) = occupancy::occupied;
    }
  return occ;
}

FrontierCluster cluster_at(const GridGeometry& g, const Point2& p, FrontierKind kind) {
  FrontierCluster c;
  c.kind = kind;
  const CellIndex ci = world_to_cell(g, p);
  c.cells = {g.index(ci)};
  c.centroid = g.cell_to_world(ci);
  return c;
}

}  // namespace

// ------------------------------------------------------------------ slam-sim

TEST(Sim, SquareRoomExactRanges) {
  const auto room = box_room(4, 4);
  LidarSpec spec;
  spec.range_noise_std = 0.0;
  spec.bearing_noise_std = 0.0;
  std::mt19937_64 rng(1);
  const auto scan = raycast_scan(room, Eigen::Vector3d(2, 2, 0), spec, rng);
  ASSERT_EQ(scan.size(), 720u);
  double mn = 1e9;
  for (int j = 0; j < 720; ++j) {
    const double a = spec.beam_bearing(j);
    const double expect = 2.0 / std::max(std::abs(std::cos(a)), std::abs(std::sin(a)));
    EXPECT_TRUE(scan[j].hit);
    EXPECT_NEAR(scan[j].measurement.range, expect, 1e-12);
    mn = std::min(mn, scan[j].measurement.range);
  }
  EXPECT_NEAR(mn, 2.0, 1e-12);
}

TEST(Sim, NoHitBeamsReturnMaxRange) {
  WorldModel w;
  w.walls = {{{20, 20}, {30, 20}}};
  w.extent = {{-50, -50}, {50, 50}};
  LidarSpec spec;
  std::mt19937_64 rng(2);
  for (const auto& b : raycast_scan(w, Eigen::Vector3d(0, 0, 0.3), spec, rng)) {
    EXPECT_FALSE(b.hit);
    EXPECT_EQ(b.measurement.range, 5.0);
  }
  EXPECT_THROW(raycast_scan(w, Eigen::Vector3d(60, 0, 0), spec, rng), OutOfBounds);
}

TEST(Sim, RandomRoomsMatchBruteForce) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  LidarSpec spec;
  spec.range_noise_std = 0.0;
  spec.bearing_noise_std = 0.0;
  spec.max_range = 100.0;
  spec.angular_resolution = 2.0 * std::numbers::pi / 97;
  for (int room = 0; room < 30; ++room) {
    WorldModel w = box_room(10, 10);
    for (int k = 0; k < 12; ++k) w.walls.push_back({{u(rng), u(rng)}, {u(rng), u(rng)}});
    const Eigen::Vector3d pose(u(rng), u(rng), u(rng));
    const auto scan = raycast_scan(w, pose, spec, rng);
    for (int j = 0; j < spec.beam_count(); ++j)
      EXPECT_NEAR(scan[j].measurement.range, oracle_range(w, pose.head<2>(), pose[2] + spec.beam_bearing(j)), 1e-9);
  }
}

TEST(Sim, ScansAreSeedDeterministic) {
  const auto room = box_room(6, 5);
  LidarSpec spec;
  auto r1 = seeded_rng(42, 1);
  auto r2 = seeded_rng(42, 1);
  const auto a = raycast_scan(room, Eigen::Vector3d(2, 2, 0.4), spec, r1);
  const auto b = raycast_scan(room, Eigen::Vector3d(2, 2, 0.4), spec, r2);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].measurement.range, b[i].measurement.range);
    EXPECT_EQ(a[i].measurement.bearing, b[i].measurement.bearing);
  }
}

TEST(Sim, LandmarkVisibility) {
  WorldModel w = box_room(10, 4);
  w.walls.push_back({{5, 0}, {5, 3}});
  w.landmarks = {{0, {3, 1}}, {1, {7, 1}}, {2, {3, 3.9}}, {3, {9.5, 3.5}}};
  EXPECT_EQ(visible_landmarks(w, {2, 1}, 5.0), (std::vector<int>{0, 2}));
  EXPECT_EQ(visible_landmarks(w, {5.5, 3.5}, 5.0), (std::vector<int>{1, 2, 3}));
  std::mt19937_64 rng(5);
  const auto obs = observe_landmarks(w, {2, 1}, 5.0, 1e-20 * Eigen::Matrix2d::Identity(), rng);
  ASSERT_EQ(obs.size(), 2u);
  EXPECT_NEAR(obs[0].z[0], 1.0, 1e-9);
  EXPECT_NEAR(obs[0].z[1], 0.0, 1e-9);
}

TEST(Sim, WorldFixtures) {
  EXPECT_THROW(load_world("/nonexistent/world.json"), FixtureMissing);
  const auto dir = fs::temp_directory_path() / "sirenmap_test_world";
  fs::create_directories(dir);
  std::ofstream(dir / "bad.json") << "{\"walls\": [[0,0,1]], \"landmarks\": [], \"extent\": {\"min\": [0,0], \"max\": [1,1]}}";
  EXPECT_THROW(load_world(dir / "bad.json"), MalformedFile);

  const auto wh = load_world(default_fixture_dir() / "warehouse.json");
  EXPECT_EQ(wh.world.landmarks.size(), 14u);
  for (const char* l : {"L1", "L2", "L3", "L4"}) EXPECT_TRUE(wh.layouts.count(l));
  EXPECT_EQ(wh.apply_layout("L1").first.landmarks.size(), 13u);
  EXPECT_EQ(wh.apply_layout("L3").first.landmarks.size(), 14u);
  EXPECT_EQ(wh.apply_layout("L1").second, wh.apply_layout("L4").second);
  EXPECT_EQ(wh.apply_layout("L2").second, wh.apply_layout("L3").second);
  EXPECT_THROW(wh.apply_layout("L9"), InvalidArgument);

  const auto co = load_world(default_fixture_dir() / "corridor.json");
  EXPECT_GE(co.scripted_path.size(), 2u);
  EXPECT_EQ(co.world.landmarks.size(), 3u);
}

// ------------------------------------------------------------------ kf-slam

TEST(Kf, PredictAccumulatesProcessNoise) {
  NoiseParams n;
  n.Q << 0.02, 0.005, 0.005, 0.03;
  auto s = kf_init({1, 2}, n);
  s = kf_update(s, {{7, Eigen::Vector2d(1, 1)}}, n);
  const Eigen::Matrix2d lm = s.landmark_cov(7);
  const Eigen::Matrix2d p0 = s.robot_cov();
  const auto once = kf_predict(s, Eigen::Vector2d::Zero(), n);
  EXPECT_EQ(once.X, s.X);
  EXPECT_TRUE(once.robot_cov().isApprox(p0 + n.Q, 1e-15));
  for (int k = 1; k <= 25; ++k) {
    s = kf_predict(s, Eigen::Vector2d(0.1, -0.2), n);
    EXPECT_NEAR((s.robot_cov() - (p0 + k * n.Q)).cwiseAbs().maxCoeff(), 0.0, 1e-12);
    EXPECT_EQ(s.landmark_cov(7), lm);
  }
  EXPECT_NEAR(s.robot()[0], 1.0 + 25 * 0.1, 1e-12);
}

TEST(Kf, ExactMeasurementCollapsesRelativeUncertainty) {
  NoiseParams n;
  auto s = kf_init({0, 0}, n);
  s = kf_update(s, {{1, Eigen::Vector2d(2, 0)}}, n);
  for (int k = 0; k < 5; ++k) s = kf_predict(s, Eigen::Vector2d(0.3, 0), n);
  NoiseParams exact = n;
  exact.R = 1e-14 * Eigen::Matrix2d::Identity();
  s = kf_update(s, {{1, Eigen::Vector2d(0.5, 0)}}, exact);
  const Eigen::Index o = s.landmark_registry.at(1);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(2, s.X.size());
  h.leftCols(2) = -Eigen::Matrix2d::Identity();
  h.middleCols(o, 2) = Eigen::Matrix2d::Identity();
  EXPECT_LT((h * s.P * h.transpose()).norm(), 1e-10);
}

TEST(Kf, MatchesScalarOracle) {
  // Independent per-axis filter on (robot, landmark) with plain doubles.
  NoiseParams n;
  n.Q = Eigen::Vector2d(0.01, 0.02).asDiagonal();
  n.R = Eigen::Vector2d(0.03, 0.005).asDiagonal();
  n.P0 = Eigen::Vector2d(0.04, 0.01).asDiagonal();
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 0.1);
  auto s = kf_init({0, 0}, n);
  struct Axis {
    double xr, xl, prr, prl, pll;
  };
  Axis ax[2];
  bool first = true;
  for (int k = 0; k < 30; ++k) {
    const Eigen::Vector2d z(1.0 + g(rng), -2.0 + g(rng));
    s = kf_update(s, {{0, z}}, n);
    for (int a = 0; a < 2; ++a) {
      auto& A = ax[a];
      if (first) {
        A.xr = 0.0;
        A.prr = n.P0(a, a);
        A.xl = A.xr + z[a];
        A.prl = A.prr;
        A.pll = A.prr + n.R(a, a);
        continue;
      }
      // z = xl - xr + v
      const double sv = A.pll - 2 * A.prl + A.prr + n.R(a, a);
      const double kr = (A.prl - A.prr) / sv;
      const double kl = (A.pll - A.prl) / sv;
      const double innov = z[a] - (A.xl - A.xr);
      A.xr += kr * innov;
      A.xl += kl * innov;
      const double prr = A.prr - kr * kr * sv;
      const double prl = A.prl - kr * kl * sv;
      const double pll = A.pll - kl * kl * sv;
      A.prr = prr;
      A.prl = prl;
      A.pll = pll;
    }
    first = false;
    for (int a = 0; a < 2; ++a) {
      EXPECT_NEAR(s.P(a, a), ax[a].prr, 1e-9);
      EXPECT_NEAR(s.P(a, 2 + a), ax[a].prl, 1e-9);
      EXPECT_NEAR(s.P(2 + a, 2 + a), ax[a].pll, 1e-9);
      EXPECT_NEAR(s.X[a], ax[a].xr, 1e-9);
      EXPECT_NEAR(s.X[2 + a], ax[a].xl, 1e-9);
    }
    s = kf_predict(s, Eigen::Vector2d::Zero(), n);
    for (int a = 0; a < 2; ++a) ax[a].prr += n.Q(a, a);
  }
}

TEST(Kf, SymmetryTraceAndEmptyUpdate) {
  NoiseParams n;
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::uniform_int_distribution<int> id(0, 5);
  auto s = kf_init({0, 0}, n);
  for (int k = 0; k < 300; ++k) {
    if (k % 3 == 0) {
      s = kf_predict(s, Eigen::Vector2d(u(rng), u(rng)), n);
    } else {
      const int lm = id(rng);
      const bool known = s.landmark_registry.count(lm) > 0;
      const double before = s.P.trace();
      s = kf_update(s, {{lm, Eigen::Vector2d(u(rng), u(rng))}}, n);
      if (known) EXPECT_LE(s.P.trace(), before + 1e-12);
    }
    EXPECT_LT((s.P - s.P.transpose()).cwiseAbs().maxCoeff(), 1e-9);
  }
  const auto same = kf_update(s, {}, n);
  EXPECT_EQ(same.X, s.X);
  EXPECT_EQ(same.P, s.P);
  LandmarkObservation bad{1, Eigen::Vector3d(1, 2, 3)};
  EXPECT_THROW(kf_update(s, {bad}, n), InvalidArgument);
}

TEST(Kf, PoseBelief) {
  NoiseParams n;
  const auto s = kf_init({1, 2}, n);
  const auto b = pose_belief(s, 0.3, 1e-4);
  EXPECT_EQ(b.covariance, Eigen::Vector3d(0.01, 0.01, 1e-4).asDiagonal().toDenseMatrix());
  EXPECT_NEAR(geometric_mean_sigma(b), std::pow(0.01 * 0.01 * 1e-4, 1.0 / 6.0), 1e-15);
  EXPECT_NEAR(geometric_mean_sigma(b), 0.0464, 5e-5);
  EXPECT_THROW(propagate_polar(pose_belief(s, 0.0, 0.0), {1.0, 0.0}, 1e-4 * Eigen::Matrix2d::Identity()),
               DegenerateBelief);
}

// ------------------------------------------------------------------ planning

TEST(Planning, CostFormula) {
  PlannerParams p;
  EXPECT_NEAR(plan_cost(3, 2, 0.05, p), 105.0, 1e-12);
  PlanNode parent;
  parent.d = 1.0;
  parent.d_odo = 0.5;
  parent.sigma_l = 0.02;
  parent.position = {0, 0};
  const auto a = node_cost(parent, {3, 4}, std::vector<LandmarkSighting>{}, p);
  EXPECT_DOUBLE_EQ(a.d, 6.0);
  EXPECT_DOUBLE_EQ(a.d_odo, 5.5);
  EXPECT_EQ(a.sigma_l, 0.02);
  const auto b = node_cost(parent, {3, 4}, std::vector<LandmarkSighting>{{4, 0.3}, {9, 0.0}}, p);
  EXPECT_EQ(b.d_odo, 0.0);
  EXPECT_EQ(b.sigma_l, 0.0);
  EXPECT_EQ(b.cost, b.d);
}

namespace {

struct OpenCorridor {
  GridGeometry g{0.1, {0.0, 0.0}, 120, 30};
  GridLayer occ = free_grid(g);
  FreeSpace space = FreeSpace::from_occupancy(occ, 0.25);
};

}  // namespace

TEST(Planning, GreedyNearEuclidean) {
  OpenCorridor c;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    PlannerParams p;
    p.seed = seed;
    Objective goal;
    goal.target = {11, 1.5};
    const auto path = plan_greedy_rrt({1, 1.5}, goal, c.space, p);
    EXPECT_LE(path.length, 1.3 * 10.0) << seed;
    EXPECT_LE((path.nodes.back().position - goal.target).norm(), p.goal_tolerance);
  }
}

TEST(Planning, RrtStarNearEuclideanWithoutLandmarks) {
  OpenCorridor c;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    PlannerParams p;
    p.seed = seed;
    Objective goal;
    goal.target = {11, 1.5};
    const auto path = plan_rrt_star_uncertainty({{1, 1.5}, 0.0, 0.0}, goal, c.space, {}, p);
    EXPECT_LE(path.length, 1.2 * 10.0) << seed;
    EXPECT_DOUBLE_EQ(path.cost, 2.0 * path.length);
  }
}

TEST(Planning, TrivialAndSealedGoals) {
  OpenCorridor c;
  PlannerParams p;
  Objective here;
  here.target = {1, 1.5};
  EXPECT_TRUE(plan_greedy_rrt({1, 1.5}, here, c.space, p).empty());
  EXPECT_TRUE(plan_rrt_star_uncertainty({{1, 1.5}, 0, 0}, here, c.space, {}, p).empty());

  const auto occ = free_grid(c.g, {{{7.5, 0.0}, {8.5, 3.0}}});
  const auto sealed = FreeSpace::from_occupancy(occ, 0.25);
  p.max_iterations = 1500;
  Objective far;
  far.target = {11, 1.5};
  EXPECT_THROW(plan_greedy_rrt({1, 1.5}, far, sealed, p), NoPathFound);
  EXPECT_THROW(plan_rrt_star_uncertainty({{1, 1.5}, 0, 0}, far, sealed, {}, p), NoPathFound);
}

TEST(Planning, TreesAreRecomputableAndRewiringMonotone) {
  OpenCorridor c;
  const auto occ = free_grid(c.g, {{{7.5, 0.0}, {8.5, 3.0}}, {{3.0, 0.0}, {3.5, 2.0}}});
  const auto space = FreeSpace::from_occupancy(occ, 0.25);
  VisibilityOracle oracle = [](const Point2& q) {
    std::vector<LandmarkSighting> v;
    if ((q - Point2(2.0, 2.5)).norm() < 1.5) v.push_back({1, 0.004});
    if ((q - Point2(5.5, 0.5)).norm() < 1.0) v.push_back({2, 0.002});
    return v;
  };
  PlannerParams p;
  p.seed = 5;
  std::vector<PlanNode> prev;
  for (int cap = 200; cap <= 2000; cap += 200) {
    p.max_iterations = cap;
    const auto res = probe_targets({{1, 1.5}, 0.7, 0.0}, {{11, 1.5}}, space, oracle, PlannerKind::rrt_star_uncertainty, p);
    const auto& nodes = res.tree.nodes;
    for (const auto& n : nodes) EXPECT_EQ(n.cost, plan_cost(n.d, n.d_odo, n.sigma_l, p));
    for (std::size_t i = 1; i < nodes.size(); ++i) {
      const auto& par = nodes[static_cast<std::size_t>(nodes[i].parent)];
      EXPECT_NEAR(nodes[i].d, par.d + (nodes[i].position - par.position).norm(), 1e-9);
    }
    ASSERT_GE(nodes.size(), prev.size());
    for (std::size_t i = 0; i < prev.size(); ++i) {
      EXPECT_EQ(nodes[i].position, prev[i].position);
      EXPECT_LE(nodes[i].cost, prev[i].cost);
    }
    prev = nodes;
  }
}

TEST(Planning, SeedDeterminismAndScaleInvariance) {
  OpenCorridor c;
  VisibilityOracle oracle = [](const Point2& q) {
    return q.x() > 6.0 ? std::vector<LandmarkSighting>{{3, 0.01}} : std::vector<LandmarkSighting>{};
  };
  PlannerParams p;
  p.seed = 77;
  Objective goal;
  goal.target = {10, 2.0};
  for (auto kind : {PlannerKind::greedy_rrt, PlannerKind::rrt_star_uncertainty}) {
    const auto a = probe_targets({{1, 1}, 0, 0}, {goal.target}, c.space, oracle, kind, p);
    const auto b = probe_targets({{1, 1}, 0, 0}, {goal.target}, c.space, oracle, kind, p);
    ASSERT_TRUE(a.paths[0] && b.paths[0]);
    ASSERT_EQ(a.paths[0]->nodes.size(), b.paths[0]->nodes.size());
    for (std::size_t i = 0; i < a.paths[0]->nodes.size(); ++i)
      EXPECT_EQ(a.paths[0]->nodes[i].position, b.paths[0]->nodes[i].position);
  }
  PlannerParams q = p;
  q.cell_size *= 2.0;
  q.Q_tilde /= 2.0;
  const auto a = plan_rrt_star_uncertainty({{1, 1}, 0, 0}, goal, c.space, oracle, p);
  const auto b = plan_rrt_star_uncertainty({{1, 1}, 0, 0}, goal, c.space, oracle, q);
  ASSERT_EQ(a.nodes.size(), b.nodes.size());
  for (std::size_t i = 0; i < a.nodes.size(); ++i) EXPECT_EQ(a.nodes[i].position, b.nodes[i].position);
}

TEST(Planning, PrefersTheReferencedRoute) {
  // Two mirror-image corridors around a central block; only the upper one
  // sees a landmark, near the goal end.
  GridGeometry g(0.1, {0.0, 0.0}, 440, 80);
  const auto occ = free_grid(g, {{{4.0, 2.5}, {40.0, 5.5}}});
  const auto space = FreeSpace::from_occupancy(occ, 0.25);
  const Point2 landmark(36.0, 7.0);
  VisibilityOracle oracle = [&](const Point2& q) {
    if ((q - landmark).norm() <= 5.0 && q.y() > 5.5) return std::vector<LandmarkSighting>{{1, 0.01}};
    return std::vector<LandmarkSighting>{};
  };
  PlannerParams p;
  p.max_iterations = 4000;
  p.refine_factor = std::numeric_limits<double>::infinity();  // spend the whole budget
  Objective goal;
  goal.target = {42.0, 4.0};
  int upper = 0;
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    p.seed = seed;
    const auto path = plan_rrt_star_uncertainty({{2.0, 4.0}, 0.0, 0.0}, goal, space, oracle, p);
    bool via_upper = false;
    for (const auto& n : path.nodes) via_upper = via_upper || (n.position.x() > 10 && n.position.y() > 5.5);
    upper += via_upper;
  }
  EXPECT_GE(upper, 38);
}

TEST(Planning, SelectionPicksTheNearerCluster) {
  GridGeometry g(0.1, {0.0, 0.0}, 160, 60);
  const auto occ = free_grid(g);
  const auto space = FreeSpace::from_occupancy(occ, 0.25);
  FrontierSet fs;
  fs.cf_clusters = {cluster_at(g, {13.0, 3.0}, FrontierKind::CF), cluster_at(g, {5.0, 3.0}, FrontierKind::CF)};
  PlannerParams p;
  for (auto kind : {PlannerKind::greedy_rrt, PlannerKind::rrt_star_uncertainty}) {
    const auto sel = select_objective(fs, {{3.0, 3.0}, 0, 0}, FrontierKind::CF, space, {}, kind, p);
    ASSERT_TRUE(sel);
    EXPECT_NEAR(sel->objective.target.x(), 5.05, 1e-9);
  }
  EXPECT_FALSE(select_objective(FrontierSet{}, {{3.0, 3.0}, 0, 0}, FrontierKind::CF, space, {},
                                PlannerKind::greedy_rrt, p));
  EXPECT_TRUE(stopping_criterion(FrontierSet{}, {{3.0, 3.0}, 0, 0}, FrontierKind::UF, space, {},
                                 PlannerKind::rrt_star_uncertainty, p));
}

TEST(Planning, StoppingCriterionOnMaps) {
  const auto prior = derive_prior({Eigen::Vector2d(1, 1), RectangleSpec{0.1, 0.1}, 0.5});
  GridGeometry g(0.1, {0.0, 0.0}, 60, 40);
  auto occ = free_grid(g);
  auto fp = FrontierParams::from_prior(prior);
  fp.min_cluster_size = 4;
  PlannerParams p;
  const auto space = FreeSpace::from_occupancy(occ, 0.25);
  // Closed explored room: no classical frontier left.
  EXPECT_TRUE(stopping_criterion(extract_classical_frontiers(occ, fp), {{1, 1}, 0, 0}, FrontierKind::CF, space, {},
                                 PlannerKind::greedy_rrt, p));
  // A reachable seam in the middle of the room keeps UF exploration going.
  GridLayer um(g, LayerSemantic::uncertainty, 0.1);
  for (int r = 0; r < g.height; ++r)
    for (int c = 30; c < g.width; ++c) um.at(c, r) = 0.35;
  EXPECT_FALSE(stopping_criterion(extract_uncertainty_frontiers(um, occ, fp), {{1, 1}, 0, 0}, FrontierKind::UF,
                                  space, {}, PlannerKind::rrt_star_uncertainty, p));
  // The same seam hugging a wall is discarded.
  for (int r = 0; r < g.height; ++r) occ.at(31, r) = occupancy::occupied;
  const auto walled = FreeSpace::from_occupancy(occ, 0.25);
  EXPECT_TRUE(stopping_criterion(extract_uncertainty_frontiers(um, occ, fp), {{1, 1}, 0, 0}, FrontierKind::UF,
                                 walled, {}, PlannerKind::rrt_star_uncertainty, p));
}

// --------------------------------------------------------- corridor scenario

namespace {

struct CorridorScene {
  PriorConstants prior;
  GridGeometry g;
  std::optional<Agent> agent;
  CorridorScene() {
    const auto fx = load_world(default_fixture_dir() / "corridor.json");
    ScenarioConfig c;
    c.world_fixture = "corridor";
    c.truth_noise = false;
    c.lidar.range_noise_std = 0.0;
    c.lidar.bearing_noise_std = 0.0;
    prior = c.prior();
    auto [w, st] = fx.apply_layout("default");
    g = world_geometry(w, 0.1, 1.0);
    agent.emplace(follow_waypoints(w, fx.scripted_path, g, prior, agent_options(c), 1));
  }
};

const CorridorScene& corridor_scene() {
  static const CorridorScene s;
  return s;
}

}  // namespace

TEST(Corridor, SeamIsAnObjectiveOnlyForUncertaintyFrontiers) {
  const auto& s = corridor_scene();
  auto fp = FrontierParams::from_prior(s.prior);
  fp.min_cluster_size = 4;
  const auto fs = extract_frontiers(s.agent->dp(), s.agent->occupancy_layer(), s.prior, fp);
  const FrontierCluster* seam = nullptr;
  for (const auto& c : fs.uf_clusters)
    if (c.unexplored_neighbors == 0) seam = &c;
  ASSERT_NE(seam, nullptr);
  for (const auto& cf : fs.cf_clusters)
    for (std::size_t i : cf.cells) EXPECT_FALSE(std::binary_search(seam->cells.begin(), seam->cells.end(), i));

  FrontierSet only_seam;
  only_seam.uf_clusters = {*seam};
  only_seam.cf_clusters = fs.cf_clusters;
  const auto space = FreeSpace::from_occupancy(s.agent->occupancy_layer(), 0.25);
  PlannerParams p;
  const PlanStart at{s.agent->kf().robot(), 0.0, 0.0};
  const auto sel = select_objective(only_seam, at, FrontierKind::UF, space, {}, PlannerKind::rrt_star_uncertainty, p);
  ASSERT_TRUE(sel);
  EXPECT_EQ(sel->objective.cluster.cells, seam->cells);
  // CF selection never lands on the seam.
  const auto cf = select_objective(fs, at, FrontierKind::CF, space, {}, PlannerKind::greedy_rrt, p);
  ASSERT_TRUE(cf);
  EXPECT_GT(cf->objective.cluster.unexplored_neighbors, 0u);
}

// ---------------------------------------------------------- experiment-cli

TEST(Experiment, ConfigParsing) {
  const auto c = parse_config("# comment\nfixture = corridor\npps=3 # trailing\nseeds = 4, 5,9\nT_h = 0.25\n"
                              "truth_noise = false\nlidar_resolution_deg = 1.0\n");
  EXPECT_EQ(c.world_fixture, "corridor");
  EXPECT_EQ(c.pps, 3);
  EXPECT_EQ(c.run_seeds(), (std::vector<std::uint64_t>{4, 5, 9}));
  EXPECT_EQ(c.T_h, 0.25);
  EXPECT_FALSE(c.truth_noise);
  EXPECT_NEAR(c.lidar.beam_count(), 360, 0);
  EXPECT_EQ(c.effective_sigma_max(), 0.6);
  EXPECT_EQ(c.frontier_kind(), FrontierKind::UF);
  EXPECT_THROW(parse_config("bogus = 1\n"), InvalidArgument);
  EXPECT_THROW(parse_config("pps = x\n"), InvalidArgument);
  EXPECT_THROW(parse_config("no equals sign\n"), InvalidArgument);

  ScenarioConfig bad;
  bad.pps = 3;
  bad.sigma_max = 1.0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad.sigma_max_override = true;
  EXPECT_NO_THROW(bad.validate());
  ScenarioConfig p1;
  p1.pps = 1;
  EXPECT_EQ(p1.planner_kind(), PlannerKind::greedy_rrt);
  EXPECT_EQ(p1.frontier_kind(), FrontierKind::CF);
}

TEST(Experiment, CorridorSmokeRunAndDeterminism) {
  ScenarioConfig c;
  c.world_fixture = "corridor";
  c.layout = "default";
  c.pps = 1;
  c.repeats = 1;
  c.workers = 1;
  const auto a = run_scenario(c);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].stopping_reason, "no_objectives");
  EXPECT_EQ(a[0].siren_trace.size(), static_cast<std::size_t>(a[0].ticks + 1));
  const auto b = run_scenario(c);
  EXPECT_EQ(summary_row(a[0]), summary_row(b[0]));
  EXPECT_EQ(a[0].siren_trace, b[0].siren_trace);
  EXPECT_EQ(a[0].dp.values, b[0].dp.values);
  ASSERT_EQ(a[0].trajectory.size(), b[0].trajectory.size());

  const auto d1 = fs::temp_directory_path() / "sirenmap_test_batch1";
  const auto d2 = fs::temp_directory_path() / "sirenmap_test_batch2";
  fs::remove_all(d1);
  fs::remove_all(d2);
  ScenarioConfig u = c;
  u.pps = 4;
  u.repeats = 2;
  write_batch(run_batch({c, u}, 2), d1);
  write_batch(run_batch({c, u}, 1), d2);
  EXPECT_EQ(read_file(d1 / "summary.csv"), read_file(d2 / "summary.csv"));
  EXPECT_TRUE(fs::exists(d1 / run_dir_name(a[0]) / "trajectory.csv"));
  EXPECT_TRUE(fs::exists(d1 / run_dir_name(a[0]) / "um.f64"));
  const auto back = load_layer(d1 / run_dir_name(a[0]) / "dp");
  EXPECT_EQ(back.values, a[0].dp.values);
}

TEST(Experiment, MissingFixture) {
  ScenarioConfig c;
  c.world_fixture = "atlantis";
  EXPECT_THROW(run_scenario(c), FixtureMissing);
}

TEST(Experiment, Aggregation) {
  std::vector<RunRecord> recs;
  for (double v : {5.0, 1.0, 4.0, 2.0, 3.0}) {
    RunRecord r;
    r.config.layout = "L3";
    r.config.pps = 2;
    r.final_siren = v;
    r.stopping_reason = "no_objectives";
    recs.push_back(r);
  }
  const auto box = aggregate_boxplots(recs);
  const auto& b = box.at({"L3", 2});
  EXPECT_EQ(b.median, 3.0);
  EXPECT_EQ(b.q1, 2.0);
  EXPECT_EQ(b.q3, 4.0);
  EXPECT_NE(boxplot_csv(box).find("type 7"), std::string::npos);
  EXPECT_THROW(aggregate_boxplots({}), EmptyGroup);
}

TEST(Experiment, RegressionOnSyntheticRecords) {
  const auto prior = ScenarioConfig{}.prior();
  GridGeometry g(0.1, {0, 0}, 4, 4);
  std::vector<RunRecord> recs;
  for (double s : {0.05, 0.08, 0.12, 0.2}) {
    RunRecord r;
    r.stopping_reason = "no_objectives";
    r.landmark_sigmas = {{0, s * 0.9}, {1, s}, {2, s * 1.2}};
    r.dp = make_dp_grid(g, prior);
    r.dp.values[5] = r.dp.values[6] = r.dp.values[7] = 0.0;
    r.um = GridLayer(g, LayerSemantic::uncertainty, s);
    recs.push_back(r);
  }
  const auto f = fit_landmark_um(recs);
  EXPECT_NEAR(f.slope, 1.0, 1e-12);
  EXPECT_NEAR(f.intercept, 0.0, 1e-12);
  EXPECT_NEAR(f.pearson_r, 1.0, 1e-12);
  recs.resize(2);
  EXPECT_THROW(fit_landmark_um(recs), InsufficientData);
}

TEST(Cli, PriorAndErrorLine) {
  int status = 0;
  const std::string cli = SIRENMAP_CLI;
  const auto out = run_command(cli + " prior", status);
  EXPECT_EQ(status, 0);
  const auto j = nlohmann::json::parse(out);
  EXPECT_NEAR(j.at("beta").get<double>(), 1.5863e-5, 5e-10);

  const auto bad = run_command(cli + " prior --sigma-max 2,2 --s 0.1,0.1,0.002", status);
  EXPECT_NE(status, 0);
  const auto e = nlohmann::json::parse(bad);
  EXPECT_EQ(e.at("error").get<std::string>(), "InvalidArgument");

  const auto missing = run_command(cli + " eval --dp /nonexistent/dp --occupancy /nonexistent/occ", status);
  EXPECT_NE(status, 0);
  EXPECT_TRUE(nlohmann::json::parse(missing).contains("error"));

  const auto curve = run_command(cli + " curve --sigma-max 1.0 --range 0.5:2.0:0.5", status);
  EXPECT_EQ(status, 0);
  EXPECT_NE(curve.find("sigma"), std::string::npos);
}
