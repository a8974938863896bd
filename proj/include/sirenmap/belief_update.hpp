#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "sirenmap/dispersion.hpp"
#include "sirenmap/errors.hpp"
#include "sirenmap/grid.hpp"

namespace sirenmap {

inline double prob_to_logodds(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("probability must lie in (0, 1)");
  return std::log(p) - std::log1p(-p);
}

inline double logodds_to_prob(double l) {
  if (!std::isfinite(l)) throw DomainError("log-odds must be finite");
  // 1 - 1 / (1 + e^l), arranged to avoid cancellation for large |l|.
  return l >= 0.0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
}

/// Design inputs for the prior: the largest tolerable standard deviation per
/// axis, the rectangle sides and the blend rate.
struct PriorSpec {
  Eigen::VectorXd sigma_max;
  RectangleSpec sides;
  double kappa = 0.5;
};

/// Constants derived from a PriorSpec. An unknown cell holds ell_beta.
struct PriorConstants {
  double beta = 0.0;
  double ell_beta = 0.0;
  double a = 0.0;
  double U_beta = 0.0;
  double sigma_tilde_max = 0.0;
  int dim = 0;
  double kappa = 0.5;
  RectangleSpec sides;
};

inline PriorConstants derive_prior(const PriorSpec& spec) {
  const auto n = spec.sigma_max.size();
  if (n == 0 || spec.sides.sides.size() != n)
    throw InvalidArgument("sigma_max and sides must have the same positive dimension");
  if (!(spec.kappa >= 0.0 && spec.kappa <= 1.0)) throw DomainError("kappa must lie in [0, 1]");
  if (!((spec.sigma_max.array() > 0.0).all())) throw InvalidArgument("sigma_max must be positive");
  std::vector<std::size_t> bad;
  for (Eigen::Index i = 0; i < n; ++i)
    if (spec.sides.sides[i] > 4.0 * spec.sigma_max[i] / std::numbers::sqrt3)
      bad.push_back(static_cast<std::size_t>(i));
  if (!bad.empty()) throw BoundDomainViolation(std::move(bad));

  const GaussianBelief worst(Eigen::VectorXd::Zero(n),
                             spec.sigma_max.array().square().matrix().asDiagonal());
  PriorConstants out;
  out.dim = static_cast<int>(n);
  out.kappa = spec.kappa;
  out.sides = spec.sides;
  out.beta = rectangle_probability(worst, spec.sides).probability;
  out.ell_beta = prob_to_logodds(out.beta);
  out.a = bound_constant(spec.sides);
  out.U_beta = out.a / std::pow(out.beta, 1.0 / static_cast<double>(n));
  out.sigma_tilde_max = geometric_mean_sigma(worst);
  return out;
}

inline double blend_update(double l_prev, double l_new, double kappa) {
  if (!std::isfinite(l_prev) || !std::isfinite(l_new) || !std::isfinite(kappa))
    throw DomainError("blend_update needs finite inputs");
  if (kappa < 0.0 || kappa > 1.0) throw DomainError("kappa must lie in [0, 1]");
  return l_prev + kappa * (l_new - l_prev);
}

/// Holds an explored cell whose value beats both the unknown level and the
/// new observation; blends otherwise.
inline double gated_update(double l_prev, double l_new, double kappa, double l_beta) {
  if (!std::isfinite(l_beta)) throw DomainError("ell_beta must be finite");
  const double blended = blend_update(l_prev, l_new, kappa);
  return l_prev > std::max(l_beta, l_new) ? l_prev : blended;
}

/// Companion occupancy layer encoding.
namespace occupancy {
inline constexpr double unknown = -1.0;
inline constexpr double free = 0.0;
inline constexpr double occupied = 1.0;
}  // namespace occupancy

inline GridLayer make_dp_grid(const GridGeometry& g, const PriorConstants& prior) {
  return GridLayer(g, LayerSemantic::log_odds, prior.ell_beta);
}
inline GridLayer make_occupancy_grid(const GridGeometry& g) {
  return GridLayer(g, LayerSemantic::occupancy, occupancy::unknown);
}

/// One LiDAR return. `hit` is false for beams that reached max range.
struct Beam {
  PolarMeasurement measurement;
  bool hit = false;
};

/// Integer line traversal (Bresenham) from `a` to `b`, both included.
inline std::vector<CellIndex> grid_line(CellIndex a, CellIndex b) {
  std::vector<CellIndex> out;
  const int dx = std::abs(b.col - a.col);
  const int dy = -std::abs(b.row - a.row);
  const int sx = a.col < b.col ? 1 : -1;
  const int sy = a.row < b.row ? 1 : -1;
  int err = dx + dy;
  out.reserve(static_cast<std::size_t>(std::max(dx, -dy)) + 1);
  for (;;) {
    out.push_back(a);
    if (a.col == b.col && a.row == b.row) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      a.col += sx;
    }
    if (e2 <= dx) {
      err += dx;
      a.row += sy;
    }
  }
  return out;
}

/// DP of a centered rectangle under a 2x2 covariance. Tolerates (near-)
/// singular covariances: a vanishing axis contributes probability 1.
inline double rectangle_probability_2d(const Eigen::Matrix2d& cov, double side_x, double side_y) {
  const double vx = std::max(cov(0, 0), 0.0);
  const double vy = std::max(cov(1, 1), 0.0);
  constexpr double tiny = 1e-300;
  if (vx <= tiny && vy <= tiny) return 1.0;
  if (vx <= tiny) return std::erf(side_y / 2.0 / (std::sqrt(vy) * std::numbers::sqrt2));
  if (vy <= tiny) return std::erf(side_x / 2.0 / (std::sqrt(vx) * std::numbers::sqrt2));
  const double sx = std::sqrt(vx);
  const double sy = std::sqrt(vy);
  const double rho = std::clamp(cov(0, 1) / (sx * sy), -1.0, 1.0);
  const double a = side_x / 2.0 / sx;
  const double c = side_y / 2.0 / sy;
  if (rho == 0.0) return std::erf(a / std::numbers::sqrt2) * std::erf(c / std::numbers::sqrt2);
  const double p = 2.0 * bivariate_normal_cdf(a, c, rho) - 2.0 * bivariate_normal_cdf(a, -c, rho) +
                   1.0 - 2.0 * normal_cdf(c);
  return std::clamp(p, 0.0, 1.0);
}

struct FovOptions {
  Eigen::Matrix2d sensor_noise = Eigen::Vector2d(0.02 * 0.02, std::pow(0.1 * std::numbers::pi / 180.0, 2))
                                     .asDiagonal();
  /// Probabilities are clamped to [eps, 1 - eps] before the log-odds map.
  double probability_floor = 1e-12;
};

struct FovResult {
  std::vector<std::size_t> touched;  ///< sorted row-major cell indices
  std::size_t occupied_marked = 0;
};

/// Integrates one scan taken from `pose` (x, y, phi belief) into the DP grid
/// and its occupancy companion. Every cell crossed by a beam is updated once
/// with ell_new from the measurement belief propagated to that cell's own
/// range and bearing; the hit cell is also marked occupied.
inline FovResult apply_fov(GridLayer& dp_grid, GridLayer& occupancy_grid, const GaussianBelief& pose,
                           const std::vector<Beam>& scan, const PriorConstants& prior,
                           const FovOptions& opt = {}) {
  const auto& g = dp_grid.geometry;
  if (!(occupancy_grid.geometry == g)) throw GeometryMismatch("DP and occupancy grids differ");
  if (pose.dim() != 3) throw InvalidArgument("pose belief must be (x, y, phi)");
  if (prior.dim != 2 || prior.sides.sides.size() != 2)
    throw InvalidArgument("the 2D grid needs a 2D prior");
  const Point2 origin_pt(pose.mean[0], pose.mean[1]);
  const CellIndex rc = world_to_cell(g, origin_pt);
  FovResult out;
  if (scan.empty()) return out;

  std::vector<char> mark(g.size(), 0);  // 1 = crossed, 2 = hit
  for (const Beam& beam : scan) {
    const double ang = beam.measurement.bearing + pose.mean[2];
    const Point2 end = origin_pt + beam.measurement.range * Point2(std::cos(ang), std::sin(ang));
    const CellIndex ec = g.cell_unchecked(end);
    const auto line = grid_line(rc, ec);
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (!g.contains(line[i])) break;
      const std::size_t idx = g.index(line[i]);
      const bool is_hit = beam.hit && i + 1 == line.size();
      if (is_hit) mark[idx] = 2;
      else if (mark[idx] == 0) mark[idx] = 1;
    }
  }

  const Eigen::Vector3d pose_mean = pose.mean.head<3>();
  const Eigen::Matrix3d pose_cov = pose.covariance.topLeftCorner<3, 3>();
  const double sx = prior.sides.sides[0];
  const double sy = prior.sides.sides[1];
  const double eps = opt.probability_floor;
  for (std::size_t idx = 0; idx < mark.size(); ++idx) {
    if (!mark[idx]) continue;
    out.touched.push_back(idx);
    const Point2 d = g.cell_to_world(g.cell_of(idx)) - origin_pt;
    const PolarMeasurement m{d.norm(), std::atan2(d.y(), d.x()) - pose_mean[2]};
    const auto mom = propagate_polar_moments(pose_mean, pose_cov, m, opt.sensor_noise);
    const double p = std::clamp(rectangle_probability_2d(mom.covariance, sx, sy), eps, 1.0 - eps);
    const double l_new = std::log(p) - std::log1p(-p);
    dp_grid.values[idx] = gated_update(dp_grid.values[idx], l_new, prior.kappa, prior.ell_beta);
    if (mark[idx] == 2) {
      occupancy_grid.values[idx] = occupancy::occupied;
      ++out.occupied_marked;
    } else if (occupancy_grid.values[idx] == occupancy::unknown) {
      occupancy_grid.values[idx] = occupancy::free;
    }
  }
  return out;
}

}  // namespace sirenmap
