#pragma once

// Uncertainty Map, uncertainty / classical frontiers and the SiREn metric.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "sirenmap/belief_update.hpp"
#include "sirenmap/errors.hpp"
#include "sirenmap/grid.hpp"

namespace sirenmap {

/// U_k = a / p_k^(1/N) per cell. Cells still at ell_beta map to U_beta
/// exactly.
inline GridLayer build_uncertainty_map(const GridLayer& dp_grid, const PriorConstants& prior) {
  if (dp_grid.semantic != LayerSemantic::log_odds)
    throw InvalidArgument("uncertainty map needs a log-odds DP grid");
  GridLayer um(dp_grid.geometry, LayerSemantic::uncertainty, prior.U_beta);
  const double inv_n = 1.0 / prior.dim;
  for (std::size_t i = 0; i < dp_grid.size(); ++i) {
    const double l = dp_grid.values[i];
    if (l == prior.ell_beta) continue;
    um.values[i] = prior.a / std::pow(logodds_to_prob(l), inv_n);
  }
  return um;
}

enum class ThresholdMode {
  /// ||grad U|| * 2c, the uncertainty difference spanned by the stencil (m).
  jump,
  /// ||grad U|| itself (uncertainty per meter).
  raw_gradient,
};

struct FrontierParams {
  double T_h = 0.2;
  double obstacle_clearance = 0.5;
  double U_beta = 0.0;
  int dim = 2;
  ThresholdMode mode = ThresholdMode::jump;
  std::size_t min_cluster_size = 1;

  static FrontierParams from_prior(const PriorConstants& prior, double T_h = 0.2) {
    FrontierParams p;
    p.T_h = T_h;
    p.U_beta = prior.U_beta;
    p.dim = prior.dim;
    return p;
  }
};

enum class FrontierKind { CF, UF };

inline const char* to_string(FrontierKind k) { return k == FrontierKind::CF ? "CF" : "UF"; }

struct FrontierCell {
  CellIndex cell;
  double gradient = 0.0;  ///< ||grad U||, per meter
  double jump = 0.0;      ///< ||grad U|| * 2c
};

struct FrontierCluster {
  FrontierKind kind = FrontierKind::UF;
  int id = 0;
  std::vector<std::size_t> cells;  ///< row-major indices, sorted
  Point2 centroid = Point2::Zero();
  double mean_gradient = 0.0;
  double mean_jump = 0.0;
  double max_jump = 0.0;
  std::size_t unexplored_neighbors = 0;  ///< distinct unknown cells 8-adjacent to the cluster
};

struct FrontierSet {
  std::vector<FrontierCell> uf_cells;
  std::vector<CellIndex> cf_cells;
  std::vector<FrontierCluster> uf_clusters;
  std::vector<FrontierCluster> cf_clusters;

  const std::vector<FrontierCluster>& clusters(FrontierKind k) const {
    return k == FrontierKind::UF ? uf_clusters : cf_clusters;
  }
};

namespace detail {

inline std::vector<double> obstacle_distance(const GridLayer& occupancy_grid) {
  std::vector<char> occ(occupancy_grid.size());
  for (std::size_t i = 0; i < occ.size(); ++i) occ[i] = occupancy_grid.values[i] == occupancy::occupied;
  return distance_to_mask(occupancy_grid.geometry, occ);
}

inline std::size_t count_unknown_neighbors(const GridLayer& occupancy_grid,
                                           const std::vector<std::size_t>& cells) {
  const auto& g = occupancy_grid.geometry;
  std::vector<std::size_t> nbs;
  for (std::size_t i : cells) {
    const CellIndex c = g.cell_of(i);
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) {
        const CellIndex n{c.col + dc, c.row + dr};
        if ((dr || dc) && g.contains(n) && occupancy_grid[n] == occupancy::unknown) nbs.push_back(g.index(n));
      }
  }
  std::sort(nbs.begin(), nbs.end());
  return static_cast<std::size_t>(std::unique(nbs.begin(), nbs.end()) - nbs.begin());
}

inline std::vector<FrontierCluster> cluster_cells(FrontierKind kind, const GridGeometry& g,
                                                  const std::vector<char>& mask,
                                                  const std::vector<double>* gradient,
                                                  const std::vector<double>* jump,
                                                  const GridLayer& occupancy_grid,
                                                  std::size_t min_size) {
  std::vector<FrontierCluster> out;
  int next_id = 0;
  for (auto& comp : components8(g, mask)) {
    if (comp.size() < std::max<std::size_t>(1, min_size)) continue;
    FrontierCluster cl;
    cl.kind = kind;
    cl.id = next_id++;
    Point2 sum = Point2::Zero();
    for (std::size_t i : comp) {
      sum += g.cell_to_world(g.cell_of(i));
      if (gradient) cl.mean_gradient += (*gradient)[i];
      if (jump) {
        cl.mean_jump += (*jump)[i];
        cl.max_jump = std::max(cl.max_jump, (*jump)[i]);
      }
    }
    const double n = static_cast<double>(comp.size());
    cl.centroid = sum / n;
    cl.mean_gradient /= n;
    cl.mean_jump /= n;
    cl.unexplored_neighbors = count_unknown_neighbors(occupancy_grid, comp);
    cl.cells = std::move(comp);
    out.push_back(std::move(cl));
  }
  return out;
}

}  // namespace detail

/// Uncertainty frontiers: cells whose UM gradient exceeds T_h, minus cells
/// at or above U_beta and cells within obstacle_clearance of an occupied
/// cell; clustered by 8-connectivity.
inline FrontierSet extract_uncertainty_frontiers(const GridLayer& um, const GridLayer& occupancy_grid,
                                                 const FrontierParams& params) {
  if (!(um.geometry == occupancy_grid.geometry))
    throw GeometryMismatch("uncertainty map and occupancy grid differ in geometry");
  if (!(params.T_h > 0.0)) throw InvalidArgument("T_h must be positive");
  if (params.obstacle_clearance < 0.0) throw InvalidArgument("obstacle_clearance must be >= 0");
  const auto& g = um.geometry;
  const GradientField grad = central_gradient(um);
  const auto dist = detail::obstacle_distance(occupancy_grid);
  std::vector<double> mag(g.size());
  std::vector<double> jump(g.size());
  std::vector<char> mask(g.size(), 0);
  FrontierSet out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    mag[i] = grad.magnitude(i);
    jump[i] = mag[i] * 2.0 * g.resolution;
    const double tested = params.mode == ThresholdMode::jump ? jump[i] : mag[i];
    if (tested > params.T_h && um.values[i] < params.U_beta && dist[i] > params.obstacle_clearance) {
      mask[i] = 1;
      out.uf_cells.push_back({g.cell_of(i), mag[i], jump[i]});
    }
  }
  out.uf_clusters = detail::cluster_cells(FrontierKind::UF, g, mask, &mag, &jump, occupancy_grid,
                                          params.min_cluster_size);
  return out;
}

/// Classical frontiers: free explored cells 8-adjacent to an unknown cell,
/// minus cells within obstacle_clearance of an occupied cell.
inline FrontierSet extract_classical_frontiers(const GridLayer& occupancy_grid, const FrontierParams& params) {
  if (occupancy_grid.semantic != LayerSemantic::occupancy)
    throw InvalidArgument("classical frontiers need an occupancy layer");
  const auto& g = occupancy_grid.geometry;
  const auto dist = detail::obstacle_distance(occupancy_grid);
  std::vector<char> mask(g.size(), 0);
  FrontierSet out;
  for (int r = 0; r < g.height; ++r) {
    for (int c = 0; c < g.width; ++c) {
      const CellIndex ci{c, r};
      const std::size_t i = g.index(ci);
      if (occupancy_grid.values[i] != occupancy::free || dist[i] <= params.obstacle_clearance) continue;
      bool borders_unknown = false;
      for (int dr = -1; dr <= 1 && !borders_unknown; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const CellIndex n{c + dc, r + dr};
          if ((dr || dc) && g.contains(n) && occupancy_grid[n] == occupancy::unknown) {
            borders_unknown = true;
            break;
          }
        }
      if (borders_unknown) {
        mask[i] = 1;
        out.cf_cells.push_back(ci);
      }
    }
  }
  out.cf_clusters = detail::cluster_cells(FrontierKind::CF, g, mask, nullptr, nullptr, occupancy_grid,
                                          params.min_cluster_size);
  return out;
}

/// Both frontier kinds from one DP grid and its occupancy companion.
inline FrontierSet extract_frontiers(const GridLayer& dp_grid, const GridLayer& occupancy_grid,
                                     const PriorConstants& prior, const FrontierParams& params) {
  const GridLayer um = build_uncertainty_map(dp_grid, prior);
  FrontierSet uf = extract_uncertainty_frontiers(um, occupancy_grid, params);
  FrontierSet cf = extract_classical_frontiers(occupancy_grid, params);
  uf.cf_cells = std::move(cf.cf_cells);
  uf.cf_clusters = std::move(cf.cf_clusters);
  return uf;
}

/// KL(N(0, sigma_k^2 I) || N(0, sigma_max^2 I)) in N dimensions.
inline double kl_term_sigma(double sigma_k, double sigma_max, int n) {
  if (!(sigma_k > 0.0) || !(sigma_max > 0.0) || n <= 0)
    throw DomainError("kl_term_sigma needs positive sigmas and dimension");
  const double r = sigma_k / sigma_max;
  const double nn = n;
  return -nn * std::log(r) - nn / 2.0 + nn / 2.0 * r * r;
}

/// DP-based approximation of the same divergence from p_k and beta.
inline double kl_term_dp(double p_k, double beta, int n) {
  if (!(p_k > 0.0 && p_k < 1.0) || !(beta > 0.0 && beta < 1.0) || n <= 0)
    throw DomainError("kl_term_dp needs p_k, beta in (0, 1) and a positive dimension");
  const double nn = n;
  return std::log(p_k / beta) - nn / 2.0 + nn / 2.0 * std::pow(beta / p_k, 2.0 / nn);
}

enum class SirenMode { dp_approximation, closed_form_sigma };

struct SirenParams {
  double beta = 0.0;
  double sigma_max = 0.0;
  int dim = 2;
  SirenMode mode = SirenMode::dp_approximation;

  /// Reference taken from the prior; sigma_max = U_beta makes the two modes
  /// coincide on the UM.
  static SirenParams from_prior(const PriorConstants& prior, SirenMode mode = SirenMode::dp_approximation) {
    return {prior.beta, prior.U_beta, prior.dim, mode};
  }
};

struct SirenReport {
  double total = 0.0;
  double positive = 0.0;  ///< sum of positive contributions
  double negative = 0.0;  ///< sum of negative contributions
  std::size_t explored_cells = 0;
  std::vector<double> terms;  ///< signed, area-weighted contribution per cell
};

namespace detail {

// Neumaier-compensated running sum; deterministic for a fixed input order.
struct CompensatedSum {
  double sum = 0.0;
  double comp = 0.0;
  void add(double x) {
    const double t = sum + x;
    comp += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  }
  double value() const { return sum + comp; }
};

}  // namespace detail

/// D_s = sum_k C_k KL_k sgn(p_k - beta) over explored cells (ell != ell_beta).
/// With `sigma_layer`, closed_form_sigma mode reads sigma~_k from it instead
/// of the UM lower bound.
inline SirenReport siren(const GridLayer& dp_grid, const PriorConstants& prior, const SirenParams& params,
                         const GridLayer* sigma_layer = nullptr) {
  if (!(params.beta > 0.0 && params.beta < 1.0)) throw DomainError("beta must lie in (0, 1)");
  if (!(params.sigma_max > 0.0)) throw DomainError("sigma_max must be positive");
  if (sigma_layer && !(sigma_layer->geometry == dp_grid.geometry))
    throw GeometryMismatch("sigma layer geometry differs from the DP grid");
  const double area = dp_grid.geometry.cell_area();
  const double inv_n = 1.0 / params.dim;
  SirenReport rep;
  rep.terms.assign(dp_grid.size(), 0.0);
  detail::CompensatedSum total, pos, neg;
  for (std::size_t i = 0; i < dp_grid.size(); ++i) {
    const double l = dp_grid.values[i];
    if (l == prior.ell_beta) continue;
    ++rep.explored_cells;
    const double p = logodds_to_prob(l);
    const double sign = p > params.beta ? 1.0 : (p < params.beta ? -1.0 : 0.0);
    if (sign == 0.0) continue;
    double kl;
    if (params.mode == SirenMode::dp_approximation) {
      kl = kl_term_dp(p, params.beta, params.dim);
    } else {
      const double sigma = sigma_layer ? sigma_layer->values[i] : prior.a / std::pow(p, inv_n);
      kl = kl_term_sigma(sigma, params.sigma_max, params.dim);
    }
    const double term = area * kl * sign;
    rep.terms[i] = term;
    total.add(term);
    (term > 0.0 ? pos : neg).add(term);
  }
  rep.total = total.value();
  rep.positive = pos.value();
  rep.negative = neg.value();
  return rep;
}

struct CurvePoint {
  double sigma = 0.0;
  double signed_kl = 0.0;
};

/// One-dimensional signed divergence term against N(0, sigma_max^2).
inline std::vector<CurvePoint> siren_curve(const std::vector<double>& sigmas, double sigma_max) {
  if (!(sigma_max > 0.0)) throw DomainError("sigma_max must be positive");
  std::vector<CurvePoint> out;
  out.reserve(sigmas.size());
  for (double s : sigmas) {
    if (!(s > 0.0)) throw DomainError("curve sigmas must be positive");
    const double sign = s < sigma_max ? 1.0 : (s > sigma_max ? -1.0 : 0.0);
    out.push_back({s, sign == 0.0 ? 0.0 : sign * kl_term_sigma(s, sigma_max, 1)});
  }
  return out;
}

/// Inclusive arithmetic range lo:hi:step.
inline std::vector<double> sigma_range(double lo, double hi, double step) {
  if (!(step > 0.0) || !(lo > 0.0) || hi < lo) throw InvalidArgument("range must be positive lo <= hi with step > 0");
  std::vector<double> out;
  const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
  for (long i = 0; i <= n; ++i) out.push_back(lo + static_cast<double>(i) * step);
  return out;
}

inline std::string curve_csv(const std::vector<CurvePoint>& pts) {
  std::ostringstream os;
  os.precision(17);
  os << "sigma,signed_kl\n";
  for (const auto& p : pts) os << p.sigma << ',' << p.signed_kl << '\n';
  return os.str();
}

inline nlohmann::json to_json(const FrontierCluster& c, const GridGeometry& g) {
  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t i : c.cells) {
    const auto ci = g.cell_of(i);
    cells.push_back({ci.col, ci.row});
  }
  return {{"kind", to_string(c.kind)},
          {"id", c.id},
          {"size", c.cells.size()},
          {"centroid", {c.centroid.x(), c.centroid.y()}},
          {"mean_gradient", c.mean_gradient},
          {"mean_jump", c.mean_jump},
          {"max_jump", c.max_jump},
          {"unexplored_neighbors", c.unexplored_neighbors},
          {"cells", cells}};
}

inline nlohmann::json to_json(const FrontierSet& fs, const GridGeometry& g) {
  nlohmann::json uf = nlohmann::json::array();
  for (const auto& c : fs.uf_clusters) uf.push_back(to_json(c, g));
  nlohmann::json cf = nlohmann::json::array();
  for (const auto& c : fs.cf_clusters) cf.push_back(to_json(c, g));
  return {{"uf_cell_count", fs.uf_cells.size()},
          {"cf_cell_count", fs.cf_cells.size()},
          {"uf_clusters", uf},
          {"cf_clusters", cf}};
}

inline nlohmann::json to_json(const SirenReport& r) {
  return {{"total", r.total},
          {"positive", r.positive},
          {"negative", r.negative},
          {"explored_cells", r.explored_cells}};
}

}  // namespace sirenmap
