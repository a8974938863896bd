#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "sirenmap/errors.hpp"

namespace sirenmap {

using Point2 = Eigen::Vector2d;

struct CellIndex {
  int col = 0;
  int row = 0;
  friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

/// World-anchored geometry of a fixed-resolution 2D grid. `origin` is the
/// lower-left corner of cell (0,0); the extent is the half-open box
/// [origin, origin + (width, height) * resolution).
struct GridGeometry {
  double resolution = 0.1;
  Point2 origin = Point2::Zero();
  int width = 0;
  int height = 0;

  GridGeometry() = default;
  GridGeometry(double res, Point2 org, int w, int h)
      : resolution(res), origin(std::move(org)), width(w), height(h) {
    if (!(res > 0.0) || !std::isfinite(res))
      throw InvalidArgument("grid resolution must be positive");
    if (w <= 0 || h <= 0) throw InvalidArgument("grid width and height must be positive");
  }

  std::size_t size() const { return static_cast<std::size_t>(width) * height; }
  double cell_area() const { return resolution * resolution; }

  bool contains(const CellIndex& c) const {
    return c.col >= 0 && c.row >= 0 && c.col < width && c.row < height;
  }
  bool contains(const Point2& p) const {
    const double x = (p.x() - origin.x()) / resolution;
    const double y = (p.y() - origin.y()) / resolution;
    return x >= 0.0 && y >= 0.0 && x < width && y < height;
  }

  std::size_t index(const CellIndex& c) const {
    return static_cast<std::size_t>(c.row) * width + c.col;
  }
  CellIndex cell_of(std::size_t idx) const {
    return {static_cast<int>(idx % width), static_cast<int>(idx / width)};
  }

  /// Center of a cell in world coordinates.
  Point2 cell_to_world(const CellIndex& c) const {
    return {origin.x() + (c.col + 0.5) * resolution, origin.y() + (c.row + 0.5) * resolution};
  }

  /// Fractional cell coordinate along one axis. Values within 1e-9 cells of
  /// an integer snap to it, so shared edges resolve to the larger index.
  static double snapped(double q) {
    const double r = std::round(q);
    return std::abs(q - r) < 1e-9 * std::max(1.0, std::abs(q)) ? r : q;
  }

  /// Cell whose region contains `p` without bounds checking (may return
  /// indices outside the grid).
  CellIndex cell_unchecked(const Point2& p) const {
    return {static_cast<int>(std::floor(snapped((p.x() - origin.x()) / resolution))),
            static_cast<int>(std::floor(snapped((p.y() - origin.y()) / resolution)))};
  }

  friend bool operator==(const GridGeometry& a, const GridGeometry& b) {
    return a.resolution == b.resolution && a.origin == b.origin && a.width == b.width &&
           a.height == b.height;
  }
};

inline CellIndex world_to_cell(const GridGeometry& g, const Point2& p) {
  const CellIndex c = g.cell_unchecked(p);
  if (!std::isfinite(p.x()) || !std::isfinite(p.y()) || !g.contains(c))
    throw OutOfBounds(p.x(), p.y());
  return c;
}

inline Point2 cell_to_world(const GridGeometry& g, const CellIndex& c) {
  if (!g.contains(c)) throw OutOfBounds(c.col, c.row);
  return g.cell_to_world(c);
}

enum class LayerSemantic { log_odds, dispersion_probability, uncertainty, occupancy };

inline std::string_view to_string(LayerSemantic s) {
  switch (s) {
    case LayerSemantic::log_odds: return "log_odds";
    case LayerSemantic::dispersion_probability: return "dispersion_probability";
    case LayerSemantic::uncertainty: return "uncertainty";
    case LayerSemantic::occupancy: return "occupancy";
  }
  return "unknown";
}

inline LayerSemantic semantic_from_string(std::string_view s) {
  if (s == "log_odds") return LayerSemantic::log_odds;
  if (s == "dispersion_probability") return LayerSemantic::dispersion_probability;
  if (s == "uncertainty") return LayerSemantic::uncertainty;
  if (s == "occupancy") return LayerSemantic::occupancy;
  throw MalformedFile("unknown layer semantic '" + std::string(s) + "'");
}

/// Dense row-major scalar field over a GridGeometry.
struct GridLayer {
  GridGeometry geometry;
  std::vector<double> values;
  LayerSemantic semantic = LayerSemantic::log_odds;

  GridLayer() = default;
  GridLayer(GridGeometry g, LayerSemantic sem, double fill = 0.0)
      : geometry(std::move(g)), values(geometry.size(), fill), semantic(sem) {}
  GridLayer(GridGeometry g, LayerSemantic sem, std::vector<double> v)
      : geometry(std::move(g)), values(std::move(v)), semantic(sem) {
    if (values.size() != geometry.size())
      throw MalformedFile("value count " + std::to_string(values.size()) +
                          " does not match grid size " + std::to_string(geometry.size()));
  }

  int width() const { return geometry.width; }
  int height() const { return geometry.height; }
  std::size_t size() const { return values.size(); }

  double& at(int col, int row) { return values[static_cast<std::size_t>(row) * geometry.width + col]; }
  double at(int col, int row) const {
    return values[static_cast<std::size_t>(row) * geometry.width + col];
  }
  double& operator[](const CellIndex& c) { return at(c.col, c.row); }
  double operator[](const CellIndex& c) const { return at(c.col, c.row); }
};

/// Per-cell spatial gradient (d/dx, d/dy) in layer units per meter.
struct GradientField {
  GridGeometry geometry;
  std::vector<double> dx;
  std::vector<double> dy;

  double magnitude(std::size_t i) const { return std::hypot(dx[i], dy[i]); }
};

/// Central differences over 2c on interior cells, one-sided over c on the
/// border.
inline GradientField central_gradient(const GridLayer& layer) {
  const auto& g = layer.geometry;
  if (g.width < 3 || g.height < 3)
    throw DegenerateGrid("gradient needs at least a 3x3 grid, got " + std::to_string(g.width) +
                         "x" + std::to_string(g.height));
  GradientField out{g, std::vector<double>(g.size()), std::vector<double>(g.size())};
  const double c = g.resolution;
  const int w = g.width;
  const int h = g.height;
  for (int r = 0; r < h; ++r) {
    for (int col = 0; col < w; ++col) {
      double gx;
      if (col == 0) gx = (layer.at(1, r) - layer.at(0, r)) / c;
      else if (col == w - 1) gx = (layer.at(w - 1, r) - layer.at(w - 2, r)) / c;
      else gx = (layer.at(col + 1, r) - layer.at(col - 1, r)) / (2.0 * c);
      double gy;
      if (r == 0) gy = (layer.at(col, 1) - layer.at(col, 0)) / c;
      else if (r == h - 1) gy = (layer.at(col, h - 1) - layer.at(col, h - 2)) / c;
      else gy = (layer.at(col, r + 1) - layer.at(col, r - 1)) / (2.0 * c);
      const std::size_t i = static_cast<std::size_t>(r) * w + col;
      out.dx[i] = gx;
      out.dy[i] = gy;
    }
  }
  return out;
}

namespace detail {

// 1D squared-distance transform of a sampled function (lower envelope of
// parabolas).
inline void edt_1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  int k = 0;
  v[0] = 0;
  z[0] = -inf;
  z[1] = inf;
  for (int q = 1; q < n; ++q) {
    if (f[q] == inf) continue;
    if (f[v[k]] == inf) {
      v[k] = q;
      continue;
    }
    double s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  if (f[v[0]] == inf) {
    std::fill(d, d + n, inf);
    return;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    d[q] = (double(q) - v[k]) * (double(q) - v[k]) + f[v[k]];
  }
}

}  // namespace detail

/// Exact Euclidean distance (meters, cell-center to cell-center) from every
/// cell to the nearest cell where `mask` is true. Infinity if the mask is
/// empty. Linear in the number of cells.
inline std::vector<double> distance_to_mask(const GridGeometry& g, const std::vector<char>& mask) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  const int w = g.width;
  const int h = g.height;
  const int n = std::max(w, h);
  std::vector<double> grid(g.size());
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = mask[i] ? 0.0 : inf;
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);
  for (int c = 0; c < w; ++c) {
    for (int r = 0; r < h; ++r) f[r] = grid[static_cast<std::size_t>(r) * w + c];
    detail::edt_1d(f.data(), d.data(), h, v, z);
    for (int r = 0; r < h; ++r) grid[static_cast<std::size_t>(r) * w + c] = d[r];
  }
  for (int r = 0; r < h; ++r) {
    double* row = grid.data() + static_cast<std::size_t>(r) * w;
    std::copy(row, row + w, f.begin());
    detail::edt_1d(f.data(), d.data(), w, v, z);
    for (int c = 0; c < w; ++c) row[c] = d[c] == inf ? inf : std::sqrt(d[c]) * g.resolution;
  }
  return grid;
}

/// 8-connected components of the cells where `mask` is true. Returns one
/// cell-index list per component, in order of each component's first cell
/// (row-major scan), so labeling is deterministic.
inline std::vector<std::vector<std::size_t>> components8(const GridGeometry& g,
                                                         const std::vector<char>& mask) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<char> seen(mask.size(), 0);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask[start] || seen[start]) continue;
    std::vector<std::size_t> comp;
    seen[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      comp.push_back(i);
      const CellIndex c = g.cell_of(i);
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          const CellIndex nb{c.col + dc, c.row + dr};
          if (!g.contains(nb)) continue;
          const std::size_t j = g.index(nb);
          if (mask[j] && !seen[j]) {
            seen[j] = 1;
            stack.push_back(j);
          }
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    out.push_back(std::move(comp));
  }
  return out;
}

}  // namespace sirenmap
