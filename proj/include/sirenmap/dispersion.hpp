#pragma once

// Dispersion probability (DP) of Gaussian measurements over hyperrectangles
// centered at the mean, the Gauss-inequality lower bound, and first-order
// propagation of polar range/bearing measurements through pose uncertainty.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <boost/math/special_functions/erf.hpp>
#include <boost/random/sobol.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>
#include <tuple>
#include <vector>

#include "sirenmap/errors.hpp"

namespace sirenmap {

/// Multivariate Gaussian N(mean, covariance). Components may mix units
/// (meters and radians).
struct GaussianBelief {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;

  GaussianBelief() = default;
  GaussianBelief(Eigen::VectorXd m, Eigen::MatrixXd c) : mean(std::move(m)), covariance(std::move(c)) {}

  Eigen::Index dim() const { return mean.size(); }
};

/// Side lengths s_i of the hyperrectangle |x_i - mu_i| < s_i / 2.
struct RectangleSpec {
  Eigen::VectorXd sides;

  RectangleSpec() = default;
  explicit RectangleSpec(Eigen::VectorXd s) : sides(std::move(s)) {}
  RectangleSpec(std::initializer_list<double> s) : sides(static_cast<Eigen::Index>(s.size())) {
    Eigen::Index i = 0;
    for (double v : s) sides[i++] = v;
  }
};

/// Range (m) and bearing (rad, sensor frame) of one beam.
struct PolarMeasurement {
  double range = 0.0;
  double bearing = 0.0;
};

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Standard normal quantile.
inline double normal_quantile(double p) {
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

/// Throws InvalidCovariance unless the belief has matching dimensions and a
/// symmetric (within 1e-9) positive-definite covariance.
inline void validate(const GaussianBelief& b) {
  const auto n = b.dim();
  if (n == 0 || b.covariance.rows() != n || b.covariance.cols() != n)
    throw InvalidCovariance("covariance must be " + std::to_string(n) + "x" + std::to_string(n));
  if (!b.mean.allFinite() || !b.covariance.allFinite())
    throw InvalidCovariance("belief has non-finite entries");
  const double scale = std::max(1.0, b.covariance.cwiseAbs().maxCoeff());
  if ((b.covariance - b.covariance.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
    throw InvalidCovariance("covariance is not symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(b.covariance);
  if (llt.info() != Eigen::Success || (llt.matrixL().toDenseMatrix().diagonal().array() <= 0.0).any())
    throw InvalidCovariance("covariance is not positive definite");
}

inline void validate(const GaussianBelief& b, const RectangleSpec& r) {
  validate(b);
  if (r.sides.size() != b.dim())
    throw InvalidArgument("rectangle dimension " + std::to_string(r.sides.size()) +
                          " does not match belief dimension " + std::to_string(b.dim()));
  if (!((r.sides.array() > 0.0).all()) || !r.sides.allFinite())
    throw InvalidArgument("rectangle sides must be positive");
}

/// sigma~ = |Sigma|^(1/2N), from the Cholesky log-determinant.
inline double geometric_mean_sigma(const GaussianBelief& b) {
  validate(b);
  Eigen::LLT<Eigen::MatrixXd> llt(b.covariance);
  const Eigen::VectorXd diag = llt.matrixLLT().diagonal();
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < diag.size(); ++i) log_det += 2.0 * std::log(diag[i]);
  return std::exp(log_det / (2.0 * static_cast<double>(b.dim())));
}

/// P(X > h, Y > k) for a standard bivariate normal with correlation r.
/// Drezner-Wesolowsky with Genz's Gauss-Legendre refinements (BVNU).
inline double bivariate_normal_upper(double h, double k, double r) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  if (r == 0.0) return normal_cdf(-h) * normal_cdf(-k);
  static constexpr double w6[] = {0.1713244923791705, 0.3607615730481384, 0.4679139345726904};
  static constexpr double x6[] = {0.9324695142031522, 0.6612093864662647, 0.2386191860831970};
  static constexpr double w12[] = {0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
                                   0.2031674267230659,  0.2334925365383547, 0.2491470458134029};
  static constexpr double x12[] = {0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
                                   0.5873179542866171, 0.3678314989981802, 0.1252334085114692};
  static constexpr double w20[] = {0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
                                   0.08327674157670475, 0.1019301198172404,  0.1181945319615184,
                                   0.1316886384491766,  0.1420961093183821,  0.1491729864726037,
                                   0.1527533871307259};
  static constexpr double x20[] = {0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
                                   0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
                                   0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
                                   0.07652652113349733};
  const double* w;
  const double* x;
  int lg;
  const double ar = std::abs(r);
  if (ar < 0.3) { w = w6; x = x6; lg = 3; }
  else if (ar < 0.75) { w = w12; x = x12; lg = 6; }
  else { w = w20; x = x20; lg = 10; }

  double hk = h * k;
  double bvn = 0.0;
  if (ar < 0.925) {
    const double hs = (h * h + k * k) / 2.0;
    const double asr = std::asin(r) / 2.0;
    for (int i = 0; i < lg; ++i) {
      for (double xi : {1.0 - x[i], 1.0 + x[i]}) {
        const double sn = std::sin(asr * xi);
        bvn += w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
      }
    }
    return std::clamp(bvn * asr / two_pi + normal_cdf(-h) * normal_cdf(-k), 0.0, 1.0);
  }
  if (r < 0.0) {
    k = -k;
    hk = -hk;
  }
  if (ar < 1.0) {
    const double as = (1.0 - r) * (1.0 + r);
    double a = std::sqrt(as);
    const double bs = (h - k) * (h - k);
    const double c = (4.0 - hk) / 8.0;
    const double d = (12.0 - hk) / 80.0;
    double asr = -(bs / as + hk) / 2.0;
    if (asr > -100.0) bvn = a * std::exp(asr) * (1.0 - c * (bs - as) * (1.0 - d * bs) / 3.0 + c * d * as * as);
    if (hk > -100.0) {
      const double b = std::sqrt(bs);
      const double sp = std::sqrt(two_pi) * normal_cdf(-b / a);
      bvn -= std::exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
    }
    a /= 2.0;
    double sum = 0.0;
    for (int i = 0; i < lg; ++i) {
      for (double xi : {1.0 - x[i], 1.0 + x[i]}) {
        const double xs = (a * xi) * (a * xi);
        asr = -(bs / xs + hk) / 2.0;
        if (asr <= -100.0) continue;
        const double sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
        const double rs = std::sqrt(1.0 - xs);
        const double ep = std::exp(-(hk / 2.0) * xs / ((1.0 + rs) * (1.0 + rs))) / rs;
        sum += w[i] * std::exp(asr) * (sp - ep);
      }
    }
    bvn = (a * sum - bvn) / two_pi;
  }
  if (r > 0.0) {
    bvn += normal_cdf(-std::max(h, k));
  } else if (h >= k) {
    bvn = -bvn;
  } else {
    const double l = h < 0.0 ? normal_cdf(k) - normal_cdf(h) : normal_cdf(-h) - normal_cdf(-k);
    bvn = l - bvn;
  }
  return std::clamp(bvn, 0.0, 1.0);
}

/// Bivariate normal CDF F(x, y) with unit variances and correlation r.
inline double bivariate_normal_cdf(double x, double y, double r) {
  return bivariate_normal_upper(-x, -y, r);
}

enum class RectangleMethod {
  automatic,  ///< exact when diagonal or 2D, quasi-Monte Carlo otherwise
  qmc,        ///< always quasi-Monte Carlo (used to cross-check the exact paths)
};

struct RectangleOptions {
  long samples = 1L << 16;
  int replicates = 16;
  std::uint64_t seed = 0x5eed5eedULL;
  RectangleMethod method = RectangleMethod::automatic;
};

struct RectangleProbability {
  double probability = 0.0;
  double std_error = 0.0;  ///< 0 for the closed-form paths
  bool exact = true;
};

namespace detail {

inline bool is_diagonal(const Eigen::MatrixXd& m) {
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      if (r != c && m(r, c) != 0.0) return false;
  return true;
}

// Unshifted Sobol points, `count` x `dim`, shared between calls.
inline std::shared_ptr<const std::vector<double>> sobol_points(unsigned dim, long count) {
  static std::mutex mu;
  static std::map<std::pair<unsigned, long>, std::shared_ptr<const std::vector<double>>> cache;
  std::lock_guard lock(mu);
  auto key = std::make_pair(dim, count);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  auto pts = std::make_shared<std::vector<double>>(static_cast<std::size_t>(count) * dim);
  boost::random::sobol_engine<std::uint32_t, 32> engine(dim);
  engine.discard(dim);  // skip the all-zero first point
  constexpr double scale = 1.0 / 4294967296.0;
  for (auto& v : *pts) v = (static_cast<double>(engine()) + 0.5) * scale;
  cache.emplace(key, pts);
  return pts;
}

// Genz separation-of-variables estimator with randomly shifted Sobol
// replicates. The first variable is integrated exactly, the remaining N-1
// are sampled.
inline RectangleProbability qmc_rectangle(const Eigen::MatrixXd& cov, const Eigen::VectorXd& half,
                                          const RectangleOptions& opt) {
  const auto n = cov.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const Eigen::MatrixXd l = llt.matrixL();
  const double e1 = normal_cdf(half[0] / l(0, 0)) - normal_cdf(-half[0] / l(0, 0));
  if (n == 1) return {e1, 0.0, true};

  const int reps = std::max(1, opt.replicates);
  const long per_rep = std::max(1L, opt.samples / reps);
  const unsigned sdim = static_cast<unsigned>(n - 1);
  const auto pts = sobol_points(sdim, per_rep);
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  std::vector<double> y(static_cast<std::size_t>(n));
  std::vector<double> shift(sdim);
  double sum = 0.0;
  double sum_sq = 0.0;
  const double d1 = normal_cdf(-half[0] / l(0, 0));
  for (int rep = 0; rep < reps; ++rep) {
    for (auto& s : shift) s = uni(rng);
    double acc = 0.0;
    for (long p = 0; p < per_rep; ++p) {
      const double* u = pts->data() + static_cast<std::size_t>(p) * sdim;
      double f = e1;
      double lo = d1;
      double width = e1;
      for (Eigen::Index i = 1; i < n; ++i) {
        double w = u[i - 1] + shift[i - 1];
        if (w >= 1.0) w -= 1.0;
        const double q = std::clamp(lo + w * width, 1e-300, 1.0 - 1e-16);
        y[i - 1] = normal_quantile(q);
        double dot = 0.0;
        for (Eigen::Index j = 0; j < i; ++j) dot += l(i, j) * y[j];
        lo = normal_cdf((-half[i] - dot) / l(i, i));
        const double hi = normal_cdf((half[i] - dot) / l(i, i));
        width = hi - lo;
        f *= width;
        if (f <= 0.0) break;
      }
      acc += f;
    }
    const double mean = acc / static_cast<double>(per_rep);
    sum += mean;
    sum_sq += mean * mean;
  }
  const double mean = sum / reps;
  double se = 0.0;
  if (reps > 1) {
    const double var = std::max(0.0, (sum_sq - reps * mean * mean) / (reps - 1));
    se = std::sqrt(var / reps);
  }
  return {mean, se, false};
}

}  // namespace detail

/// P(|X_i - mu_i| < s_i / 2 for all i). Diagonal covariances use the exact
/// product of 1D Gaussian interval probabilities; correlated 2D covariances
/// use the four-corner bivariate CDF expansion; correlated N >= 3 use a
/// seeded randomized quasi-Monte Carlo estimate with its standard error.
inline RectangleProbability rectangle_probability(const GaussianBelief& b, const RectangleSpec& r,
                                                  const RectangleOptions& opt = {}) {
  validate(b, r);
  if (opt.samples <= 0) throw InvalidArgument("sample budget must be positive");
  const Eigen::VectorXd half = r.sides / 2.0;
  const auto n = b.dim();
  if (opt.method == RectangleMethod::automatic) {
    if (detail::is_diagonal(b.covariance)) {
      double p = 1.0;
      for (Eigen::Index i = 0; i < n; ++i)
        p *= std::erf(half[i] / (std::sqrt(b.covariance(i, i)) * std::numbers::sqrt2));
      return {p, 0.0, true};
    }
    if (n == 2) {
      const double sx = std::sqrt(b.covariance(0, 0));
      const double sy = std::sqrt(b.covariance(1, 1));
      const double rho = std::clamp(b.covariance(0, 1) / (sx * sy), -1.0, 1.0);
      const double a = half[0] / sx;
      const double c = half[1] / sy;
      // F(a,c) - F(-a,c) - F(a,-c) + F(-a,-c), folded with central symmetry.
      const double p = 2.0 * bivariate_normal_cdf(a, c, rho) - 2.0 * bivariate_normal_cdf(a, -c, rho) +
                       1.0 - 2.0 * normal_cdf(c);
      return {std::clamp(p, 0.0, 1.0), 0.0, true};
    }
  }
  return detail::qmc_rectangle(b.covariance, half, opt);
}

namespace detail {

// Principal standard deviations paired with rectangle sides: axis order for
// diagonal covariances, ascending-with-ascending otherwise.
inline std::vector<std::pair<double, std::size_t>> paired_sigmas(const GaussianBelief& b,
                                                                 const RectangleSpec& r) {
  const auto n = static_cast<std::size_t>(b.dim());
  std::vector<std::pair<double, std::size_t>> out(n);
  if (is_diagonal(b.covariance)) {
    for (std::size_t i = 0; i < n; ++i) out[i] = {std::sqrt(b.covariance(i, i)), i};
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(b.covariance, Eigen::EigenvaluesOnly);
  std::vector<double> sig(n);
  for (std::size_t i = 0; i < n; ++i) sig[i] = std::sqrt(es.eigenvalues()[static_cast<Eigen::Index>(i)]);
  std::sort(sig.begin(), sig.end());
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
    return r.sides[static_cast<Eigen::Index>(a)] < r.sides[static_cast<Eigen::Index>(c)];
  });
  for (std::size_t k = 0; k < n; ++k) out[order[k]] = {sig[k], order[k]};
  return out;
}

}  // namespace detail

/// Bound constant a = (prod s_i)^(1/N) / (2 sqrt 3).
inline double bound_constant(const RectangleSpec& r) {
  double log_prod = 0.0;
  for (Eigen::Index i = 0; i < r.sides.size(); ++i) log_prod += std::log(r.sides[i]);
  return std::exp(log_prod / static_cast<double>(r.sides.size())) / (2.0 * std::numbers::sqrt3);
}

/// Gauss-inequality lower bound prod s_i / (2 sqrt(3) sigma_i) = (a / sigma~)^N.
/// Requires 0 < s_i <= 4 sigma_i / sqrt(3) on every axis.
inline double gauss_bound(const GaussianBelief& b, const RectangleSpec& r) {
  validate(b, r);
  const auto pairs = detail::paired_sigmas(b, r);
  std::vector<std::size_t> bad;
  for (const auto& [sigma, axis] : pairs)
    if (r.sides[static_cast<Eigen::Index>(axis)] > 4.0 * sigma / std::numbers::sqrt3 * (1.0 + 1e-12))
      bad.push_back(axis);
  if (!bad.empty()) {
    std::sort(bad.begin(), bad.end());
    throw BoundDomainViolation(std::move(bad));
  }
  const double n = static_cast<double>(b.dim());
  return std::pow(bound_constant(r) / geometric_mean_sigma(b), n);
}

/// Mean and covariance of a polar measurement pushed through the pose
/// (x_a, y_a, phi_a) to the world frame, to first order. No validation.
struct PolarMoments {
  Eigen::Vector2d mean;
  Eigen::Matrix2d covariance;
  Eigen::Matrix<double, 2, 3> jacobian_pose;
  Eigen::Matrix2d jacobian_measurement;
};

inline PolarMoments propagate_polar_moments(const Eigen::Vector3d& pose_mean,
                                            const Eigen::Matrix3d& pose_cov, const PolarMeasurement& m,
                                            const Eigen::Matrix2d& sensor_noise) {
  const double ang = m.bearing + pose_mean[2];
  const double c = std::cos(ang);
  const double s = std::sin(ang);
  PolarMoments out;
  out.mean = {pose_mean[0] + m.range * c, pose_mean[1] + m.range * s};
  out.jacobian_pose << 1.0, 0.0, -m.range * s,  //
      0.0, 1.0, m.range * c;
  out.jacobian_measurement << c, -m.range * s,  //
      s, m.range * c;
  out.covariance = out.jacobian_pose * pose_cov * out.jacobian_pose.transpose() +
                   out.jacobian_measurement * sensor_noise * out.jacobian_measurement.transpose();
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  return out;
}

/// World-frame belief over the beam endpoint (x_1, x_2).
inline GaussianBelief propagate_polar(const GaussianBelief& pose, const PolarMeasurement& m,
                                      const Eigen::Matrix2d& sensor_noise) {
  if (pose.dim() != 3 || pose.covariance.rows() != 3 || pose.covariance.cols() != 3)
    throw InvalidArgument("pose belief must be 3-dimensional (x, y, phi)");
  if (!(m.range >= 0.0)) throw InvalidArgument("range must be non-negative");
  Eigen::LLT<Eigen::Matrix3d> pose_llt(pose.covariance);
  if (pose_llt.info() != Eigen::Success)
    throw DegenerateBelief("pose covariance is not positive definite");
  const auto mom = propagate_polar_moments(pose.mean, pose.covariance, m, sensor_noise);
  Eigen::LLT<Eigen::Matrix2d> llt(mom.covariance);
  if (llt.info() != Eigen::Success || !(mom.covariance.determinant() > 0.0))
    throw DegenerateBelief("propagated covariance is singular");
  return {mom.mean, mom.covariance};
}

}  // namespace sirenmap
