#pragma once

// Linear KF-SLAM over robot position and 2D landmark positions; heading is
// known and kept outside the filter.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <map>
#include <vector>

#include "sirenmap/dispersion.hpp"
#include "sirenmap/errors.hpp"
#include "sirenmap/sim.hpp"

namespace sirenmap {

struct NoiseParams {
  Eigen::Matrix2d Q = 0.01 * Eigen::Matrix2d::Identity();
  Eigen::Matrix2d R = 0.01 * Eigen::Matrix2d::Identity();
  Eigen::Matrix2d P0 = 0.01 * Eigen::Matrix2d::Identity();
};

struct KfState {
  Eigen::VectorXd X;  ///< (x_a, y_a, l1x, l1y, ...)
  Eigen::MatrixXd P;
  std::map<int, Eigen::Index> landmark_registry;  ///< id -> offset into X
  double heading = 0.0;

  Eigen::Index landmark_count() const { return static_cast<Eigen::Index>(landmark_registry.size()); }
  Eigen::Vector2d robot() const { return X.head<2>(); }
  Eigen::Matrix2d robot_cov() const { return P.topLeftCorner<2, 2>(); }
  Eigen::Vector2d landmark_mean(int id) const { return X.segment<2>(landmark_registry.at(id)); }
  Eigen::Matrix2d landmark_cov(int id) const {
    const auto o = landmark_registry.at(id);
    return P.block<2, 2>(o, o);
  }
  /// |P_ll|^(1/4).
  double landmark_sigma(int id) const { return std::pow(std::max(landmark_cov(id).determinant(), 0.0), 0.25); }
};

inline KfState kf_init(const Point2& robot, const NoiseParams& noise, double heading = 0.0) {
  KfState s;
  s.X = robot;
  s.P = noise.P0;
  s.heading = heading;
  return s;
}

/// X <- X + B u; P <- P + blockdiag(Q, 0).
inline KfState kf_predict(KfState state, const Eigen::Vector2d& u, const NoiseParams& noise) {
  state.X.head<2>() += u;
  state.P.topLeftCorner<2, 2>() += noise.Q;
  return state;
}

/// Sequential linear updates with z = landmark - robot + v. Unregistered
/// ids augment the state with robot + z, P_ll = P_rr + R and the robot's
/// cross-covariances.
inline KfState kf_update(KfState state, const std::vector<LandmarkObservation>& observations,
                         const NoiseParams& noise) {
  for (const auto& ob : observations) {
    if (ob.z.size() != 2) throw InvalidArgument("landmark observation must be 2D");
    const Eigen::Vector2d z = ob.z;
    const auto it = state.landmark_registry.find(ob.id);
    const Eigen::Index n = state.X.size();
    if (it == state.landmark_registry.end()) {
      Eigen::VectorXd X(n + 2);
      X << state.X, state.X.head<2>() + z;
      Eigen::MatrixXd P(n + 2, n + 2);
      P.topLeftCorner(n, n) = state.P;
      P.block(n, 0, 2, n) = state.P.topRows(2);
      P.block(0, n, n, 2) = state.P.leftCols(2);
      P.block<2, 2>(n, n) = state.P.topLeftCorner<2, 2>() + noise.R;
      state.X = std::move(X);
      state.P = std::move(P);
      state.landmark_registry[ob.id] = n;
      continue;
    }
    const Eigen::Index o = it->second;
    // H = [-I, 0, ..., I (at o), ...]
    const Eigen::Vector2d innov = z - (state.X.segment<2>(o) - state.X.head<2>());
    const Eigen::MatrixXd PHt = state.P.middleCols(o, 2) - state.P.leftCols(2);  // n x 2
    const Eigen::Matrix2d S = (PHt.middleRows(o, 2) - PHt.topRows(2)) + noise.R;
    const Eigen::MatrixXd K = S.llt().solve(PHt.transpose()).transpose();  // n x 2
    state.X += K * innov;
    // Joseph form: (I - KH) P (I - KH)^T + K R K^T.
    Eigen::MatrixXd IKH = Eigen::MatrixXd::Identity(n, n);
    IKH.leftCols(2) += K;
    IKH.middleCols(o, 2) -= K;
    Eigen::MatrixXd P = IKH * state.P * IKH.transpose() + K * noise.R * K.transpose();
    state.P = 0.5 * (P + P.transpose());
  }
  return state;
}

/// (x_a, y_a, phi_a) belief: KF position block plus an independent heading.
inline GaussianBelief pose_belief(const KfState& state, double heading, double heading_var) {
  Eigen::Vector3d mean(state.X[0], state.X[1], heading);
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  cov.topLeftCorner<2, 2>() = state.robot_cov();
  cov(2, 2) = heading_var;
  return GaussianBelief(mean, cov);
}

/// e^T P_rr^-1 e for the robot block.
inline double robot_nees(const KfState& state, const Point2& truth) {
  const Eigen::Vector2d e = truth - state.robot();
  return e.dot(state.robot_cov().ldlt().solve(e));
}

}  // namespace sirenmap
