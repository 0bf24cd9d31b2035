#pragma once

// Point-cluster coordinate [[P, v], [v^T, N]] of a point set, its rigid
// transform / merge algebra, the scatter map and linearized cluster noise.

#include <Eigen/Core>

#include <cstdint>
#include <span>

#include "cluster_ba/error.hpp"
#include "cluster_ba/geometry.hpp"

namespace cluster_ba {

/// Sufficient statistics of a point set: P = sum p p^T, v = sum p, N = count.
/// The point set itself cannot be recovered from it.
struct PointCluster {
  Mat3 P = Mat3::Zero();
  Vec3 v = Vec3::Zero();
  std::int64_t N = 0;

  bool empty() const { return N == 0; }

  Mat4 matrix() const {
    Mat4 C;
    C.topLeftCorner<3, 3>() = P;
    C.topRightCorner<3, 1>() = v;
    C.bottomLeftCorner<1, 3>() = v.transpose();
    C(3, 3) = static_cast<double>(N);
    return C;
  }

  PointCluster& operator+=(const PointCluster& o) {
    P += o.P;
    v += o.v;
    N += o.N;
    return *this;
  }

  bool operator==(const PointCluster&) const = default;
};

/// Cluster of a point set (the empty list gives the zero cluster).
inline PointCluster cluster_from_points(std::span<const Vec3> points) {
  PointCluster c;
  for (const Vec3& p : points) {
    c.P.noalias() += p * p.transpose();
    c.v += p;
  }
  c.N = static_cast<std::int64_t>(points.size());
  return c;
}

/// Cluster of the transformed point set, T C T^T in 4x4 form.
inline PointCluster transform(const Pose& T, const PointCluster& c) {
  PointCluster out;
  const Vec3 Rv = T.R * c.v;
  const Mat3 RvtT = Rv * T.t.transpose();
  out.P = T.R * c.P * T.R.transpose() + RvtT + RvtT.transpose() +
          static_cast<double>(c.N) * T.t * T.t.transpose();
  out.v = Rv + static_cast<double>(c.N) * T.t;
  out.N = c.N;
  return out;
}

/// Cluster of the union of two point sets.
inline PointCluster merge(const PointCluster& a, const PointCluster& b) {
  PointCluster out = a;
  out += b;
  return out;
}

inline PointCluster operator+(const PointCluster& a, const PointCluster& b) {
  return merge(a, b);
}

/// Covariance of the underlying points about their centroid,
/// P/N - v v^T / N^2.
inline Mat3 scatter(const PointCluster& c) {
  if (c.N <= 0) {
    throw Error(ErrorCode::EmptyCluster, "scatter: empty cluster");
  }
  const double n = static_cast<double>(c.N);
  const Vec3 mean = c.v / n;
  Mat3 A = c.P / n - mean * mean.transpose();
  return 0.5 * (A + A.transpose());
}

/// Index of (a, b), a <= b, in the row-major upper-triangle ordering
/// (00, 01, 02, 11, 12, 22) used by the 9-vector (vech(dP), dv).
constexpr int vech_index(int a, int b) {
  if (a > b) {
    const int tmp = a;
    a = b;
    b = tmp;
  }
  constexpr int offset[3] = {0, 3, 5};
  return offset[a] + (b - a);
}

using Mat9 = Eigen::Matrix<double, 9, 9>;
using Vec9 = Eigen::Matrix<double, 9, 1>;

/// Linearized covariance of (vech(P), v) under isotropic per-point noise.
struct ClusterNoise {
  Mat9 Sigma = Mat9::Zero();
  double sigma_p = 0.0;
};

/// 9x3 Jacobian of (vech(P), v) with respect to one point p:
/// dP = dp p^T + p dp^T, dv = dp.
inline Eigen::Matrix<double, 9, 3> cluster_point_jacobian(const Vec3& p) {
  Eigen::Matrix<double, 9, 3> B = Eigen::Matrix<double, 9, 3>::Zero();
  for (int a = 0; a < 3; ++a) {
    for (int b = a; b < 3; ++b) {
      const int row = vech_index(a, b);
      B(row, a) += p[b];
      B(row, b) += p[a];
    }
  }
  B.bottomRows<3>().setIdentity();
  return B;
}

/// Noise covariance from the cluster moments alone. sum_k B_k B_k^T is
/// quadratic in the points, so it only depends on (P, v, N).
inline ClusterNoise cluster_noise(const PointCluster& c, double sigma_p) {
  ClusterNoise out;
  out.sigma_p = sigma_p;
  const double s2 = sigma_p * sigma_p;
  const auto delta = [](int i, int j) { return i == j ? 1.0 : 0.0; };
  int pairs[6][2];
  for (int a = 0; a < 3; ++a) {
    for (int b = a; b < 3; ++b) {
      pairs[vech_index(a, b)][0] = a;
      pairs[vech_index(a, b)][1] = b;
    }
  }
  for (int r = 0; r < 6; ++r) {
    const int a = pairs[r][0], b = pairs[r][1];
    for (int s = 0; s < 6; ++s) {
      const int cc = pairs[s][0], d = pairs[s][1];
      out.Sigma(r, s) = s2 * (c.P(b, d) * delta(a, cc) + c.P(b, cc) * delta(a, d) +
                              c.P(a, d) * delta(b, cc) + c.P(a, cc) * delta(b, d));
    }
    for (int k = 0; k < 3; ++k) {
      const double x = s2 * (c.v[b] * delta(a, k) + c.v[a] * delta(b, k));
      out.Sigma(r, 6 + k) = x;
      out.Sigma(6 + k, r) = x;
    }
  }
  out.Sigma.bottomRightCorner<3, 3>() =
      s2 * static_cast<double>(c.N) * Mat3::Identity();
  return out;
}

inline ClusterNoise cluster_noise_from_points(std::span<const Vec3> points,
                                              double sigma_p) {
  return cluster_noise(cluster_from_points(points), sigma_p);
}

}  // namespace cluster_ba
