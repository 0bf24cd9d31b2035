#pragma once

// Rigid poses, the left (global-frame) boxplus retraction, SO(3) exp/log and
// a closed-form symmetric 3x3 eigensolver.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "cluster_ba/error.hpp"

namespace cluster_ba {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// skew(v) * w == v.cross(w)
inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  // clang-format off
  s <<    0.0, -v.z(),  v.y(),
        v.z(),    0.0, -v.x(),
       -v.y(),  v.x(),    0.0;
  // clang-format on
  return s;
}

/// Rodrigues formula; second-order series below 1e-7 rad.
inline Mat3 so3_exp(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 K = skew(phi);
  if (theta < 1e-7) {
    return Mat3::Identity() + K + 0.5 * K * K;
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * K + b * K * K;
}

/// Rotation vector of R. Throws ErrorCode::NearPi when the angle is within
/// the ambiguity band around pi (trace(R) <= -1 + 1e-9).
inline Vec3 so3_log(const Mat3& R) {
  const double tr = R.trace();
  if (tr <= -1.0 + 1e-9) {
    throw Error(ErrorCode::NearPi, "so3_log: rotation angle near pi");
  }
  const double cos_theta = std::clamp(0.5 * (tr - 1.0), -1.0, 1.0);
  const Vec3 w(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  const double sin_theta = 0.5 * w.norm();
  const double theta = std::atan2(sin_theta, cos_theta);

  if (theta < 1e-5) {
    // theta / sin(theta) = 1 + theta^2 / 6 + O(theta^4)
    return 0.5 * (1.0 + theta * theta / 6.0) * w;
  }
  if (theta < 0.5 * std::numbers::pi) {
    return (0.5 * theta / sin_theta) * w;
  }
  // Large angles: recover the axis from the symmetric part, sign from w.
  const Mat3 S = 0.5 * (R + R.transpose()) - cos_theta * Mat3::Identity();
  Eigen::Index col = 0;
  S.diagonal().maxCoeff(&col);
  Vec3 axis = S.col(col) / std::sqrt(std::max(S(col, col), 1e-300));
  axis.normalize();
  if (axis.dot(w) < 0.0) axis = -axis;
  return theta * axis;
}

/// Pose perturbation (rotation first, then translation).
struct Perturbation6 {
  Vec3 dphi = Vec3::Zero();
  Vec3 dt = Vec3::Zero();

  static Perturbation6 from_vector(const Vec6& x) {
    return {x.head<3>(), x.tail<3>()};
  }
  Vec6 to_vector() const {
    Vec6 x;
    x << dphi, dt;
    return x;
  }
  double norm() const { return to_vector().norm(); }
  Perturbation6 operator-() const { return {-dphi, -dt}; }
};

/// Rigid transform x -> R x + t of one scan.
struct Pose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  static Pose identity() { return {}; }

  Vec3 operator*(const Vec3& p) const { return R * p + t; }
  Pose operator*(const Pose& o) const { return {R * o.R, R * o.t + t}; }
  Pose inverse() const {
    const Mat3 Rt = R.transpose();
    return {Rt, -(Rt * t)};
  }
  Mat4 matrix() const {
    Mat4 T = Mat4::Identity();
    T.topLeftCorner<3, 3>() = R;
    T.topRightCorner<3, 1>() = t;
    return T;
  }
  bool operator==(const Pose&) const = default;
};

/// Left perturbation: (exp(dphi) R, dt + exp(dphi) t). The translation is
/// rotated too; this is not (R, t + dt).
inline Pose boxplus(const Pose& T, const Perturbation6& d) {
  const Mat3 dR = so3_exp(d.dphi);
  return {dR * T.R, d.dt + dR * T.t};
}

/// Eigen-pairs of a symmetric 3x3 matrix, eigenvalues descending.
struct EigenDecomp3 {
  Vec3 lambda = Vec3::Zero();
  Mat3 U = Mat3::Identity();  // column l pairs with lambda[l]
};

namespace detail {

// Unit vector orthogonal to v, together with v x that vector.
inline void orthogonal_complement(const Vec3& v, Vec3& a, Vec3& b) {
  if (std::abs(v.x()) > std::abs(v.y())) {
    a = Vec3(-v.z(), 0.0, v.x()) / std::hypot(v.x(), v.z());
  } else {
    a = Vec3(0.0, v.z(), -v.y()) / std::hypot(v.y(), v.z());
  }
  b = v.cross(a);
}

// Eigenvector of a well-separated eigenvalue: the largest cross product of
// two rows of (A - lambda I) spans its null space.
inline Vec3 separated_eigenvector(const Mat3& A, double lambda) {
  const Mat3 M = A - lambda * Mat3::Identity();
  const std::array<Vec3, 3> c{M.row(0).transpose().cross(M.row(1).transpose()),
                              M.row(0).transpose().cross(M.row(2).transpose()),
                              M.row(1).transpose().cross(M.row(2).transpose())};
  std::size_t best = 0;
  double best_norm = c[0].squaredNorm();
  for (std::size_t i = 1; i < 3; ++i) {
    if (c[i].squaredNorm() > best_norm) {
      best = i;
      best_norm = c[i].squaredNorm();
    }
  }
  if (best_norm <= 0.0) return Vec3::UnitX();
  return c[best] / std::sqrt(best_norm);
}

// Second eigenvector restricted to the plane orthogonal to u0.
inline Vec3 complement_eigenvector(const Mat3& A, const Vec3& u0,
                                   double lambda) {
  Vec3 a, b;
  orthogonal_complement(u0, a, b);
  const Vec3 Aa = A * a;
  const Vec3 Ab = A * b;
  double m00 = a.dot(Aa) - lambda;
  double m01 = a.dot(Ab);
  double m11 = b.dot(Ab) - lambda;
  const double a00 = std::abs(m00), a01 = std::abs(m01), a11 = std::abs(m11);
  if (a00 >= a11) {
    const double mx = std::max(a00, a01);
    if (mx > 0.0) {
      if (a00 >= a01) {
        m01 /= m00;
        m00 = 1.0 / std::sqrt(1.0 + m01 * m01);
        m01 *= m00;
      } else {
        m00 /= m01;
        m01 = 1.0 / std::sqrt(1.0 + m00 * m00);
        m00 *= m01;
      }
      return (m01 * a - m00 * b).normalized();
    }
    return a;
  }
  const double mx = std::max(a11, a01);
  if (mx > 0.0) {
    if (a11 >= a01) {
      m01 /= m11;
      m11 = 1.0 / std::sqrt(1.0 + m01 * m01);
      m01 *= m11;
    } else {
      m11 /= m01;
      m01 = 1.0 / std::sqrt(1.0 + m11 * m11);
      m11 *= m01;
    }
    return (m11 * a - m01 * b).normalized();
  }
  return a;
}

// One cyclic Jacobi sweep on D = U^T A U, accumulated into U.
inline void jacobi_sweep(Mat3& D, Mat3& U) {
  constexpr std::array<std::array<int, 2>, 3> pairs{{{0, 1}, {0, 2}, {1, 2}}};
  for (const auto& pq : pairs) {
    const int p = pq[0], q = pq[1];
    const double apq = D(p, q);
    if (apq == 0.0) continue;
    const double theta = (D(q, q) - D(p, p)) / (2.0 * apq);
    const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                     (std::abs(theta) + std::sqrt(theta * theta + 1.0));
    const double c = 1.0 / std::sqrt(t * t + 1.0);
    const double s = t * c;
    Mat3 G = Mat3::Identity();
    G(p, p) = c;
    G(q, q) = c;
    G(p, q) = s;
    G(q, p) = -s;
    D = G.transpose() * D * G;
    U = U * G;
    D(p, q) = D(q, p) = 0.0;
  }
}

}  // namespace detail

/// Closed-form (trigonometric) symmetric 3x3 eigensolver followed by one
/// Jacobi polish sweep. Eigenvalues are sorted descending; each eigenvector
/// has its largest-magnitude component positive (lowest index wins ties).
/// Within a degenerate eigenspace any orthonormal basis is returned.
inline EigenDecomp3 sym_eig3(const Mat3& A_in) {
  const Mat3 A = 0.5 * (A_in + A_in.transpose());
  EigenDecomp3 out;
  const double scale = A.cwiseAbs().maxCoeff();
  if (!(scale > 0.0)) {
    return out;
  }
  const Mat3 B = A / scale;
  const double q = B.trace() / 3.0;
  const Mat3 C = B - q * Mat3::Identity();
  const double p2 = C.squaredNorm() / 6.0;

  Mat3 U = Mat3::Identity();
  if (p2 > 1e-30) {
    const double p = std::sqrt(p2);
    const double half_det = std::clamp(0.5 * (C / p).determinant(), -1.0, 1.0);
    const double phi = std::acos(half_det) / 3.0;
    const double two_pi_3 = 2.0 * std::numbers::pi / 3.0;
    const double beta0 = 2.0 * std::cos(phi);
    const double beta2 = 2.0 * std::cos(phi + two_pi_3);
    const double beta1 = -(beta0 + beta2);
    const double l0 = q + p * beta0, l1 = q + p * beta1, l2 = q + p * beta2;

    // Start from the eigenvalue farthest from the other two.
    if (half_det >= 0.0) {
      const Vec3 u0 = detail::separated_eigenvector(B, l0);
      const Vec3 u1 = detail::complement_eigenvector(B, u0, l1);
      U.col(0) = u0;
      U.col(1) = u1;
      U.col(2) = u0.cross(u1);
    } else {
      const Vec3 u2 = detail::separated_eigenvector(B, l2);
      const Vec3 u1 = detail::complement_eigenvector(B, u2, l1);
      U.col(2) = u2;
      U.col(1) = u1;
      U.col(0) = u1.cross(u2);
    }
  }

  Mat3 D = U.transpose() * A * U;
  detail::jacobi_sweep(D, U);

  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return D(a, a) > D(b, b); });
  for (int l = 0; l < 3; ++l) {
    out.lambda[l] = D(order[l], order[l]);
    Vec3 u = U.col(order[l]).normalized();
    int imax = 0;
    for (int i = 1; i < 3; ++i) {
      if (std::abs(u[i]) > std::abs(u[imax])) imax = i;
    }
    if (u[imax] < 0.0) u = -u;
    out.U.col(l) = u;
  }
  return out;
}

}  // namespace cluster_ba
