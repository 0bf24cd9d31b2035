#pragma once

// Analytic Jacobian and Hessian of the eigenvalue cost of one feature with
// respect to left pose perturbations, and their assembly over a problem.
//
// For the l-th eigenvalue of A(C), C = sum_q T_q C_q T_q^T, a left
// perturbation (dphi_q, dt_q) of pose q changes the world-frame cluster of
// that pose by
//   dP = [dphi]x Pw + dt vw^T + (.)^T,   dv = [dphi]x vw + N_q dt
// to first order, and the eigenvalue by u_l^T dA u_l. The Hessian is
//   H = H_ll + sum_{k != l} 2 / (lambda_l - lambda_k) g_kl^T g_kl
// where g_kl(d) = u_k^T dA u_l and H_ll is the second derivative of
// u_l^T A u_l with u_l held fixed. H_ll is block diagonal apart from the
// rank-one coupling -2/N^2 a a^T through the first moment, so each feature
// contributes block-diagonal terms plus a handful of rank-one terms.

#include <Eigen/Core>

#include <cmath>
#include <exception>
#include <span>
#include <string>
#include <vector>

#include "cluster_ba/error.hpp"
#include "cluster_ba/geometry.hpp"
#include "cluster_ba/parallel.hpp"
#include "cluster_ba/point_cluster.hpp"
#include "cluster_ba/problem.hpp"

namespace cluster_ba {

/// Relative eigengap below which a 2 / (lambda_l - lambda_k) term is dropped.
inline constexpr double kEigengapTolerance = 1e-10;

/// Derivatives of one feature restricted to the poses that observe it.
/// Local block a corresponds to global pose poses[a].
struct FeatureDerivatives {
  double cost = 0.0;
  Vec3 lambda = Vec3::Zero();
  std::vector<std::size_t> poses;
  Eigen::VectorXd jacobian;          // 6n
  std::vector<Mat6> diagonal;        // n blocks
  Eigen::MatrixXd coupling;          // 6n x R, H += coupling * W * coupling^T
  std::vector<double> weights;       // R
  int dropped_gap_terms = 0;

  std::size_t size() const { return poses.size(); }

  Mat6 hessian_block(std::size_t a, std::size_t b) const {
    Mat6 blk = a == b ? diagonal[a] : Mat6::Zero();
    for (std::size_t r = 0; r < weights.size(); ++r) {
      const auto col = coupling.col(static_cast<Eigen::Index>(r));
      blk.noalias() += weights[r] * col.segment<6>(6 * static_cast<Eigen::Index>(a)) *
                       col.segment<6>(6 * static_cast<Eigen::Index>(b)).transpose();
    }
    return blk;
  }

  Eigen::MatrixXd local_hessian() const {
    const auto n = static_cast<Eigen::Index>(size());
    Eigen::MatrixXd H(6 * n, 6 * n);
    for (Eigen::Index a = 0; a < n; ++a) {
      for (Eigen::Index b = 0; b < n; ++b) {
        H.block<6, 6>(6 * a, 6 * b) = hessian_block(a, b);
      }
    }
    return H;
  }
};

namespace detail {

// Row vector g_kl restricted to pose q, as (rotation, translation).
inline Vec6 eigen_pair_gradient(const PointCluster& wq, const Vec3& v, double N,
                                const Vec3& uk, const Vec3& ul) {
  const double vul = v.dot(ul), vuk = v.dot(uk);
  Vec6 g;
  g.head<3>() = ((wq.P * ul).cross(uk) + (wq.P * uk).cross(ul)) / N -
                (vul * wq.v.cross(uk) + vuk * wq.v.cross(ul)) / (N * N);
  g.tail<3>() = (uk * wq.v.dot(ul) + ul * wq.v.dot(uk)) / N -
                static_cast<double>(wq.N) * (vul * uk + vuk * ul) / (N * N);
  return g;
}

// Block-diagonal part of H_ll for pose q (excluding the first-moment
// coupling, which is carried as a rank-one term).
inline Mat6 eigen_diagonal_block(const PointCluster& wq, const Vec3& v,
                                 double N, const Vec3& u) {
  const Mat3 B = skew(u);
  const Mat3 Sw = skew(wq.P * u);
  const Mat3 Sv = skew(wq.v);
  const Mat3 BtSw = B.transpose() * Sw;
  const Mat3 BtSv = B.transpose() * Sv;
  Mat6 blk;
  blk.topLeftCorner<3, 3>() =
      (2.0 * B.transpose() * wq.P * B - (BtSw + BtSw.transpose())) / N +
      v.dot(u) * (BtSv + BtSv.transpose()) / (N * N);
  const Mat3 rt = 2.0 * (B.transpose() * wq.v) * u.transpose() / N;
  blk.topRightCorner<3, 3>() = rt;
  blk.bottomLeftCorner<3, 3>() = rt.transpose();
  blk.bottomRightCorner<3, 3>() =
      2.0 * static_cast<double>(wq.N) * u * u.transpose() / N;
  return blk;
}

}  // namespace detail

/// Cost, Jacobian and (optionally) Hessian of one feature. Planes
/// differentiate lambda_3; edges differentiate lambda_2 + lambda_3, where the
/// mutual (2, 3) eigengap terms cancel exactly and are omitted.
inline FeatureDerivatives feature_derivatives(const Feature& feature,
                                              std::span<const Pose> poses,
                                              bool with_hessian = true) {
  check_feature_points(feature);
  const std::size_t n = feature.observations.size();
  const auto n6 = static_cast<Eigen::Index>(6 * n);

  std::vector<PointCluster> world(n);
  PointCluster total;
  for (std::size_t a = 0; a < n; ++a) {
    world[a] = transform(poses[feature.observations[a].pose],
                         feature.observations[a].cluster);
    total += world[a];
  }
  const Mat3 A = scatter(total);
  const EigenDecomp3 eig = sym_eig3(A);
  const double N = static_cast<double>(total.N);
  const Vec3& v = total.v;

  FeatureDerivatives out;
  out.lambda = eig.lambda;
  out.cost = feature_cost_from_spectrum(feature.kind, eig.lambda);
  out.poses.reserve(n);
  for (const auto& obs : feature.observations) out.poses.push_back(obs.pose);
  out.jacobian = Eigen::VectorXd::Zero(n6);

  const std::vector<int> levels =
      feature.kind == FeatureKind::Plane ? std::vector<int>{2} : std::vector<int>{1, 2};
  const std::vector<int> others =
      feature.kind == FeatureKind::Plane ? std::vector<int>{0, 1} : std::vector<int>{0};

  for (int l : levels) {
    const Vec3 ul = eig.U.col(l);
    for (std::size_t a = 0; a < n; ++a) {
      out.jacobian.segment<6>(6 * static_cast<Eigen::Index>(a)) +=
          detail::eigen_pair_gradient(world[a], v, N, ul, ul);
    }
  }
  if (!with_hessian) return out;

  out.diagonal.assign(n, Mat6::Zero());
  const double gap_tol = kEigengapTolerance * std::abs(A.trace());
  std::vector<Eigen::VectorXd> columns;
  for (int l : levels) {
    const Vec3 ul = eig.U.col(l);
    Eigen::VectorXd moment(n6);
    for (std::size_t a = 0; a < n; ++a) {
      out.diagonal[a] += detail::eigen_diagonal_block(world[a], v, N, ul);
      moment.segment<6>(6 * static_cast<Eigen::Index>(a))
          << world[a].v.cross(ul),
          static_cast<double>(world[a].N) * ul;
    }
    columns.push_back(std::move(moment));
    out.weights.push_back(-2.0 / (N * N));

    for (int k : others) {
      const double gap = eig.lambda[l] - eig.lambda[k];
      if (std::abs(gap) < gap_tol || gap == 0.0) {
        ++out.dropped_gap_terms;
        continue;
      }
      const Vec3 uk = eig.U.col(k);
      Eigen::VectorXd g(n6);
      for (std::size_t a = 0; a < n; ++a) {
        g.segment<6>(6 * static_cast<Eigen::Index>(a)) =
            detail::eigen_pair_gradient(world[a], v, N, uk, ul);
      }
      columns.push_back(std::move(g));
      out.weights.push_back(2.0 / gap);
    }
  }
  out.coupling.resize(n6, static_cast<Eigen::Index>(columns.size()));
  for (std::size_t r = 0; r < columns.size(); ++r) {
    out.coupling.col(static_cast<Eigen::Index>(r)) = columns[r];
  }
  return out;
}

/// Cost, gradient (length 6 M_p) and dense symmetric Hessian of a problem.
/// Pose j occupies entries [6j, 6j + 6) as (dphi, dt).
struct DerivativeBundle {
  double cost = 0.0;
  Eigen::VectorXd J;
  Eigen::MatrixXd H;
  int dropped_gap_terms = 0;
};

/// Sums per-feature contributions. Every entry of H receives its feature
/// terms in feature order regardless of the worker count, so the result is
/// bitwise identical for any number of threads.
inline DerivativeBundle assemble(const BAProblem& problem,
                                 std::span<const Pose> poses, int threads = 1,
                                 bool with_hessian = true) {
  const std::size_t nf = problem.features.size();
  const auto dim = static_cast<Eigen::Index>(6 * problem.num_poses);
  std::vector<FeatureDerivatives> parts(nf);
  std::vector<std::exception_ptr> errors(nf);
  parallel_for(nf, threads, [&](std::size_t i) {
    try {
      parts[i] = feature_derivatives(problem.features[i], poses, with_hessian);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (std::size_t i = 0; i < nf; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& e) {
      throw Error(e.code(), "feature " + std::to_string(i) + ": " + e.what());
    }
  }

  DerivativeBundle out;
  out.J = Eigen::VectorXd::Zero(dim);
  for (std::size_t i = 0; i < nf; ++i) {
    const auto& f = parts[i];
    out.cost += f.cost;
    out.dropped_gap_terms += f.dropped_gap_terms;
    for (std::size_t a = 0; a < f.size(); ++a) {
      out.J.segment<6>(6 * static_cast<Eigen::Index>(f.poses[a])) +=
          f.jacobian.segment<6>(6 * static_cast<Eigen::Index>(a));
    }
  }
  if (!with_hessian) return out;

  // Weighted copies of the coupling columns, laid out per pose block.
  std::vector<Eigen::MatrixXd> weighted(nf);
  for (std::size_t i = 0; i < nf; ++i) {
    const auto& f = parts[i];
    weighted[i] = f.coupling;
    for (std::size_t r = 0; r < f.weights.size(); ++r) {
      weighted[i].col(static_cast<Eigen::Index>(r)) *= f.weights[r];
    }
  }

  out.H = Eigen::MatrixXd::Zero(dim, dim);
  parallel_for(problem.num_poses, threads, [&](std::size_t p) {
    for (std::size_t i = 0; i < nf; ++i) {
      const auto& f = parts[i];
      const auto it = std::lower_bound(f.poses.begin(), f.poses.end(), p);
      if (it == f.poses.end() || *it != p) continue;
      const auto a = static_cast<Eigen::Index>(it - f.poses.begin());
      const Eigen::Index R = f.coupling.cols();
      const auto Ya = weighted[i].middleRows<6>(6 * a);
      for (Eigen::Index b = a; b < static_cast<Eigen::Index>(f.size()); ++b) {
        const auto Xb = f.coupling.middleRows<6>(6 * b);
        auto blk = out.H.block<6, 6>(6 * static_cast<Eigen::Index>(p),
                                     6 * static_cast<Eigen::Index>(f.poses[b]));
        for (int c = 0; c < 6; ++c) {
          for (int r = 0; r < 6; ++r) {
            double s = b == a ? f.diagonal[a](r, c) : 0.0;
            for (Eigen::Index k = 0; k < R; ++k) s += Ya(r, k) * Xb(c, k);
            blk(r, c) += s;
          }
        }
      }
    }
  });
  out.H.triangularView<Eigen::StrictlyLower>() = out.H.transpose().eval();
  return out;
}

}  // namespace cluster_ba
