#pragma once

// Pose covariance propagated from cluster noise through the optimality
// condition J(T*, C) = 0, and the NEES consistency statistic.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "cluster_ba/derivatives.hpp"
#include "cluster_ba/error.hpp"
#include "cluster_ba/geometry.hpp"
#include "cluster_ba/parallel.hpp"
#include "cluster_ba/point_cluster.hpp"
#include "cluster_ba/problem.hpp"
#include "cluster_ba/solver.hpp"

namespace cluster_ba {

/// Covariance over the gauge-reduced perturbation: block j - 1 belongs to
/// pose j (0-based), pose 0 being fixed.
struct PoseCovariance {
  Eigen::MatrixXd Sigma;

  std::size_t num_poses() const { return static_cast<std::size_t>(Sigma.rows() / 6) + 1; }

  Mat6 block(std::size_t pose) const {
    const auto o = 6 * static_cast<Eigen::Index>(pose - 1);
    return Sigma.block<6, 6>(o, o);
  }
};

namespace detail {

/// Perturbs the cluster along basis direction m of (vech(P), v).
inline PointCluster perturb_cluster(PointCluster c, int m, double h) {
  if (m < 6) {
    int a = 0, b = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = i; j < 3; ++j)
        if (vech_index(i, j) == m) {
          a = i;
          b = j;
        }
    c.P(a, b) += h;
    if (a != b) c.P(b, a) += h;
  } else {
    c.v[m - 6] += h;
  }
  return c;
}

/// Finite-difference step per basis direction: 1e-6 of the block's scale.
inline double cluster_fd_step(const PointCluster& c, int m) {
  const double scale = m < 6 ? c.P.cwiseAbs().maxCoeff() : c.v.cwiseAbs().maxCoeff();
  return 1e-6 * std::max(1.0, scale);
}

}  // namespace detail

/// d(J^T)/dC for one observation: 6n x 9 over the feature's local poses,
/// by central differences of the analytic Jacobian.
inline Eigen::MatrixXd jacobian_cluster_sensitivity(const Feature& feature,
                                                    std::span<const Pose> poses,
                                                    std::size_t observation) {
  const auto n6 = static_cast<Eigen::Index>(6 * feature.observations.size());
  Eigen::MatrixXd G(n6, 9);
  Feature moved = feature;
  const PointCluster& c = feature.observations[observation].cluster;
  for (int m = 0; m < 9; ++m) {
    const double h = detail::cluster_fd_step(c, m);
    moved.observations[observation].cluster = detail::perturb_cluster(c, m, h);
    const Eigen::VectorXd jp = feature_derivatives(moved, poses, false).jacobian;
    moved.observations[observation].cluster = detail::perturb_cluster(c, m, -h);
    const Eigen::VectorXd jm = feature_derivatives(moved, poses, false).jacobian;
    G.col(m) = (jp - jm) / (2.0 * h);
  }
  return G;
}

/// Sigma = H^-1 (G Sigma_C G^T) H^-1 on the space with pose 0 fixed.
/// noises[i][o] belongs to problem.features[i].observations[o].
inline PoseCovariance pose_covariance(const BAProblem& problem, std::span<const Pose> poses,
                                      const std::vector<std::vector<ClusterNoise>>& noises,
                                      int threads = 1) {
  if (noises.size() != problem.features.size()) {
    throw Error(ErrorCode::InvalidProblem, "pose_covariance: one noise list per feature expected");
  }
  for (std::size_t i = 0; i < noises.size(); ++i) {
    if (noises[i].size() != problem.features[i].observations.size()) {
      throw Error(ErrorCode::InvalidProblem,
                  "pose_covariance: feature " + std::to_string(i) + " noise count mismatch");
    }
  }
  if (problem.num_poses < 2) {
    throw Error(ErrorCode::Unobservable, "unobservable problem: fewer than two poses");
  }
  const DerivativeBundle bundle = assemble(problem, poses, threads);
  const ReducedSystem sys = gauge_reduce(bundle.J, bundle.H);

  // Per-feature local middle term sum_o G_o Sigma_o G_o^T.
  std::vector<Eigen::MatrixXd> local(problem.features.size());
  parallel_for(problem.features.size(), threads, [&](std::size_t i) {
    const Feature& f = problem.features[i];
    const auto n6 = static_cast<Eigen::Index>(6 * f.observations.size());
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n6, n6);
    for (std::size_t o = 0; o < f.observations.size(); ++o) {
      if (noises[i][o].Sigma.isZero(0.0)) continue;
      const Eigen::MatrixXd G = jacobian_cluster_sensitivity(f, poses, o);
      M.noalias() += G * noises[i][o].Sigma * G.transpose();
    }
    local[i] = std::move(M);
  });

  const auto dim = sys.J.size();
  Eigen::MatrixXd middle = Eigen::MatrixXd::Zero(dim, dim);
  for (std::size_t i = 0; i < problem.features.size(); ++i) {
    const Feature& f = problem.features[i];
    for (std::size_t a = 0; a < f.observations.size(); ++a) {
      const std::size_t pa = f.observations[a].pose;
      if (pa == 0) continue;
      for (std::size_t b = 0; b < f.observations.size(); ++b) {
        const std::size_t pb = f.observations[b].pose;
        if (pb == 0) continue;
        middle.block<6, 6>(6 * static_cast<Eigen::Index>(pa - 1),
                           6 * static_cast<Eigen::Index>(pb - 1)) +=
            local[i].block<6, 6>(6 * static_cast<Eigen::Index>(a), 6 * static_cast<Eigen::Index>(b));
      }
    }
  }

  Eigen::LDLT<Eigen::MatrixXd> ldlt(sys.H);
  const double scale = std::max(sys.H.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 1e-12 * scale) {
    throw Error(ErrorCode::Unobservable,
                "unobservable problem: reduced Hessian is singular or indefinite");
  }
  const Eigen::MatrixXd X = ldlt.solve(middle);
  Eigen::MatrixXd Sigma = ldlt.solve(X.transpose());
  Sigma = 0.5 * (Sigma + Sigma.transpose()).eval();
  return {Sigma};
}

/// Estimation error such that gt = boxplus(est, error) exactly:
/// [Log(R_gt R_est^T), t_gt - R_gt R_est^T t_est].
inline Perturbation6 pose_error(const Pose& est, const Pose& gt) {
  const Mat3 dR = gt.R * est.R.transpose();
  return {so3_log(dR), gt.t - dR * est.t};
}

/// Rigidly moves the estimate so that its first pose coincides with the
/// first ground-truth pose.
inline std::vector<Pose> align_to_first(std::span<const Pose> est, std::span<const Pose> gt) {
  const Pose align = gt[0] * est[0].inverse();
  std::vector<Pose> out;
  out.reserve(est.size());
  for (const auto& T : est) out.push_back(align * T);
  return out;
}

struct NeesResult {
  double eta = 0.0;
  double normalized = 0.0;  // eta / (6 (M_p - 1))
  int dimension = 0;
};

/// eta = e^T Sigma^-1 e over poses 1..M_p-1 (pose 0 is the gauge anchor).
inline NeesResult nees(std::span<const Pose> est, std::span<const Pose> gt,
                       const PoseCovariance& cov) {
  if (est.size() != gt.size() || est.size() != cov.num_poses() || est.size() < 2) {
    throw Error(ErrorCode::InvalidProblem, "nees: dimension mismatch");
  }
  const auto dim = static_cast<Eigen::Index>(6 * (est.size() - 1));
  Eigen::VectorXd e(dim);
  for (std::size_t j = 1; j < est.size(); ++j) {
    e.segment<6>(6 * static_cast<Eigen::Index>(j - 1)) = pose_error(est[j], gt[j]).to_vector();
  }
  Eigen::LLT<Eigen::MatrixXd> llt(cov.Sigma);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::SingularCovariance, "nees: covariance is singular");
  }
  const Eigen::VectorXd w = llt.matrixL().solve(e);
  NeesResult r;
  r.eta = w.squaredNorm();
  r.dimension = static_cast<int>(dim);
  r.normalized = r.eta / static_cast<double>(dim);
  return r;
}

}  // namespace cluster_ba
