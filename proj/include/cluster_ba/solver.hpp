#pragma once

// Damped second-order solver over scan poses with the first pose pinned.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <chrono>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cluster_ba/derivatives.hpp"
#include "cluster_ba/error.hpp"
#include "cluster_ba/geometry.hpp"
#include "cluster_ba/problem.hpp"

namespace cluster_ba {

struct SolverOptions {
  double mu0 = 0.01;
  double nu0 = 2.0;
  int max_iters = 50;
  double step_tol_rot = 1e-6;    // rad
  double step_tol_trans = 1e-6;  // m
  int threads = 1;
};

enum class Termination { StepTol, MaxIters };

inline const char* to_string(Termination t) {
  return t == Termination::StepTol ? "step_tol" : "max_iters";
}

/// Wall time spent per phase, seconds.
struct PhaseTimes {
  double derivatives = 0.0;
  double linear_solve = 0.0;
  double cost_eval = 0.0;
};

struct SolveReport {
  int iterations = 0;
  int accepted = 0;
  int rejected = 0;
  std::vector<double> cost_trace;  // initial cost, then each accepted cost
  double final_cost = 0.0;
  Termination termination = Termination::MaxIters;
  int dropped_gap_terms = 0;
  PhaseTimes times;
};

struct SolveResult {
  std::vector<Pose> poses;
  SolveReport report;
};

/// Gauge-reduced linear system: the first pose's 6 rows/columns removed.
struct ReducedSystem {
  Eigen::MatrixXd H;
  Eigen::VectorXd J;
};

inline ReducedSystem gauge_reduce(const Eigen::VectorXd& J, const Eigen::MatrixXd& H) {
  const Eigen::Index n = J.size() - 6;
  if (n <= 0) return {Eigen::MatrixXd(0, 0), Eigen::VectorXd(0)};
  return {H.bottomRightCorner(n, n), J.tail(n)};
}

/// Re-embeds a reduced step with a zero first-pose block.
inline Eigen::VectorXd gauge_embed(const Eigen::VectorXd& reduced) {
  Eigen::VectorXd full = Eigen::VectorXd::Zero(reduced.size() + 6);
  full.tail(reduced.size()) = reduced;
  return full;
}

/// Solves (H + mu I) x = -J. Cholesky first, pivoted LDL^T as fallback.
/// Returns false when neither factorization gives a finite solution.
inline bool solve_damped(const ReducedSystem& sys, double mu, Eigen::VectorXd& x) {
  if (sys.J.size() == 0) {
    x.resize(0);
    return true;
  }
  Eigen::MatrixXd A = sys.H;
  A.diagonal().array() += mu;
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() == Eigen::Success) {
    x = llt.solve(-sys.J);
    if (x.allFinite()) return true;
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
  if (ldlt.info() != Eigen::Success) return false;
  x = ldlt.solve(-sys.J);
  return x.allFinite();
}

inline std::vector<Pose> apply_step(std::span<const Pose> poses, const Eigen::VectorXd& step) {
  std::vector<Pose> out(poses.begin(), poses.end());
  // Pose 0 is the gauge anchor and stays bit-identical.
  for (std::size_t j = 1; j < out.size(); ++j) {
    out[j] = boxplus(out[j], Perturbation6::from_vector(
                                 step.segment<6>(6 * static_cast<Eigen::Index>(j))));
  }
  return out;
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Rounding resolution of the total cost: each eigenvalue is computed from
/// world moments of magnitude trace(P)/N, so differences below a few ulps of
/// that scale are noise.
inline double cost_resolution(const BAProblem& problem, std::span<const Pose> poses) {
  double scale = 0.0;
  for (const auto& f : problem.features) {
    const PointCluster w = aggregate_world_cluster(f, poses);
    if (w.N > 0) scale += w.P.trace() / static_cast<double>(w.N);
  }
  return 64.0 * std::numeric_limits<double>::epsilon() * scale;
}

inline void require_finite(double value, int iteration, const char* what) {
  if (!std::isfinite(value)) {
    throw Error(ErrorCode::NumericalFailure, std::string("numerical failure: non-finite ") +
                                                 what + " at iteration " +
                                                 std::to_string(iteration));
  }
}

}  // namespace detail

/// Levenberg-Marquardt style iteration on the eigenvalue cost. A step is
/// accepted when the gain ratio is positive; damping follows
/// mu *= max(1/3, 1 - (2 rho - 1)^3) on acceptance and mu *= nu, nu *= 2 on
/// rejection. Terminates once an accepted step moves every pose by less than
/// the rotation and translation tolerances. A rejected step that is below
/// the tolerances and predicts a decrease below the rounding resolution of
/// the cost also terminates: there is nothing left to gain.
inline SolveResult solve(const BAProblem& problem, std::span<const Pose> init,
                         const SolverOptions& opts = {}) {
  using Clock = std::chrono::steady_clock;
  if (init.size() != problem.num_poses || init.empty()) {
    throw Error(ErrorCode::InvalidProblem, "solve: expected " +
                                               std::to_string(problem.num_poses) +
                                               " initial poses, got " +
                                               std::to_string(init.size()));
  }
  problem.validate();

  SolveResult result;
  result.poses.assign(init.begin(), init.end());
  SolveReport& rep = result.report;

  double mu = opts.mu0;
  double nu = opts.nu0;
  int consecutive_rejections = 0;

  auto t0 = Clock::now();
  DerivativeBundle bundle = assemble(problem, result.poses, opts.threads);
  rep.times.derivatives += detail::seconds_since(t0);
  rep.dropped_gap_terms += bundle.dropped_gap_terms;
  detail::require_finite(bundle.cost, 0, "cost");
  rep.cost_trace.push_back(bundle.cost);
  rep.final_cost = bundle.cost;

  if (problem.num_poses == 1) {
    rep.termination = Termination::StepTol;
    return result;
  }
  const double resolution = detail::cost_resolution(problem, result.poses);

  for (int iter = 1; iter <= opts.max_iters; ++iter) {
    rep.iterations = iter;
    if (!bundle.J.allFinite() || !bundle.H.allFinite()) {
      throw Error(ErrorCode::NumericalFailure,
                  "numerical failure: non-finite derivatives at iteration " +
                      std::to_string(iter));
    }
    const ReducedSystem sys = gauge_reduce(bundle.J, bundle.H);

    t0 = Clock::now();
    Eigen::VectorXd reduced;
    const bool solved = solve_damped(sys, mu, reduced);
    rep.times.linear_solve += detail::seconds_since(t0);

    bool accepted = false;
    bool small_step = false;
    double predicted = 0.0;
    if (solved) {
      const Eigen::VectorXd step = gauge_embed(reduced);
      double max_rot = 0.0, max_trans = 0.0;
      for (std::size_t j = 1; j < problem.num_poses; ++j) {
        const auto o = 6 * static_cast<Eigen::Index>(j);
        max_rot = std::max(max_rot, step.segment<3>(o).norm());
        max_trans = std::max(max_trans, step.segment<3>(o + 3).norm());
      }
      small_step = max_rot < opts.step_tol_rot && max_trans < opts.step_tol_trans;

      const auto candidate = apply_step(result.poses, step);
      t0 = Clock::now();
      const double new_cost = total_cost(problem, candidate);
      rep.times.cost_eval += detail::seconds_since(t0);
      detail::require_finite(new_cost, iter, "cost");

      predicted = 0.5 * reduced.dot(mu * reduced - sys.J);
      const double rho = (bundle.cost - new_cost) / predicted;
      // rho > 0 alone is not enough when the model predicts an increase
      // (indefinite H); require an actual decrease too.
      if (rho > 0.0 && new_cost < bundle.cost) {
        accepted = true;
        result.poses = candidate;
        mu *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
        nu = 2.0;
        ++rep.accepted;
        consecutive_rejections = 0;
        rep.cost_trace.push_back(new_cost);
        rep.final_cost = new_cost;
        if (small_step) {
          rep.termination = Termination::StepTol;
          return result;
        }
        t0 = Clock::now();
        bundle = assemble(problem, result.poses, opts.threads);
        rep.times.derivatives += detail::seconds_since(t0);
        rep.dropped_gap_terms += bundle.dropped_gap_terms;
      }
    }
    if (!accepted) {
      ++rep.rejected;
      ++consecutive_rejections;
      if (solved && small_step &&
          std::abs(predicted) <= resolution) {
        rep.termination = Termination::StepTol;
        return result;
      }
      mu *= nu;
      nu *= 2.0;
      if (consecutive_rejections >= 10 && mu > 1e12) {
        throw Error(ErrorCode::Stalled, "stalled: " + std::to_string(consecutive_rejections) +
                                            " consecutive rejections, mu = " +
                                            std::to_string(mu) + " at iteration " +
                                            std::to_string(iter));
      }
    }
  }
  rep.termination = Termination::MaxIters;
  return result;
}

}  // namespace cluster_ba
