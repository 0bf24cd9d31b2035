#pragma once

// Synthetic experiment drivers shared by the CLI and the acceptance suite:
// presets, gauge-aligned error metrics, the NEES sweep, timing benchmarks and
// the occupied-cell map-quality metric.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cluster_ba/error.hpp"
#include "cluster_ba/geometry.hpp"
#include "cluster_ba/parallel.hpp"
#include "cluster_ba/simulator.hpp"
#include "cluster_ba/solver.hpp"
#include "cluster_ba/uncertainty.hpp"
#include "cluster_ba/voxel.hpp"

namespace cluster_ba {

enum class SceneKind { RandomPlanes, Room };

struct Preset {
  std::string name;
  SceneKind kind = SceneKind::RandomPlanes;
  int num_features = 0;  // M_f
  int num_poses = 0;     // M_p
  int points = 0;        // N per feature and pose
  double sigma_p = 0.05;
  RoomParams room;
};

inline std::vector<Preset> presets() {
  Preset room{"room-v1", SceneKind::Room, static_cast<int>(kRoomFaces.size()), 100, 0, 0.05, {}};
  return {
      room,
      {"virtual-nominal", SceneKind::RandomPlanes, 40, 40, 40, 0.05, {}},
      {"desk", SceneKind::RandomPlanes, 15, 20, 50, 0.05, {}},
      {"small", SceneKind::RandomPlanes, 6, 5, 50, 0.05, {}},
  };
}

inline Preset preset_by_name(const std::string& name) {
  for (const auto& p : presets())
    if (p.name == name) return p;
  std::string known;
  for (const auto& p : presets()) known += (known.empty() ? "" : ", ") + p.name;
  throw Error(ErrorCode::InvalidProblem, "unknown preset '" + name + "' (known: " + known + ")");
}

inline Scene generate(const Preset& p, std::uint64_t seed) {
  if (p.kind == SceneKind::Room) return gen_room_scene(p.room, seed);
  return gen_random_planes_scene(p.num_features, p.num_poses, p.points, seed);
}

/// One Monte Carlo instance: clean scene, noisy scans and the perturbed
/// initial trajectory, each from its own seed stream.
struct Instance {
  Scene clean;
  Scene noisy;
  std::vector<Pose> init;
};

inline Instance make_instance(const Scene& clean, double sigma_p, std::uint64_t noise_seed,
                              std::uint64_t init_seed) {
  Instance in;
  in.clean = clean;
  in.noisy = add_noise(clean, sigma_p, noise_seed);
  in.init = perturb_default_init(clean.gt_poses, init_seed);
  return in;
}

inline Instance make_instance(const Preset& p, double sigma_p, std::uint64_t seed) {
  return make_instance(generate(p, seed), sigma_p, derive_seed(seed, 1), derive_seed(seed, 2));
}

inline double seconds_between(std::chrono::steady_clock::time_point a,
                              std::chrono::steady_clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

struct TrajectoryError {
  double rot_rmse = 0.0;    // rad
  double trans_rmse = 0.0;  // m
  double rot_max = 0.0;
  double trans_max = 0.0;
};

/// RMSE over poses 2..M_p after aligning estimated pose 1 onto gt pose 1.
inline TrajectoryError gauge_aligned_error(std::span<const Pose> est, std::span<const Pose> gt) {
  if (est.size() != gt.size() || est.empty()) {
    throw Error(ErrorCode::InvalidProblem, "trajectory error: pose count mismatch");
  }
  TrajectoryError e;
  if (est.size() == 1) return e;
  const auto aligned = align_to_first(est, gt);
  double r2 = 0.0, t2 = 0.0;
  for (std::size_t j = 1; j < est.size(); ++j) {
    const Perturbation6 d = pose_error(aligned[j], gt[j]);
    r2 += d.dphi.squaredNorm();
    t2 += d.dt.squaredNorm();
    e.rot_max = std::max(e.rot_max, d.dphi.norm());
    e.trans_max = std::max(e.trans_max, d.dt.norm());
  }
  const double n = static_cast<double>(est.size() - 1);
  e.rot_rmse = std::sqrt(r2 / n);
  e.trans_rmse = std::sqrt(t2 / n);
  return e;
}

/// Distinct cells of edge `cell` (closed-low) containing at least one point.
inline std::size_t occupied_cells(std::span<const Vec3> points, double cell) {
  if (!(cell > 0.0)) throw Error(ErrorCode::InvalidProblem, "occupied_cells: cell must be > 0");
  std::vector<VoxelKey> keys;
  keys.reserve(points.size());
  for (const auto& p : points) keys.push_back(world_hash_key(p, cell));
  std::sort(keys.begin(), keys.end());
  return static_cast<std::size_t>(std::unique(keys.begin(), keys.end()) - keys.begin());
}

/// Occupied cells of all scans registered with the given poses.
inline std::size_t occupied_cells(const std::vector<std::vector<Vec3>>& scans,
                                  std::span<const Pose> poses, double cell) {
  if (scans.size() != poses.size()) {
    throw Error(ErrorCode::InvalidProblem, "occupied_cells: scan and pose counts differ");
  }
  std::vector<Vec3> world;
  for (std::size_t j = 0; j < scans.size(); ++j)
    for (const auto& p : scans[j]) world.push_back(poses[j] * p);
  return occupied_cells(world, cell);
}

inline constexpr double kMapCellSize = 0.1;  // m

// NEES sweep ------------------------------------------------------------------

/// One Monte Carlo run: solve from the perturbed init, align, propagate the
/// covariance at the aligned estimate, evaluate the error against it.
struct NeesRun {
  bool failed = false;
  std::string error;
  double nees = std::numeric_limits<double>::quiet_NaN();  // normalized; NaN when undefined
  TrajectoryError traj;
  Eigen::VectorXd errors;   // 6(M_p-1) stacked pose errors
  Eigen::VectorXd std_dev;  // sqrt of the covariance diagonal
  int iterations = 0;
  double seconds = 0.0;
};

inline NeesRun nees_run(const Instance& in, double sigma_p, const SolverOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  NeesRun r;
  try {
    const SceneProblem sp = scene_to_problem(in.noisy, sigma_p);
    const SolveResult res = solve(sp.problem, in.init, opts);
    r.iterations = res.report.iterations;
    const auto& gt = in.clean.gt_poses;
    const auto est = align_to_first(res.poses, gt);
    r.traj = gauge_aligned_error(est, gt);
    const auto dim = static_cast<Eigen::Index>(6 * (gt.size() - 1));
    r.errors.resize(dim);
    for (std::size_t j = 1; j < gt.size(); ++j)
      r.errors.segment<6>(6 * static_cast<Eigen::Index>(j - 1)) = pose_error(est[j], gt[j]).to_vector();
    if (sigma_p > 0.0) {
      const PoseCovariance cov = pose_covariance(sp.problem, est, sp.noises, opts.threads);
      r.std_dev = cov.Sigma.diagonal().cwiseMax(0.0).cwiseSqrt();
      r.nees = nees(est, gt, cov).normalized;
    }
  } catch (const Error& e) {
    r.failed = true;
    r.error = e.what();
  }
  r.seconds = seconds_between(t0, std::chrono::steady_clock::now());
  return r;
}

struct NeesRow {
  double sigma_p = 0.0;
  int runs = 0;
  int failed = 0;
  bool nees_defined = false;
  double mean_nees = std::numeric_limits<double>::quiet_NaN();
  double rot_rmse = 0.0;  // over all successful runs and poses
  double trans_rmse = 0.0;
  double seconds = 0.0;   // wall time for the whole row
  std::vector<NeesRun> detail;
};

/// Fixed scene geometry (from `seed`); fresh point noise and init per run.
/// Runs are distributed over `workers`; each run's solver stays single
/// threaded so results do not depend on the worker count.
inline NeesRow nees_sweep_row(const Preset& p, double sigma_p, int runs, std::uint64_t seed,
                              int workers, const SolverOptions& base = {}) {
  if (runs < 1) throw Error(ErrorCode::InvalidProblem, "nees: need at least one run");
  if (sigma_p < 0.0) throw Error(ErrorCode::InvalidProblem, "nees: sigma_p must be >= 0");
  const auto t0 = std::chrono::steady_clock::now();
  const Scene clean = generate(p, seed);
  SolverOptions opts = base;
  opts.threads = 1;
  NeesRow row;
  row.sigma_p = sigma_p;
  row.runs = runs;
  row.detail.resize(static_cast<std::size_t>(runs));
  parallel_for(static_cast<std::size_t>(runs), workers, [&](std::size_t r) {
    const Instance in = make_instance(clean, sigma_p, derive_seed(seed, 100 + 2 * r),
                                      derive_seed(seed, 101 + 2 * r));
    row.detail[r] = nees_run(in, sigma_p, opts);
  });
  double nees_sum = 0.0, r2 = 0.0, t2 = 0.0;
  int nees_count = 0, ok = 0;
  for (const auto& d : row.detail) {
    if (d.failed) {
      ++row.failed;
      continue;
    }
    ++ok;
    r2 += d.traj.rot_rmse * d.traj.rot_rmse;
    t2 += d.traj.trans_rmse * d.traj.trans_rmse;
    if (std::isfinite(d.nees)) {
      nees_sum += d.nees;
      ++nees_count;
    }
  }
  if (ok > 0) {
    row.rot_rmse = std::sqrt(r2 / ok);
    row.trans_rmse = std::sqrt(t2 / ok);
  }
  row.nees_defined = nees_count > 0;
  if (row.nees_defined) row.mean_nees = nees_sum / nees_count;
  row.seconds = seconds_between(t0, std::chrono::steady_clock::now());
  return row;
}

/// Spearman rank correlation (average ranks for ties).
inline double spearman(std::span<const double> x, std::span<const double> y) {
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j);
      i = j + 1;
    }
    return r;
  };
  if (x.size() != y.size() || x.size() < 2) {
    throw Error(ErrorCode::InvalidProblem, "spearman: need two equal-length samples of size >= 2");
  }
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i] / n;
    my += ry[i] / n;
  }
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

/// Least-squares slope of log(y) against log(x).
inline double log_log_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw Error(ErrorCode::InvalidProblem, "log_log_slope: need two equal-length samples");
  }
  double mx = 0, my = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]) / n;
    my += std::log(y[i]) / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
    sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
  }
  return sxy / sxx;
}

// Benchmark -------------------------------------------------------------------

enum class BenchAxis { Poses, Features, Points };

inline const char* to_string(BenchAxis a) {
  switch (a) {
    case BenchAxis::Poses: return "poses";
    case BenchAxis::Features: return "features";
    case BenchAxis::Points: return "points";
  }
  return "?";
}

inline BenchAxis bench_axis_from_string(const std::string& s) {
  if (s == "poses") return BenchAxis::Poses;
  if (s == "features") return BenchAxis::Features;
  if (s == "points") return BenchAxis::Points;
  throw Error(ErrorCode::InvalidProblem, "unknown bench axis '" + s + "' (poses|features|points)");
}

struct BenchRow {
  int value = 0;
  int num_features = 0, num_poses = 0, points = 0;
  int iterations = 0;
  double build_seconds = 0.0;       // cluster build, once
  double derivative_seconds = 0.0;  // solver totals
  double solve_seconds = 0.0;
  double cost_seconds = 0.0;
  double derivative_call = 0.0;     // one J/H assembly, best of repeats
  double solve_call = 0.0;          // one damped linear solve, best of repeats
  TrajectoryError traj;
};

/// Solved benchmark instance, ready for per-call timing.
struct BenchCase {
  BenchRow row;
  SceneProblem sp;
  std::vector<Pose> solution;
  ReducedSystem system;  // gauge-reduced J, H at the solution
};

/// Random-plane scene with M_f = M_p = N = 40 except the swept parameter,
/// solved from the default initial perturbation.
inline BenchCase bench_case(BenchAxis axis, int value, std::uint64_t seed, double sigma_p,
                            const SolverOptions& opts) {
  if (value < 1) throw Error(ErrorCode::InvalidProblem, "bench: values must be positive");
  BenchCase bc;
  BenchRow& row = bc.row;
  row.value = value;
  row.num_features = axis == BenchAxis::Features ? value : 40;
  row.num_poses = axis == BenchAxis::Poses ? value : 40;
  row.points = axis == BenchAxis::Points ? value : 40;
  const Preset p{"bench", SceneKind::RandomPlanes, row.num_features, row.num_poses, row.points,
                 sigma_p, {}};
  const Instance in = make_instance(p, sigma_p, seed);
  const auto t0 = std::chrono::steady_clock::now();
  bc.sp = scene_to_problem(in.noisy, sigma_p);
  row.build_seconds = seconds_between(t0, std::chrono::steady_clock::now());

  const SolveResult res = solve(bc.sp.problem, in.init, opts);
  row.iterations = res.report.iterations;
  row.derivative_seconds = res.report.times.derivatives;
  row.solve_seconds = res.report.times.linear_solve;
  row.cost_seconds = res.report.times.cost_eval;
  row.traj = gauge_aligned_error(res.poses, in.clean.gt_poses);
  bc.solution = res.poses;
  const DerivativeBundle b = assemble(bc.sp.problem, bc.solution, opts.threads);
  bc.system = gauge_reduce(b.J, b.H);
  return bc;
}

/// Per-call times of one J/H assembly and one damped linear solve at the
/// solution, for every case. Cases are timed round-robin and the best call
/// per case is kept, so slow spells of a shared machine hit all cases alike.
inline void time_bench_cases(std::vector<BenchCase>& cases, const SolverOptions& opts,
                             int min_rounds = 5, double min_total = 1.0, int max_rounds = 500) {
  for (auto& c : cases) {
    c.row.derivative_call = std::numeric_limits<double>::infinity();
    c.row.solve_call = std::numeric_limits<double>::infinity();
  }
  double total = 0.0;
  Eigen::VectorXd x;
  for (int round = 0; round < max_rounds && (round < min_rounds || total < min_total); ++round) {
    for (auto& c : cases) {
      auto t0 = std::chrono::steady_clock::now();
      const DerivativeBundle b = assemble(c.sp.problem, c.solution, opts.threads);
      auto t1 = std::chrono::steady_clock::now();
      solve_damped(c.system, opts.mu0, x);
      const auto t2 = std::chrono::steady_clock::now();
      c.row.derivative_call = std::min(c.row.derivative_call, seconds_between(t0, t1));
      c.row.solve_call = std::min(c.row.solve_call, seconds_between(t1, t2));
      total += seconds_between(t0, t2);
    }
  }
}

/// One row per value along the axis.
inline std::vector<BenchRow> bench(BenchAxis axis, std::span<const int> values, std::uint64_t seed,
                                   double sigma_p, const SolverOptions& opts) {
  std::vector<BenchCase> cases;
  for (int v : values) cases.push_back(bench_case(axis, v, seed, sigma_p, opts));
  time_bench_cases(cases, opts);
  std::vector<BenchRow> rows;
  for (const auto& c : cases) rows.push_back(c.row);
  return rows;
}

// Map quality -----------------------------------------------------------------

struct MapQualityRun {
  bool failed = false;
  std::string error;
  std::size_t cells_gt = 0;
  std::size_t cells_init = 0;
  std::size_t cells_solved = 0;
  std::size_t features = 0;
  std::size_t single_pose_voxels = 0;
  SolveReport report;
  double seconds = 0.0;
};

/// Room scene, voxel association at the perturbed init, solve, and count
/// occupied cells of the registered scans with init, solved and gt poses.
inline MapQualityRun map_quality_run(const RoomParams& room, double sigma_p, std::uint64_t seed,
                                     double sigma_rot, double sigma_trans,
                                     const VoxelParams& vp, const SolverOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  MapQualityRun r;
  try {
    const Scene clean = gen_room_scene(room, seed);
    const Scene noisy = add_noise(clean, sigma_p, derive_seed(seed, 1));
    const auto init = perturb_trajectory(clean.gt_poses, sigma_rot, sigma_trans, derive_seed(seed, 2));
    r.cells_gt = occupied_cells(noisy.scans, clean.gt_poses, kMapCellSize);
    r.cells_init = occupied_cells(noisy.scans, init, kMapCellSize);
    const VoxelAssociation a = associate(noisy.scans, init, vp, opts.threads);
    r.features = a.problem.features.size();
    r.single_pose_voxels = a.single_pose_voxels;
    const SolveResult res = solve(a.problem, init, opts);
    r.report = res.report;
    r.cells_solved = occupied_cells(noisy.scans, res.poses, kMapCellSize);
  } catch (const Error& e) {
    r.failed = true;
    r.error = e.what();
  }
  r.seconds = seconds_between(t0, std::chrono::steady_clock::now());
  return r;
}

}  // namespace cluster_ba
