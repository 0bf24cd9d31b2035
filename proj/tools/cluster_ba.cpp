// cluster_ba: simulate scenes, solve them, and run the NEES, timing and
// map-quality experiments. Exit codes: 0 ok, 1 input error, 2 non-convergence.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cluster_ba/error.hpp"
#include "cluster_ba/experiments.hpp"
#include "cluster_ba/io.hpp"
#include "cluster_ba/parallel.hpp"
#include "cluster_ba/random.hpp"
#include "cluster_ba/simulator.hpp"
#include "cluster_ba/solver.hpp"
#include "cluster_ba/uncertainty.hpp"
#include "cluster_ba/voxel.hpp"

using namespace cluster_ba;
namespace fs = std::filesystem;

namespace {

constexpr const char* kSceneFormat = "cluster_ba-scene/1";
constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitNoConvergence = 2;

struct Common {
  std::string preset = "virtual-nominal";
  std::uint64_t seed = 1;
  std::optional<double> sigma_p;
  std::optional<int> threads;
  std::string out;

  int worker_count() const { return threads ? std::max(1, *threads) : threads_from_env(); }
};

void add_common(CLI::App* cmd, Common& c, bool with_out = true) {
  cmd->add_option("--preset", c.preset, "room-v1 | virtual-nominal | desk | small");
  cmd->add_option("--seed", c.seed, "scene seed");
  cmd->add_option("--sigma-p", c.sigma_p, "point noise standard deviation per axis, m");
  cmd->add_option("--threads", c.threads, "worker cap (default: CLUSTER_BA_THREADS or 1)")
      ->check(CLI::PositiveNumber);
  if (with_out) cmd->add_option("--out", c.out, "output directory")->required();
}

struct SolveFlags {
  std::string scene;
  std::string init;
  std::string assoc = "gt";
  VoxelParams voxel;
  int max_iters = SolverOptions{}.max_iters;
  bool covariance = false;
};

void add_config(RunReport& r, const Common& c, const std::string& command) {
  r.set_config("command", command);
  r.set_config("version", CLUSTER_BA_VERSION);
  r.set_config("rng", Rng::kName);
  r.set_config("preset", c.preset);
  r.set_config("seed", std::to_string(c.seed));
  r.set_config("threads", std::to_string(c.worker_count()));
}

/// Scene plus the initial trajectory it should be solved from.
struct LoadedScene {
  Scene scene;
  std::vector<Pose> init;
  double sigma_p = 0.0;
  Common source;  // preset and seed the scene came from
};

LoadedScene load_or_generate(const Common& c, const SolveFlags& f) {
  LoadedScene ls;
  ls.source = c;
  if (!f.scene.empty()) {
    const SceneFiles files{f.scene};
    ls.scene = read_scene(files);
    const KeyValues manifest = read_key_value_file(files.manifest());
    if (const auto* fmt = find_value(manifest, "format"); !fmt || *fmt != kSceneFormat) {
      throw Error(ErrorCode::Parse, files.manifest().string() + ": expected format = " + kSceneFormat);
    }
    if (c.sigma_p) {
      ls.sigma_p = *c.sigma_p;
    } else if (const auto* s = find_value(manifest, "sigma_p")) {
      ls.sigma_p = std::stod(*s);
    }
    ls.source.preset = find_value(manifest, "preset") ? *find_value(manifest, "preset") : "?";
    if (const auto* seed = find_value(manifest, "seed")) ls.source.seed = std::stoull(*seed);
    ls.init = read_poses(f.init.empty() ? files.init_poses() : fs::path(f.init));
  } else {
    const Preset p = preset_by_name(c.preset);
    ls.sigma_p = c.sigma_p.value_or(p.sigma_p);
    const Instance in = make_instance(p, ls.sigma_p, c.seed);
    ls.scene = in.noisy;
    ls.init = f.init.empty() ? in.init : read_poses(f.init);
  }
  if (ls.init.size() != ls.scene.scans.size()) {
    throw Error(ErrorCode::InvalidProblem, "initial trajectory has " + std::to_string(ls.init.size()) +
                                               " poses for " + std::to_string(ls.scene.scans.size()) +
                                               " scans");
  }
  return ls;
}

int cmd_simulate(const Common& c) {
  const Preset p = preset_by_name(c.preset);
  const double sigma = c.sigma_p.value_or(p.sigma_p);
  const Instance in = make_instance(p, sigma, c.seed);
  const SceneFiles files{c.out};
  write_scene(files, in.noisy);
  write_poses(files.init_poses(), in.init);
  write_key_value_file(files.manifest(),
                       {{"format", kSceneFormat},
                        {"version", CLUSTER_BA_VERSION},
                        {"rng", Rng::kName},
                        {"preset", p.name},
                        {"seed", std::to_string(c.seed)},
                        {"sigma_p", format_double(sigma)},
                        {"init_sigma_rot", format_double(kDefaultInitRot)},
                        {"init_sigma_trans", format_double(kDefaultInitTrans)},
                        {"num_poses", std::to_string(in.noisy.scans.size())},
                        {"num_features", std::to_string(in.noisy.features.size())},
                        {"num_points", std::to_string(in.noisy.num_points())},
                        {"dropped_rays", std::to_string(in.noisy.dropped_rays)}});
  std::printf("wrote %zu scans, %zu features, %zu points to %s\n", in.noisy.scans.size(),
              in.noisy.features.size(), in.noisy.num_points(), c.out.c_str());
  return kExitOk;
}

int cmd_solve(const Common& c, const SolveFlags& f) {
  if (f.assoc != "gt" && f.assoc != "voxel") {
    throw Error(ErrorCode::InvalidProblem, "--assoc must be gt or voxel");
  }
  const LoadedScene ls = load_or_generate(c, f);
  const auto t0 = std::chrono::steady_clock::now();
  BAProblem problem;
  std::vector<std::vector<ClusterNoise>> noises;
  std::size_t single_pose_voxels = 0;
  if (f.assoc == "gt") {
    SceneProblem sp = scene_to_problem(ls.scene, ls.sigma_p);
    problem = std::move(sp.problem);
    noises = std::move(sp.noises);
  } else {
    VoxelAssociation a = associate(ls.scene.scans, ls.init, f.voxel, c.worker_count());
    single_pose_voxels = a.single_pose_voxels;
    for (std::size_t i = 0; i < a.problem.features.size(); ++i) {
      std::vector<ClusterNoise> n;
      for (const auto& o : a.problem.features[i].observations) n.push_back(cluster_noise(o.cluster, ls.sigma_p));
      noises.push_back(std::move(n));
    }
    problem = std::move(a.problem);
  }
  const double build_seconds = seconds_between(t0, std::chrono::steady_clock::now());

  SolverOptions opts;
  opts.max_iters = f.max_iters;
  opts.threads = c.worker_count();

  RunReport r;
  add_config(r, ls.source, "solve");
  r.set_config("scene", f.scene.empty() ? "(generated)" : f.scene);
  r.set_config("assoc", f.assoc);
  r.set_config("sigma_p", format_double(ls.sigma_p));
  r.set_config("max_iters", std::to_string(opts.max_iters));
  r.set_config("mu0", format_double(opts.mu0));
  r.set_config("nu0", format_double(opts.nu0));
  if (f.assoc == "voxel") {
    r.set_config("voxel_size", format_double(f.voxel.root_size));
    r.set_config("max_layer", std::to_string(f.voxel.max_layer));
    r.set_config("min_points", std::to_string(f.voxel.min_points));
    r.set_config("gamma", format_double(f.voxel.gamma));
  }
  r.set_metric("num_poses", problem.num_poses);
  r.set_metric("num_features", problem.features.size());
  if (f.assoc == "voxel") r.set_metric("single_pose_voxels", single_pose_voxels);
  r.set_metric("build_seconds", build_seconds);

  int code = kExitOk;
  std::vector<Pose> poses = ls.init;
  try {
    const SolveResult res = solve(problem, ls.init, opts);
    poses = res.poses;
    const SolveReport& s = res.report;
    r.set_metric("termination", to_string(s.termination));
    r.set_metric("iterations", s.iterations);
    r.set_metric("accepted", s.accepted);
    r.set_metric("rejected", s.rejected);
    r.set_metric("initial_cost", s.cost_trace.front());
    r.set_metric("final_cost", s.final_cost);
    r.set_metric("dropped_gap_terms", s.dropped_gap_terms);
    r.set_metric("derivative_seconds", s.times.derivatives);
    r.set_metric("linear_solve_seconds", s.times.linear_solve);
    r.set_metric("cost_eval_seconds", s.times.cost_eval);
    Table trace{"cost_trace", {"accepted_step", "cost"}, {}};
    for (std::size_t k = 0; k < s.cost_trace.size(); ++k)
      trace.rows.push_back({std::to_string(k), format_double(s.cost_trace[k])});
    r.tables.push_back(std::move(trace));
    if (s.termination != Termination::StepTol) code = kExitNoConvergence;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Stalled && e.code() != ErrorCode::NumericalFailure) throw;
    r.set_metric("termination", e.code() == ErrorCode::Stalled ? "stalled" : "numerical_failure");
    std::cerr << "cluster_ba: " << e.what() << '\n';
    code = kExitNoConvergence;
  }

  const auto& gt = ls.scene.gt_poses;
  const TrajectoryError te = gauge_aligned_error(poses, gt);
  r.set_metric("rot_rmse", te.rot_rmse);
  r.set_metric("trans_rmse", te.trans_rmse);
  r.set_metric("cells_init", occupied_cells(ls.scene.scans, ls.init, kMapCellSize));
  r.set_metric("cells_solved", occupied_cells(ls.scene.scans, poses, kMapCellSize));
  r.set_metric("cells_gt", occupied_cells(ls.scene.scans, gt, kMapCellSize));
  if (f.covariance && code == kExitOk) {
    if (ls.sigma_p > 0.0) {
      const auto est = align_to_first(poses, gt);
      const PoseCovariance cov = pose_covariance(problem, est, noises, opts.threads);
      const NeesResult n = nees(est, gt, cov);
      r.set_metric("nees", n.eta);
      r.set_metric("nees_normalized", n.normalized);
      r.set_metric("nees_dimension", n.dimension);
      Table sd{"pose_std", {"pose", "rx", "ry", "rz", "tx", "ty", "tz"}, {}};
      for (std::size_t j = 1; j < est.size(); ++j) {
        std::vector<std::string> row{std::to_string(j + 1)};
        const Mat6 b = cov.block(j);
        for (int a = 0; a < 6; ++a) row.push_back(format_double(std::sqrt(std::max(b(a, a), 0.0))));
        sd.rows.push_back(std::move(row));
      }
      r.tables.push_back(std::move(sd));
    } else {
      r.set_metric("nees_normalized", "undefined");
    }
  }

  const fs::path out(c.out);
  write_poses(out / "poses_solved.txt", poses);
  write_report(out / "report.txt", r);
  std::printf("%s: %s after %s iterations, cost %s -> %s, rot_rmse %.3g rad, trans_rmse %.3g m\n",
              c.out.c_str(), find_value(r.metrics, "termination")->c_str(),
              find_value(r.metrics, "iterations") ? find_value(r.metrics, "iterations")->c_str() : "?",
              find_value(r.metrics, "initial_cost") ? find_value(r.metrics, "initial_cost")->c_str() : "?",
              find_value(r.metrics, "final_cost") ? find_value(r.metrics, "final_cost")->c_str() : "?",
              te.rot_rmse, te.trans_rmse);
  return code;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const std::string item = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (...) {
      used = 0;
    }
    if (item.empty() || used != item.size()) {
      throw Error(ErrorCode::InvalidProblem, "bad list element '" + item + "' in '" + s + "'");
    }
    out.push_back(v);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

int cmd_nees(const Common& c, const std::string& sigmas, int runs) {
  const Preset p = preset_by_name(c.preset);
  RunReport r;
  add_config(r, c, "nees");
  r.set_config("sigmas", sigmas);
  r.set_config("runs", std::to_string(runs));
  r.set_config("nees_dimension", std::to_string(6 * (p.num_poses - 1)));
  // mean_nees is eta / (6 (M_p - 1)) averaged over successful runs; rmse over
  // runs and poses 2..M_p after aligning pose 1.
  Table summary{"nees",
                {"sigma_p", "runs", "failed", "mean_nees", "rot_rmse", "trans_rmse", "seconds"},
                {}};
  Table per_run{"runs", {"sigma_p", "run", "failed", "nees", "rot_rmse", "trans_rmse", "iterations"}, {}};
  for (double s : parse_list(sigmas)) {
    const NeesRow row = nees_sweep_row(p, s, runs, c.seed, c.worker_count());
    summary.rows.push_back({format_double(s), std::to_string(row.runs), std::to_string(row.failed),
                            row.nees_defined ? format_double(row.mean_nees) : "undefined",
                            format_double(row.rot_rmse), format_double(row.trans_rmse),
                            format_double(row.seconds)});
    for (std::size_t k = 0; k < row.detail.size(); ++k) {
      const NeesRun& d = row.detail[k];
      per_run.rows.push_back({format_double(s), std::to_string(k + 1), d.failed ? "1" : "0",
                              std::isfinite(d.nees) ? format_double(d.nees) : "undefined",
                              format_double(d.traj.rot_rmse), format_double(d.traj.trans_rmse),
                              std::to_string(d.iterations)});
      if (d.failed) std::cerr << "sigma_p " << s << " run " << k + 1 << ": " << d.error << '\n';
    }
  }
  const fs::path out(c.out);
  write_csv(out / "nees.csv", summary);
  r.tables.push_back(summary);
  r.tables.push_back(per_run);
  write_report(out / "report.txt", r);
  std::cout << to_csv(summary);
  return kExitOk;
}

int cmd_bench(const Common& c, const std::string& axis_name, const std::string& values, int max_iters) {
  const BenchAxis axis = bench_axis_from_string(axis_name);
  SolverOptions opts;
  opts.max_iters = max_iters;
  opts.threads = c.worker_count();
  const double sigma = c.sigma_p.value_or(0.05);
  RunReport r;
  add_config(r, c, "bench");
  r.set_config("axis", axis_name);
  r.set_config("values", values);
  r.set_config("sigma_p", format_double(sigma));
  // *_call columns: one assembly / one damped solve at the solution, best of
  // interleaved repeats. *_total columns: sums over the whole solve.
  Table t{"bench",
          {"value", "M_f", "M_p", "N", "iterations", "build_s", "derivative_call_s", "linear_solve_call_s",
           "derivative_total_s", "linear_solve_total_s", "cost_eval_total_s", "rot_rmse", "trans_rmse"},
          {}};
  std::vector<int> ints;
  for (double v : parse_list(values)) {
    if (v < 1 || v != std::floor(v)) throw Error(ErrorCode::InvalidProblem, "bench values must be positive integers");
    ints.push_back(static_cast<int>(v));
  }
  for (const BenchRow& b : bench(axis, ints, c.seed, sigma, opts)) {
    t.rows.push_back({std::to_string(b.value), std::to_string(b.num_features), std::to_string(b.num_poses),
                      std::to_string(b.points), std::to_string(b.iterations), format_double(b.build_seconds),
                      format_double(b.derivative_call), format_double(b.solve_call),
                      format_double(b.derivative_seconds), format_double(b.solve_seconds),
                      format_double(b.cost_seconds), format_double(b.traj.rot_rmse),
                      format_double(b.traj.trans_rmse)});
  }
  const fs::path out(c.out);
  write_csv(out / "bench.csv", t);
  r.tables.push_back(t);
  write_report(out / "report.txt", r);
  std::cout << to_csv(t);
  return kExitOk;
}

int cmd_cells(const std::string& scene, const std::string& poses_path, double cell) {
  const SceneFiles files{scene};
  const auto gt = read_poses(files.gt_poses());
  const auto poses = read_poses(poses_path.empty() ? files.gt_poses() : fs::path(poses_path));
  if (poses.size() != gt.size()) {
    throw Error(ErrorCode::InvalidProblem, "pose file has " + std::to_string(poses.size()) +
                                               " poses for " + std::to_string(gt.size()) + " scans");
  }
  std::vector<std::vector<Vec3>> scans;
  for (std::size_t j = 0; j < poses.size(); ++j) scans.push_back(read_scan(files.scan(j)));
  std::printf("%zu\n", occupied_cells(scans, poses, cell));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point-cluster lidar bundle adjustment"};
  app.require_subcommand(1);

  Common sim_c, solve_c, nees_c, bench_c;
  auto* sim = app.add_subcommand("simulate", "write a synthetic scene (noisy scans, gt and init poses)");
  add_common(sim, sim_c);

  SolveFlags sf;
  auto* sol = app.add_subcommand("solve", "solve a scene directory or a generated preset");
  add_common(sol, solve_c);
  sol->add_option("--scene", sf.scene, "scene directory from simulate (default: generate --preset)");
  sol->add_option("--init", sf.init, "initial pose file (default: the scene's poses_init.txt)");
  sol->add_option("--assoc", sf.assoc, "gt | voxel")->check(CLI::IsMember({"gt", "voxel"}));
  sol->add_option("--voxel-size", sf.voxel.root_size, "root voxel size L, m");
  sol->add_option("--max-layer", sf.voxel.max_layer, "maximum voxel layer");
  sol->add_option("--min-points", sf.voxel.min_points, "minimum points per feature test");
  sol->add_option("--gamma", sf.voxel.gamma, "plane test threshold");
  sol->add_option("--max-iters", sf.max_iters, "iteration cap")->check(CLI::PositiveNumber);
  sol->add_flag("--covariance", sf.covariance, "propagate pose covariance and report NEES");

  std::string sigmas = "0,0.05,0.1,0.2,0.3";
  int runs = 30;
  auto* ne = app.add_subcommand("nees", "Monte Carlo NEES and RMSE over a sigma sweep");
  add_common(ne, nees_c);
  ne->add_option("--sigmas", sigmas, "comma-separated sigma_p values, m");
  ne->add_option("--runs", runs, "Monte Carlo runs per sigma")->check(CLI::PositiveNumber);

  std::string axis = "features", values = "10,20,40,80,160";
  int bench_iters = SolverOptions{}.max_iters;
  auto* be = app.add_subcommand("bench", "timing and accuracy over poses, features or points");
  add_common(be, bench_c);
  be->add_option("--axis", axis, "poses | features | points")
      ->check(CLI::IsMember({"poses", "features", "points"}));
  be->add_option("--values", values, "comma-separated values");
  be->add_option("--max-iters", bench_iters, "iteration cap")->check(CLI::PositiveNumber);

  std::string cells_scene, cells_poses;
  double cell = kMapCellSize;
  auto* ce = app.add_subcommand("cells", "occupied-cell count of a scene registered with a pose file");
  ce->add_option("--scene", cells_scene, "scene directory")->required();
  ce->add_option("--poses", cells_poses, "pose file (default: gt)");
  ce->add_option("--cell", cell, "cell size, m")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*sim) return cmd_simulate(sim_c);
    if (*sol) return cmd_solve(solve_c, sf);
    if (*ne) return cmd_nees(nees_c, sigmas, runs);
    if (*be) return cmd_bench(bench_c, axis, values, bench_iters);
    if (*ce) return cmd_cells(cells_scene, cells_poses, cell);
  } catch (const Error& e) {
    std::cerr << "cluster_ba: " << to_string(e.code()) << ": " << e.what() << '\n';
    const bool solver = e.code() == ErrorCode::Stalled || e.code() == ErrorCode::NumericalFailure;
    return solver ? kExitNoConvergence : kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "cluster_ba: " << e.what() << '\n';
    return kExitInput;
  }
  return kExitInput;
}
