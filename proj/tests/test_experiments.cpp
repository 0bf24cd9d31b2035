#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cluster_ba/experiments.hpp"

using namespace cluster_ba;

TEST(OccupiedCells, GridArithmetic) {
  const std::vector<Vec3> same(1000, Vec3(0.31, -2.0, 7.5));
  EXPECT_EQ(occupied_cells(same, 0.1), 1u);
  const std::vector<Vec3> close{Vec3(0.02, 0.02, 0.02), Vec3(0.07, 0.02, 0.02)};
  EXPECT_EQ(occupied_cells(close, 0.1), 1u);
  const std::vector<Vec3> apart{Vec3(0.02, 0.02, 0.02), Vec3(0.17, 0.02, 0.02)};
  EXPECT_EQ(occupied_cells(apart, 0.1), 2u);
  const std::vector<Vec3> around_zero{Vec3(-0.01, 0, 0), Vec3(0.01, 0, 0)};
  EXPECT_EQ(occupied_cells(around_zero, 0.1), 2u);
  EXPECT_EQ(occupied_cells(std::vector<Vec3>{}, 0.1), 0u);
  EXPECT_THROW(occupied_cells(same, 0.0), Error);
}

TEST(OccupiedCells, RegisteredScans) {
  // Two scans of the same point seen from different poses land in one cell
  // with the right poses and in two cells with a wrong one.
  const std::vector<Pose> poses{Pose::identity(), {Mat3::Identity(), Vec3(1, 0, 0)}};
  const std::vector<std::vector<Vec3>> scans{{Vec3(1.05, 0.05, 0.05)}, {Vec3(0.05, 0.05, 0.05)}};
  EXPECT_EQ(occupied_cells(scans, poses, 0.1), 1u);
  const std::vector<Pose> off{Pose::identity(), {Mat3::Identity(), Vec3(1.2, 0, 0)}};
  EXPECT_EQ(occupied_cells(scans, off, 0.1), 2u);
}

TEST(TrajectoryError, InvariantToCommonMotionAndExactOnKnownOffset) {
  Rng rng(1);
  std::vector<Pose> gt;
  for (int j = 0; j < 5; ++j) gt.push_back({rng.rotation(), rng.uniform_box(5.0)});
  const Pose T0{rng.rotation(), rng.uniform_box(3.0)};
  std::vector<Pose> moved;
  for (const auto& T : gt) moved.push_back(T0 * T);
  const auto e0 = gauge_aligned_error(moved, gt);
  EXPECT_LT(e0.rot_rmse, 1e-12);
  EXPECT_LT(e0.trans_rmse, 1e-12);

  // Pose 2 off by 0.3 m in the world frame: RMSE over the 4 free poses.
  auto est = gt;
  est[2].t += Vec3(0, 0.3, 0);
  const auto e = gauge_aligned_error(est, gt);
  EXPECT_NEAR(e.trans_rmse, 0.3 / 2.0, 1e-12);
  EXPECT_NEAR(e.trans_max, 0.3, 1e-12);
  EXPECT_LT(e.rot_rmse, 1e-15);
}

TEST(Stats, SpearmanAndSlope) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const std::vector<double> up{1, 4, 9, 16, 25}, down{5, 4, 3, 2, 1}, tie{1, 1, 2, 2, 3};
  EXPECT_DOUBLE_EQ(spearman(x, up), 1.0);
  EXPECT_DOUBLE_EQ(spearman(x, down), -1.0);
  EXPECT_GT(spearman(x, tie), 0.9);
  const std::vector<double> n{10, 20, 40, 80, 160};
  std::vector<double> cubic;
  for (double v : n) cubic.push_back(2e-9 * v * v * v);
  EXPECT_NEAR(log_log_slope(n, cubic), 3.0, 1e-12);
}

TEST(Presets, ShapesAndUnknownName) {
  const auto desk = preset_by_name("desk");
  EXPECT_EQ(desk.num_poses, 20);
  EXPECT_EQ(desk.num_features, 15);
  EXPECT_EQ(desk.points, 50);
  const auto nominal = preset_by_name("virtual-nominal");
  EXPECT_EQ(nominal.num_features, 40);
  EXPECT_EQ(nominal.num_poses, 40);
  EXPECT_EQ(nominal.points, 40);
  EXPECT_EQ(preset_by_name("room-v1").kind, SceneKind::Room);
  EXPECT_EQ(preset_by_name("small").num_poses, 5);
  EXPECT_THROW(preset_by_name("nope"), Error);
}

TEST(NeesSweep, ZeroSigmaIsUndefined) {
  const auto row = nees_sweep_row(preset_by_name("small"), 0.0, 3, 1, 1);
  EXPECT_FALSE(row.nees_defined);
  EXPECT_TRUE(std::isnan(row.mean_nees));
  EXPECT_EQ(row.failed, 0);
  EXPECT_LT(row.rot_rmse, 1e-6);
}

TEST(NeesSweep, SmallSceneNearOneAndWorkerCountIndependent) {
  const auto a = nees_sweep_row(preset_by_name("small"), 0.05, 12, 2, 1);
  const auto b = nees_sweep_row(preset_by_name("small"), 0.05, 12, 2, 3);
  ASSERT_TRUE(a.nees_defined);
  EXPECT_EQ(a.failed, 0);
  EXPECT_EQ(a.mean_nees, b.mean_nees);
  EXPECT_EQ(a.rot_rmse, b.rot_rmse);
  // 12 runs of a chi-square with 24 dof / 24: standard error ~0.08.
  EXPECT_GT(a.mean_nees, 0.6);
  EXPECT_LT(a.mean_nees, 1.4);
  EXPECT_EQ(a.detail[0].errors.size(), 24);
  EXPECT_EQ(a.detail[0].std_dev.size(), 24);
}

TEST(NeesSweep, UnobservableRunIsFlagged) {
  Preset single{"single-plane", SceneKind::RandomPlanes, 1, 3, 30, 0.05, {}};
  const auto row = nees_sweep_row(single, 0.05, 2, 3, 1);
  EXPECT_EQ(row.failed, 2);
  EXPECT_FALSE(row.nees_defined);
  EXPECT_NE(row.detail[0].error.find("unobservable"), std::string::npos) << row.detail[0].error;
}

TEST(Bench, PointReportsPhasesAndAccuracy) {
  const std::vector<int> values{8, 16};
  const auto rows = bench(BenchAxis::Features, values, 1, 0.05, SolverOptions{});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].num_features, 16);
  const auto& r = rows[0];
  EXPECT_EQ(r.num_features, 8);
  EXPECT_EQ(r.num_poses, 40);
  EXPECT_EQ(r.points, 40);
  EXPECT_GT(r.iterations, 0);
  EXPECT_GT(r.derivative_call, 0.0);
  EXPECT_GT(r.solve_call, 0.0);
  EXPECT_LT(r.traj.rot_rmse, 0.05);
  const std::vector<int> bad{0};
  EXPECT_THROW(bench(BenchAxis::Points, bad, 1, 0.05, SolverOptions{}), Error);
  EXPECT_EQ(bench_axis_from_string("poses"), BenchAxis::Poses);
  EXPECT_THROW(bench_axis_from_string("time"), Error);
}

TEST(MapQuality, SmallRoomImprovesFromMildPerturbation) {
  RoomParams room;
  room.num_poses = 20;
  room.azimuth_steps = 900;
  const auto r = map_quality_run(room, 0.02, 5, 0.2 * std::numbers::pi / 180.0, 0.02, VoxelParams{},
                                 SolverOptions{});
  ASSERT_FALSE(r.failed) << r.error;
  EXPECT_GT(r.features, 0u);
  EXPECT_LT(r.cells_gt, r.cells_init);
  EXPECT_LT(r.cells_solved, r.cells_init);

  const auto exact = map_quality_run(room, 0.02, 5, 0.0, 0.0, VoxelParams{}, SolverOptions{});
  ASSERT_FALSE(exact.failed) << exact.error;
  EXPECT_EQ(exact.cells_init, exact.cells_gt);
}
