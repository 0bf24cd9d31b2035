#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "cluster_ba/simulator.hpp"

using namespace cluster_ba;

namespace {

double distance_to_feature(const FeatureDef& f, const Vec3& w) {
  const Vec3 r = w - f.q;
  if (f.kind == FeatureKind::Plane) return std::abs(f.n.dot(r));
  return (r - f.n * f.n.dot(r)).norm();
}

bool same_scene(const Scene& a, const Scene& b) {
  if (a.gt_poses.size() != b.gt_poses.size() || a.scans.size() != b.scans.size()) return false;
  for (std::size_t j = 0; j < a.gt_poses.size(); ++j) {
    if (!(a.gt_poses[j] == b.gt_poses[j])) return false;
    if (a.scans[j].size() != b.scans[j].size()) return false;
    for (std::size_t k = 0; k < a.scans[j].size(); ++k) {
      if (a.scans[j][k] != b.scans[j][k]) return false;
    }
  }
  return a.dropped_rays == b.dropped_rays;
}

}  // namespace

TEST(RandomPlanes, SinglePointLiesOnPlane) {
  const Scene s = gen_random_planes_scene(1, 1, 1, 7);
  ASSERT_EQ(s.scans.size(), 1u);
  ASSERT_EQ(s.scans[0].size(), 1u);
  EXPECT_LT(distance_to_feature(s.features[0], s.gt_poses[0] * s.scans[0][0]), 1e-12);
}

TEST(RandomPlanes, NominalShapeAndExactGeometry) {
  const Scene s = gen_random_planes_scene(40, 40, 40, 1);
  EXPECT_EQ(s.num_points(), 64000u);
  ASSERT_EQ(s.association.size(), 40u);
  for (std::size_t i = 0; i < s.features.size(); ++i) {
    EXPECT_NEAR(s.features[i].n.norm(), 1.0, 1e-12);
    EXPECT_LE(s.features[i].q.cwiseAbs().maxCoeff(), kSceneHalfExtent);
    ASSERT_EQ(s.association[i].size(), 40u);
    for (std::size_t o = 0; o < 40; ++o) {
      const auto& tr = s.association[i][o];
      EXPECT_EQ(tr.pose, o);
      EXPECT_EQ(tr.points.size(), 40u);
      for (auto k : tr.points) {
        const Vec3 w = s.gt_poses[tr.pose] * s.scans[tr.pose][k];
        EXPECT_LT(distance_to_feature(s.features[i], w), 1e-12);
        EXPECT_LE((w - s.features[i].q).cwiseAbs().maxCoeff(), 2.0 * std::sqrt(2.0) + 1e-9);
      }
    }
  }
  for (const auto& T : s.gt_poses) {
    EXPECT_LT((T.R * T.R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE(T.t.cwiseAbs().maxCoeff(), kSceneHalfExtent);
  }
}

TEST(RandomPlanes, DeterministicPerSeed) {
  EXPECT_TRUE(same_scene(gen_random_planes_scene(5, 4, 10, 3), gen_random_planes_scene(5, 4, 10, 3)));
  EXPECT_FALSE(same_scene(gen_random_planes_scene(5, 4, 10, 3), gen_random_planes_scene(5, 4, 10, 4)));
}

TEST(RandomPlanes, EdgesLieOnTheirLines) {
  const Scene s = gen_random_planes_scene(20, 3, 10, 5, 1.0);
  for (std::size_t i = 0; i < s.features.size(); ++i) {
    EXPECT_EQ(s.features[i].kind, FeatureKind::Edge);
    for (const auto& tr : s.association[i]) {
      for (auto k : tr.points) {
        EXPECT_LT(distance_to_feature(s.features[i], s.gt_poses[tr.pose] * s.scans[tr.pose][k]), 1e-12);
      }
    }
  }
}

TEST(SceneToProblem, NominalCountsAndNearZeroCost) {
  const Scene s = gen_random_planes_scene(40, 40, 40, 2);
  const auto sp = scene_to_problem(s, 0.0);
  ASSERT_EQ(sp.problem.features.size(), 40u);
  std::int64_t total = 0;
  for (const auto& f : sp.problem.features) {
    ASSERT_EQ(f.observations.size(), 40u);
    for (const auto& o : f.observations) EXPECT_EQ(o.cluster.N, 40);
    total += f.total_points();
  }
  EXPECT_EQ(total, static_cast<std::int64_t>(s.num_points()));
  // Exact planes; what remains is round-off in the raw moments (~eps |p|^2).
  EXPECT_LE(total_cost(sp.problem, s.gt_poses), 40 * 1e-12);
  EXPECT_TRUE(sp.noises[0][0].Sigma.isZero());
}

TEST(Room, RayStraightDownHitsFloor) {
  const Vec3 ext(30, 20, 8);
  const auto hit = cast_ray(Vec3(15, 10, 4), Vec3(0, 0, -1), ext);
  ASSERT_TRUE(hit.has_value());
  EXPECT_EQ(hit->face, kFaceZMin);
  EXPECT_EQ(hit->point, Vec3(15, 10, 0));
  EXPECT_FALSE(cast_ray(Vec3(15, 10, 4), Vec3(1, 0, 0), ext).has_value());
  const auto wall = cast_ray(Vec3(15, 10, 4), Vec3(-1, 0, 0), ext);
  ASSERT_TRUE(wall.has_value());
  EXPECT_EQ(wall->face, kFaceXMin);
  EXPECT_EQ(wall->point, Vec3(0, 10, 4));
}

TEST(Room, TrajectoryLengthAndSpacing) {
  const RoomParams p;
  const auto poses = room_trajectory(p);
  ASSERT_EQ(poses.size(), 100u);
  double length = 0.0;
  for (std::size_t j = 0; j < poses.size(); ++j) {
    const Vec3 d = poses[(j + 1) % poses.size()].t - poses[j].t;
    length += d.norm();
    EXPECT_LE(d.norm(), 0.92 + 1e-9);
    EXPECT_DOUBLE_EQ(poses[j].t.z(), p.sensor_height);
  }
  // Chords cut the corners slightly, so the loop is a little under 92 m.
  EXPECT_LE(length, 92.0 + 1e-9);
  EXPECT_GT(length, 91.0);
}

TEST(Room, DefaultSceneGeometry) {
  const RoomParams p;
  const Scene s = gen_room_scene(p, 11);
  ASSERT_EQ(s.scans.size(), 100u);
  EXPECT_EQ(s.num_points() + s.dropped_rays, 100u * 28800u);
  EXPECT_GT(s.dropped_rays, 0u);
  EXPECT_LT(s.dropped_rays, 100u * 28800u / 4);
  ASSERT_EQ(s.features.size(), 5u);
  std::size_t associated = 0;
  for (std::size_t i = 0; i < s.features.size(); ++i) {
    const auto& f = s.features[i];
    for (const auto& tr : s.association[i]) {
      for (auto k : tr.points) {
        const Vec3 w = s.gt_poses[tr.pose] * s.scans[tr.pose][k];
        EXPECT_LT(distance_to_feature(f, w), 1e-10);
        ++associated;
      }
    }
  }
  EXPECT_EQ(associated, s.num_points());

  const Scene again = gen_room_scene(p, 11);
  EXPECT_TRUE(same_scene(s, again));
}

TEST(Room, RejectsTrajectoryOutsideRoom) {
  RoomParams p;
  p.sensor_height = 9.0;
  EXPECT_THROW(gen_room_scene(p, 1), Error);
  p = RoomParams{};
  p.num_poses = 1;
  EXPECT_THROW(gen_room_scene(p, 1), Error);
}

TEST(AddNoise, ZeroSigmaIsIdentityAndSampleStd) {
  const Scene s = gen_random_planes_scene(10, 10, 1000, 4);
  EXPECT_TRUE(same_scene(add_noise(s, 0.0, 9), s));
  const double sigma = 0.07;
  const Scene n = add_noise(s, sigma, 9);
  EXPECT_TRUE(same_scene(add_noise(s, sigma, 9), n));
  double sum2 = 0.0;
  std::size_t count = 0;
  for (std::size_t j = 0; j < s.scans.size(); ++j) {
    for (std::size_t k = 0; k < s.scans[j].size(); ++k) {
      sum2 += (n.scans[j][k] - s.scans[j][k]).squaredNorm();
      count += 3;
    }
  }
  ASSERT_GE(count, 100000u);
  EXPECT_NEAR(std::sqrt(sum2 / count), sigma, 0.01 * sigma);
  for (std::size_t i = 0; i < n.features.size(); ++i) {
    for (const auto& tr : n.association[i]) {
      for (auto k : tr.points) {
        EXPECT_LT(distance_to_feature(n.features[i], n.gt_poses[tr.pose] * n.scans[tr.pose][k]),
                  6.0 * sigma);
      }
    }
  }
}

TEST(PerturbTrajectory, ZeroIsIdentityAndPerAxisSigma) {
  std::vector<Pose> poses(100000, Pose::identity());
  const auto same = perturb_trajectory(poses, 0.0, 0.0, 1);
  for (std::size_t j = 0; j < 10; ++j) EXPECT_EQ(same[j], poses[j]);

  const auto moved = perturb_default_init(poses, 2);
  Vec3 rot2 = Vec3::Zero(), tr2 = Vec3::Zero();
  for (const auto& T : moved) {
    // From identity the perturbation is recovered exactly.
    rot2 += so3_log(T.R).cwiseAbs2();
    tr2 += T.t.cwiseAbs2();
  }
  const double n = static_cast<double>(moved.size());
  for (int a = 0; a < 3; ++a) {
    EXPECT_NEAR(std::sqrt(rot2[a] / n), kDefaultInitRot, 0.02 * kDefaultInitRot);
    EXPECT_NEAR(std::sqrt(tr2[a] / n), kDefaultInitTrans, 0.02 * kDefaultInitTrans);
  }
}

TEST(DeriveSeed, DistinctStreams) {
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
  EXPECT_EQ(derive_seed(5, 3), derive_seed(5, 3));
}
