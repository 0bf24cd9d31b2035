#pragma once

// Feature association by adaptive octree voxelization of the world-frame
// point cloud: root voxels of size L are split into octants until the points
// in a voxel pass a planarity (or, opt-in, linearity) test.

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cluster_ba/error.hpp"
#include "cluster_ba/geometry.hpp"
#include "cluster_ba/parallel.hpp"
#include "cluster_ba/point_cluster.hpp"
#include "cluster_ba/problem.hpp"
#include "cluster_ba/simulator.hpp"

namespace cluster_ba {

struct VoxelParams {
  double root_size = 1.0;  // L, meters
  int max_layer = 3;       // l_max; the root is layer 0
  int min_points = 20;     // n_min
  double gamma = 1.0 / 25.0;
  bool detect_edges = false;

  void validate() const {
    if (!(root_size > 0.0) || max_layer < 0 || min_points < 3 || !(gamma > 0.0 && gamma < 1.0)) {
      throw Error(ErrorCode::InvalidProblem,
                  "voxel parameters: need L > 0, l_max >= 0, n_min >= 3, 0 < gamma < 1");
    }
  }
};

struct VoxelKey {
  std::int64_t x = 0, y = 0, z = 0;
  auto operator<=>(const VoxelKey&) const = default;
};

/// Integer cell of a point: explicit floor, so a point on a cell face belongs
/// to the cell whose lower face it lies on and negatives round down.
inline VoxelKey world_hash_key(const Vec3& p, double size) {
  return {static_cast<std::int64_t>(std::floor(p.x() / size)),
          static_cast<std::int64_t>(std::floor(p.y() / size)),
          static_cast<std::int64_t>(std::floor(p.z() / size))};
}

struct VoxelAssociation {
  BAProblem problem;
  std::vector<std::vector<Track>> members;  // [feature][observation] local point indices
  std::size_t single_pose_voxels = 0;       // accepted but seen by one scan only
};

namespace detail {

struct PointRef {
  std::uint32_t pose;
  std::uint32_t index;
};

struct VoxelFeature {
  FeatureKind kind;
  std::vector<PointRef> points;
};

inline void voxel_recurse(const std::vector<PointRef>& pts, const Vec3& lo, double size,
                          int layer, const std::vector<std::vector<Vec3>>& world,
                          const VoxelParams& params, std::vector<VoxelFeature>& out) {
  if (static_cast<int>(pts.size()) < params.min_points) return;
  PointCluster c;
  for (const auto& r : pts) {
    const Vec3& w = world[r.pose][r.index];
    c.P.noalias() += w * w.transpose();
    c.v += w;
    ++c.N;
  }
  const Vec3 lam = sym_eig3(scatter(c)).lambda;
  if (lam[1] > 0.0 && lam[2] < params.gamma * lam[1]) {
    out.push_back({FeatureKind::Plane, pts});
    return;
  }
  if (params.detect_edges && lam[0] > 0.0 && lam[1] < params.gamma * lam[0]) {
    out.push_back({FeatureKind::Edge, pts});
    return;
  }
  if (layer >= params.max_layer) return;

  const double half = 0.5 * size;
  const Vec3 mid = lo + Vec3::Constant(half);
  std::array<std::vector<PointRef>, 8> children;
  for (const auto& r : pts) {
    const Vec3& w = world[r.pose][r.index];
    const int o = (w.x() >= mid.x() ? 1 : 0) | (w.y() >= mid.y() ? 2 : 0) | (w.z() >= mid.z() ? 4 : 0);
    children[o].push_back(r);
  }
  for (int o = 0; o < 8; ++o) {
    const Vec3 child_lo(o & 1 ? mid.x() : lo.x(), o & 2 ? mid.y() : lo.y(), o & 4 ? mid.z() : lo.z());
    voxel_recurse(children[o], child_lo, half, layer + 1, world, params, out);
  }
}

}  // namespace detail

/// Registers every point in the world frame with init_poses, voxelizes, and
/// turns each accepted voxel into a feature whose observations are the local
/// clusters of the contributing scans. Voxels seen by a single scan carry no
/// constraint and are skipped.
inline VoxelAssociation associate(const std::vector<std::vector<Vec3>>& scans,
                                  std::span<const Pose> init_poses, const VoxelParams& params,
                                  int threads = 1) {
  params.validate();
  if (scans.size() != init_poses.size()) {
    throw Error(ErrorCode::InvalidProblem, "associate: " + std::to_string(scans.size()) +
                                               " scans but " + std::to_string(init_poses.size()) +
                                               " poses");
  }
  std::vector<std::vector<Vec3>> world(scans.size());
  std::map<VoxelKey, std::vector<detail::PointRef>> roots;
  for (std::size_t j = 0; j < scans.size(); ++j) {
    world[j].reserve(scans[j].size());
    for (std::size_t k = 0; k < scans[j].size(); ++k) {
      const Vec3 w = init_poses[j] * scans[j][k];
      world[j].push_back(w);
      roots[world_hash_key(w, params.root_size)].push_back(
          {static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(k)});
    }
  }

  std::vector<const std::pair<const VoxelKey, std::vector<detail::PointRef>>*> order;
  order.reserve(roots.size());
  for (const auto& kv : roots) order.push_back(&kv);
  std::vector<std::vector<detail::VoxelFeature>> found(order.size());
  parallel_for(order.size(), threads, [&](std::size_t r) {
    const VoxelKey& key = order[r]->first;
    const Vec3 lo(static_cast<double>(key.x) * params.root_size,
                  static_cast<double>(key.y) * params.root_size,
                  static_cast<double>(key.z) * params.root_size);
    detail::voxel_recurse(order[r]->second, lo, params.root_size, 0, world, params, found[r]);
  });

  VoxelAssociation out;
  out.problem.num_poses = scans.size();
  std::vector<Vec3> local;
  for (const auto& list : found) {
    for (const auto& vf : list) {
      std::map<std::uint32_t, std::vector<std::size_t>> by_pose;
      for (const auto& r : vf.points) by_pose[r.pose].push_back(r.index);
      if (by_pose.size() < 2) {
        ++out.single_pose_voxels;
        continue;
      }
      Feature f;
      f.kind = vf.kind;
      std::vector<Track> tracks;
      for (auto& [pose, idx] : by_pose) {
        local.clear();
        for (auto k : idx) local.push_back(scans[pose][k]);
        f.observations.push_back({pose, cluster_from_points(local)});
        tracks.push_back({pose, std::move(idx)});
      }
      out.problem.features.push_back(std::move(f));
      out.members.push_back(std::move(tracks));
    }
  }
  if (out.problem.features.empty()) {
    throw Error(ErrorCode::NoConstraints,
                "no constraints: voxelization found no feature observed by two or more scans");
  }
  return out;
}

}  // namespace cluster_ba
