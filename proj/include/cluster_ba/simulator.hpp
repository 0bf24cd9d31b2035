#pragma once

// Synthetic scenes: random plane patches seen from random poses, and a
// spinning 16-channel scanner driven around a semi-closed cuboid room.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "cluster_ba/error.hpp"
#include "cluster_ba/geometry.hpp"
#include "cluster_ba/point_cluster.hpp"
#include "cluster_ba/problem.hpp"
#include "cluster_ba/random.hpp"

namespace cluster_ba {

/// Ground-truth feature: plane through q with unit normal n, or edge through
/// q with unit direction n.
struct FeatureDef {
  FeatureKind kind = FeatureKind::Plane;
  Vec3 n = Vec3::UnitZ();
  Vec3 q = Vec3::Zero();
};

/// Points of one feature in one scan.
struct Track {
  std::size_t pose = 0;
  std::vector<std::size_t> points;  // indices into scans[pose]
};

struct Scene {
  std::vector<Pose> gt_poses;
  std::vector<std::vector<Vec3>> scans;      // local frame, one list per pose
  std::vector<std::vector<Track>> association;  // per feature, sorted by pose
  std::vector<FeatureDef> features;
  std::size_t dropped_rays = 0;

  std::size_t num_points() const {
    std::size_t n = 0;
    for (const auto& s : scans) n += s.size();
    return n;
  }
};

/// Independent stream for a (seed, purpose) pair; splitmix64 finalizer.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline constexpr double kPatchHalfSize = 2.0;  // 4 m x 4 m patches
inline constexpr double kSceneHalfExtent = 10.0;  // 20 m cube

/// M_f random features and M_p random poses; every feature gets N fresh
/// points per pose. A fraction of the features can be edges (segments of
/// length 4 m) for exercising the edge cost.
inline Scene gen_random_planes_scene(int num_features, int num_poses, int points_per_feature,
                                     std::uint64_t seed, double edge_fraction = 0.0) {
  if (num_features < 1 || num_poses < 1 || points_per_feature < 1) {
    throw Error(ErrorCode::InvalidProblem, "gen_random_planes_scene: counts must be >= 1");
  }
  Rng rng(seed);
  Scene s;
  for (int j = 0; j < num_poses; ++j) {
    const Mat3 R = rng.rotation();
    const Vec3 t = rng.uniform_box(kSceneHalfExtent);
    s.gt_poses.push_back({R, t});
  }
  s.scans.resize(s.gt_poses.size());
  for (int i = 0; i < num_features; ++i) {
    FeatureDef def;
    def.kind = rng.uniform() < edge_fraction ? FeatureKind::Edge : FeatureKind::Plane;
    def.n = rng.unit_vector();
    def.q = rng.uniform_box(kSceneHalfExtent);
    const Vec3 e1 = def.n.unitOrthogonal();
    const Vec3 e2 = def.n.cross(e1);
    std::vector<Track> tracks;
    for (std::size_t j = 0; j < s.gt_poses.size(); ++j) {
      const Pose inv = s.gt_poses[j].inverse();
      Track tr{j, {}};
      for (int k = 0; k < points_per_feature; ++k) {
        Vec3 w;
        if (def.kind == FeatureKind::Plane) {
          const double a = rng.uniform(-kPatchHalfSize, kPatchHalfSize);
          const double b = rng.uniform(-kPatchHalfSize, kPatchHalfSize);
          w = def.q + a * e1 + b * e2;
        } else {
          w = def.q + rng.uniform(-kPatchHalfSize, kPatchHalfSize) * def.n;
        }
        tr.points.push_back(s.scans[j].size());
        s.scans[j].push_back(inv * w);
      }
      tracks.push_back(std::move(tr));
    }
    s.association.push_back(std::move(tracks));
    s.features.push_back(def);
  }
  return s;
}

struct RoomParams {
  Vec3 extents{30.0, 20.0, 8.0};
  int num_poses = 100;
  int channels = 16;
  int azimuth_steps = 1800;
  double elevation_min_deg = -15.0;
  double elevation_max_deg = 15.0;
  double sensor_height = 1.5;
  double wall_margin = 1.0;  // trajectory inset from the walls
};

enum RoomFace : int { kFaceXMin = 0, kFaceXMax, kFaceYMin, kFaceYMax, kFaceZMin, kFaceZMax };

/// Faces the room has: the +x face is open.
inline constexpr std::array<int, 5> kRoomFaces{kFaceXMin, kFaceYMin, kFaceYMax, kFaceZMin,
                                               kFaceZMax};

struct RayHit {
  Vec3 point;
  int face;
};

/// Casts a ray from an interior origin against the cuboid [0, extents].
/// Returns nothing when the ray leaves through the open +x face.
inline std::optional<RayHit> cast_ray(const Vec3& origin, const Vec3& dir, const Vec3& extents) {
  double best = std::numeric_limits<double>::infinity();
  int face = -1;
  for (int a = 0; a < 3; ++a) {
    if (dir[a] > 0.0) {
      const double t = (extents[a] - origin[a]) / dir[a];
      if (t < best) {
        best = t;
        face = 2 * a + 1;
      }
    } else if (dir[a] < 0.0) {
      const double t = -origin[a] / dir[a];
      if (t < best) {
        best = t;
        face = 2 * a;
      }
    }
  }
  if (face < 0 || face == kFaceXMax) return std::nullopt;
  Vec3 p = origin + best * dir;
  // Snap the hit coordinate onto the face exactly.
  const int axis = face / 2;
  p[axis] = (face % 2 == 0) ? 0.0 : extents[axis];
  return RayHit{p, face};
}

inline FeatureDef room_face_def(int face, const Vec3& extents) {
  const int axis = face / 2;
  FeatureDef d;
  d.kind = FeatureKind::Plane;
  d.n = Vec3::Unit(axis);
  d.q = 0.5 * extents;
  d.q[axis] = (face % 2 == 0) ? 0.0 : extents[axis];
  return d;
}

/// Poses equally spaced by arc length around the inset rectangle, heading
/// along the direction of travel.
inline std::vector<Pose> room_trajectory(const RoomParams& p) {
  const double m = p.wall_margin;
  const std::array<Vec3, 4> corners{Vec3(m, m, p.sensor_height),
                                    Vec3(p.extents.x() - m, m, p.sensor_height),
                                    Vec3(p.extents.x() - m, p.extents.y() - m, p.sensor_height),
                                    Vec3(m, p.extents.y() - m, p.sensor_height)};
  double perimeter = 0.0;
  for (int c = 0; c < 4; ++c) perimeter += (corners[(c + 1) % 4] - corners[c]).norm();
  std::vector<Pose> poses;
  for (int j = 0; j < p.num_poses; ++j) {
    double s = perimeter * j / p.num_poses;
    int c = 0;
    double len = (corners[1] - corners[0]).norm();
    while (s >= len && c < 3) {
      s -= len;
      ++c;
      len = (corners[(c + 1) % 4] - corners[c]).norm();
    }
    const Vec3 dir = (corners[(c + 1) % 4] - corners[c]) / len;
    const double yaw = std::atan2(dir.y(), dir.x());
    poses.push_back({so3_exp(Vec3(0.0, 0.0, yaw)), corners[c] + s * dir});
  }
  return poses;
}

/// Ray-cast room scene. Each scan starts its azimuth sweep at a random phase
/// within one azimuth step so scans do not sample identical directions.
inline Scene gen_room_scene(const RoomParams& p, std::uint64_t seed) {
  if (p.num_poses < 2 || (p.extents.array() <= 0.0).any() || p.channels < 1 ||
      p.azimuth_steps < 1) {
    throw Error(ErrorCode::InvalidProblem, "gen_room_scene: invalid parameters");
  }
  if (p.wall_margin <= 0.0 || 2.0 * p.wall_margin >= p.extents.x() ||
      2.0 * p.wall_margin >= p.extents.y() || p.sensor_height <= 0.0 ||
      p.sensor_height >= p.extents.z()) {
    throw Error(ErrorCode::InvalidProblem, "gen_room_scene: trajectory does not fit the room");
  }
  Rng rng(seed);
  Scene s;
  s.gt_poses = room_trajectory(p);
  s.scans.resize(s.gt_poses.size());
  s.association.resize(kRoomFaces.size());
  for (int f : kRoomFaces) s.features.push_back(room_face_def(f, p.extents));
  std::array<int, 6> feature_of_face{};
  for (std::size_t i = 0; i < kRoomFaces.size(); ++i) feature_of_face[kRoomFaces[i]] = static_cast<int>(i);

  const double deg = std::numbers::pi / 180.0;
  const double az_step = 2.0 * std::numbers::pi / p.azimuth_steps;
  std::vector<Vec3> beams;  // local directions
  for (std::size_t j = 0; j < s.gt_poses.size(); ++j) {
    const double phase = rng.uniform() * az_step;
    beams.clear();
    for (int a = 0; a < p.azimuth_steps; ++a) {
      const double az = phase + a * az_step;
      for (int c = 0; c < p.channels; ++c) {
        const double el = p.channels == 1
                              ? 0.0
                              : (p.elevation_min_deg + (p.elevation_max_deg - p.elevation_min_deg) *
                                                           c / (p.channels - 1)) * deg;
        beams.emplace_back(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az),
                           std::sin(el));
      }
    }
    const Pose& T = s.gt_poses[j];
    const Mat3 Rt = T.R.transpose();
    std::array<Track, 6> tracks;
    for (const Vec3& b : beams) {
      const auto hit = cast_ray(T.t, T.R * b, p.extents);
      if (!hit) {
        ++s.dropped_rays;
        continue;
      }
      tracks[hit->face].points.push_back(s.scans[j].size());
      s.scans[j].push_back(Rt * (hit->point - T.t));
    }
    for (int f : kRoomFaces) {
      if (tracks[f].points.empty()) continue;
      tracks[f].pose = j;
      s.association[feature_of_face[f]].push_back(std::move(tracks[f]));
    }
  }
  return s;
}

/// Adds i.i.d. N(0, sigma^2 I) to every local point.
inline Scene add_noise(Scene scene, double sigma_p, std::uint64_t seed) {
  if (sigma_p < 0.0) throw Error(ErrorCode::InvalidProblem, "add_noise: sigma_p must be >= 0");
  if (sigma_p == 0.0) return scene;
  Rng rng(seed);
  for (auto& scan : scene.scans) {
    for (auto& p : scan) p += rng.normal3(sigma_p);
  }
  return scene;
}

/// Boxplus of every pose (the first included) with independent per-axis
/// Gaussian rotation and translation perturbations.
inline std::vector<Pose> perturb_trajectory(std::span<const Pose> poses, double sigma_rot,
                                            double sigma_trans, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Pose> out;
  out.reserve(poses.size());
  for (const auto& T : poses) {
    const Vec3 dphi = rng.normal3(sigma_rot);
    const Vec3 dt = rng.normal3(sigma_trans);
    out.push_back(boxplus(T, {dphi, dt}));
  }
  return out;
}

/// The default initial perturbation: 2 degrees and 0.1 m per axis.
inline constexpr double kDefaultInitRot = 2.0 * std::numbers::pi / 180.0;
inline constexpr double kDefaultInitTrans = 0.1;

inline std::vector<Pose> perturb_default_init(std::span<const Pose> poses, std::uint64_t seed) {
  return perturb_trajectory(poses, kDefaultInitRot, kDefaultInitTrans, seed);
}

struct SceneProblem {
  BAProblem problem;
  std::vector<std::vector<ClusterNoise>> noises;  // [feature][observation]
};

/// Builds local clusters and their noise from the ground-truth association.
/// The noise is linearized at the (noisy) measured points.
inline SceneProblem scene_to_problem(const Scene& scene, double sigma_p) {
  SceneProblem out;
  out.problem.num_poses = scene.gt_poses.size();
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < scene.association.size(); ++i) {
    Feature f;
    f.kind = scene.features[i].kind;
    std::vector<ClusterNoise> noise;
    for (const auto& tr : scene.association[i]) {
      pts.clear();
      for (auto k : tr.points) pts.push_back(scene.scans[tr.pose][k]);
      const PointCluster c = cluster_from_points(pts);
      f.observations.push_back({tr.pose, c});
      noise.push_back(cluster_noise(c, sigma_p));
    }
    out.problem.features.push_back(std::move(f));
    out.noises.push_back(std::move(noise));
  }
  return out;
}

}  // namespace cluster_ba
