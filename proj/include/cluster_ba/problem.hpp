#pragma once

// Bundle adjustment over point clusters: features with per-pose local
// clusters, and the eigenvalue cost that eliminates the feature parameters.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cluster_ba/error.hpp"
#include "cluster_ba/geometry.hpp"
#include "cluster_ba/point_cluster.hpp"

namespace cluster_ba {

enum class FeatureKind { Plane, Edge };

inline const char* to_string(FeatureKind kind) {
  return kind == FeatureKind::Plane ? "plane" : "edge";
}

/// Points of one feature seen from one pose, in that scan's local frame.
struct Observation {
  std::size_t pose = 0;  // 0-based pose index
  PointCluster cluster;
};

/// A plane or edge. Observations are sorted by pose and only exist for poses
/// that actually saw the feature.
struct Feature {
  FeatureKind kind = FeatureKind::Plane;
  std::vector<Observation> observations;

  std::int64_t total_points() const {
    std::int64_t n = 0;
    for (const auto& o : observations) n += o.cluster.N;
    return n;
  }
  std::int64_t min_points() const { return kind == FeatureKind::Plane ? 3 : 2; }
};

struct BAProblem {
  std::vector<Feature> features;
  std::size_t num_poses = 0;

  /// Throws ErrorCode::InvalidProblem on out-of-range or unsorted pose
  /// indices and on empty observations.
  void validate() const {
    for (std::size_t i = 0; i < features.size(); ++i) {
      const auto& obs = features[i].observations;
      for (std::size_t k = 0; k < obs.size(); ++k) {
        if (obs[k].pose >= num_poses) {
          throw Error(ErrorCode::InvalidProblem,
                      "feature " + std::to_string(i) + ": pose index " +
                          std::to_string(obs[k].pose) + " out of range");
        }
        if (k > 0 && obs[k].pose <= obs[k - 1].pose) {
          throw Error(ErrorCode::InvalidProblem,
                      "feature " + std::to_string(i) +
                          ": observations not strictly sorted by pose");
        }
        if (obs[k].cluster.N < 1) {
          throw Error(ErrorCode::InvalidProblem,
                      "feature " + std::to_string(i) + ": empty observation");
        }
      }
    }
  }
};

/// sum_j T_j C_j T_j^T over the observing poses.
inline PointCluster aggregate_world_cluster(const Feature& feature,
                                            std::span<const Pose> poses) {
  PointCluster world;
  for (const auto& obs : feature.observations) {
    world += transform(poses[obs.pose], obs.cluster);
  }
  return world;
}

inline void check_feature_points(const Feature& feature) {
  if (feature.total_points() < feature.min_points()) {
    throw Error(ErrorCode::DegenerateFeature,
                std::string("degenerate feature: ") + to_string(feature.kind) +
                    " with " + std::to_string(feature.total_points()) +
                    " points");
  }
}

/// Cost of the feature at its optimal parameters from the scatter spectrum.
inline double feature_cost_from_spectrum(FeatureKind kind, const Vec3& lambda) {
  return kind == FeatureKind::Plane ? lambda[2] : lambda[1] + lambda[2];
}

/// Mean squared point-to-plane (lambda_3) or point-to-line
/// (lambda_2 + lambda_3) distance at the optimal feature parameters.
inline double feature_cost(const Feature& feature, std::span<const Pose> poses) {
  check_feature_points(feature);
  const PointCluster world = aggregate_world_cluster(feature, poses);
  return feature_cost_from_spectrum(feature.kind, sym_eig3(scatter(world)).lambda);
}

inline double total_cost(const BAProblem& problem, std::span<const Pose> poses) {
  double cost = 0.0;
  for (std::size_t i = 0; i < problem.features.size(); ++i) {
    try {
      cost += feature_cost(problem.features[i], poses);
    } catch (const Error& e) {
      throw Error(e.code(), "feature " + std::to_string(i) + ": " + e.what());
    }
  }
  return cost;
}

}  // namespace cluster_ba
