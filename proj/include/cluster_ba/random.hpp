#pragma once

// Seeded, platform-stable random numbers. std::mt19937_64 output is fixed by
// the standard; the distributions below are spelled out so that a seed
// reproduces the same draws with any standard library.

#include <cmath>
#include <cstdint>
#include <random>

#include "cluster_ba/geometry.hpp"

namespace cluster_ba {

class Rng {
 public:
  static constexpr const char* kName = "mt19937_64/polar-normal/v1";

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal, Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double x, y, s;
    do {
      x = uniform(-1.0, 1.0);
      y = uniform(-1.0, 1.0);
      s = x * x + y * y;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = y * f;
    has_spare_ = true;
    return x * f;
  }

  Vec3 normal3(double sigma = 1.0) {
    const double x = normal();
    const double y = normal();
    const double z = normal();
    return sigma * Vec3(x, y, z);
  }

  Vec3 uniform_box(double half) {
    const double x = uniform(-half, half);
    const double y = uniform(-half, half);
    const double z = uniform(-half, half);
    return {x, y, z};
  }

  Vec3 unit_vector() {
    Vec3 d;
    do {
      d = normal3();
    } while (d.squaredNorm() < 1e-12);
    return d.normalized();
  }

  /// Haar-uniform rotation from a normalized Gaussian quaternion.
  Mat3 rotation() {
    double q[4];
    double n2 = 0.0;
    do {
      n2 = 0.0;
      for (double& c : q) {
        c = normal();
        n2 += c * c;
      }
    } while (n2 < 1e-12);
    const Eigen::Quaterniond quat(q[0], q[1], q[2], q[3]);
    return quat.normalized().toRotationMatrix();
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cluster_ba
