#include <gtest/gtest.h>

#include <vector>

#include <Eigen/Eigenvalues>

#include "cluster_ba/point_cluster.hpp"
#include "cluster_ba/random.hpp"

using namespace cluster_ba;

namespace {

double rel_diff(const PointCluster& a, const PointCluster& b) {
  const double scale = std::max(1.0, b.matrix().norm());
  return (a.matrix() - b.matrix()).norm() / scale;
}

std::vector<Vec3> random_points(Rng& rng, int n, double half) {
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i) pts.push_back(rng.uniform_box(half));
  return pts;
}

}  // namespace

TEST(ClusterFromPoints, EmptyAndSinglePoint) {
  const auto empty = cluster_from_points({});
  EXPECT_TRUE(empty.P.isZero());
  EXPECT_TRUE(empty.v.isZero());
  EXPECT_EQ(empty.N, 0);

  const std::vector<Vec3> one{Vec3(1, 2, 3)};
  const auto c = cluster_from_points(one);
  Mat3 expected;
  expected << 1, 2, 3, 2, 4, 6, 3, 6, 9;
  EXPECT_EQ(c.P, expected);
  EXPECT_EQ(c.v, Vec3(1, 2, 3));
  EXPECT_EQ(c.N, 1);
}

TEST(ClusterFromPoints, MatchesExtendedPrecisionSum) {
  Rng rng(1);
  const auto pts = random_points(rng, 1000, 20.0);
  long double P[3][3] = {}, v[3] = {};
  for (const auto& p : pts) {
    for (int a = 0; a < 3; ++a) {
      v[a] += p[a];
      for (int b = 0; b < 3; ++b) P[a][b] += static_cast<long double>(p[a]) * p[b];
    }
  }
  const auto c = cluster_from_points(pts);
  for (int a = 0; a < 3; ++a) {
    EXPECT_NEAR(c.v[a], static_cast<double>(v[a]), 1e-10 * std::abs(static_cast<double>(v[a])) + 1e-12);
    for (int b = 0; b < 3; ++b) {
      EXPECT_NEAR(c.P(a, b), static_cast<double>(P[a][b]),
                  1e-10 * std::abs(static_cast<double>(P[a][b])));
    }
  }
}

TEST(Transform, IdentityCompositionAndPointOracle) {
  Rng rng(2);
  const auto pts = random_points(rng, 200, 5.0);
  const auto C = cluster_from_points(pts);
  EXPECT_EQ(transform(Pose::identity(), C), C);

  for (int i = 0; i < 50; ++i) {
    const Pose T{rng.rotation(), rng.uniform_box(10.0)};
    std::vector<Vec3> moved;
    for (const auto& p : pts) moved.push_back(T * p);
    EXPECT_LT(rel_diff(transform(T, C), cluster_from_points(moved)), 1e-9);
    EXPECT_EQ(transform(T, C).N, C.N);

    const Pose T2{rng.rotation(), rng.uniform_box(10.0)};
    EXPECT_LT(rel_diff(transform(T2, transform(T, C)), transform(T2 * T, C)), 1e-9);
  }
}

TEST(Transform, MatchesFourByFourCongruence) {
  Rng rng(3);
  const auto C = cluster_from_points(random_points(rng, 30, 3.0));
  const Pose T{rng.rotation(), rng.uniform_box(4.0)};
  const Mat4 expected = T.matrix() * C.matrix() * T.matrix().transpose();
  EXPECT_LT((transform(T, C).matrix() - expected).norm(), 1e-10 * expected.norm());
}

TEST(Merge, IdentityCommutativityAndPartition) {
  Rng rng(4);
  const auto pts = random_points(rng, 300, 8.0);
  const auto whole = cluster_from_points(pts);
  EXPECT_EQ(merge(whole, PointCluster{}), whole);

  const std::vector<Vec3> a(pts.begin(), pts.begin() + 120);
  const std::vector<Vec3> b(pts.begin() + 120, pts.begin() + 250);
  const std::vector<Vec3> c(pts.begin() + 250, pts.end());
  const auto ca = cluster_from_points(a), cb = cluster_from_points(b),
             cc = cluster_from_points(c);
  EXPECT_EQ(merge(ca, cb), merge(cb, ca));
  const auto merged = merge(merge(ca, cb), cc);
  EXPECT_LT(rel_diff(merged, whole), 1e-10);
  EXPECT_LT(rel_diff(merge(ca, merge(cb, cc)), merged), 1e-12);
  EXPECT_EQ(merged.N, whole.N);
  EXPECT_LT((scatter(merged) - scatter(whole)).norm(), 1e-10 * scatter(whole).norm());
}

TEST(Scatter, KnownValuesAndErrors) {
  const std::vector<Vec3> one{Vec3(4, 5, 6)};
  EXPECT_TRUE(scatter(cluster_from_points(one)).isZero(1e-12));

  const std::vector<Vec3> two{Vec3(-1, 0, 0), Vec3(1, 0, 0)};
  EXPECT_TRUE(scatter(cluster_from_points(two)).isApprox(Vec3(1, 0, 0).asDiagonal().toDenseMatrix()));

  try {
    scatter(PointCluster{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyCluster);
  }
}

TEST(Scatter, TranslationInvarianceOnPlane) {
  Rng rng(5);
  std::vector<Vec3> pts;
  for (int i = 0; i < 500; ++i) pts.push_back(Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), 0.0));
  const auto C = cluster_from_points(pts);
  const Pose shift{Mat3::Identity(), Vec3(3, -7, 11)};
  EXPECT_LT((scatter(transform(shift, C)) - scatter(C)).norm(), 1e-10 * scatter(C).norm());
}

TEST(Scatter, PlanarAndLinearSpectra) {
  Rng rng(6);
  const Mat3 R = rng.rotation();
  std::vector<Vec3> plane, line;
  for (int i = 0; i < 400; ++i) {
    plane.push_back(R * Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), 0.0));
    line.push_back(R * Vec3(rng.uniform(-2, 2), 0.0, 0.0));
  }
  const auto lp = sym_eig3(scatter(cluster_from_points(plane))).lambda;
  EXPECT_LE(std::abs(lp[2]), 1e-12 * lp[0]);
  const auto ll = sym_eig3(scatter(cluster_from_points(line))).lambda;
  EXPECT_LE(std::abs(ll[1]), 1e-12 * ll[0]);
}

TEST(Scatter, GaugeInvariantSpectrum) {
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    const auto C = cluster_from_points(random_points(rng, 20, 3.0));
    const Pose T{rng.rotation(), rng.uniform_box(10.0)};
    const Vec3 l0 = sym_eig3(scatter(C)).lambda;
    const Vec3 l1 = sym_eig3(scatter(transform(T, C))).lambda;
    EXPECT_LT((l0 - l1).cwiseAbs().maxCoeff(), 1e-9 * l0.cwiseAbs().maxCoeff());
  }
}

TEST(Scatter, PositiveSemidefinite) {
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    const auto C = cluster_from_points(random_points(rng, 3 + i % 20, 10.0));
    const auto lam = sym_eig3(scatter(C)).lambda;
    EXPECT_GE(lam[2], -1e-9 * C.P.trace());
  }
}

TEST(ClusterNoise, ZeroSigmaAndOrigin) {
  Rng rng(9);
  const auto pts = random_points(rng, 10, 2.0);
  EXPECT_TRUE(cluster_noise_from_points(pts, 0.0).Sigma.isZero());

  const std::vector<Vec3> origin{Vec3::Zero()};
  const auto n = cluster_noise_from_points(origin, 0.3);
  EXPECT_TRUE((n.Sigma.topLeftCorner<6, 6>().isZero()));
  EXPECT_TRUE((n.Sigma.bottomRightCorner<3, 3>().isApprox(0.09 * Mat3::Identity())));
}

TEST(ClusterNoise, MatchesPerPointLinearization) {
  Rng rng(10);
  const auto pts = random_points(rng, 40, 5.0);
  Mat9 expected = Mat9::Zero();
  for (const auto& p : pts) {
    const auto B = cluster_point_jacobian(p);
    expected += 0.04 * B * B.transpose();
  }
  const auto n = cluster_noise_from_points(pts, 0.2);
  EXPECT_LT((n.Sigma - expected).norm(), 1e-12 * expected.norm());
  EXPECT_LT((n.Sigma - n.Sigma.transpose()).norm(), 1e-12 * expected.norm());
  Eigen::SelfAdjointEigenSolver<Mat9> es(n.Sigma);
  EXPECT_GE(es.eigenvalues().minCoeff(), -1e-9 * expected.norm());
}

TEST(ClusterNoise, MatchesMonteCarloCovariance) {
  Rng rng(11);
  const auto pts = random_points(rng, 50, 3.0);
  const double sigma = 0.05;
  const auto base = cluster_from_points(pts);
  auto vec9 = [](const PointCluster& c) {
    Vec9 x;
    for (int a = 0; a < 3; ++a)
      for (int b = a; b < 3; ++b) x[vech_index(a, b)] = c.P(a, b);
    x.tail<3>() = c.v;
    return x;
  };
  const Vec9 x0 = vec9(base);
  const int draws = 100000;
  Vec9 mean = Vec9::Zero();
  Mat9 second = Mat9::Zero();
  std::vector<Vec3> noisy(pts.size());
  for (int d = 0; d < draws; ++d) {
    for (std::size_t k = 0; k < pts.size(); ++k) noisy[k] = pts[k] + rng.normal3(sigma);
    const Vec9 dx = vec9(cluster_from_points(noisy)) - x0;
    mean += dx;
    second += dx * dx.transpose();
  }
  mean /= draws;
  const Mat9 cov = second / draws - mean * mean.transpose();
  const auto lin = cluster_noise_from_points(pts, sigma).Sigma;
  EXPECT_LT((cov - lin).norm() / lin.norm(), 0.03);
}
