#include <gtest/gtest.h>

#include <algorithm>
#include <numbers>

#include "cluster_ba/geometry.hpp"
#include "cluster_ba/random.hpp"

using namespace cluster_ba;

namespace {

// Truncated matrix-exponential series.
Mat3 exp_series(const Vec3& phi, int terms) {
  const Mat3 K = skew(phi);
  Mat3 sum = Mat3::Identity();
  Mat3 term = Mat3::Identity();
  for (int k = 1; k < terms; ++k) {
    term = term * K / static_cast<double>(k);
    sum += term;
  }
  return sum;
}

}  // namespace

TEST(Skew, CrossProductAndAntisymmetry) {
  EXPECT_TRUE(skew(Vec3::Zero()).isZero());
  EXPECT_TRUE((skew(Vec3::UnitX()) * Vec3::UnitY()).isApprox(Vec3::UnitZ()));
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const Vec3 v = rng.normal3(), w = rng.normal3();
    EXPECT_TRUE((skew(v).transpose() + skew(v)).isZero(0.0));
    EXPECT_LT((skew(v) * w - v.cross(w)).norm(), 1e-14);
  }
}

TEST(So3Exp, KnownValues) {
  EXPECT_EQ(so3_exp(Vec3::Zero()), Mat3::Identity());
  const Mat3 Rx = so3_exp(Vec3(std::numbers::pi / 2, 0, 0));
  EXPECT_LT((Rx * Vec3::UnitY() - Vec3::UnitZ()).norm(), 1e-15);
  const Vec3 phi(0.3, -0.2, 0.1);
  EXPECT_LT((so3_exp(phi) - exp_series(phi, 20)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(So3Exp, SmallAngleSeriesMatchesTaylor) {
  const Vec3 phi(3e-8, -1e-8, 2e-8);
  EXPECT_LT((so3_exp(phi) - exp_series(phi, 6)).cwiseAbs().maxCoeff(), 1e-20);
}

TEST(So3Log, KnownValues) {
  EXPECT_EQ(so3_log(Mat3::Identity()), Vec3::Zero());
  const Vec3 phi(0.1, 0.2, 0.3);
  EXPECT_LT((so3_log(so3_exp(phi)) - phi).norm(), 1e-10);
  const Vec3 tiny = so3_log(so3_exp(Vec3(0, 0, 1e-9)));
  EXPECT_LT((tiny - Vec3(0, 0, 1e-9)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(So3Log, NearPiThrows) {
  const Mat3 R = so3_exp(Vec3(std::numbers::pi, 0, 0));
  try {
    so3_log(R);
    FAIL() << "expected NearPi";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NearPi);
  }
}

TEST(So3Log, RoundTripRandomAxes) {
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    const double angle = rng.uniform(0.0, std::numbers::pi - 1e-3);
    const Vec3 phi = angle * rng.unit_vector();
    const Mat3 R = so3_exp(phi);
    EXPECT_LT((so3_exp(so3_log(R)) - R).cwiseAbs().maxCoeff(), 1e-9) << i;
    EXPECT_LT((so3_log(R) - phi).norm(), 1e-9) << i;
  }
}

TEST(Boxplus, ZeroAndRotatedTranslation) {
  Rng rng(3);
  const Pose T{rng.rotation(), rng.normal3()};
  EXPECT_EQ(boxplus(T, {}), T);

  const Pose moved = boxplus({Mat3::Identity(), Vec3(1, 0, 0)},
                             {Vec3(0, 0, std::numbers::pi / 2), Vec3::Zero()});
  const Mat3 Rz = Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitZ()).toRotationMatrix();
  EXPECT_LT((moved.R - Rz).norm(), 1e-15);
  EXPECT_LT((moved.t - Vec3(0, 1, 0)).norm(), 1e-15);
}

TEST(Boxplus, FirstOrderInverseAndExpansion) {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const Pose T{rng.rotation(), rng.uniform_box(10.0)};
    const Perturbation6 d{rng.normal3(3e-4), rng.normal3(3e-4)};
    const double n2 = d.to_vector().squaredNorm();
    const Pose back = boxplus(boxplus(T, d), -d);
    EXPECT_LT((back.R - T.R).norm() + (back.t - T.t).norm(),
              10.0 * n2 * (1.0 + T.t.norm()));
    // First-order term: R + [dphi] R, t + dt + [dphi] t.
    const Pose lin = boxplus(T, d);
    const Mat3 R1 = T.R + skew(d.dphi) * T.R;
    const Vec3 t1 = T.t + d.dt + d.dphi.cross(T.t);
    EXPECT_LT((lin.R - R1).cwiseAbs().maxCoeff(), 10.0 * n2);
    EXPECT_LT((lin.t - t1).cwiseAbs().maxCoeff(), 10.0 * n2 * (1.0 + T.t.norm()));
  }
}

TEST(Boxplus, StaysOrthonormalOverManyUpdates) {
  Rng rng(5);
  Pose T{rng.rotation(), Vec3::Zero()};
  for (int i = 0; i < 10000; ++i) {
    T = boxplus(T, {rng.normal3(0.05), rng.normal3(0.05)});
  }
  EXPECT_LT((T.R * T.R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_NEAR(T.R.determinant(), 1.0, 1e-9);
}

TEST(SymEig3, DiagonalAndRankOne) {
  const auto d = sym_eig3(Vec3(1, 3, 2).asDiagonal().toDenseMatrix());
  EXPECT_EQ(d.lambda, Vec3(3, 2, 1));
  EXPECT_LT((d.U.col(0) - Vec3::UnitY()).norm(), 1e-15);
  EXPECT_LT((d.U.col(1) - Vec3::UnitZ()).norm(), 1e-15);
  EXPECT_LT((d.U.col(2) - Vec3::UnitX()).norm(), 1e-15);

  const Vec3 q = Vec3(-1, 2, -3).normalized();
  const auto r = sym_eig3(q * q.transpose());
  EXPECT_NEAR(r.lambda[0], 1.0, 1e-15);
  EXPECT_NEAR(r.lambda[1], 0.0, 1e-15);
  EXPECT_NEAR(r.lambda[2], 0.0, 1e-15);
  // sign rule: largest-magnitude component positive
  EXPECT_LT((r.U.col(0) + q).norm(), 1e-14);
}

TEST(SymEig3, RandomReconstructionAndResidual) {
  Rng rng(11);
  for (int i = 0; i < 5000; ++i) {
    Mat3 M;
    for (int k = 0; k < 9; ++k) M.data()[k] = rng.normal();
    // Mix of well-conditioned, nearly planar and nearly degenerate spectra.
    const Mat3 Q = rng.rotation();
    Vec3 ev(rng.normal(), rng.normal(), rng.normal());
    if (i % 3 == 1) ev[2] = 1e-9 * ev[0];
    if (i % 3 == 2) ev[1] = ev[0] * (1.0 + 1e-12);
    const Mat3 A = (i % 2 == 0) ? Mat3(0.5 * (M + M.transpose()))
                                : Mat3(Q * ev.asDiagonal() * Q.transpose());
    const auto d = sym_eig3(A);
    const double scale = std::max(1.0, std::abs(d.lambda[0]));
    EXPECT_GE(d.lambda[0], d.lambda[1]);
    EXPECT_GE(d.lambda[1], d.lambda[2]);
    EXPECT_LT((d.U * d.lambda.asDiagonal() * d.U.transpose() - A).cwiseAbs().maxCoeff(),
              1e-10 * scale);
    for (int l = 0; l < 3; ++l) {
      const Vec3 u = d.U.col(l);
      EXPECT_LT((A * u - d.lambda[l] * u).norm(),
                1e-10 * std::max(1.0, d.lambda.cwiseAbs().maxCoeff()));
      EXPECT_NEAR(u.norm(), 1.0, 1e-12);
      int imax = 0;
      for (int c = 1; c < 3; ++c) {
        if (std::abs(u[c]) > std::abs(u[imax])) imax = c;
      }
      EXPECT_GT(u[imax], 0.0);
    }
    EXPECT_LT(std::abs(d.U.col(0).dot(d.U.col(1))), 1e-9);
    EXPECT_LT(std::abs(d.U.col(0).dot(d.U.col(2))), 1e-9);
    EXPECT_LT(std::abs(d.U.col(1).dot(d.U.col(2))), 1e-9);
  }
}

TEST(SymEig3, PermutationInvariantEigenvalues) {
  Rng rng(12);
  for (int i = 0; i < 500; ++i) {
    Mat3 M;
    for (int k = 0; k < 9; ++k) M.data()[k] = rng.normal();
    const Mat3 A = 0.5 * (M + M.transpose());
    Eigen::PermutationMatrix<3> P;
    P.indices() << 2, 0, 1;
    const Mat3 B = P * A * P.transpose();
    EXPECT_LT((sym_eig3(A).lambda - sym_eig3(B).lambda).cwiseAbs().maxCoeff(),
              1e-12 * std::max(1.0, A.norm()));
  }
}

TEST(SymEig3, ZeroAndScalarMatrices) {
  const auto z = sym_eig3(Mat3::Zero());
  EXPECT_TRUE(z.lambda.isZero());
  const auto s = sym_eig3(2.5 * Mat3::Identity());
  EXPECT_EQ(s.lambda, Vec3::Constant(2.5));
  EXPECT_LT((s.U.transpose() * s.U - Mat3::Identity()).norm(), 1e-15);
}
