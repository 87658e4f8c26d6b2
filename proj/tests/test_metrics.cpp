#include "pose2mesh/metrics.hpp"

#include <gtest/gtest.h>

#include <Eigen/Geometry>

#include <random>

using namespace p2m;

namespace {

Eigen::MatrixXd random_points(std::mt19937_64& rng, Eigen::Index n, double spread = 300.0) {
  std::uniform_real_distribution<double> u(-spread, spread);
  Eigen::MatrixXd p(n, 3);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index d = 0; d < 3; ++d) p(i, d) = u(rng);
  return p;
}

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

double oracle_mean_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  double s = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double d2 = 0;
    for (Eigen::Index k = 0; k < 3; ++k) d2 += (a(i, k) - b(i, k)) * (a(i, k) - b(i, k));
    s += std::sqrt(d2);
  }
  return s / static_cast<double>(a.rows());
}

} // namespace

TEST(Mpjpe, Examples) {
  std::mt19937_64 rng(0);
  auto gt = random_points(rng, 12);
  Eigen::MatrixXd shifted = gt.rowwise() + Eigen::RowVector3d(10, -20, 5);
  EXPECT_NEAR(mpjpe(shifted, gt, 0), 0.0, 1e-12);
  Eigen::MatrixXd off = gt;
  off(4, 1) += 6.0;
  EXPECT_NEAR(mpjpe(off, gt, 0), 0.5, 1e-12);
  auto p = random_points(rng, 12);
  Eigen::MatrixXd a = p.rowwise() - p.row(3), b = gt.rowwise() - gt.row(3);
  EXPECT_NEAR(mpjpe(p, gt, 3), oracle_mean_distance(a, b), 1e-9);
  EXPECT_THROW(mpjpe(p, gt, 12), ValueError);
}

TEST(Mpjpe, JointMask) {
  std::mt19937_64 rng(1);
  auto gt = random_points(rng, 4);
  Eigen::MatrixXd p = gt;
  p(3, 0) += 8.0;
  EXPECT_NEAR(mpjpe(p, gt, 0, {true, true, true, false}), 0.0, 1e-12);
  EXPECT_NEAR(mpjpe(p, gt, 0, {false, false, false, true}), 8.0, 1e-12);
  EXPECT_THROW(mpjpe(p, gt, 0, {true, true}), ShapeError);
}

TEST(Procrustes, RecoversExactSimilarity) {
  std::mt19937_64 rng(2);
  auto P = random_points(rng, 10);
  const Eigen::Matrix3d R0 = random_rotation(rng);
  const Eigen::Vector3d t0(12, -40, 7);
  Eigen::MatrixXd gt = ((2.0 * R0 * P.transpose()).colwise() + t0).transpose();
  auto T = procrustes_align(P, gt);
  EXPECT_NEAR(T.scale, 2.0, 1e-9);
  EXPECT_LT((T.rotation - R0).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((T.translation - t0).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT(pa_mpjpe(P, gt, 0), 1e-9);

  auto I = procrustes_align(P, P);
  EXPECT_NEAR(I.scale, 1.0, 1e-12);
  EXPECT_LT((I.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(I.translation.cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Procrustes, NeverReturnsReflection) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    auto P = random_points(rng, 8);
    Eigen::MatrixXd mirrored = P;
    mirrored.col(0) *= -1.0;
    auto T = procrustes_align(P, mirrored);
    EXPECT_NEAR(T.rotation.determinant(), 1.0, 1e-9);
    EXPECT_LT((T.rotation.transpose() * T.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_GT(T.scale, 0.0);
  }
}

TEST(Procrustes, IdempotentAndDegenerate) {
  std::mt19937_64 rng(4);
  auto P = random_points(rng, 12), gt = random_points(rng, 12);
  auto aligned = procrustes_align(P, gt).apply(P);
  auto again = procrustes_align(aligned, gt);
  EXPECT_NEAR(again.scale, 1.0, 1e-7);
  EXPECT_LT((again.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-7);
  EXPECT_LT(again.translation.cwiseAbs().maxCoeff(), 1e-7);
  EXPECT_THROW(procrustes_align(Eigen::MatrixXd::Ones(5, 3), gt.topRows(5)), ValueError);
}

TEST(PaMpjpe, BoundedByMpjpeAndSimilarityInvariant) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 100; ++t) {
    auto P = random_points(rng, 12), gt = random_points(rng, 12);
    const double pa = pa_mpjpe(P, gt, 0);
    EXPECT_LE(pa, mpjpe(P, gt, 0) + 1e-9);
    // direct evaluation after the computed transform
    EXPECT_NEAR(pa, oracle_mean_distance(procrustes_align(P, gt).apply(P), gt), 1e-9);
    const Eigen::Matrix3d R = random_rotation(rng);
    Eigen::MatrixXd Q = ((0.7 * R * P.transpose()).colwise() + Eigen::Vector3d(3, 4, 5)).transpose();
    EXPECT_NEAR(pa_mpjpe(Q, gt, 0), pa, 1e-9);
  }
}

TEST(Mpvpe, Examples) {
  std::mt19937_64 rng(6);
  auto gt = random_points(rng, 20);
  Eigen::RowVectorXd root = Eigen::RowVectorXd::Zero(20);
  root(2) = root(5) = 0.5;
  EXPECT_EQ(mpvpe(gt, gt, root), 0.0);
  Eigen::MatrixXd shifted = gt.rowwise() + Eigen::RowVector3d(1, 2, 3);
  EXPECT_NEAR(mpvpe(shifted, gt, root), 0.0, 1e-12);
  auto m = random_points(rng, 20);
  Eigen::RowVector3d rm = 0.5 * (m.row(2) + m.row(5)), rg = 0.5 * (gt.row(2) + gt.row(5));
  Eigen::MatrixXd a = m.rowwise() - rm, b = gt.rowwise() - rg;
  EXPECT_NEAR(mpvpe(m, gt, root), oracle_mean_distance(a, b), 1e-9);
}

TEST(FScore, Examples) {
  std::mt19937_64 rng(7);
  auto gt = random_points(rng, 30);
  for (double tau : {0.1, 5.0, 15.0}) EXPECT_EQ(f_score(gt, gt, tau), 1.0);
  Eigen::MatrixXd far = gt.rowwise() + Eigen::RowVector3d(1000, 0, 0);
  EXPECT_EQ(f_score(far, gt, 5.0, false), 0.0);

  // GT: 4 points 100 mm apart; extra predictions sit 50 mm off the line
  Eigen::MatrixXd g(4, 3);
  g << 0, 0, 0, 100, 0, 0, 200, 0, 0, 300, 0, 0;
  Eigen::MatrixXd p6(6, 3);
  p6 << 0, 0, 0, 100, 0, 0, 200, 0, 0, 300, 0, 0, 200, 50, 0, 300, 50, 0;
  // 6 predictions: 4 within tau (precision 4/6), every GT has a close prediction (recall 1)
  const double f6 = f_score(p6, g, 5.0, false);
  EXPECT_NEAR(f6, 2.0 * (4.0 / 6.0) / (4.0 / 6.0 + 1.0), 1e-12);
  // half of the predictions displaced: P = 0.5, R = 1 -> 2/3
  Eigen::MatrixXd p8(8, 3);
  p8 << 0, 0, 0, 100, 0, 0, 200, 0, 0, 300, 0, 0, 0, 50, 0, 100, 50, 0, 200, 50, 0, 300, 50, 0;
  EXPECT_NEAR(f_score(p8, g, 5.0, false), 2.0 / 3.0, 1e-12);
  EXPECT_THROW(f_score(p8, g, 0.0), ValueError);
  EXPECT_THROW(f_score(Eigen::MatrixXd(0, 3), g, 1.0), ValueError);
}

TEST(FScore, MonotoneInTau) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 10; ++t) {
    auto gt = random_points(rng, 40);
    Eigen::MatrixXd p = gt + random_points(rng, 40, 20.0);
    double prev = 0.0;
    for (double tau = 1.0; tau <= 60.0; tau += 1.0) {
      const double f = f_score(p, gt, tau);
      EXPECT_GE(f, prev);
      prev = f;
    }
  }
}

TEST(Report, TextAndJson) {
  MetricsAccumulator acc(0, {5.0, 15.0});
  std::mt19937_64 rng(9);
  auto gt = random_points(rng, 12);
  acc.add_pose(gt, gt);
  Eigen::RowVectorXd root = Eigen::RowVectorXd::Zero(12);
  root(0) = 1.0;
  acc.add_mesh(gt, gt, root);
  auto r = acc.report();
  auto j = r.to_json();
  EXPECT_EQ(j["mpjpe_mm"].get<double>(), 0.0);
  EXPECT_TRUE(j.contains("pa_mpjpe_mm"));
  EXPECT_EQ(j["mpvpe_mm"].get<double>(), 0.0);
  EXPECT_EQ(j["f_at"]["5"].get<double>(), 1.0);
  EXPECT_EQ(j["f_at"]["15"].get<double>(), 1.0);
  const auto text = r.to_text();
  EXPECT_NE(text.find("mpjpe_mm: 0\n"), std::string::npos);
  EXPECT_NE(text.find("f_at_15mm: 1\n"), std::string::npos);
}
