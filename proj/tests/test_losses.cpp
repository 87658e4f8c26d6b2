#include "pose2mesh/generator.hpp"
#include "pose2mesh/gradcheck.hpp"
#include "pose2mesh/losses.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <Eigen/Geometry>

using namespace p2m;
using p2m::testing::random_tensor;

namespace {

Tensor<double> from_matrix(const Eigen::MatrixXd& m) {
  Tensor<double> t(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = m(i, j);
  return t;
}

Eigen::Vector3d row(const Tensor<double>& t, std::size_t i) { return {t.at(i, 0), t.at(i, 1), t.at(i, 2)}; }

/// Moves every coordinate difference at least 1e-3 away from the L1 kink.
void nudge_from_kinks(Tensor<double>& pred, const Tensor<double>& gt) {
  for (std::size_t i = 0; i < pred.numel(); ++i)
    if (std::abs(pred[i] - gt[i]) < 1e-6) pred[i] += 1e-3;
}

const std::vector<Face> kTetra{{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}};

double scalar_edge_oracle(const Tensor<double>& m, const Tensor<double>& g, const std::vector<Face>& faces) {
  double s = 0;
  for (const auto& f : faces)
    for (int k = 0; k < 3; ++k) {
      const auto i = f[k], j = f[(k + 1) % 3];
      s += std::abs((row(m, i) - row(m, j)).norm() - (row(g, i) - row(g, j)).norm());
    }
  return s;
}

double scalar_normal_oracle(const Tensor<double>& m, const Tensor<double>& g, const std::vector<Face>& faces) {
  double s = 0;
  for (const auto& f : faces) {
    const Eigen::Vector3d n = (row(g, f[1]) - row(g, f[0])).cross(row(g, f[2]) - row(g, f[0])).normalized();
    for (int k = 0; k < 3; ++k) {
      const Eigen::Vector3d e = row(m, f[k]) - row(m, f[(k + 1) % 3]);
      s += std::abs(e.normalized().dot(n));
    }
  }
  return s;
}

} // namespace

TEST(PoseLoss, Examples) {
  std::mt19937_64 rng(0);
  auto p = random_tensor({12, 3}, rng, -300, 300);
  EXPECT_EQ(pose_loss(p, p).item(), 0.0);
  auto q = p.clone();
  q.at(3, 1) += 2.0;
  EXPECT_NEAR(pose_loss(q, p).item(), 2.0, 1e-12);
  auto r = random_tensor({12, 3}, rng, -300, 300);
  double oracle = 0;
  for (std::size_t i = 0; i < r.numel(); ++i) oracle += std::abs(r[i] - p[i]);
  EXPECT_NEAR(pose_loss(r, p).item(), oracle, 1e-9);
  EXPECT_THROW(pose_loss(r, Tensor<double>(Shape{11, 3})), ShapeError);
}

TEST(PoseLoss, BatchIsMeanOfPerSampleSums) {
  std::mt19937_64 rng(1);
  auto a = random_tensor({4, 5, 3}, rng), b = random_tensor({4, 5, 3}, rng);
  double oracle = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) oracle += std::abs(a[i] - b[i]);
  EXPECT_NEAR(pose_loss(a, b).item(), oracle / 4.0, 1e-12);
}

TEST(VertexLoss, Examples) {
  std::mt19937_64 rng(2);
  auto m = random_tensor({20, 3}, rng);
  EXPECT_EQ(vertex_loss(m, m).item(), 0.0);
  auto o = m.clone();
  for (std::size_t d = 0; d < 3; ++d) o.at(7, d) += 1.0;
  EXPECT_NEAR(vertex_loss(o, m).item(), 3.0, 1e-12);
}

TEST(JointLoss, Examples) {
  std::mt19937_64 rng(3);
  auto body = build_tube_man(TemplateSpec{});
  const auto reg = from_matrix(body.mesh.joint_regressor);
  auto m_gt = from_matrix(body.mesh.vertices);
  auto p_gt = left_matmul(reg, m_gt);
  EXPECT_NEAR(joint_loss(m_gt, reg, p_gt).item(), 0.0, 1e-12);

  // one-hot regressor reduces to L1 on the selected vertices
  Tensor<double> onehot(Shape{3, 6});
  onehot.at(0, 4) = onehot.at(1, 0) = onehot.at(2, 2) = 1.0;
  auto m = random_tensor({6, 3}, rng), p = random_tensor({3, 3}, rng);
  double oracle = 0;
  const std::size_t sel[3] = {4, 0, 2};
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t d = 0; d < 3; ++d) oracle += std::abs(m.at(sel[j], d) - p.at(j, d));
  EXPECT_NEAR(joint_loss(m, onehot, p).item(), oracle, 1e-12);

  // dense regressor vs Eigen mat-vec
  auto mr = random_tensor({static_cast<std::size_t>(body.mesh.vertices.rows()), 3}, rng, -100, 100);
  auto pr = random_tensor({12, 3}, rng, -100, 100);
  Eigen::MatrixXd M(mr.size(0), 3), P(12, 3);
  for (std::size_t i = 0; i < mr.size(0); ++i)
    for (std::size_t d = 0; d < 3; ++d) M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = mr.at(i, d);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t d = 0; d < 3; ++d) P(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = pr.at(i, d);
  EXPECT_NEAR(joint_loss(mr, reg, pr).item(), (body.mesh.joint_regressor * M - P).cwiseAbs().sum(), 1e-8);
  EXPECT_THROW(joint_loss(random_tensor({5, 3}, rng), reg, pr), ShapeError);
}

TEST(NormalLoss, Examples) {
  // flat 2x2 quad grid in the z = 0 plane
  std::vector<Face> faces{{0, 1, 4}, {0, 4, 3}, {1, 2, 5}, {1, 5, 4}};
  Tensor<double> gt(Shape{6, 3});
  for (std::size_t i = 0; i < 6; ++i) {
    gt.at(i, 0) = static_cast<double>(i % 3);
    gt.at(i, 1) = static_cast<double>(i / 3);
  }
  EXPECT_LT(normal_loss(gt, faces, gt).item(), 1e-9);
  auto lifted = gt.clone();
  for (std::size_t i = 0; i < 6; ++i) lifted.at(i, 2) += 5.0;
  EXPECT_LT(normal_loss(lifted, faces, gt).item(), 1e-9);

  // single triangle, one vertex pushed out of plane
  std::vector<Face> tri{{0, 1, 2}};
  auto t_gt = Tensor<double>::of({3, 3}, {0, 0, 0, 1, 0, 0, 0, 1, 0});
  auto t = t_gt.clone();
  t.at(2, 2) = 0.5;
  // edges (0,1) in plane; (1,2) = (1,-1,-0.5); (2,0) = (0,-1,-0.5); normal +z
  const double expect = 0.5 / std::sqrt(2.25) + 0.5 / std::sqrt(1.25);
  EXPECT_NEAR(normal_loss(t, tri, t_gt).item(), expect, 1e-12);
  EXPECT_NEAR(normal_loss(t, tri, t_gt).item(), scalar_normal_oracle(t, t_gt, tri), 1e-12);

  std::vector<Face> bad{{0, 1, 9}};
  EXPECT_THROW(normal_loss(t, bad, t_gt), ValueError);
}

TEST(NormalLoss, GuardsDegenerateInputs) {
  std::vector<Face> tri{{0, 1, 2}};
  // collinear ground truth: face skipped
  auto gt = Tensor<double>::of({3, 3}, {0, 0, 0, 1, 0, 0, 2, 0, 0});
  std::mt19937_64 rng(4);
  auto m = random_tensor({3, 3}, rng);
  EXPECT_EQ(normal_loss(m, tri, gt).item(), 0.0);
  // collapsed prediction: all edges shorter than the guard, gradient finite
  auto good_gt = Tensor<double>::of({3, 3}, {0, 0, 0, 1, 0, 0, 0, 1, 0});
  Tensor<double> zero(Shape{3, 3}, 0.0, true);
  auto l = normal_loss(zero, tri, good_gt);
  EXPECT_EQ(l.item(), 0.0);
  backward(l);
  for (double g : zero.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(EdgeLoss, Examples) {
  std::vector<Face> tri{{0, 1, 2}};
  const double h = std::sqrt(3.0) / 2.0;
  auto t = Tensor<double>::of({3, 3}, {0, 0, 0, 1, 0, 0, 0.5, h, 0});
  EXPECT_EQ(edge_loss(t, tri, t).item(), 0.0);
  EXPECT_NEAR(edge_loss(scale(t, 2.0), tri, t).item(), 3.0, 1e-12);
  std::mt19937_64 rng(5);
  auto a = random_tensor({4, 3}, rng), b = random_tensor({4, 3}, rng);
  EXPECT_NEAR(edge_loss(a, kTetra, b).item(), scalar_edge_oracle(a, b, kTetra), 1e-12);
}

TEST(Losses, RigidInvariance) {
  std::mt19937_64 rng(6);
  auto body = build_tube_man(TemplateSpec{});
  const auto& faces = body.mesh.faces;
  auto gt = from_matrix(body.mesh.vertices);
  auto m = gt.clone();
  std::normal_distribution<double> noise(0.0, 5.0);
  for (auto& v : m.values()) v += noise(rng);
  const Eigen::Matrix3d R =
      (Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, 2, 3).normalized())).toRotationMatrix();
  const Eigen::Vector3d t(30, -12, 55);
  auto moved = m.clone(), shifted = m.clone();
  for (std::size_t i = 0; i < m.size(0); ++i) {
    const Eigen::Vector3d p = R * row(m, i) + t;
    for (std::size_t d = 0; d < 3; ++d) {
      moved.at(i, d) = p(static_cast<Eigen::Index>(d));
      shifted.at(i, d) += t(static_cast<Eigen::Index>(d));
    }
  }
  EXPECT_LT(std::abs(edge_loss(moved, faces, gt).item() - edge_loss(m, faces, gt).item()), 1e-9);
  EXPECT_LT(std::abs(normal_loss(shifted, faces, gt).item() - normal_loss(m, faces, gt).item()), 1e-9);
}

TEST(Losses, ZeroAtGroundTruth) {
  auto body = build_tube_man(TemplateSpec{});
  auto gt = from_matrix(body.mesh.vertices);
  auto reg = from_matrix(body.mesh.joint_regressor);
  auto parts = mesh_loss_parts(gt, gt, body.mesh.faces, reg, left_matmul(reg, gt));
  EXPECT_EQ(parts.vertex.item(), 0.0);
  EXPECT_EQ(parts.joint.item(), 0.0);
  EXPECT_EQ(parts.edge.item(), 0.0);
  EXPECT_LT(parts.normal.item(), 1e-9);
}

TEST(TotalLoss, WeightsAndEdgeGate) {
  LossWeights w;
  auto one = Tensor<double>::scalar(1.0);
  MeshLossParts<double> parts{one, one, one, one};
  EXPECT_NEAR(total_mesh_loss(parts, w, 7).item(), 22.1, 1e-12);
  EXPECT_NEAR(total_mesh_loss(parts, w, 0).item(), 2.1, 1e-12);
  EXPECT_NEAR(total_mesh_loss(1.0, 1.0, 1.0, 1.0, w, 6), 2.1, 1e-12);
  LossWeights zero{0, 0, 0, 0, 0, 7};
  EXPECT_EQ(total_mesh_loss(parts, zero, 10).item(), 0.0);
  LossWeights neg;
  neg.normal = -0.1;
  EXPECT_THROW(total_mesh_loss(parts, neg, 10), ValueError);
}

TEST(Losses, GradientChecks) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    auto gt = random_tensor({2, 4, 3}, rng);
    auto m = random_tensor({2, 4, 3}, rng);
    nudge_from_kinks(m, gt);
    auto reg = random_tensor({3, 4}, rng, 0.0, 1.0);
    auto pj = random_tensor({2, 3, 3}, rng);
    const double eps = 1e-6;
    EXPECT_LT(gradient_check([&](const Tensor<double>& x) { return vertex_loss(x, gt); }, m, eps).max_rel_err, 1e-5);
    EXPECT_LT(gradient_check([&](const Tensor<double>& x) { return pose_loss(x, gt); }, m, eps).max_rel_err, 1e-5);
    EXPECT_LT(gradient_check([&](const Tensor<double>& x) { return joint_loss(x, reg, pj); }, m, eps).max_rel_err,
              1e-5);
    EXPECT_LT(gradient_check([&](const Tensor<double>& x) { return normal_loss(x, kTetra, gt); }, m, eps).max_rel_err,
              1e-5);
    EXPECT_LT(gradient_check([&](const Tensor<double>& x) { return edge_loss(x, kTetra, gt); }, m, eps).max_rel_err,
              1e-5);
  }
}
