#include "pose2mesh/data.hpp"
#include "pose2mesh/generator.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace p2m;

TEST(Normalize, TwoJointExample) {
  Eigen::MatrixXd p(2, 2);
  p << 0, 0, 2, 2;
  auto n = normalize_2d_pose(p);
  EXPECT_DOUBLE_EQ(n.mean(0), 1.0);
  EXPECT_DOUBLE_EQ(n.mean(1), 1.0);
  EXPECT_DOUBLE_EQ(n.std, 1.0);
  EXPECT_DOUBLE_EQ(n.pose(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(n.pose(0, 1), -1.0);
  EXPECT_DOUBLE_EQ(n.pose(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(n.pose(1, 1), 1.0);
  // already normalized input is a fixed point
  auto again = normalize_2d_pose(n.pose);
  EXPECT_LT((again.pose - n.pose).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Normalize, OutputMomentsAndErrors) {
  std::mt19937_64 rng(0);
  for (int t = 0; t < 20; ++t) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Random(12, 2) * 300.0;
    p.col(0).array() += 200.0;
    auto n = normalize_2d_pose(p);
    EXPECT_LT(n.pose.colwise().mean().cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_NEAR(std::sqrt(n.pose.squaredNorm() / 24.0), 1.0, 1e-6);
  }
  EXPECT_THROW(normalize_2d_pose(Eigen::MatrixXd::Constant(4, 2, 3.0)), ValueError);
}

namespace {

Eigen::MatrixXd random_pose(std::mt19937_64& rng, Eigen::Index J = 12) {
  std::uniform_real_distribution<double> u(100.0, 400.0);
  Eigen::MatrixXd p(J, 2);
  for (Eigen::Index j = 0; j < J; ++j) p(j, 0) = u(rng), p(j, 1) = u(rng);
  return p;
}

const std::vector<IndexPair> kPairs{{4, 6}, {5, 7}, {8, 10}, {9, 11}};

} // namespace

TEST(ErrorSynthesis, AllKnobsZeroIsIdentity) {
  std::mt19937_64 rng(1);
  ErrorSynthConfig cfg{0.0, 0.0, 0.0, 0};
  auto p = random_pose(rng);
  EXPECT_EQ(synthesize_pose_errors(p, kPairs, cfg, rng), p);
}

TEST(ErrorSynthesis, SwapAlwaysExchangesEveryPair) {
  std::mt19937_64 rng(2);
  ErrorSynthConfig cfg{0.0, 0.999999999, 0.0, 0};
  auto p = random_pose(rng);
  auto q = synthesize_pose_errors(p, kPairs, cfg, rng);
  for (const auto& [a, b] : kPairs) {
    EXPECT_EQ(q.row(static_cast<Eigen::Index>(a)), p.row(static_cast<Eigen::Index>(b)));
    EXPECT_EQ(q.row(static_cast<Eigen::Index>(b)), p.row(static_cast<Eigen::Index>(a)));
  }
  for (Eigen::Index j : {0, 1, 2, 3}) EXPECT_EQ(q.row(j), p.row(j));
}

TEST(ErrorSynthesis, JitterStdMatchesConfig) {
  std::mt19937_64 rng(3);
  auto p = random_pose(rng);
  const double diag = (p.colwise().maxCoeff() - p.colwise().minCoeff()).norm();
  ErrorSynthConfig cfg{0.02, 0.0, 0.0, 0};
  const int trials = 10000;
  Eigen::MatrixXd s1 = Eigen::MatrixXd::Zero(12, 2), s2 = s1;
  for (int t = 0; t < trials; ++t) {
    Eigen::MatrixXd d = synthesize_pose_errors(p, kPairs, cfg, rng) - p;
    s1 += d;
    s2 += d.cwiseProduct(d);
  }
  const double sigma = 0.02 * diag;
  for (Eigen::Index j = 0; j < 12; ++j)
    for (Eigen::Index k = 0; k < 2; ++k) {
      const double m = s1(j, k) / trials;
      const double sd = std::sqrt(s2(j, k) / trials - m * m);
      EXPECT_NEAR(sd, sigma, 0.05 * sigma);
    }
}

TEST(ErrorSynthesis, MissedJointsLandInExpandedBox) {
  std::mt19937_64 rng(4);
  auto p = random_pose(rng);
  const Eigen::Vector2d lo = p.colwise().minCoeff(), hi = p.colwise().maxCoeff();
  const Eigen::Vector2d c = 0.5 * (lo + hi), half = 0.6 * (hi - lo);
  ErrorSynthConfig cfg{0.0, 0.0, 0.999999999, 0};
  auto q = synthesize_pose_errors(p, kPairs, cfg, rng);
  for (Eigen::Index j = 0; j < 12; ++j)
    for (Eigen::Index k = 0; k < 2; ++k) EXPECT_LE(std::abs(q(j, k) - c(k)), half(k));
}

TEST(ErrorSynthesis, SeededRunsAreBitExact) {
  std::mt19937_64 src(5);
  auto p = random_pose(src);
  ErrorSynthConfig cfg;
  std::mt19937_64 a(42), b(42);
  for (int t = 0; t < 10; ++t) EXPECT_EQ(synthesize_pose_errors(p, kPairs, cfg, a), synthesize_pose_errors(p, kPairs, cfg, b));
  cfg.p_swap = 1.0;
  EXPECT_THROW(synthesize_pose_errors(p, kPairs, cfg, a), ConfigError);
}

TEST(Template, TubeManShapeAndValidity) {
  auto body = build_tube_man(TemplateSpec{});
  const auto& m = body.mesh;
  EXPECT_EQ(m.num_joints(), 12u);
  EXPECT_EQ(m.num_vertices(), 11u * 2 * 8);
  EXPECT_GE(m.num_vertices(), 150u);
  EXPECT_LE(m.num_vertices(), 250u);
  EXPECT_NO_THROW(m.validate());
  for (Eigen::Index v = 0; v < m.skinning_weights.rows(); ++v)
    EXPECT_NEAR(m.skinning_weights.row(v).sum(), 1.0, 1e-12);
  // tube surface is one connected component
  auto g = build_mesh_graph(m);
  std::vector<bool> seen(g.num_vertices(), false);
  std::vector<std::size_t> stack{0};
  seen[0] = true;
  std::size_t count = 1;
  while (!stack.empty()) {
    auto u = stack.back();
    stack.pop_back();
    for (auto v : g.neighbors(u))
      if (!seen[v]) seen[v] = true, ++count, stack.push_back(v);
  }
  EXPECT_EQ(count, g.num_vertices());
}

TEST(Template, InvalidSpecThrows) {
  TemplateSpec s;
  s.radius = 0.0;
  EXPECT_THROW(build_tube_man(s), ConfigError);
  s = TemplateSpec{};
  s.rings_per_bone = 1;
  EXPECT_THROW(build_tube_man(s), ConfigError);
  s = TemplateSpec{};
  s.bone_lengths.pop_back();
  EXPECT_THROW(build_tube_man(s), ConfigError);
}

TEST(Template, ValidateRejectsBrokenStructures) {
  auto m = build_tube_man(TemplateSpec{}).mesh;
  auto bad = m;
  bad.joint_regressor(0, 0) += 0.5;
  EXPECT_THROW(bad.validate(), ValueError);
  bad = m;
  bad.skeleton_edges.back() = {1, 2};
  EXPECT_THROW(bad.validate(), ValueError);
  bad = m;
  bad.faces.push_back({0, 1, m.num_vertices()});
  EXPECT_THROW(bad.validate(), ValueError);
}

TEST(Generator, IdentityRotationsGiveRestMesh) {
  auto body = build_tube_man(TemplateSpec{});
  std::vector<Eigen::Matrix3d> rots(12, Eigen::Matrix3d::Identity());
  auto posed = pose_body(body, rots);
  EXPECT_LT((posed.vertices - body.mesh.vertices).cwiseAbs().maxCoeff(), 1e-12);
  auto s = make_sample(body.mesh, posed.vertices, Camera{});
  const Eigen::RowVector3d root = body.mesh.joint_regressor.row(0) * body.mesh.vertices;
  Eigen::MatrixXd rest_rel = body.mesh.vertices.rowwise() - root;
  EXPECT_LT((*s.mesh - rest_rel).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Generator, RegressorConsistencyAndRootRow) {
  auto ds = generate_synthetic_dataset(TemplateSpec{}, 16, 3);
  ASSERT_EQ(ds.samples.size(), 16u);
  for (const auto& s : ds.samples) {
    EXPECT_TRUE(s.pose3d.row(0).isZero(0.0));
    EXPECT_LT((ds.body.mesh.joint_regressor * *s.mesh - s.pose3d).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_GE(s.camera.scale, 0.15);
    EXPECT_LE(s.camera.scale, 0.25);
    for (Eigen::Index j = 0; j < 12; ++j) {
      EXPECT_NEAR(s.pose2d(j, 0), s.camera.scale * s.pose3d(j, 0) + s.camera.offset(0), 1e-9);
      EXPECT_NEAR(s.pose2d(j, 1), s.camera.scale * s.pose3d(j, 1) + s.camera.offset(1), 1e-9);
    }
  }
}

TEST(Generator, PerSampleSeedsAreStable) {
  auto a = generate_synthetic_dataset(TemplateSpec{}, 6, 100);
  auto b = generate_synthetic_dataset(TemplateSpec{}, 3, 103);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a.samples[3 + i].pose3d, b.samples[i].pose3d);
    EXPECT_EQ(*a.samples[3 + i].mesh, *b.samples[i].mesh);
  }
}

TEST(Generator, TwoBoneChainMatchesHandForwardKinematics) {
  TubeSkeleton skel;
  skel.names = {"base", "mid", "tip"};
  skel.parent = {-1, 0, 1};
  skel.rest_dir = {Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitY(), Eigen::Vector3d::UnitY()};
  skel.bone_length = {0.0, 100.0, 80.0};
  TemplateSpec spec;
  spec.radius = 10.0;
  spec.verts_per_ring = 6;
  spec.rings_per_bone = 3;
  auto body = build_tube_body(skel, spec);
  const std::size_t per_bone = 18;

  // 90 degrees about z at the middle joint: only the second bone's tube moves
  std::vector<Eigen::Matrix3d> rots(3, Eigen::Matrix3d::Identity());
  rots[1] = Eigen::AngleAxisd(std::numbers::pi / 2, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  auto posed = pose_body(body, rots);
  const auto& rest = body.mesh.vertices;
  for (std::size_t v = 0; v < 2 * per_bone; ++v) {
    const auto r = static_cast<Eigen::Index>(v);
    const double x = rest(r, 0), y = rest(r, 1), z = rest(r, 2);
    double ex = x, ey = y;
    if (v >= per_bone) {
      // rotate about the joint at (0, 100, 0): (x, y - 100) -> (-(y - 100), x)
      ex = -(y - 100.0);
      ey = 100.0 + x;
    }
    EXPECT_NEAR(posed.vertices(r, 0), ex, 1e-9) << v;
    EXPECT_NEAR(posed.vertices(r, 1), ey, 1e-9) << v;
    EXPECT_NEAR(posed.vertices(r, 2), z, 1e-9) << v;
  }
  EXPECT_NEAR(posed.joints[2].x(), -80.0, 1e-9);
  EXPECT_NEAR(posed.joints[2].y(), 100.0, 1e-9);
}
