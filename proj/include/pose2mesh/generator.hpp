#pragma once

// Procedural "tube-man" bodies: a skeleton whose bones are triangulated tubes,
// posed by forward kinematics and rigid linear blend skinning, then projected
// to 2D with a weak-perspective camera.

#include "pose2mesh/data.hpp"
#include "pose2mesh/error.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace p2m {

/// Joint tree. Joint 0 is the root; every other joint j owns the bone
/// parent[j] -> j, which points along rest_dir[j] with length bone_length[j].
struct TubeSkeleton {
  std::vector<std::string> names;
  std::vector<int> parent;                 ///< -1 for the root
  std::vector<Eigen::Vector3d> rest_dir;   ///< unit, unused for the root
  std::vector<double> bone_length;         ///< unused for the root
  std::vector<IndexPair> symmetry_pairs;

  std::size_t num_joints() const { return parent.size(); }
};

/// Per-bone lengths (one per non-root joint, mm) and tube discretization.
struct TemplateSpec {
  std::vector<double> bone_lengths{250, 250, 180, 280, 250, 280, 250, 430, 400, 430, 400};
  double radius = 40.0;
  std::size_t verts_per_ring = 8;
  std::size_t rings_per_bone = 2;

  void validate(std::size_t expected_bones) const {
    if (!(radius > 0.0)) throw ConfigError("template spec: radius must be > 0");
    if (rings_per_bone < 2) throw ConfigError("template spec: rings_per_bone must be >= 2");
    if (verts_per_ring < 3) throw ConfigError("template spec: verts_per_ring must be >= 3");
    if (bone_lengths.size() != expected_bones)
      throw ConfigError("template spec: expected " + std::to_string(expected_bones) +
                        " bone lengths, got " + std::to_string(bone_lengths.size()));
    for (double l : bone_lengths)
      if (!(l > 0.0)) throw ConfigError("template spec: bone lengths must be > 0");
  }
};

/// The 12-joint body: pelvis root, spine chain to the head, two arms from the
/// neck and two legs from the pelvis.
inline TubeSkeleton tube_man_skeleton(const std::vector<double>& bone_lengths) {
  TubeSkeleton s;
  s.names = {"pelvis",  "spine",   "neck",    "head",   "l_elbow", "l_wrist",
             "r_elbow", "r_wrist", "l_knee", "l_ankle", "r_knee", "r_ankle"};
  s.parent = {-1, 0, 1, 2, 2, 4, 2, 6, 0, 8, 0, 10};
  const Eigen::Vector3d up(0, 1, 0), down(0, -1, 0), left(1, 0, 0), right(-1, 0, 0);
  s.rest_dir = {Eigen::Vector3d::Zero(),
                up,
                up,
                up,
                left,
                left,
                right,
                right,
                Eigen::Vector3d(0.25, -1, 0).normalized(),
                down,
                Eigen::Vector3d(-0.25, -1, 0).normalized(),
                down};
  s.bone_length.assign(1, 0.0);
  s.bone_length.insert(s.bone_length.end(), bone_lengths.begin(), bone_lengths.end());
  s.symmetry_pairs = {{4, 6}, {5, 7}, {8, 10}, {9, 11}};
  return s;
}

struct TubeBody {
  MeshTemplate mesh;
  TubeSkeleton skeleton;
  std::vector<Eigen::Vector3d> rest_joints;
};

namespace detail {

inline void orthonormal_frame(const Eigen::Vector3d& axis, Eigen::Vector3d& u, Eigen::Vector3d& v) {
  const Eigen::Vector3d helper = std::abs(axis.z()) < 0.9 ? Eigen::Vector3d::UnitZ() : Eigen::Vector3d::UnitX();
  u = axis.cross(helper).normalized();
  v = axis.cross(u).normalized();
}

} // namespace detail

/// Builds the tube mesh, rigid skinning weights and ring-mean joint regressor.
inline TubeBody build_tube_body(const TubeSkeleton& skel, const TemplateSpec& spec) {
  const std::size_t J = skel.num_joints();
  if (J < 2 || skel.parent.front() != -1) throw ConfigError("tube skeleton: joint 0 must be the root");
  for (std::size_t j = 1; j < J; ++j)
    if (skel.parent[j] < 0 || static_cast<std::size_t>(skel.parent[j]) >= j)
      throw ConfigError("tube skeleton: parents must precede children");
  if (!(spec.radius > 0.0)) throw ConfigError("template spec: radius must be > 0");
  if (spec.rings_per_bone < 2) throw ConfigError("template spec: rings_per_bone must be >= 2");
  if (spec.verts_per_ring < 3) throw ConfigError("template spec: verts_per_ring must be >= 3");

  TubeBody body;
  body.skeleton = skel;
  body.rest_joints.assign(J, Eigen::Vector3d::Zero());
  for (std::size_t j = 1; j < J; ++j)
    body.rest_joints[j] = body.rest_joints[static_cast<std::size_t>(skel.parent[j])] +
                          skel.bone_length[j] * skel.rest_dir[j].normalized();

  const std::size_t N = spec.verts_per_ring, R = spec.rings_per_bone;
  const std::size_t num_bones = J - 1;
  const std::size_t V = num_bones * R * N;
  MeshTemplate& m = body.mesh;
  m.vertices.resize(static_cast<Eigen::Index>(V), 3);
  m.skinning_weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(V), static_cast<Eigen::Index>(J));
  // ring_start(j, r): first vertex of ring r on the bone owned by joint j
  auto ring_start = [&](std::size_t j, std::size_t r) { return ((j - 1) * R + r) * N; };

  for (std::size_t j = 1; j < J; ++j) {
    const auto p = static_cast<std::size_t>(skel.parent[j]);
    const Eigen::Vector3d a = body.rest_joints[p], b = body.rest_joints[j];
    Eigen::Vector3d u, v;
    detail::orthonormal_frame((b - a).normalized(), u, v);
    for (std::size_t r = 0; r < R; ++r) {
      const double t = 0.1 + 0.8 * static_cast<double>(r) / static_cast<double>(R - 1);
      const Eigen::Vector3d c = a + t * (b - a);
      for (std::size_t k = 0; k < N; ++k) {
        const double ang = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(N);
        const auto row = static_cast<Eigen::Index>(ring_start(j, r) + k);
        m.vertices.row(row) = (c + spec.radius * (std::cos(ang) * u + std::sin(ang) * v)).transpose();
        m.skinning_weights(row, static_cast<Eigen::Index>(p)) = 1.0;
      }
    }
  }

  auto stitch = [&](std::size_t ring_a, std::size_t ring_b) {
    for (std::size_t k = 0; k < N; ++k) {
      const std::size_t k1 = (k + 1) % N;
      const std::size_t a0 = ring_a + k, a1 = ring_a + k1, b0 = ring_b + k, b1 = ring_b + k1;
      m.faces.push_back({a0, a1, b1});
      m.faces.push_back({a0, b1, b0});
    }
  };
  std::size_t first_root_child = 0;
  for (std::size_t j = 1; j < J; ++j) {
    for (std::size_t r = 0; r + 1 < R; ++r) stitch(ring_start(j, r), ring_start(j, r + 1));
    const auto p = static_cast<std::size_t>(skel.parent[j]);
    if (p != 0) {
      stitch(ring_start(p, R - 1), ring_start(j, 0)); // seam onto the incoming bone
    } else if (first_root_child == 0) {
      first_root_child = j;
    } else {
      stitch(ring_start(first_root_child, 0), ring_start(j, 0)); // seam across the root
    }
  }

  // Joint regressor: mean of the ring nearest each joint.
  m.joint_regressor = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(J), static_cast<Eigen::Index>(V));
  for (std::size_t j = 0; j < J; ++j) {
    const std::size_t start = j == 0 ? ring_start(first_root_child, 0) : ring_start(j, R - 1);
    for (std::size_t k = 0; k < N; ++k)
      m.joint_regressor(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(start + k)) =
          1.0 / static_cast<double>(N);
  }
  for (std::size_t j = 1; j < J; ++j) m.skeleton_edges.emplace_back(static_cast<std::size_t>(skel.parent[j]), j);
  m.symmetry_pairs = skel.symmetry_pairs;
  m.joint_names = skel.names;
  m.root_index = 0;
  m.validate();
  return body;
}

inline TubeBody build_tube_man(const TemplateSpec& spec) {
  const auto skel = tube_man_skeleton(spec.bone_lengths);
  spec.validate(skel.num_joints() - 1);
  return build_tube_body(skel, spec);
}

struct PosedBody {
  Eigen::MatrixXd vertices;               ///< V x 3, not root-relative
  std::vector<Eigen::Vector3d> joints;    ///< FK joint positions
  std::vector<Eigen::Matrix3d> global_rot;
};

/// Forward kinematics from local joint rotations, then linear blend skinning.
inline PosedBody pose_body(const TubeBody& body, const std::vector<Eigen::Matrix3d>& local_rot) {
  const std::size_t J = body.skeleton.num_joints();
  if (local_rot.size() != J) throw ValueError("pose_body: expected one rotation per joint");
  PosedBody out;
  out.joints.assign(J, Eigen::Vector3d::Zero());
  out.global_rot.assign(J, Eigen::Matrix3d::Identity());
  out.global_rot[0] = local_rot[0];
  out.joints[0] = body.rest_joints[0];
  for (std::size_t j = 1; j < J; ++j) {
    const auto p = static_cast<std::size_t>(body.skeleton.parent[j]);
    out.global_rot[j] = out.global_rot[p] * local_rot[j];
    out.joints[j] = out.joints[p] + out.global_rot[p] * (body.rest_joints[j] - body.rest_joints[p]);
  }
  const auto& W = body.mesh.skinning_weights;
  const auto& rest = body.mesh.vertices;
  out.vertices = Eigen::MatrixXd::Zero(rest.rows(), 3);
  for (Eigen::Index v = 0; v < rest.rows(); ++v) {
    const Eigen::Vector3d x = rest.row(v).transpose();
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    for (std::size_t j = 0; j < J; ++j) {
      const double w = W(v, static_cast<Eigen::Index>(j));
      if (w == 0.0) continue;
      acc += w * (out.global_rot[j] * (x - body.rest_joints[j]) + out.joints[j]);
    }
    out.vertices.row(v) = acc.transpose();
  }
  return out;
}

/// Per-axis Euler angles drawn uniformly in +-max_deg, composed as Rz Ry Rx.
inline std::vector<Eigen::Matrix3d> random_joint_rotations(std::size_t J, double max_deg,
                                                           std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ang(-max_deg * std::numbers::pi / 180.0,
                                             max_deg * std::numbers::pi / 180.0);
  std::vector<Eigen::Matrix3d> rots(J);
  for (auto& r : rots) {
    const double ax = ang(rng), ay = ang(rng), az = ang(rng);
    r = (Eigen::AngleAxisd(az, Eigen::Vector3d::UnitZ()) * Eigen::AngleAxisd(ay, Eigen::Vector3d::UnitY()) *
         Eigen::AngleAxisd(ax, Eigen::Vector3d::UnitX()))
            .toRotationMatrix();
  }
  return rots;
}

/// Root-relative mesh, regressed pose and weak-perspective 2D projection.
inline PoseSample make_sample(const MeshTemplate& tmpl, const Eigen::MatrixXd& posed_vertices,
                              const Camera& cam) {
  PoseSample s;
  const Eigen::RowVector3d root =
      tmpl.joint_regressor.row(static_cast<Eigen::Index>(tmpl.root_index)) * posed_vertices;
  Eigen::MatrixXd mesh = posed_vertices.rowwise() - root;
  s.pose3d = tmpl.joint_regressor * mesh;
  s.pose3d.row(static_cast<Eigen::Index>(tmpl.root_index)).setZero();
  s.pose2d.resize(s.pose3d.rows(), 2);
  for (Eigen::Index j = 0; j < s.pose3d.rows(); ++j) {
    s.pose2d(j, 0) = cam.scale * s.pose3d(j, 0) + cam.offset(0);
    s.pose2d(j, 1) = cam.scale * s.pose3d(j, 1) + cam.offset(1);
  }
  s.mesh = std::move(mesh);
  s.camera = cam;
  return s;
}

struct SyntheticDataset {
  TubeBody body;
  std::vector<PoseSample> samples;
};

/// Sample i is drawn from its own generator seeded with seed + i.
inline SyntheticDataset generate_synthetic_dataset(const TemplateSpec& spec, std::size_t n_samples,
                                                   std::uint64_t seed, double max_angle_deg = 45.0) {
  SyntheticDataset ds;
  ds.body = build_tube_man(spec);
  const std::size_t J = ds.body.skeleton.num_joints();
  ds.samples.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    std::mt19937_64 rng(seed + i);
    auto rots = random_joint_rotations(J, max_angle_deg, rng);
    auto posed = pose_body(ds.body, rots);
    Camera cam;
    cam.scale = std::uniform_real_distribution<double>(0.15, 0.25)(rng);
    cam.offset = Eigen::Vector2d(std::uniform_real_distribution<double>(200.0, 300.0)(rng),
                                 std::uniform_real_distribution<double>(200.0, 300.0)(rng));
    ds.samples.push_back(make_sample(ds.body.mesh, posed.vertices, cam));
  }
  return ds;
}

} // namespace p2m
