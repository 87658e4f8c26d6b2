#pragma once

// Mesh template and pose-sample types, 2D pose normalization and 2D error
// synthesis. 3D quantities are millimetres, 2D quantities pixels.

#include "pose2mesh/error.hpp"
#include "pose2mesh/graph.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace p2m {

struct MeshTemplate {
  Eigen::MatrixXd vertices;        ///< V x 3 rest pose
  std::vector<Face> faces;         ///< 0-based
  Eigen::MatrixXd joint_regressor; ///< J x V, rows sum to 1
  std::vector<IndexPair> skeleton_edges;
  std::vector<IndexPair> symmetry_pairs;
  std::vector<std::string> joint_names;
  std::size_t root_index = 0;
  Eigen::MatrixXd skinning_weights; ///< V x J, empty when absent

  std::size_t num_vertices() const { return static_cast<std::size_t>(vertices.rows()); }
  std::size_t num_joints() const { return static_cast<std::size_t>(joint_regressor.rows()); }

  void validate() const {
    const std::size_t V = num_vertices(), J = num_joints();
    if (V == 0 || vertices.cols() != 3) throw ValueError("template: vertices must be V x 3 with V > 0");
    if (J == 0 || static_cast<std::size_t>(joint_regressor.cols()) != V)
      throw ValueError("template: joint_regressor must be J x V");
    for (std::size_t f = 0; f < faces.size(); ++f)
      for (auto v : faces[f])
        if (v >= V)
          throw ValueError("template: face " + std::to_string(f) + " references vertex " +
                           std::to_string(v) + " >= " + std::to_string(V));
    for (Eigen::Index j = 0; j < joint_regressor.rows(); ++j)
      if (std::abs(joint_regressor.row(j).sum() - 1.0) > 1e-6)
        throw ValueError("template: joint_regressor row " + std::to_string(j) + " does not sum to 1");
    if (root_index >= J) throw ValueError("template: root_index out of range");
    if (!joint_names.empty() && joint_names.size() != J)
      throw ValueError("template: joint_names has " + std::to_string(joint_names.size()) +
                       " entries for " + std::to_string(J) + " joints");
    for (const auto& [a, b] : symmetry_pairs)
      if (a >= J || b >= J) throw ValueError("template: symmetry pair out of range");
    // skeleton must be a spanning tree
    if (skeleton_edges.size() != J - 1)
      throw ValueError("template: skeleton must have J-1 edges to form a tree");
    std::vector<std::size_t> parent(J);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t x) {
      while (parent[x] != x) x = parent[x] = parent[parent[x]];
      return x;
    };
    for (const auto& [a, b] : skeleton_edges) {
      if (a >= J || b >= J) throw ValueError("template: skeleton edge out of range");
      const auto ra = find(a), rb = find(b);
      if (ra == rb) throw ValueError("template: skeleton contains a cycle");
      parent[ra] = rb;
    }
    if (skinning_weights.size() > 0) {
      if (static_cast<std::size_t>(skinning_weights.rows()) != V ||
          static_cast<std::size_t>(skinning_weights.cols()) != J)
        throw ValueError("template: skinning_weights must be V x J");
      for (Eigen::Index v = 0; v < skinning_weights.rows(); ++v)
        if (std::abs(skinning_weights.row(v).sum() - 1.0) > 1e-6)
          throw ValueError("template: skinning weights of vertex " + std::to_string(v) +
                           " do not sum to 1");
    }
  }
};

inline Graph build_mesh_graph(const MeshTemplate& t) {
  return build_mesh_graph(t.num_vertices(), t.faces);
}

inline Graph build_pose_graph(const MeshTemplate& t) {
  return build_pose_graph(t.num_joints(), t.skeleton_edges, t.symmetry_pairs);
}

struct Camera {
  double scale = 1.0; ///< px per mm
  Eigen::Vector2d offset = Eigen::Vector2d::Zero();
};

struct PoseSample {
  Eigen::MatrixXd pose2d; ///< J x 2 px
  Eigen::MatrixXd pose3d; ///< J x 3 mm, root-relative
  std::optional<Eigen::MatrixXd> mesh; ///< V x 3 mm, root-relative
  Camera camera;
};

struct NormalizedPose {
  Eigen::MatrixXd pose; ///< J x 2, zero mean per axis, unit scalar std
  Eigen::Vector2d mean;
  double std = 1.0;
};

/// Subtracts the per-axis mean and divides by the scalar standard deviation
/// of all 2J centered coordinates.
inline NormalizedPose normalize_2d_pose(const Eigen::MatrixXd& p2d) {
  if (p2d.cols() != 2 || p2d.rows() < 2) throw ValueError("normalize_2d_pose: expected J x 2 with J >= 2");
  NormalizedPose out;
  out.mean = p2d.colwise().mean().transpose();
  Eigen::MatrixXd centered = p2d.rowwise() - out.mean.transpose();
  out.std = std::sqrt(centered.squaredNorm() / static_cast<double>(centered.size()));
  if (!(out.std > 1e-8)) throw ValueError("normalize_2d_pose: zero spread (all joints coincide)");
  out.pose = centered / out.std;
  return out;
}

struct ErrorSynthConfig {
  double jitter_sigma_frac = 0.02; ///< std of the jitter as a fraction of the bbox diagonal
  double p_swap = 0.03;            ///< per symmetric pair
  double p_miss = 0.02;            ///< per joint
  std::uint64_t seed = 0;

  void validate() const {
    auto prob = [](double p, const char* name) {
      if (!(p >= 0.0 && p < 1.0)) throw ConfigError(std::string("error synthesis: ") + name + " must be in [0,1)");
    };
    prob(p_swap, "p_swap");
    prob(p_miss, "p_miss");
    if (!(jitter_sigma_frac >= 0.0)) throw ConfigError("error synthesis: jitter_sigma_frac must be >= 0");
  }
};

/// Corrupts a ground-truth 2D pose with swaps of symmetric pairs, missed joints
/// (uniform in the 1.2x bounding box) and Gaussian jitter. Draw order is fixed
/// so a given rng state always produces the same output.
inline Eigen::MatrixXd synthesize_pose_errors(const Eigen::MatrixXd& p2d_gt,
                                              const std::vector<IndexPair>& symmetry_pairs,
                                              const ErrorSynthConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const auto J = p2d_gt.rows();
  Eigen::Vector2d lo = p2d_gt.colwise().minCoeff().transpose();
  Eigen::Vector2d hi = p2d_gt.colwise().maxCoeff().transpose();
  const double diag = (hi - lo).norm();
  const Eigen::Vector2d center = 0.5 * (lo + hi), half = 0.6 * (hi - lo);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<bool> missed(static_cast<std::size_t>(J));
  for (Eigen::Index j = 0; j < J; ++j) missed[static_cast<std::size_t>(j)] = unit(rng) < cfg.p_miss;

  Eigen::MatrixXd out = p2d_gt;
  for (const auto& [a, b] : symmetry_pairs) {
    if (unit(rng) < cfg.p_swap) {
      out.row(static_cast<Eigen::Index>(a)) = p2d_gt.row(static_cast<Eigen::Index>(b));
      out.row(static_cast<Eigen::Index>(b)) = p2d_gt.row(static_cast<Eigen::Index>(a));
    }
  }
  for (Eigen::Index j = 0; j < J; ++j) {
    const double ux = unit(rng), uy = unit(rng);
    if (missed[static_cast<std::size_t>(j)]) {
      out(j, 0) = center(0) + (2.0 * ux - 1.0) * half(0);
      out(j, 1) = center(1) + (2.0 * uy - 1.0) * half(1);
    }
  }
  const double sigma = cfg.jitter_sigma_frac * diag;
  if (sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, sigma);
    for (Eigen::Index j = 0; j < J; ++j)
      for (Eigen::Index k = 0; k < 2; ++k) out(j, k) += noise(rng);
  }
  return out;
}

} // namespace p2m
