#pragma once

// Training objectives. Every loss accepts a single sample ([N,3]) or a batch
// ([B,N,3]); per-sample sums are averaged over the batch.

#include "pose2mesh/error.hpp"
#include "pose2mesh/graph.hpp"
#include "pose2mesh/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace p2m {

struct LossWeights {
  double vertex = 1.0;
  double joint = 1.0;
  double normal = 0.1;
  double edge = 20.0;
  double pose = 1.0; ///< stage-2 pose term
  int edge_loss_start_epoch = 7;

  void validate() const {
    if (vertex < 0 || joint < 0 || normal < 0 || edge < 0 || pose < 0)
      throw ValueError("loss weights must be non-negative");
  }
};

namespace detail {

inline std::size_t batch_of(const char* op, const Shape& s) {
  if (s.size() == 2) return 1;
  if (s.size() == 3) return s[0];
  throw ShapeError(std::string(op) + ": expected [N,3] or [B,N,3], got " + shape_str(s));
}

template <typename T>
void require_points(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape() || a.shape().back() != 3)
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

/// Ordered vertex pairs of every face: (a,b), (b,c), (c,a).
struct FaceEdges {
  std::vector<std::size_t> first, second;
};

inline FaceEdges face_edges(std::span<const Face> faces, std::size_t V, const char* op) {
  FaceEdges e;
  for (std::size_t f = 0; f < faces.size(); ++f) {
    for (auto v : faces[f])
      if (v >= V)
        throw ValueError(std::string(op) + ": face " + std::to_string(f) + " references vertex " +
                         std::to_string(v) + " >= " + std::to_string(V));
    for (int k = 0; k < 3; ++k) {
      e.first.push_back(faces[f][k]);
      e.second.push_back(faces[f][(k + 1) % 3]);
    }
  }
  return e;
}

template <typename T>
Tensor<T> batch_mean_of_sum(const Tensor<T>& per_element, std::size_t B) {
  return scale(sum(per_element), static_cast<T>(1.0 / static_cast<double>(B)));
}

template <typename T>
Tensor<T> l1_loss(const char* op, const Tensor<T>& pred, const Tensor<T>& gt) {
  require_points(op, pred, gt);
  return batch_mean_of_sum(abs(sub(pred, gt)), batch_of(op, pred.shape()));
}

} // namespace detail

/// Sum of absolute coordinate differences of two root-relative poses.
template <typename T>
Tensor<T> pose_loss(const Tensor<T>& p3d, const Tensor<T>& p3d_gt) {
  return detail::l1_loss("pose_loss", p3d, p3d_gt);
}

template <typename T>
Tensor<T> vertex_loss(const Tensor<T>& mesh, const Tensor<T>& mesh_gt) {
  return detail::l1_loss("vertex_loss", mesh, mesh_gt);
}

/// |R M - P*|_1 with R the J x V joint regressor.
template <typename T>
Tensor<T> joint_loss(const Tensor<T>& mesh, const Tensor<T>& regressor, const Tensor<T>& p3d_gt) {
  if (regressor.dim() != 2 || mesh.dim() < 2 || regressor.size(1) != mesh.size(mesh.dim() - 2))
    throw ShapeError("joint_loss: regressor " + shape_str(regressor.shape()) + " vs mesh " +
                     shape_str(mesh.shape()));
  return detail::l1_loss("joint_loss", left_matmul(regressor, mesh), p3d_gt);
}

/// Sum over face edges of |<unit predicted edge, ground-truth face normal>|.
template <typename T>
Tensor<T> normal_loss(const Tensor<T>& mesh, std::span<const Face> faces, const Tensor<T>& mesh_gt) {
  detail::require_points("normal_loss", mesh, mesh_gt);
  const std::size_t B = detail::batch_of("normal_loss", mesh.shape());
  const std::size_t V = mesh.size(mesh.dim() - 2);
  const auto e = detail::face_edges(faces, V, "normal_loss");
  const std::size_t E = e.first.size();
  if (E == 0) return Tensor<T>::scalar(T(0));

  // ground-truth normals repeated per face edge, plus the degenerate-face mask
  Shape nshape = mesh.shape();
  nshape[nshape.size() - 2] = E;
  Tensor<T> normals(nshape);
  Shape mshape(nshape.begin(), nshape.end() - 1);
  Tensor<T> face_ok(mshape);
  const auto gt = mesh_gt.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < faces.size(); ++f) {
      Eigen::Vector3d p[3];
      for (int k = 0; k < 3; ++k)
        for (int d = 0; d < 3; ++d) p[k](d) = static_cast<double>(gt[(b * V + faces[f][k]) * 3 + d]);
      const Eigen::Vector3d c = (p[1] - p[0]).cross(p[2] - p[0]);
      const double len = c.norm();
      const bool ok = len >= 1e-12;
      for (int k = 0; k < 3; ++k) {
        const std::size_t row = b * E + 3 * f + k;
        face_ok[row] = ok ? T(1) : T(0);
        for (int d = 0; d < 3; ++d) normals[row * 3 + d] = ok ? static_cast<T>(c(d) / len) : T(0);
      }
    }

  Tensor<T> edges = sub(gather_rows(mesh, e.first), gather_rows(mesh, e.second));
  Tensor<T> len = l2norm_last(edges);
  Tensor<T> keep(len.shape()), pad(len.shape());
  for (std::size_t i = 0; i < len.numel(); ++i) {
    const bool short_edge = static_cast<double>(len[i]) < 1e-8;
    keep[i] = short_edge ? T(0) : face_ok[i];
    pad[i] = short_edge ? T(1) : T(0);
  }
  Tensor<T> cos = div(abs(sum_last(mul(edges, normals))), add(len, pad));
  return detail::batch_mean_of_sum(mul(cos, keep), B);
}

/// Sum over face edges of the absolute edge-length difference.
template <typename T>
Tensor<T> edge_loss(const Tensor<T>& mesh, std::span<const Face> faces, const Tensor<T>& mesh_gt) {
  detail::require_points("edge_loss", mesh, mesh_gt);
  const std::size_t B = detail::batch_of("edge_loss", mesh.shape());
  const std::size_t V = mesh.size(mesh.dim() - 2);
  const auto e = detail::face_edges(faces, V, "edge_loss");
  if (e.first.empty()) return Tensor<T>::scalar(T(0));
  Tensor<T> len = l2norm_last(sub(gather_rows(mesh, e.first), gather_rows(mesh, e.second)));
  Tensor<T> len_gt;
  {
    NoGradGuard no_grad;
    len_gt = l2norm_last(sub(gather_rows(mesh_gt, e.first), gather_rows(mesh_gt, e.second)));
  }
  return detail::batch_mean_of_sum(abs(sub(len, len_gt)), B);
}

template <typename T>
struct MeshLossParts {
  Tensor<T> vertex, joint, normal, edge;
};

/// Weighted mesh objective; the edge term is gated off before the start epoch
/// (epochs are 1-based).
template <typename T>
Tensor<T> total_mesh_loss(const MeshLossParts<T>& parts, const LossWeights& w, int epoch) {
  w.validate();
  const double we = epoch < w.edge_loss_start_epoch ? 0.0 : w.edge;
  Tensor<T> total = add(scale(parts.vertex, static_cast<T>(w.vertex)), scale(parts.joint, static_cast<T>(w.joint)));
  total = add(total, scale(parts.normal, static_cast<T>(w.normal)));
  return add(total, scale(parts.edge, static_cast<T>(we)));
}

/// Plain-number variant used for reporting.
inline double total_mesh_loss(double vertex, double joint, double normal, double edge, const LossWeights& w,
                              int epoch) {
  w.validate();
  const double we = epoch < w.edge_loss_start_epoch ? 0.0 : w.edge;
  return w.vertex * vertex + w.joint * joint + w.normal * normal + we * edge;
}

template <typename T>
MeshLossParts<T> mesh_loss_parts(const Tensor<T>& mesh, const Tensor<T>& mesh_gt, std::span<const Face> faces,
                                 const Tensor<T>& regressor, const Tensor<T>& p3d_gt) {
  return {vertex_loss(mesh, mesh_gt), joint_loss(mesh, regressor, p3d_gt), normal_loss(mesh, faces, mesh_gt),
          edge_loss(mesh, faces, mesh_gt)};
}

} // namespace p2m
