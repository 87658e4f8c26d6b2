#pragma once

// Pose and mesh graphs, normalized/scaled Laplacians and Chebyshev spectral
// convolution.

#include "pose2mesh/error.hpp"
#include "pose2mesh/tensor.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace p2m {

using Face = std::array<std::size_t, 3>;
using IndexPair = std::pair<std::size_t, std::size_t>;

/// Dense 0/1 symmetric adjacency. Real vertices carry a self-loop; fake
/// (padding) vertices have an all-zero row.
class Graph {
public:
  Graph() = default;

  explicit Graph(std::size_t num_vertices)
      : n_(num_vertices), adj_(num_vertices * num_vertices, 0) {}

  std::size_t num_vertices() const { return n_; }

  bool adjacent(std::size_t i, std::size_t j) const { return adj_[i * n_ + j] != 0; }

  void connect(std::size_t i, std::size_t j) {
    adj_[i * n_ + j] = 1;
    adj_[j * n_ + i] = 1;
  }

  std::size_t degree(std::size_t i) const {
    std::size_t d = 0;
    for (std::size_t j = 0; j < n_; ++j) d += adj_[i * n_ + j];
    return d;
  }

  bool is_fake(std::size_t i) const { return degree(i) == 0; }

  std::size_t num_real() const {
    std::size_t r = 0;
    for (std::size_t i = 0; i < n_; ++i) r += is_fake(i) ? 0 : 1;
    return r;
  }

  /// Neighbors excluding the vertex itself.
  std::vector<std::size_t> neighbors(std::size_t i) const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < n_; ++j)
      if (j != i && adjacent(i, j)) out.push_back(j);
    return out;
  }

  Eigen::MatrixXd adjacency_matrix() const {
    Eigen::MatrixXd A(n_, n_);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j) A(i, j) = adj_[i * n_ + j];
    return A;
  }

  /// Throws unless symmetric with A_ii = 1 on every vertex that has any edge.
  void validate() const {
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t j = 0; j < n_; ++j)
        if (adj_[i * n_ + j] != adj_[j * n_ + i]) throw GraphError("graph: adjacency not symmetric");
      if (degree(i) > 0 && !adjacent(i, i))
        throw GraphError("graph: vertex " + std::to_string(i) + " has edges but no self-loop");
    }
  }

private:
  std::size_t n_ = 0;
  std::vector<std::uint8_t> adj_;
};

inline Graph build_pose_graph(std::size_t num_joints, std::span<const IndexPair> skeleton_edges,
                              std::span<const IndexPair> symmetry_pairs) {
  if (num_joints == 0) throw GraphError("build_pose_graph: no joints");
  Graph g(num_joints);
  for (std::size_t i = 0; i < num_joints; ++i) g.connect(i, i);
  auto add = [&](const char* what, const IndexPair& e) {
    if (e.first >= num_joints || e.second >= num_joints)
      throw GraphError(std::string("build_pose_graph: ") + what + " (" + std::to_string(e.first) +
                       "," + std::to_string(e.second) + ") out of range for " +
                       std::to_string(num_joints) + " joints");
    g.connect(e.first, e.second);
  };
  for (const auto& e : skeleton_edges) add("skeleton edge", e);
  for (const auto& e : symmetry_pairs) add("symmetry pair", e);
  return g;
}

inline Graph build_mesh_graph(std::size_t num_vertices, std::span<const Face> faces) {
  if (num_vertices == 0) throw GraphError("build_mesh_graph: no vertices");
  Graph g(num_vertices);
  for (std::size_t i = 0; i < num_vertices; ++i) g.connect(i, i);
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const auto& face = faces[f];
    for (auto v : face)
      if (v >= num_vertices)
        throw GraphError("build_mesh_graph: face " + std::to_string(f) + " references vertex " +
                         std::to_string(v) + " >= " + std::to_string(num_vertices));
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2])
      throw GraphError("build_mesh_graph: degenerate face " + std::to_string(f));
    g.connect(face[0], face[1]);
    g.connect(face[1], face[2]);
    g.connect(face[2], face[0]);
  }
  return g;
}

/// L = I - D^{-1/2} A D^{-1/2}, with (D^{-1/2})_ii = 0 for degree-0 vertices.
inline Eigen::MatrixXd normalized_laplacian(const Graph& g) {
  const std::size_t n = g.num_vertices();
  Eigen::VectorXd dinv(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto d = g.degree(i);
    dinv(i) = d > 0 ? 1.0 / std::sqrt(static_cast<double>(d)) : 0.0;
  }
  Eigen::MatrixXd L = Eigen::MatrixXd::Identity(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (g.adjacent(i, j)) L(i, j) -= dinv(i) * dinv(j);
  return L;
}

struct LambdaEstimate {
  double value = 2.0;
  bool converged = false; ///< false means the fallback value 2 was used
  int iterations = 0;
};

/// Largest eigenvalue of a symmetric matrix by power iteration with a fixed
/// seed. Falls back to 2 (the normalized-Laplacian bound) when the Rayleigh
/// quotients do not settle within `max_iterations`.
inline LambdaEstimate estimate_lambda_max(const Eigen::MatrixXd& L, int max_iterations = 200,
                                          double tolerance = 1e-9, std::uint64_t seed = 0x5eed) {
  const auto n = L.rows();
  if (n == 0 || L.cols() != n) throw GraphError("estimate_lambda_max: matrix must be square and non-empty");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.5, 1.5);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = unif(rng);
  v.normalize();

  double previous = v.dot(L * v);
  for (int it = 1; it <= max_iterations; ++it) {
    Eigen::VectorXd w = L * v;
    const double norm = w.norm();
    if (norm == 0.0) return {0.0, true, it};
    v = w / norm;
    const double rq = v.dot(L * v);
    if (std::abs(rq - previous) < tolerance) return {rq, true, it};
    previous = rq;
  }
  return {2.0, false, max_iterations};
}

/// L~ = 2 L / lambda_max - I, kept dense plus a compressed-row copy of its
/// nonzeros for fast propagation.
class ScaledLaplacian {
public:
  ScaledLaplacian() = default;

  explicit ScaledLaplacian(const Graph& g) {
    const Eigen::MatrixXd L = normalized_laplacian(g);
    const auto est = estimate_lambda_max(L);
    lambda_max_ = est.value;
    lambda_fallback_ = !est.converged;
    if (!(lambda_max_ > 0.0)) {
      lambda_max_ = 2.0;
      lambda_fallback_ = true;
    }
    init(2.0 * L / lambda_max_ - Eigen::MatrixXd::Identity(L.rows(), L.cols()));
  }

  ScaledLaplacian(Eigen::MatrixXd matrix, double lambda_max) : lambda_max_(lambda_max) {
    init(std::move(matrix));
  }

  std::size_t num_vertices() const { return static_cast<std::size_t>(matrix_.rows()); }
  const Eigen::MatrixXd& matrix() const { return matrix_; }
  double lambda_max() const { return lambda_max_; }
  bool lambda_fallback() const { return lambda_fallback_; }

  struct Sparse {
    std::vector<std::size_t> row_ptr, cols;
    std::vector<double> vals;
  };

  /// Shared so recorded backward closures keep it alive.
  const std::shared_ptr<const Sparse>& sparse() const { return sparse_; }

private:
  void init(Eigen::MatrixXd m) {
    matrix_ = std::move(m);
    const auto n = static_cast<std::size_t>(matrix_.rows());
    auto sp = std::make_shared<Sparse>();
    sp->row_ptr.assign(1, 0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double v = matrix_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        if (v != 0.0) {
          sp->cols.push_back(j);
          sp->vals.push_back(v);
        }
      }
      sp->row_ptr.push_back(sp->cols.size());
    }
    sparse_ = std::move(sp);
  }

  Eigen::MatrixXd matrix_;
  double lambda_max_ = 2.0;
  bool lambda_fallback_ = false;
  std::shared_ptr<const Sparse> sparse_;
};

/// y[..., V, f] = L~ x for every leading batch index.
template <typename T>
Tensor<T> graph_propagate(const ScaledLaplacian& lap, const Tensor<T>& x) {
  const std::size_t V = lap.num_vertices();
  if (x.dim() < 2 || x.size(x.dim() - 2) != V)
    throw ShapeError("graph_propagate: features " + shape_str(x.shape()) + " vs " +
                     std::to_string(V) + "-vertex Laplacian");
  const std::size_t f = x.shape().back(), batch = x.numel() / (V * f);
  auto sp = lap.sparse();
  const auto& rp = sp->row_ptr;
  const auto& cols = sp->cols;
  const auto& vals = sp->vals;
  Tensor<T> r(x.shape());
  T* out = r.data().data();
  const T* in = x.data().data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < V; ++i) {
      T* orow = out + (b * V + i) * f;
      for (std::size_t p = rp[i]; p < rp[i + 1]; ++p) {
        const T w = static_cast<T>(vals[p]);
        const T* irow = in + (b * V + cols[p]) * f;
        for (std::size_t c = 0; c < f; ++c) orow[c] += w * irow[c];
      }
    }
  if (detail::should_record({&x})) {
    auto xi = x.impl(), oi = r.impl();
    // L~ is symmetric, but the transpose is applied explicitly.
    detail::record<T>("graph_propagate", {xi}, r, [sp, xi, oi, V, f, batch] {
      auto& g = xi->grad_buffer();
      const auto& rp = sp->row_ptr;
      const auto& cols = sp->cols;
      const auto& vals = sp->vals;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < V; ++i) {
          const T* grow = oi->grad.data() + (b * V + i) * f;
          for (std::size_t p = rp[i]; p < rp[i + 1]; ++p) {
            const T w = static_cast<T>(vals[p]);
            T* dst = g.data() + (b * V + cols[p]) * f;
            for (std::size_t c = 0; c < f; ++c) dst[c] += w * grow[c];
          }
        }
    });
  }
  return r;
}

/// Trainable Chebyshev coefficients Theta_0..Theta_{K-1}, each f_in x f_out.
template <typename T>
struct ChebFilter {
  std::vector<Tensor<T>> theta;

  std::size_t order() const { return theta.size(); }
  std::size_t f_in() const { return theta.at(0).size(0); }
  std::size_t f_out() const { return theta.at(0).size(1); }

  void validate() const {
    if (theta.empty()) throw ShapeError("cheb filter: order K must be >= 1");
    for (const auto& t : theta)
      if (t.dim() != 2 || t.shape() != theta.front().shape())
        throw ShapeError("cheb filter: coefficient shapes differ: " + shape_str(t.shape()) +
                         " vs " + shape_str(theta.front().shape()));
  }
};

/// F_out = sum_k T_k(L~) F_in Theta_k with T_0 F = F, T_1 F = L~ F,
/// T_k F = 2 L~ T_{k-1} F - T_{k-2} F. Accepts [V, f_in] or [B, V, f_in].
template <typename T>
Tensor<T> chebyshev_conv(const Tensor<T>& features, const ScaledLaplacian& lap,
                         const ChebFilter<T>& filter) {
  filter.validate();
  if (features.dim() < 2 || features.dim() > 3)
    throw ShapeError("chebyshev_conv: expected [V,f] or [B,V,f], got " + shape_str(features.shape()));
  const std::size_t V = lap.num_vertices();
  const std::size_t f_in = features.shape().back();
  if (features.size(features.dim() - 2) != V)
    throw ShapeError("chebyshev_conv: " + std::to_string(features.size(features.dim() - 2)) +
                     " feature rows vs " + std::to_string(V) + "-vertex Laplacian");
  if (f_in != filter.f_in())
    throw ShapeError("chebyshev_conv: input width " + std::to_string(f_in) + " vs filter f_in " +
                     std::to_string(filter.f_in()));
  const std::size_t rows = features.numel() / f_in;
  Shape out_shape = features.shape();
  out_shape.back() = filter.f_out();

  auto project = [&](const Tensor<T>& tk, std::size_t k) {
    return matmul(reshape(tk, Shape{rows, f_in}), filter.theta[k]);
  };
  Tensor<T> t_prev = features;
  Tensor<T> out = project(t_prev, 0);
  if (filter.order() > 1) {
    Tensor<T> t_cur = graph_propagate(lap, features);
    out = add(out, project(t_cur, 1));
    for (std::size_t k = 2; k < filter.order(); ++k) {
      Tensor<T> t_next = sub(scale(graph_propagate(lap, t_cur), T(2)), t_prev);
      out = add(out, project(t_next, k));
      t_prev = t_cur;
      t_cur = t_next;
    }
  }
  return reshape(out, out_shape);
}

/// U diag(sum_k theta_k T_k(lambda)) U^T x, from a dense eigendecomposition of L~.
inline Eigen::VectorXd dense_spectral_oracle(const Eigen::VectorXd& x, const ScaledLaplacian& lap,
                                             std::span<const double> theta) {
  const Eigen::MatrixXd& Lt = lap.matrix();
  if (x.size() != Lt.rows()) throw ShapeError("dense_spectral_oracle: signal length mismatch");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Lt);
  if (eig.info() != Eigen::Success) throw GraphError("dense_spectral_oracle: eigendecomposition failed");
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  Eigen::VectorXd response = Eigen::VectorXd::Zero(lambda.size());
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    double t0 = 1.0, t1 = lambda(i);
    for (std::size_t k = 0; k < theta.size(); ++k) {
      double tk;
      if (k == 0) tk = t0;
      else if (k == 1) tk = t1;
      else {
        tk = 2.0 * lambda(i) * t1 - t0;
        t0 = t1;
        t1 = tk;
      }
      response(i) += theta[k] * tk;
    }
  }
  const Eigen::MatrixXd& U = eig.eigenvectors();
  return U * response.asDiagonal() * (U.transpose() * x);
}

} // namespace p2m
