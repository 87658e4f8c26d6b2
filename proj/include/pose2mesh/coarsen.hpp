#pragma once

// Graclus-style multilevel coarsening into a balanced binary tree of mesh
// graphs. Level 0 is the finest graph in tree order; level C the coarsest.
// Slot i at level c+1 is the parent of slots 2i and 2i+1 at level c (0-based).
// Slots that carry no original vertex are fake: they have no edges at all.

#include "pose2mesh/error.hpp"
#include "pose2mesh/graph.hpp"
#include "pose2mesh/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace p2m {

struct CoarseningHierarchy {
  static constexpr std::size_t kFake = std::numeric_limits<std::size_t>::max();

  std::vector<Graph> levels;                   ///< C+1 graphs, finest first
  std::vector<ScaledLaplacian> laplacians;     ///< one per level
  std::vector<std::size_t> perm;               ///< original vertex -> level-0 slot
  std::vector<std::size_t> num_fake;           ///< fake slots per level
  std::vector<std::vector<std::size_t>> clusters; ///< per level: slot -> cluster id or kFake

  std::size_t num_coarsenings() const { return levels.size() - 1; }
  std::size_t num_original() const { return perm.size(); }
  std::size_t level_size(std::size_t c) const { return levels.at(c).num_vertices(); }

  /// Level-0 slot -> original vertex, kFake for padding.
  std::vector<std::size_t> inverse_perm() const {
    std::vector<std::size_t> inv(level_size(0), kFake);
    for (std::size_t v = 0; v < perm.size(); ++v) inv[perm[v]] = v;
    return inv;
  }
};

namespace detail {

/// One greedy matching round. Returns the cluster id of every vertex.
inline std::vector<std::size_t> graclus_match(const Eigen::MatrixXd& W, std::mt19937_64& rng,
                                              std::size_t& num_clusters) {
  const auto n = static_cast<std::size_t>(W.rows());
  const Eigen::VectorXd degree = W.rowwise().sum();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::size_t> cluster(n, 0);
  std::vector<bool> marked(n, false);
  num_clusters = 0;
  for (auto u : order) {
    if (marked[u]) continue;
    marked[u] = true;
    std::size_t best = n;
    double best_score = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
      const double w = W(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v));
      if (v == u || marked[v] || w <= 0.0) continue;
      const double score = w * (1.0 / degree(static_cast<Eigen::Index>(u)) +
                                1.0 / degree(static_cast<Eigen::Index>(v)));
      if (score > best_score) {
        best_score = score;
        best = v;
      }
    }
    cluster[u] = num_clusters;
    if (best < n) {
      cluster[best] = num_clusters;
      marked[best] = true;
    }
    ++num_clusters;
  }
  return cluster;
}

} // namespace detail

/// Coarsens `g` `levels` times and pads every level into a balanced binary tree.
inline CoarseningHierarchy graclus_coarsen(const Graph& g, std::size_t levels, std::uint64_t seed) {
  constexpr std::size_t kMaxSlots = std::size_t{1} << 22;
  const std::size_t n0 = g.num_vertices();
  if (levels < 1) throw GraphError("graclus_coarsen: levels must be >= 1");
  if (n0 == 0) throw GraphError("graclus_coarsen: graph has no vertices");
  for (std::size_t i = 0; i < n0; ++i)
    if (g.is_fake(i))
      throw GraphError("graclus_coarsen: input vertex " + std::to_string(i) + " has no self-loop");
  if (levels > 30 || (n0 << levels) > kMaxSlots * 2)
    throw GraphError("graclus_coarsen: " + std::to_string(levels) +
                     " levels would exceed the supported hierarchy size");

  // Weighted adjacency: unit edge weights, no self weight at the finest level.
  std::vector<Eigen::MatrixXd> weights;
  Eigen::MatrixXd W = g.adjacency_matrix();
  W.diagonal().setZero();
  weights.push_back(W);

  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> parents; // parents[l][v] at level l -> cluster at l+1
  for (std::size_t l = 0; l < levels; ++l) {
    std::size_t count = 0;
    auto cluster = detail::graclus_match(W, rng, count);
    Eigen::MatrixXd Wc = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(count),
                                               static_cast<Eigen::Index>(count));
    for (Eigen::Index i = 0; i < W.rows(); ++i)
      for (Eigen::Index j = 0; j < W.cols(); ++j)
        if (W(i, j) != 0.0)
          Wc(static_cast<Eigen::Index>(cluster[static_cast<std::size_t>(i)]),
             static_cast<Eigen::Index>(cluster[static_cast<std::size_t>(j)])) += W(i, j);
    parents.push_back(std::move(cluster));
    W = std::move(Wc);
    weights.push_back(W);
  }

  // Tree ordering, coarsest level first. Ids >= real count are fake.
  std::vector<std::vector<std::size_t>> order(levels + 1);
  const auto n_coarsest = static_cast<std::size_t>(weights.back().rows());
  order[levels].resize(n_coarsest);
  std::iota(order[levels].begin(), order[levels].end(), std::size_t{0});
  for (std::size_t l = levels; l-- > 0;) {
    const auto n_fine = static_cast<std::size_t>(weights[l].rows());
    const auto n_coarse = static_cast<std::size_t>(weights[l + 1].rows());
    std::vector<std::vector<std::size_t>> children(n_coarse);
    for (std::size_t v = 0; v < n_fine; ++v) children[parents[l][v]].push_back(v);
    std::size_t next_fake = n_fine;
    for (auto p : order[l + 1]) {
      std::vector<std::size_t> kids = p < n_coarse ? children[p] : std::vector<std::size_t>{};
      while (kids.size() < 2) kids.push_back(next_fake++);
      order[l].insert(order[l].end(), kids.begin(), kids.end());
    }
  }

  CoarseningHierarchy h;
  for (std::size_t l = 0; l <= levels; ++l) {
    const auto n_real = static_cast<std::size_t>(weights[l].rows());
    const auto& slots = order[l];
    Graph tree(slots.size());
    std::vector<std::size_t> cluster_of(slots.size(), CoarseningHierarchy::kFake);
    std::size_t fakes = 0;
    for (std::size_t s = 0; s < slots.size(); ++s) {
      if (slots[s] < n_real) cluster_of[s] = slots[s];
      else ++fakes;
    }
    for (std::size_t s = 0; s < slots.size(); ++s) {
      if (cluster_of[s] == CoarseningHierarchy::kFake) continue;
      tree.connect(s, s);
      for (std::size_t t = s + 1; t < slots.size(); ++t) {
        if (cluster_of[t] == CoarseningHierarchy::kFake) continue;
        const double w = l == 0 ? (g.adjacent(slots[s], slots[t]) ? 1.0 : 0.0)
                                : weights[l](static_cast<Eigen::Index>(slots[s]),
                                             static_cast<Eigen::Index>(slots[t]));
        if (w > 0.0) tree.connect(s, t);
      }
    }
    h.laplacians.emplace_back(tree);
    h.levels.push_back(std::move(tree));
    h.num_fake.push_back(fakes);
    h.clusters.push_back(std::move(cluster_of));
  }
  h.perm.assign(n0, CoarseningHierarchy::kFake);
  for (std::size_t s = 0; s < order[0].size(); ++s)
    if (order[0][s] < n0) h.perm[order[0][s]] = s;
  return h;
}

/// Parent slot of every child slot at level c: index list for nearest-neighbour
/// upsampling from level c+1 to level c.
inline std::vector<std::size_t> upsample_index(const CoarseningHierarchy& h, std::size_t level) {
  if (level >= h.num_coarsenings())
    throw GraphError("upsample: level " + std::to_string(level) + " out of range (C = " +
                     std::to_string(h.num_coarsenings()) + ")");
  std::vector<std::size_t> idx(h.level_size(level));
  for (std::size_t s = 0; s < idx.size(); ++s) idx[s] = s / 2;
  return idx;
}

/// Copies each parent row at level c+1 to its two children at level c.
/// Accepts [V_{c+1}, f] or [B, V_{c+1}, f].
template <typename T>
Tensor<T> upsample_features(const Tensor<T>& coarse, const CoarseningHierarchy& h, std::size_t level) {
  auto idx = upsample_index(h, level);
  if (coarse.dim() < 2 || coarse.size(coarse.dim() - 2) != h.level_size(level + 1))
    throw ShapeError("upsample_features: " + shape_str(coarse.shape()) + " vs level " +
                     std::to_string(level + 1) + " with " + std::to_string(h.level_size(level + 1)) +
                     " vertices");
  return gather_rows(coarse, idx);
}

/// Maps level-0 tree rows back to original mesh vertex order, dropping fake rows.
template <typename T>
Tensor<T> apply_perm(const Tensor<T>& tree_rows, const CoarseningHierarchy& h) {
  if (tree_rows.dim() < 2 || tree_rows.size(tree_rows.dim() - 2) != h.level_size(0))
    throw ShapeError("apply_perm: " + shape_str(tree_rows.shape()) + " vs " +
                     std::to_string(h.level_size(0)) + " level-0 slots");
  return gather_rows(tree_rows, h.perm);
}

/// Original-order rows scattered into level-0 tree order, zeros at fake slots.
template <typename T>
Tensor<T> inverse_perm(const Tensor<T>& rows, const CoarseningHierarchy& h) {
  if (rows.dim() != 2 || rows.size(0) != h.num_original())
    throw ShapeError("inverse_perm: " + shape_str(rows.shape()) + " vs " +
                     std::to_string(h.num_original()) + " original vertices");
  const std::size_t f = rows.size(1);
  Tensor<T> out(Shape{h.level_size(0), f});
  for (std::size_t v = 0; v < h.num_original(); ++v)
    std::copy_n(rows.data().data() + v * f, f, out.data().data() + h.perm[v] * f);
  return out;
}

} // namespace p2m
