#pragma once

// PoseNet (2D pose -> root-relative 3D pose) and MeshNet (2D + 3D pose ->
// root-relative mesh) assemblies, and the cascaded Pose2Mesh model.

#include "pose2mesh/coarsen.hpp"
#include "pose2mesh/error.hpp"
#include "pose2mesh/graph.hpp"
#include "pose2mesh/nn.hpp"
#include "pose2mesh/tensor.hpp"

#include <algorithm>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace p2m {

struct PoseNetConfig {
  std::size_t num_joints = 0;
  std::size_t hidden = 256; ///< 4096 in the full-size profile
  double dropout = 0.5;
  std::size_t root_index = 0;
  std::size_t num_blocks = 2;
  /// Network outputs are in decimetres internally; this maps them to millimetres.
  double output_scale = 100.0;
};

template <typename T>
class PoseNet {
public:
  struct ResidualBlock {
    Linear<T> fc1, fc2;
    BatchNorm<T> bn1, bn2;
  };

  PoseNet() = default;

  PoseNet(const PoseNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.num_joints < 1) throw ConfigError("PoseNet: num_joints must be positive");
    if (cfg.root_index >= cfg.num_joints) throw ConfigError("PoseNet: root_index out of range");
    std::mt19937_64 rng(seed);
    input_ = Linear<T>(2 * cfg.num_joints, cfg.hidden, rng);
    for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
      ResidualBlock blk;
      blk.fc1 = Linear<T>(cfg.hidden, cfg.hidden, rng);
      blk.bn1 = BatchNorm<T>(cfg.hidden);
      blk.fc2 = Linear<T>(cfg.hidden, cfg.hidden, rng);
      blk.bn2 = BatchNorm<T>(cfg.hidden);
      blocks_.push_back(std::move(blk));
    }
    output_ = Linear<T>(cfg.hidden, 3 * cfg.num_joints, rng);
  }

  const PoseNetConfig& config() const { return cfg_; }

  /// [B, 2J] normalized 2D pose -> [B, J, 3] root-relative pose in mm.
  /// The root joint's row is exactly zero.
  Tensor<T> forward(const Tensor<T>& p2d_norm, bool training, std::mt19937_64& rng) {
    const std::size_t J = cfg_.num_joints;
    if (p2d_norm.dim() != 2 || p2d_norm.size(1) != 2 * J)
      throw ShapeError("posenet_forward: expected [B," + std::to_string(2 * J) + "], got " +
                       shape_str(p2d_norm.shape()));
    const std::size_t B = p2d_norm.size(0);
    Tensor<T> h = fc_forward(p2d_norm, input_);
    for (auto& blk : blocks_) {
      Tensor<T> skip = h;
      h = relu_dropout(batchnorm_forward(fc_forward(h, blk.fc1), blk.bn1, training), cfg_.dropout,
                       training, rng);
      h = relu_dropout(batchnorm_forward(fc_forward(h, blk.fc2), blk.bn2, training), cfg_.dropout,
                       training, rng);
      h = add(h, skip);
    }
    Tensor<T> out = reshape(scale(fc_forward(h, output_), static_cast<T>(cfg_.output_scale)), {B, J, 3});
    const std::vector<std::size_t> root_rows(J, cfg_.root_index);
    return sub(out, gather_rows(out, root_rows));
  }

  void zero_init_output() { output_.zero_init(); }

  NamedTensors<T> named_tensors() const {
    NamedTensors<T> out;
    input_.collect("posenet.input", out);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const std::string p = "posenet.block" + std::to_string(b);
      blocks_[b].fc1.collect(p + ".fc1", out);
      blocks_[b].bn1.collect(p + ".bn1", out);
      blocks_[b].fc2.collect(p + ".fc2", out);
      blocks_[b].bn2.collect(p + ".bn2", out);
    }
    output_.collect("posenet.output", out);
    return out;
  }

private:
  PoseNetConfig cfg_;
  Linear<T> input_;
  std::vector<ResidualBlock> blocks_;
  Linear<T> output_;
};

enum class ResidualMode { WithinLevel, AcrossLevel };

struct MeshNetConfig {
  std::size_t num_joints = 0;
  /// Feature width per mesh level, coarsest first (length C+1, non-increasing).
  std::vector<std::size_t> widths{64, 64, 32, 32};
  std::size_t cheb_order = 3;
  std::size_t pose_blocks = 2;
  std::size_t blocks_per_level = 2;
  ResidualMode residual = ResidualMode::WithinLevel;
  double output_scale = 100.0;
};

/// Resizes a width list to `levels` entries: truncate, or repeat the last entry.
inline std::vector<std::size_t> fit_widths(std::vector<std::size_t> widths, std::size_t levels) {
  if (widths.empty()) throw ConfigError("widths must not be empty");
  while (widths.size() < levels) widths.push_back(widths.back());
  widths.resize(levels);
  return widths;
}

template <typename T>
class MeshNet {
public:
  struct LevelStage {
    std::vector<GraphConvBlock<T>> blocks;
    Tensor<T> projection; // across-level residual only, when widths differ
  };

  MeshNet() = default;

  MeshNet(const MeshNetConfig& cfg, std::shared_ptr<const ScaledLaplacian> pose_lap,
          std::shared_ptr<const CoarseningHierarchy> hierarchy, std::uint64_t seed)
      : cfg_(cfg), pose_lap_(std::move(pose_lap)), h_(std::move(hierarchy)) {
    if (!pose_lap_ || !h_) throw ConfigError("MeshNet: missing pose graph or hierarchy");
    if (pose_lap_->num_vertices() != cfg.num_joints)
      throw ConfigError("MeshNet: pose graph has " + std::to_string(pose_lap_->num_vertices()) +
                        " vertices, expected " + std::to_string(cfg.num_joints) + " joints");
    if (cfg.blocks_per_level < 1 || cfg.pose_blocks < 1)
      throw ConfigError("MeshNet: at least one block per stage is required");
    const std::size_t C = h_->num_coarsenings();
    cfg_.widths = fit_widths(cfg.widths, C + 1);
    for (std::size_t i = 1; i < cfg_.widths.size(); ++i)
      if (cfg_.widths[i] > cfg_.widths[i - 1])
        throw ConfigError("MeshNet: per-level widths must be non-increasing");
    const std::size_t K = cfg.cheb_order;
    std::mt19937_64 rng(seed);

    const std::size_t w_pose = cfg_.widths.front();
    for (std::size_t b = 0; b < cfg.pose_blocks; ++b)
      pose_blocks_.emplace_back(b == 0 ? 5 : w_pose, w_pose, K, rng);
    lift_ = Linear<T>(cfg.num_joints * w_pose, h_->level_size(C) * cfg_.widths.front(), rng);

    std::size_t f_prev = cfg_.widths.front();
    for (std::size_t i = 0; i <= C; ++i) {
      const std::size_t w = cfg_.widths[i];
      LevelStage stage;
      for (std::size_t b = 0; b < cfg.blocks_per_level; ++b)
        stage.blocks.emplace_back(b == 0 ? f_prev : w, w, K, rng);
      if (cfg.residual == ResidualMode::AcrossLevel && f_prev != w)
        stage.projection = fan_in_uniform<T>({f_prev, w}, f_prev, rng);
      stages_.push_back(std::move(stage));
      f_prev = w;
    }
    head_ = ChebConv<T>(f_prev, 3, K, rng);
  }

  const MeshNetConfig& config() const { return cfg_; }
  const CoarseningHierarchy& hierarchy() const { return *h_; }
  const ScaledLaplacian& pose_laplacian() const { return *pose_lap_; }

  /// p2d_norm [B,J,2] and root-relative p3d [B,J,3] in mm -> mesh [B,V,3] in mm.
  Tensor<T> forward(const Tensor<T>& p2d_norm, const Tensor<T>& p3d, bool training) {
    const std::size_t J = cfg_.num_joints;
    if (p2d_norm.dim() != 3 || p2d_norm.size(1) != J || p2d_norm.size(2) != 2 || p3d.dim() != 3 ||
        p3d.size(1) != J || p3d.size(2) != 3 || p3d.size(0) != p2d_norm.size(0))
      throw ShapeError("meshnet_forward: expected [B," + std::to_string(J) + ",2] and [B," +
                       std::to_string(J) + ",3], got " + shape_str(p2d_norm.shape()) + " and " +
                       shape_str(p3d.shape()));
    const std::size_t B = p2d_norm.size(0);
    const std::size_t C = h_->num_coarsenings();

    Tensor<T> x = concat<T>({p2d_norm, scale(p3d, static_cast<T>(1.0 / cfg_.output_scale))}, 2);
    for (auto& blk : pose_blocks_) x = blk.forward(x, *pose_lap_, training);

    x = fc_forward(reshape(x, {B, J * cfg_.widths.front()}), lift_);
    x = reshape(x, {B, h_->level_size(C), cfg_.widths.front()});

    for (std::size_t i = 0; i <= C; ++i) {
      const std::size_t c = C - i;
      const ScaledLaplacian& lap = h_->laplacians[c];
      auto& stage = stages_[i];
      Tensor<T> level_in = x;
      Tensor<T> first = stage.blocks.front().forward(x, lap, training);
      x = first;
      for (std::size_t b = 1; b < stage.blocks.size(); ++b) x = stage.blocks[b].forward(x, lap, training);
      if (cfg_.residual == ResidualMode::WithinLevel) {
        if (stage.blocks.size() > 1) x = add(x, first);
      } else {
        Tensor<T> skip = level_in;
        if (stage.projection.defined()) {
          const std::size_t V = level_in.size(1), f = level_in.size(2);
          skip = reshape(matmul(reshape(level_in, {B * V, f}), stage.projection),
                         {B, V, stage.projection.size(1)});
        }
        x = add(x, skip);
      }
      if (c > 0) x = upsample_features(x, *h_, c - 1);
    }
    x = head_.forward(x, h_->laplacians[0]);
    return scale(apply_perm(x, *h_), static_cast<T>(cfg_.output_scale));
  }

  void zero_init_output() { head_.zero_init(); }

  /// Keeps only the Theta_0 coefficient of every graph convolution.
  void zero_higher_order_filters() {
    auto zero = [](ChebConv<T>& c) {
      for (std::size_t k = 1; k < c.filter.order(); ++k)
        std::fill(c.filter.theta[k].values().begin(), c.filter.theta[k].values().end(), T(0));
    };
    for (auto& b : pose_blocks_) zero(b.conv);
    for (auto& s : stages_)
      for (auto& b : s.blocks) zero(b.conv);
    zero(head_);
  }

  NamedTensors<T> named_tensors() const {
    NamedTensors<T> out;
    for (std::size_t b = 0; b < pose_blocks_.size(); ++b)
      pose_blocks_[b].collect("meshnet.pose" + std::to_string(b), out);
    lift_.collect("meshnet.lift", out);
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      const std::string p = "meshnet.level" + std::to_string(stages_.size() - 1 - i);
      for (std::size_t b = 0; b < stages_[i].blocks.size(); ++b)
        stages_[i].blocks[b].collect(p + ".block" + std::to_string(b), out);
      if (stages_[i].projection.defined()) out.emplace_back(p + ".projection", stages_[i].projection);
    }
    head_.collect("meshnet.head", out);
    return out;
  }

private:
  MeshNetConfig cfg_;
  std::shared_ptr<const ScaledLaplacian> pose_lap_;
  std::shared_ptr<const CoarseningHierarchy> h_;
  std::vector<GraphConvBlock<T>> pose_blocks_;
  Linear<T> lift_;
  std::vector<LevelStage> stages_;
  ChebConv<T> head_;
};

/// Trainable tensors only (running statistics excluded).
template <typename T>
NamedTensors<T> trainable(const NamedTensors<T>& all) {
  NamedTensors<T> out;
  for (const auto& [name, t] : all)
    if (t.requires_grad()) out.emplace_back(name, t);
  return out;
}

template <typename T>
std::size_t parameter_count(const NamedTensors<T>& all) {
  std::size_t n = 0;
  for (const auto& [name, t] : all)
    if (t.requires_grad()) n += t.numel();
  return n;
}

template <typename T>
struct Pose2MeshOutput {
  Tensor<T> pose3d; ///< [B, J, 3] mm
  Tensor<T> mesh;   ///< [B, V, 3] mm
};

/// PoseNet cascaded into MeshNet; gradients flow through both.
template <typename T>
struct Pose2Mesh {
  PoseNet<T> posenet;
  MeshNet<T> meshnet;

  Pose2MeshOutput<T> forward(const Tensor<T>& p2d_norm, bool training, std::mt19937_64& rng) {
    const std::size_t B = p2d_norm.size(0), J = posenet.config().num_joints;
    Tensor<T> flat = reshape(p2d_norm, {B, 2 * J});
    Tensor<T> p3d = posenet.forward(flat, training, rng);
    Tensor<T> mesh = meshnet.forward(p2d_norm, p3d, training);
    return {p3d, mesh};
  }

  NamedTensors<T> named_tensors() const {
    auto out = posenet.named_tensors();
    auto m = meshnet.named_tensors();
    out.insert(out.end(), m.begin(), m.end());
    return out;
  }
};

} // namespace p2m
