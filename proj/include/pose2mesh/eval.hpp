#pragma once

// Inference and evaluation. Input modes: ground-truth 2D pose, ground-truth
// 3D pose fed straight to MeshNet, or 2D pose with synthesized errors.

#include "pose2mesh/config.hpp"
#include "pose2mesh/metrics.hpp"
#include "pose2mesh/train.hpp"

#include <optional>
#include <random>
#include <vector>

namespace p2m {

struct Prediction {
  Eigen::MatrixXd pose3d; ///< J x 3 mm, PoseNet output (the input pose in gt3d mode)
  std::optional<Eigen::MatrixXd> mesh; ///< V x 3 mm
};

namespace detail {

inline Eigen::MatrixXd batch_row(const Tensor<float>& t, std::size_t b) {
  const std::size_t n = t.size(1), d = t.size(2);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = t.at(b, i, k);
  return m;
}

} // namespace detail

/// Eval-mode forward over `samples` in batches. Synthesized errors are drawn
/// from `synth_seed` in sample order, so every call sees the same inputs.
inline std::vector<Prediction> predict(ModelBundle& b, const std::vector<PoseSample>& samples, EvalInput input,
                                       const ErrorSynthConfig& synth, std::uint64_t synth_seed, bool with_mesh,
                                       std::size_t batch_size = 64) {
  if (input == EvalInput::Gt3d && !with_mesh)
    throw ConfigError("eval input gt3d bypasses PoseNet and needs a mesh model");
  NoGradGuard no_grad;
  std::mt19937_64 synth_rng(synth_seed);
  std::mt19937_64 unused_rng(0);
  const std::size_t J = b.num_joints();
  std::vector<Prediction> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) idx.push_back(i);
    const Batch batch = make_batch(samples, idx, b.tmpl, input == EvalInput::Synth ? &synth : nullptr, synth_rng, false);
    const std::size_t B = idx.size();
    Tensor<float> p3d = input == EvalInput::Gt3d
                            ? batch.p3d_gt
                            : b.model.posenet.forward(reshape(batch.p2d_norm, {B, 2 * J}), false, unused_rng);
    Tensor<float> mesh;
    if (with_mesh) mesh = b.model.meshnet.forward(batch.p2d_norm, p3d, false);
    for (std::size_t k = 0; k < B; ++k) {
      Prediction p;
      p.pose3d = detail::batch_row(p3d, k);
      if (with_mesh) p.mesh = detail::batch_row(mesh, k);
      out.push_back(std::move(p));
    }
  }
  return out;
}

/// With a mesh model, MPJPE uses joints regressed from the predicted mesh, so
/// all three input modes are scored on the same quantity.
inline MetricsReport evaluate(ModelBundle& b, const std::vector<PoseSample>& samples, const EvalConfig& ec,
                              const ErrorSynthConfig& synth, bool with_mesh) {
  if (samples.empty()) throw ValueError("evaluate: empty dataset");
  const auto preds = predict(b, samples, ec.input, synth, ec.synth_seed, with_mesh);
  MetricsAccumulator acc(b.tmpl.root_index, ec.taus, ec.joint_mask, ec.fscore_align);
  const Eigen::RowVectorXd root_row = b.tmpl.joint_regressor.row(static_cast<Eigen::Index>(b.tmpl.root_index));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (with_mesh) {
      const Eigen::MatrixXd joints = b.tmpl.joint_regressor * *preds[i].mesh;
      acc.add_pose(joints, s.pose3d);
      if (s.mesh) acc.add_mesh(*preds[i].mesh, *s.mesh, root_row);
    } else {
      acc.add_pose(preds[i].pose3d, s.pose3d);
    }
  }
  return acc.report();
}

} // namespace p2m
