#pragma once

// RMSprop, the step learning-rate schedule and the two training stages:
// PoseNet pre-training and end-to-end Pose2Mesh training.

#include "pose2mesh/coarsen.hpp"
#include "pose2mesh/config.hpp"
#include "pose2mesh/data.hpp"
#include "pose2mesh/io.hpp"
#include "pose2mesh/losses.hpp"
#include "pose2mesh/models.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <memory>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace p2m {

/// v <- a v + (1 - a) g^2;  theta <- theta - lr g / (sqrt(v) + eps). Grads are cleared.
template <typename T>
class Rmsprop {
public:
  Rmsprop(NamedTensors<T> params, double lr, double alpha = 0.99, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), alpha_(alpha), eps_(eps) {
    for (const auto& [name, t] : params_) v_.emplace_back(t.numel(), 0.0);
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  const NamedTensors<T>& params() const { return params_; }
  const std::vector<double>& accumulator(std::size_t i) const { return v_[i]; }

  void step() {
    for (const auto& [name, t] : params_)
      if (!t.has_grad()) throw ValueError("rmsprop_step: parameter '" + name + "' has no gradient");
    for (std::size_t p = 0; p < params_.size(); ++p) {
      auto t = params_[p].second;
      auto& v = v_[p];
      auto g = t.grad();
      auto w = t.data();
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        v[i] = alpha_ * v[i] + (1.0 - alpha_) * gi * gi;
        w[i] = static_cast<T>(static_cast<double>(w[i]) - lr_ * gi / (std::sqrt(v[i]) + eps_));
      }
      t.clear_grad();
    }
  }

private:
  NamedTensors<T> params_;
  std::vector<std::vector<double>> v_;
  double lr_, alpha_, eps_;
};

/// Epochs are 1-based; the decayed rate applies from epoch decay_epoch + 1.
inline double lr_for_epoch(double base_lr, int epoch, int decay_epoch, double decay_factor) {
  return epoch > decay_epoch ? base_lr / decay_factor : base_lr;
}

struct LossRecord {
  int epoch = 0;
  std::size_t iter = 0;
  double lr = 0;
  double pose = 0, vertex = 0, joint = 0, normal = 0, edge = 0, total = 0;
};

inline void write_trace_csv(std::ostream& out, const std::vector<LossRecord>& trace) {
  out << "epoch,iter,lr,L_pose,L_vertex,L_joint,L_normal,L_edge,L_total\n";
  out << std::setprecision(9);
  for (const auto& r : trace)
    out << r.epoch << ',' << r.iter << ',' << r.lr << ',' << r.pose << ',' << r.vertex << ',' << r.joint << ','
        << r.normal << ',' << r.edge << ',' << r.total << '\n';
}

inline std::string trace_csv(const std::vector<LossRecord>& trace) {
  std::ostringstream os;
  write_trace_csv(os, trace);
  return os.str();
}

/// Template, graphs, hierarchy and the float model built from them.
struct ModelBundle {
  MeshTemplate tmpl;
  ModelConfig cfg;
  std::uint64_t init_seed = 0;
  std::shared_ptr<const ScaledLaplacian> pose_lap;
  std::shared_ptr<const CoarseningHierarchy> hierarchy;
  Pose2Mesh<float> model;
  Tensor<float> regressor; ///< J x V

  std::size_t num_joints() const { return tmpl.num_joints(); }
  std::size_t num_vertices() const { return tmpl.num_vertices(); }
};

inline std::uint64_t faces_fingerprint(const std::vector<Face>& faces) {
  std::uint64_t h = 1469598103934665603ull; // FNV-1a
  for (const auto& f : faces)
    for (auto v : f) {
      h ^= static_cast<std::uint64_t>(v);
      h *= 1099511628211ull;
    }
  return h;
}

inline ModelBundle build_bundle(const MeshTemplate& tmpl, const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  tmpl.validate();
  ModelBundle b;
  b.tmpl = tmpl;
  b.cfg = cfg;
  b.init_seed = seed;
  b.pose_lap = std::make_shared<ScaledLaplacian>(build_pose_graph(tmpl));
  b.hierarchy = std::make_shared<CoarseningHierarchy>(graclus_coarsen(build_mesh_graph(tmpl), cfg.levels, cfg.coarsen_seed));
  PoseNetConfig pc;
  pc.num_joints = tmpl.num_joints();
  pc.hidden = cfg.posenet_hidden;
  pc.dropout = cfg.dropout;
  pc.root_index = tmpl.root_index;
  MeshNetConfig mc;
  mc.num_joints = tmpl.num_joints();
  mc.widths = cfg.widths;
  mc.cheb_order = cfg.cheb_order;
  mc.pose_blocks = cfg.pose_blocks;
  mc.blocks_per_level = cfg.blocks_per_level;
  mc.residual = cfg.residual;
  b.model.posenet = PoseNet<float>(pc, seed);
  b.model.meshnet = MeshNet<float>(mc, b.pose_lap, b.hierarchy, seed + 1);
  b.regressor = Tensor<float>(Shape{tmpl.num_joints(), tmpl.num_vertices()});
  for (std::size_t j = 0; j < tmpl.num_joints(); ++j)
    for (std::size_t v = 0; v < tmpl.num_vertices(); ++v)
      b.regressor.at(j, v) =
          static_cast<float>(tmpl.joint_regressor(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(v)));
  return b;
}

/// Checkpoint manifest config: enough to rebuild the hierarchy and verify the template.
inline json checkpoint_config(const ModelBundle& b, const std::string& stage, const json& extra = json::object()) {
  json c = extra;
  c["stage"] = stage;
  c["model"] = to_json(b.cfg);
  c["init_seed"] = b.init_seed;
  c["num_joints"] = b.num_joints();
  c["num_vertices"] = b.num_vertices();
  c["faces_fingerprint"] = std::to_string(faces_fingerprint(b.tmpl.faces));
  return c;
}

inline void check_checkpoint_compatible(const json& ck_config, const ModelBundle& b) {
  auto mismatch = [](const std::string& what) { throw ConfigError("checkpoint/config mismatch: " + what); };
  if (!ck_config.is_object() || !ck_config.contains("model")) mismatch("checkpoint carries no model config");
  const json& m = ck_config["model"];
  const json expected = to_json(b.cfg);
  for (const auto& key : {"levels", "coarsen_seed", "widths", "cheb_order", "posenet_hidden", "pose_blocks",
                          "blocks_per_level", "residual"})
    if (m.value(key, json()) != expected[key])
      mismatch(std::string(key) + " is " + m.value(key, json()).dump() + " in the checkpoint, " + expected[key].dump() +
               " in the run");
  if (ck_config.value("num_vertices", std::size_t{0}) != b.num_vertices()) mismatch("template vertex count");
  if (ck_config.value("num_joints", std::size_t{0}) != b.num_joints()) mismatch("template joint count");
  if (ck_config.value("faces_fingerprint", std::string()) != std::to_string(faces_fingerprint(b.tmpl.faces)))
    mismatch("template faces");
}

/// Model config stored in a checkpoint, for rebuilding without a run config.
inline ModelConfig model_config_from_checkpoint(const json& ck_config) {
  ModelConfig m;
  if (!ck_config.is_object() || !ck_config.contains("model"))
    throw ConfigError("checkpoint carries no model config");
  from_json_into(ck_config["model"], m);
  return m;
}

inline NamedTensors<float> posenet_tensors(const ModelBundle& b) { return b.model.posenet.named_tensors(); }
inline NamedTensors<float> all_tensors(const ModelBundle& b) { return b.model.named_tensors(); }

// ---------------------------------------------------------------------------
// Batches

struct Batch {
  Tensor<float> p2d_norm; ///< [B, J, 2]
  Tensor<float> p3d_gt;   ///< [B, J, 3]
  Tensor<float> mesh_gt;  ///< [B, V, 3], undefined when meshes are absent
};

/// Builds a batch. When `synth` is set, inputs are corrupted with `rng` in
/// sample order before normalization.
inline Batch make_batch(const std::vector<PoseSample>& samples, const std::vector<std::size_t>& idx,
                        const MeshTemplate& tmpl, const ErrorSynthConfig* synth, std::mt19937_64& rng,
                        bool need_mesh) {
  const std::size_t B = idx.size(), J = tmpl.num_joints(), V = tmpl.num_vertices();
  Batch b;
  b.p2d_norm = Tensor<float>(Shape{B, J, 2});
  b.p3d_gt = Tensor<float>(Shape{B, J, 3});
  if (need_mesh) b.mesh_gt = Tensor<float>(Shape{B, V, 3});
  for (std::size_t k = 0; k < B; ++k) {
    const auto& s = samples[idx[k]];
    if (static_cast<std::size_t>(s.pose2d.rows()) != J || static_cast<std::size_t>(s.pose3d.rows()) != J)
      throw ValueError("sample " + std::to_string(idx[k]) + " has " + std::to_string(s.pose2d.rows()) +
                       " joints, template has " + std::to_string(J));
    const Eigen::MatrixXd p2 = synth ? synthesize_pose_errors(s.pose2d, tmpl.symmetry_pairs, *synth, rng) : s.pose2d;
    const auto n = normalize_2d_pose(p2);
    for (std::size_t j = 0; j < J; ++j) {
      const auto r = static_cast<Eigen::Index>(j);
      for (std::size_t d = 0; d < 2; ++d) b.p2d_norm.at(k, j, d) = static_cast<float>(n.pose(r, static_cast<Eigen::Index>(d)));
      for (std::size_t d = 0; d < 3; ++d) b.p3d_gt.at(k, j, d) = static_cast<float>(s.pose3d(r, static_cast<Eigen::Index>(d)));
    }
    if (need_mesh) {
      if (!s.mesh) throw ValueError("sample " + std::to_string(idx[k]) + " has no ground-truth mesh");
      if (static_cast<std::size_t>(s.mesh->rows()) != V)
        throw ValueError("sample " + std::to_string(idx[k]) + " mesh has " + std::to_string(s.mesh->rows()) +
                         " vertices, template has " + std::to_string(V));
      for (std::size_t v = 0; v < V; ++v)
        for (std::size_t d = 0; d < 3; ++d)
          b.mesh_gt.at(k, v, d) = static_cast<float>((*s.mesh)(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(d)));
    }
  }
  return b;
}

/// Shuffled batches; a trailing batch of one sample joins the previous batch
/// because training-mode batch normalization needs two rows.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; s += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, s + batch_size)));
  if (out.size() > 1 && out.back().size() < 2) {
    out[out.size() - 2].insert(out[out.size() - 2].end(), out.back().begin(), out.back().end());
    out.pop_back();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
  std::vector<LossRecord> trace;
  std::vector<std::string> dead_parameters; ///< never received a nonzero gradient
  std::size_t iterations = 0;
};

namespace detail {

class DeadParameterDetector {
public:
  explicit DeadParameterDetector(const NamedTensors<float>& params) : params_(params), alive_(params.size(), false) {}

  void observe() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (alive_[i] || !params_[i].second.has_grad()) continue;
      for (float g : params_[i].second.grad())
        if (g != 0.0f) {
          alive_[i] = true;
          break;
        }
    }
  }

  std::vector<std::string> dead() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (!alive_[i]) out.push_back(params_[i].first);
    return out;
  }

private:
  NamedTensors<float> params_;
  std::vector<bool> alive_;
};

inline void require_samples(const std::vector<PoseSample>& samples, std::size_t batch_size) {
  if (samples.empty()) throw ValueError("training: empty dataset");
  if (samples.size() < 2) throw ValueError("training: at least 2 samples are needed for batch normalization");
  (void)batch_size;
}

} // namespace detail

/// Stage 1: PoseNet alone under the L1 pose loss.
inline TrainResult train_posenet(const RunConfig& cfg, ModelBundle& b, const std::vector<PoseSample>& samples,
                                 std::ostream* log = nullptr) {
  cfg.validate();
  detail::require_samples(samples, cfg.train.batch_size);
  const auto& t = cfg.train;
  std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ull + 1);
  const auto params = trainable(b.model.posenet.named_tensors());
  Rmsprop<float> opt(params, t.stage1_lr);
  detail::DeadParameterDetector dead(params);
  const ErrorSynthConfig* synth = t.synthesize_errors ? &cfg.error_synthesis : nullptr;

  TrainResult res;
  Tape<float>::local().clear();
  for (int epoch = 1; epoch <= t.stage1_epochs; ++epoch) {
    opt.set_lr(lr_for_epoch(t.stage1_lr, epoch, t.stage1_decay_epoch, t.decay_factor));
    double epoch_loss = 0.0;
    const auto batches = epoch_batches(samples.size(), t.batch_size, rng);
    for (const auto& idx : batches) {
      const Batch batch = make_batch(samples, idx, b.tmpl, synth, rng, false);
      const std::size_t B = idx.size(), J = b.num_joints();
      Tensor<float> pred = b.model.posenet.forward(reshape(batch.p2d_norm, {B, 2 * J}), true, rng);
      Tensor<float> loss = pose_loss(pred, batch.p3d_gt);
      backward(loss);
      dead.observe();
      opt.step();
      LossRecord r;
      r.epoch = epoch;
      r.iter = ++res.iterations;
      r.lr = opt.lr();
      r.pose = r.total = loss.item();
      res.trace.push_back(r);
      epoch_loss += r.total;
    }
    if (log)
      *log << "stage1 epoch " << epoch << '/' << t.stage1_epochs << " lr " << opt.lr() << " L_pose "
           << epoch_loss / static_cast<double>(batches.size()) << '\n';
  }
  res.dead_parameters = dead.dead();
  return res;
}

/// Stage 2: PoseNet cascaded into MeshNet, trained end to end (PoseNet can be frozen).
inline TrainResult train_full(const RunConfig& cfg, ModelBundle& b, const std::vector<PoseSample>& samples,
                              std::ostream* log = nullptr) {
  cfg.validate();
  detail::require_samples(samples, cfg.train.batch_size);
  const auto& t = cfg.train;
  std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ull + 2);
  NamedTensors<float> params = trainable(b.model.meshnet.named_tensors());
  if (!t.freeze_posenet) {
    auto p = trainable(b.model.posenet.named_tensors());
    params.insert(params.begin(), p.begin(), p.end());
  }
  Rmsprop<float> opt(params, t.stage2_lr);
  detail::DeadParameterDetector dead(params);
  const ErrorSynthConfig* synth = t.synthesize_errors ? &cfg.error_synthesis : nullptr;
  const auto& w = cfg.loss;

  TrainResult res;
  Tape<float>::local().clear();
  for (int epoch = 1; epoch <= t.stage2_epochs; ++epoch) {
    opt.set_lr(lr_for_epoch(t.stage2_lr, epoch, t.stage2_decay_epoch, t.decay_factor));
    double epoch_loss = 0.0, epoch_vertex = 0.0;
    const auto batches = epoch_batches(samples.size(), t.batch_size, rng);
    for (const auto& idx : batches) {
      const Batch batch = make_batch(samples, idx, b.tmpl, synth, rng, true);
      const std::size_t B = idx.size(), J = b.num_joints();
      Tensor<float> p3d;
      if (t.freeze_posenet) {
        NoGradGuard no_grad;
        p3d = b.model.posenet.forward(reshape(batch.p2d_norm, {B, 2 * J}), false, rng);
      } else {
        p3d = b.model.posenet.forward(reshape(batch.p2d_norm, {B, 2 * J}), true, rng);
      }
      Tensor<float> mesh = b.model.meshnet.forward(batch.p2d_norm, p3d, true);
      auto parts = mesh_loss_parts(mesh, batch.mesh_gt, b.tmpl.faces, b.regressor, batch.p3d_gt);
      Tensor<float> total = total_mesh_loss(parts, w, epoch);
      Tensor<float> lpose = pose_loss(p3d, batch.p3d_gt);
      if (t.include_pose_loss_stage2 && !t.freeze_posenet) total = add(total, scale(lpose, static_cast<float>(w.pose)));
      backward(total);
      dead.observe();
      opt.step();
      LossRecord r;
      r.epoch = epoch;
      r.iter = ++res.iterations;
      r.lr = opt.lr();
      r.pose = lpose.item();
      r.vertex = parts.vertex.item();
      r.joint = parts.joint.item();
      r.normal = parts.normal.item();
      r.edge = parts.edge.item();
      r.total = total.item();
      res.trace.push_back(r);
      epoch_loss += r.total;
      epoch_vertex += r.vertex;
    }
    if (log)
      *log << "stage2 epoch " << epoch << '/' << t.stage2_epochs << " lr " << opt.lr() << " L_total "
           << epoch_loss / static_cast<double>(batches.size()) << " L_vertex "
           << epoch_vertex / static_cast<double>(batches.size()) << '\n';
  }
  res.dead_parameters = dead.dead();
  return res;
}

} // namespace p2m
