#pragma once

// Finite-difference checks over every layer, loss and model on a tube-man template.

#include "pose2mesh/coarsen.hpp"
#include "pose2mesh/config.hpp"
#include "pose2mesh/generator.hpp"
#include "pose2mesh/gradcheck.hpp"
#include "pose2mesh/losses.hpp"
#include "pose2mesh/models.hpp"

#include <algorithm>
#include <functional>
#include <memory>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace p2m {

struct GradSuiteEntry {
  std::string component;
  std::string kind; ///< layer, loss or model
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  std::size_t num_checked = 0;
  std::size_t num_kinks_skipped = 0;
  bool passed() const { return max_rel_err < tolerance; }
};

struct GradSuiteOptions {
  double layer_tolerance = 1e-5;
  double model_tolerance = 1e-4;
  std::size_t model_coords_per_tensor = 8;
  double model_epsilon = 1e-6;
  double mm_epsilon = 1e-3; ///< step for inputs in millimetres (losses sum thousands of mm terms)
  std::uint64_t seed = 0;
};

namespace detail {

inline Tensor<double> uniform_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

/// Max over several probes of the same function.
class SuiteCheck {
public:
  SuiteCheck(std::string component, std::string kind, double tol) {
    e_.component = std::move(component);
    e_.kind = std::move(kind);
    e_.tolerance = tol;
  }
  void probe(const std::function<Tensor<double>()>& f, Tensor<double> x, const GradCheckOptions& o = {}) {
    const auto r = gradient_check(f, x, o);
    e_.max_rel_err = std::max(e_.max_rel_err, r.max_rel_err);
    e_.num_checked += r.num_checked;
    e_.num_kinks_skipped += r.num_kinks_skipped;
  }
  GradSuiteEntry done() const { return e_; }

private:
  GradSuiteEntry e_;
};

inline Tensor<double> weighted_square(const Tensor<double>& y, const Tensor<double>& w) { return sum(mul(mul(y, y), w)); }

} // namespace detail

/// Runs the whole suite in 64-bit. Model checks sample a seeded subset of
/// coordinates per tensor; layer and loss checks cover every coordinate.
inline std::vector<GradSuiteEntry> run_gradient_suite(const TemplateSpec& spec, const ModelConfig& model_cfg,
                                                      const GradSuiteOptions& opt = {}) {
  using detail::SuiteCheck;
  using detail::uniform_tensor;
  using detail::weighted_square;
  std::vector<GradSuiteEntry> out;
  std::mt19937_64 rng(opt.seed);
  const double lt = opt.layer_tolerance, mt = opt.model_tolerance;

  const TubeBody body = build_tube_man(spec);
  const MeshTemplate& tmpl = body.mesh;
  const std::size_t J = tmpl.num_joints(), V = tmpl.num_vertices();
  auto pose_lap = std::make_shared<ScaledLaplacian>(build_pose_graph(tmpl));
  auto hierarchy =
      std::make_shared<CoarseningHierarchy>(graclus_coarsen(build_mesh_graph(tmpl), model_cfg.levels, model_cfg.coarsen_seed));

  {
    SuiteCheck c("linear", "layer", lt);
    Linear<double> fc(6, 5, rng);
    auto x = uniform_tensor({4, 6}, rng);
    auto w = uniform_tensor({4, 5}, rng);
    auto f = [&] { return weighted_square(fc_forward(x, fc), w); };
    c.probe(f, x);
    c.probe(f, fc.weight);
    c.probe(f, fc.bias);
    out.push_back(c.done());
  }
  for (bool training : {true, false}) {
    SuiteCheck c(training ? "batchnorm_train" : "batchnorm_eval", "layer", lt);
    BatchNorm<double> bn(5);
    bn.gamma = uniform_tensor({5}, rng, 0.5, 1.5).set_requires_grad(true);
    bn.beta = uniform_tensor({5}, rng).set_requires_grad(true);
    bn.running_mean = uniform_tensor({5}, rng);
    bn.running_var = uniform_tensor({5}, rng, 0.5, 2.0);
    auto x = uniform_tensor({6, 5}, rng);
    auto w = uniform_tensor({6, 5}, rng);
    auto f = [&] { return weighted_square(batchnorm_forward(x, bn, training), w); };
    c.probe(f, x);
    c.probe(f, bn.gamma);
    c.probe(f, bn.beta);
    out.push_back(c.done());
  }
  {
    SuiteCheck c("relu_dropout", "layer", lt);
    auto x = uniform_tensor({4, 7}, rng);
    auto w = uniform_tensor({4, 7}, rng);
    auto f = [&] {
      std::mt19937_64 mask_rng(17);
      return weighted_square(relu_dropout(x, 0.5, true, mask_rng), w);
    };
    c.probe(f, x);
    out.push_back(c.done());
  }
  auto cheb_check = [&](const std::string& name, const ScaledLaplacian& lap) {
    SuiteCheck c(name, "layer", lt);
    ChebConv<double> conv(3, 4, model_cfg.cheb_order, rng);
    const std::size_t n = lap.num_vertices();
    auto x = uniform_tensor({2, n, 3}, rng);
    auto w = uniform_tensor({2, n, 4}, rng);
    auto f = [&] { return weighted_square(conv.forward(x, lap), w); };
    c.probe(f, x);
    for (auto& th : conv.filter.theta) c.probe(f, th);
    out.push_back(c.done());
  };
  cheb_check("chebconv_pose_graph", *pose_lap);
  cheb_check("chebconv_mesh_graph", hierarchy->laplacians.front());
  {
    SuiteCheck c("graph_conv_block", "layer", lt);
    const auto& lap = hierarchy->laplacians.back();
    const std::size_t n = lap.num_vertices();
    GraphConvBlock<double> blk(3, 4, model_cfg.cheb_order, rng);
    auto x = uniform_tensor({2, n, 3}, rng);
    auto w = uniform_tensor({2, n, 4}, rng);
    auto f = [&] { return weighted_square(blk.forward(x, lap, true), w); };
    c.probe(f, x);
    for (auto& th : blk.conv.filter.theta) c.probe(f, th);
    c.probe(f, blk.bn.gamma);
    c.probe(f, blk.bn.beta);
    out.push_back(c.done());
  }
  {
    SuiteCheck c("upsample_and_perm", "layer", lt);
    const std::size_t C = hierarchy->num_coarsenings();
    auto x = uniform_tensor({2, hierarchy->level_size(C), 3}, rng);
    auto w = uniform_tensor({2, V, 3}, rng);
    auto f = [&] {
      Tensor<double> y = x;
      for (std::size_t lv = C; lv-- > 0;) y = upsample_features(y, *hierarchy, lv);
      return weighted_square(apply_perm(y, *hierarchy), w);
    };
    c.probe(f, x);
    out.push_back(c.done());
  }

  // Losses on a posed body with perturbed predictions.
  const auto dataset = generate_synthetic_dataset(spec, 16, opt.seed + 1);
  Tensor<double> mesh_gt(Shape{2, V, 3}), p3d_gt(Shape{2, J, 3}), p2d(Shape{2, J, 2});
  for (std::size_t b = 0; b < 2; ++b) {
    const auto& s = dataset.samples[b];
    const auto n2 = normalize_2d_pose(s.pose2d);
    for (std::size_t j = 0; j < J; ++j) {
      const auto r = static_cast<Eigen::Index>(j);
      for (std::size_t d = 0; d < 3; ++d) p3d_gt.at(b, j, d) = s.pose3d(r, static_cast<Eigen::Index>(d));
      for (std::size_t d = 0; d < 2; ++d) p2d.at(b, j, d) = n2.pose(r, static_cast<Eigen::Index>(d));
    }
    for (std::size_t v = 0; v < V; ++v)
      for (std::size_t d = 0; d < 3; ++d)
        mesh_gt.at(b, v, d) = (*s.mesh)(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(d));
  }
  Tensor<double> reg(Shape{J, V});
  for (std::size_t j = 0; j < J; ++j)
    for (std::size_t v = 0; v < V; ++v)
      reg.at(j, v) = tmpl.joint_regressor(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(v));
  auto perturbed = [&](const Tensor<double>& gt) {
    Tensor<double> p = gt.clone();
    std::uniform_real_distribution<double> u(-20.0, 20.0);
    for (auto& v : p.values()) v += u(rng);
    return p;
  };
  const std::span<const Face> faces(tmpl.faces);
  auto loss_check = [&](const std::string& name, Tensor<double> x, const std::function<Tensor<double>(const Tensor<double>&)>& fn) {
    SuiteCheck c(name, "loss", lt);
    GradCheckOptions o;
    o.epsilon = opt.mm_epsilon;
    o.skip_kinks = true;
    o.kink_rtol = 1e-3;
    c.probe([&] { return fn(x); }, x, o);
    out.push_back(c.done());
  };
  loss_check("pose_loss", perturbed(p3d_gt), [&](const Tensor<double>& x) { return pose_loss(x, p3d_gt); });
  loss_check("vertex_loss", perturbed(mesh_gt), [&](const Tensor<double>& x) { return vertex_loss(x, mesh_gt); });
  loss_check("joint_loss", perturbed(mesh_gt), [&](const Tensor<double>& x) { return joint_loss(x, reg, p3d_gt); });
  loss_check("normal_loss", perturbed(mesh_gt), [&](const Tensor<double>& x) { return normal_loss(x, faces, mesh_gt); });
  loss_check("edge_loss", perturbed(mesh_gt), [&](const Tensor<double>& x) { return edge_loss(x, faces, mesh_gt); });

  // Models, eval mode, batch-norm running statistics calibrated first.
  PoseNetConfig pc;
  pc.num_joints = J;
  pc.hidden = model_cfg.posenet_hidden;
  pc.dropout = model_cfg.dropout;
  pc.root_index = tmpl.root_index;
  MeshNetConfig mc;
  mc.num_joints = J;
  mc.widths = model_cfg.widths;
  mc.cheb_order = model_cfg.cheb_order;
  mc.pose_blocks = model_cfg.pose_blocks;
  mc.blocks_per_level = model_cfg.blocks_per_level;
  mc.residual = model_cfg.residual;
  Pose2Mesh<double> model{PoseNet<double>(pc, opt.seed + 2), MeshNet<double>(mc, pose_lap, hierarchy, opt.seed + 3)};
  {
    NoGradGuard no_grad;
    std::uniform_int_distribution<std::size_t> pick(0, dataset.samples.size() - 1);
    std::normal_distribution<double> jitter(0.0, 0.05);
    for (int it = 0; it < 40; ++it) {
      Tensor<double> batch(Shape{8, J, 2});
      for (std::size_t b = 0; b < 8; ++b) {
        const auto n2 = normalize_2d_pose(dataset.samples[pick(rng)].pose2d);
        for (std::size_t j = 0; j < J; ++j)
          for (std::size_t d = 0; d < 2; ++d)
            batch.at(b, j, d) = n2.pose(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(d)) + jitter(rng);
      }
      model.forward(batch, true, rng);
    }
  }
  GradCheckOptions mo;
  mo.max_coords = opt.model_coords_per_tensor;
  mo.seed = opt.seed;
  mo.epsilon = opt.model_epsilon;
  mo.skip_kinks = true;
  mo.extra_epsilons = {opt.model_epsilon * 10.0, opt.model_epsilon / 10.0};
  mo.accept_below = mt / 10.0;
  const LossWeights w;
  auto model_check = [&](const std::string& name, const NamedTensors<double>& params,
                         const std::function<Tensor<double>()>& f, Tensor<double> input) {
    SuiteCheck c(name, "model", mt);
    c.probe(f, input, mo);
    for (const auto& [pname, t] : trainable(params)) c.probe(f, t, mo);
    out.push_back(c.done());
  };
  Tensor<double> flat = reshape(p2d, {2, 2 * J}).clone();
  // smooth probe: an L1 loss over B = 2 can cancel a gradient to exactly zero
  auto w_pose = uniform_tensor({2, J, 3}, rng);
  model_check("posenet", model.posenet.named_tensors(), [&] {
    return weighted_square(scale(model.posenet.forward(flat, false, rng), 1e-3), w_pose);
  }, flat);
  // Targets sit 10-40 mm from the model output: small loss sums keep the
  // central differences above roundoff, and the offsets avoid L1 kinks.
  auto near = [&](const Tensor<double>& pred) {
    Tensor<double> t = pred.clone();
    std::uniform_real_distribution<double> mag(10.0, 40.0);
    std::bernoulli_distribution sign(0.5);
    for (auto& v : t.values()) v += sign(rng) ? mag(rng) : -mag(rng);
    return t;
  };
  Tensor<double> p3d_in, mesh_near, joints_near, mesh_e2e, joints_e2e, pose_e2e;
  {
    NoGradGuard no_grad;
    p3d_in = near(model.posenet.forward(flat, false, rng));
    auto m = model.meshnet.forward(p2d, p3d_in, false);
    mesh_near = near(m);
    joints_near = near(left_matmul(reg, m));
    auto o = model.forward(p2d, false, rng);
    mesh_e2e = near(o.mesh);
    joints_e2e = near(left_matmul(reg, o.mesh));
    pose_e2e = near(o.pose3d);
  }
  model_check("meshnet", model.meshnet.named_tensors(), [&] {
    auto mesh = model.meshnet.forward(p2d, p3d_in, false);
    return total_mesh_loss(mesh_loss_parts(mesh, mesh_near, faces, reg, joints_near), w, w.edge_loss_start_epoch);
  }, p3d_in);
  model_check("pose2mesh", model.named_tensors(), [&] {
    auto o = model.forward(p2d, false, rng);
    auto total = total_mesh_loss(mesh_loss_parts(o.mesh, mesh_e2e, faces, reg, joints_e2e), w, w.edge_loss_start_epoch);
    return add(total, pose_loss(o.pose3d, pose_e2e));
  }, p2d);
  return out;
}

inline bool all_passed(const std::vector<GradSuiteEntry>& entries) {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed(); });
}

inline void print_gradient_suite(std::ostream& os, const std::vector<GradSuiteEntry>& entries) {
  for (const auto& e : entries)
    os << e.kind << ' ' << e.component << " max_rel_err " << e.max_rel_err << " tol " << e.tolerance << " checked " << e.num_checked
       << " kinks_skipped " << e.num_kinks_skipped << ' ' << (e.passed() ? "ok" : "FAIL") << '\n';
}

} // namespace p2m
