#pragma once

// Command-line front end. Every subcommand resolves a RunConfig (profile,
// then --config file, then flags), echoes it to <out>/config.json and prints
// failures as a single `error: <kind>: <message>` line.

#include "pose2mesh/config.hpp"
#include "pose2mesh/eval.hpp"
#include "pose2mesh/generator.hpp"
#include "pose2mesh/gradsuite.hpp"
#include "pose2mesh/io.hpp"
#include "pose2mesh/train.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace p2m {

namespace cli {

namespace fs = std::filesystem;

struct Flags {
  std::string config, profile, out, template_path, dataset, checkpoint, input;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> levels;
  std::vector<double> taus;
  std::size_t index = 0;
  bool inspect = false;
  bool train_split = false;
};

inline RunConfig resolve_config(const Flags& f) {
  RunConfig base = profile_config(f.profile.empty() ? "desk" : f.profile);
  RunConfig c = base;
  if (!f.config.empty()) {
    auto in = detail::open_in(f.config);
    c = run_config_from_json(detail::parse_json(in, f.config), base);
    if (!f.profile.empty() && c.profile != f.profile)
      throw ConfigError("--profile " + f.profile + " conflicts with profile '" + c.profile + "' in " + f.config);
  }
  if (f.seed) c.seed = *f.seed;
  if (f.levels) c.model.levels = *f.levels;
  if (!f.out.empty()) c.paths.out = f.out;
  if (!f.template_path.empty()) c.paths.template_path = f.template_path;
  if (!f.dataset.empty()) c.paths.dataset = f.dataset;
  if (!f.checkpoint.empty()) c.paths.checkpoint = f.checkpoint;
  if (!f.input.empty()) c.eval.input = parse_eval_input(f.input);
  if (!f.taus.empty()) c.eval.taus = f.taus;
  c.validate();
  return c;
}

inline fs::path out_dir(const RunConfig& c) {
  fs::path p(c.paths.out);
  fs::create_directories(p);
  return p;
}

inline void echo_config(const RunConfig& c) {
  auto out = detail::open_out(out_dir(c) / "config.json");
  out << to_json(c).dump(2) << '\n';
}

inline MeshTemplate load_or_build_template(const RunConfig& c) {
  if (!c.paths.template_path.empty()) return load_template(c.paths.template_path);
  return build_tube_man(c.template_spec).mesh;
}

/// The dataset file when given, otherwise the seeded synthetic split.
inline std::vector<PoseSample> load_or_generate(const RunConfig& c, bool test_split) {
  if (!c.paths.dataset.empty()) return load_dataset(c.paths.dataset);
  const std::size_t n = test_split ? c.data.num_test : c.data.num_train;
  const std::uint64_t seed = test_split ? c.seed + c.data.test_seed_offset : c.seed;
  return generate_synthetic_dataset(c.template_spec, n, seed, c.data.max_angle_deg).samples;
}

inline void check_samples(const std::vector<PoseSample>& samples, const MeshTemplate& t, bool need_mesh) {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (static_cast<std::size_t>(s.pose3d.rows()) != t.num_joints())
      throw ConfigError("sample " + std::to_string(i) + " has " + std::to_string(s.pose3d.rows()) +
                        " joints, template has " + std::to_string(t.num_joints()));
    if (need_mesh && !s.mesh) throw ValueError("sample " + std::to_string(i) + " has no mesh");
    if (s.mesh && static_cast<std::size_t>(s.mesh->rows()) != t.num_vertices())
      throw ConfigError("sample " + std::to_string(i) + " mesh has " + std::to_string(s.mesh->rows()) +
                        " vertices, template has " + std::to_string(t.num_vertices()));
  }
}

inline void save_model(const fs::path& path, const ModelBundle& b, const std::string& stage,
                       const NamedTensors<float>& tensors) {
  Checkpoint ck;
  ck.config = checkpoint_config(b, stage);
  ck.tensors = snapshot(tensors);
  save_checkpoint(path, ck);
}

inline void save_trace(const fs::path& path, const std::vector<LossRecord>& trace) {
  auto out = detail::open_out(path);
  write_trace_csv(out, trace);
}

/// Rebuilds the model stored in a checkpoint and loads its weights.
/// Returns the bundle and whether MeshNet weights are present.
inline std::pair<ModelBundle, bool> load_model(const RunConfig& c, const MeshTemplate& tmpl) {
  if (c.paths.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const Checkpoint ck = load_checkpoint(c.paths.checkpoint);
  ModelBundle b = build_bundle(tmpl, model_config_from_checkpoint(ck.config), c.seed);
  check_checkpoint_compatible(ck.config, b);
  const bool full = ck.config.value("stage", std::string()) == "full";
  restore(ck, full ? all_tensors(b) : posenet_tensors(b));
  return {std::move(b), full};
}

inline int cmd_gen_data(const RunConfig& c) {
  const auto dir = out_dir(c);
  const auto train = generate_synthetic_dataset(c.template_spec, c.data.num_train, c.seed, c.data.max_angle_deg);
  const auto test = generate_synthetic_dataset(c.template_spec, c.data.num_test, c.seed + c.data.test_seed_offset,
                                               c.data.max_angle_deg);
  save_template(dir / "template.json", train.body.mesh);
  save_dataset(dir / "train.jsonl", train.samples);
  save_dataset(dir / "test.jsonl", test.samples);
  std::cout << "template: " << train.body.mesh.num_vertices() << " vertices, " << train.body.mesh.faces.size()
            << " faces, " << train.body.mesh.num_joints() << " joints\n"
            << "train: " << train.samples.size() << " samples\n"
            << "test: " << test.samples.size() << " samples\n"
            << "wrote " << dir.string() << '\n';
  return 0;
}

inline int cmd_coarsen(const RunConfig& c, bool inspect) {
  const MeshTemplate t = load_or_build_template(c);
  const auto h = graclus_coarsen(build_mesh_graph(t), c.model.levels, c.model.coarsen_seed);
  bool doubling = true;
  for (std::size_t lv = 0; lv <= h.num_coarsenings(); ++lv) {
    if (lv < h.num_coarsenings() && h.level_size(lv) != 2 * h.level_size(lv + 1)) doubling = false;
    if (inspect)
      std::cout << "level " << lv << ": vertices " << h.level_size(lv) << " real " << h.levels[lv].num_real()
                << " fake " << h.num_fake[lv] << '\n';
  }
  std::cout << "original vertices " << h.num_original() << ", levels " << h.num_coarsenings() << ", doubling "
            << (doubling ? "ok" : "VIOLATED") << '\n';
  if (!doubling) throw GraphError("coarsening: level sizes do not double");
  return 0;
}

inline int cmd_gradcheck(const RunConfig& c) {
  GradSuiteOptions opt;
  opt.seed = c.seed;
  const auto entries = run_gradient_suite(c.template_spec, c.model, opt);
  print_gradient_suite(std::cout, entries);
  if (!all_passed(entries)) throw ValueError("gradcheck: at least one component exceeds its tolerance");
  return 0;
}

inline int cmd_train(const RunConfig& c, bool full) {
  const auto dir = out_dir(c);
  const MeshTemplate tmpl = load_or_build_template(c);
  const auto samples = load_or_generate(c, false);
  check_samples(samples, tmpl, full);
  ModelBundle b = build_bundle(tmpl, c.model, c.seed);

  bool have_posenet = false;
  if (full && !c.paths.checkpoint.empty()) {
    const Checkpoint ck = load_checkpoint(c.paths.checkpoint);
    check_checkpoint_compatible(ck.config, b);
    restore(ck, posenet_tensors(b));
    have_posenet = true;
  }
  if (!have_posenet) {
    const auto r1 = train_posenet(c, b, samples, &std::cout);
    save_trace(dir / "trace_pose.csv", r1.trace);
    save_model(dir / "posenet.ckpt", b, "pose", posenet_tensors(b));
    for (const auto& name : r1.dead_parameters) std::cout << "warning: parameter never received a gradient: " << name << '\n';
  }
  if (full) {
    const auto r2 = train_full(c, b, samples, &std::cout);
    save_trace(dir / "trace_full.csv", r2.trace);
    save_model(dir / "model.ckpt", b, "full", all_tensors(b));
    for (const auto& name : r2.dead_parameters) std::cout << "warning: parameter never received a gradient: " << name << '\n';
  }
  std::cout << "wrote " << dir.string() << '\n';
  return 0;
}

inline int cmd_eval(const RunConfig& c, bool train_split) {
  const auto dir = out_dir(c);
  const MeshTemplate tmpl = load_or_build_template(c);
  auto [b, full] = load_model(c, tmpl);
  const auto samples = load_or_generate(c, !train_split);
  check_samples(samples, tmpl, false);
  const MetricsReport rep = evaluate(b, samples, c.eval, c.error_synthesis, full);
  std::cout << "input: " << to_string(c.eval.input) << '\n' << rep.to_text();
  auto out = detail::open_out(dir / "metrics.json");
  out << rep.to_json().dump(2) << '\n';
  return 0;
}

inline int cmd_infer(const RunConfig& c, std::size_t index) {
  const auto dir = out_dir(c);
  const MeshTemplate tmpl = load_or_build_template(c);
  auto [b, full] = load_model(c, tmpl);
  if (!full) throw ConfigError("infer needs a train-full checkpoint");
  const auto samples = load_or_generate(c, true);
  if (index >= samples.size())
    throw ValueError("--index " + std::to_string(index) + " out of range (" + std::to_string(samples.size()) +
                     " samples)");
  check_samples(samples, tmpl, false);
  const std::vector<PoseSample> one{samples[index]};
  const auto pred = predict(b, one, c.eval.input, c.error_synthesis, c.eval.synth_seed, true);
  save_obj(dir / "mesh.obj", *pred[0].mesh, tmpl.faces);
  std::cout << "wrote " << (dir / "mesh.obj").string() << '\n';
  return 0;
}

/// Writes the template mesh, or the ground-truth mesh of a dataset sample
/// when --dataset is given.
inline int cmd_export_obj(const RunConfig& c, std::size_t index) {
  const auto dir = out_dir(c);
  const MeshTemplate tmpl = load_or_build_template(c);
  Eigen::MatrixXd verts = tmpl.vertices;
  if (!c.paths.dataset.empty()) {
    const auto samples = load_dataset(c.paths.dataset);
    if (index >= samples.size()) throw ValueError("--index out of range");
    if (!samples[index].mesh) throw ValueError("sample " + std::to_string(index) + " has no mesh");
    verts = *samples[index].mesh;
  }
  save_obj(dir / "mesh.obj", verts, tmpl.faces);
  std::cout << "wrote " << (dir / "mesh.obj").string() << '\n';
  return 0;
}

} // namespace cli

/// Entry point shared by the executable and the tests.
inline int run_cli(int argc, const char* const* argv) {
  cli::Flags f;
  CLI::App app{"Pose2Mesh desk-scale pipeline"};
  app.require_subcommand(1);
  app.add_option("--config", f.config, "JSON run config")->check(CLI::ExistingFile);
  app.add_option("--profile", f.profile, "base settings")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--seed", f.seed, "run seed");
  app.add_option("--out", f.out, "output directory");
  app.add_option("--template", f.template_path, "template JSON");
  app.add_option("--dataset", f.dataset, "dataset JSONL");
  app.add_option("--checkpoint", f.checkpoint, "model checkpoint");
  app.add_option("--input", f.input, "eval input source")->check(CLI::IsMember({"gt2d", "gt3d", "synth"}));
  app.add_option("--tau", f.taus, "F-score threshold in mm (repeatable)");
  app.add_option("--levels", f.levels, "mesh coarsening levels");

  auto* gen = app.add_subcommand("gen-data", "write template.json, train.jsonl and test.jsonl");
  auto* coarsen = app.add_subcommand("coarsen", "build the coarsening hierarchy");
  coarsen->add_flag("--inspect", f.inspect, "print per-level vertex and fake counts");
  auto* grad = app.add_subcommand("gradcheck", "run the gradient-check suite");
  auto* tpose = app.add_subcommand("train-pose", "stage 1: train PoseNet");
  auto* tfull = app.add_subcommand("train-full", "stage 2: train PoseNet and MeshNet end to end");
  auto* ev = app.add_subcommand("eval", "metrics report on the test split");
  ev->add_flag("--train-split", f.train_split, "evaluate the training split instead");
  auto* infer = app.add_subcommand("infer", "predict one sample's mesh as OBJ");
  infer->add_option("--index", f.index, "sample index");
  auto* exp = app.add_subcommand("export-obj", "write the template or a dataset mesh as OBJ");
  exp->add_option("--index", f.index, "sample index");
  for (auto* s : app.get_subcommands({})) s->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << '\n';
    return 2;
  }

  try {
    const RunConfig c = cli::resolve_config(f);
    cli::echo_config(c);
    if (gen->parsed()) return cli::cmd_gen_data(c);
    if (coarsen->parsed()) return cli::cmd_coarsen(c, f.inspect);
    if (grad->parsed()) return cli::cmd_gradcheck(c);
    if (tpose->parsed()) return cli::cmd_train(c, false);
    if (tfull->parsed()) return cli::cmd_train(c, true);
    if (ev->parsed()) return cli::cmd_eval(c, f.train_split);
    if (infer->parsed()) return cli::cmd_infer(c, f.index);
    if (exp->parsed()) return cli::cmd_export_obj(c, f.index);
  } catch (const Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

} // namespace p2m
