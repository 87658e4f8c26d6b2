#pragma once

// Run configuration: one JSON document covering the template, data, model,
// training, loss weights, error synthesis and evaluation. Unknown keys are
// rejected so typos never pass silently.

#include "pose2mesh/data.hpp"
#include "pose2mesh/error.hpp"
#include "pose2mesh/generator.hpp"
#include "pose2mesh/losses.hpp"
#include "pose2mesh/models.hpp"

#include <nlohmann/json.hpp>

#include <set>
#include <string>
#include <vector>

namespace p2m {

struct DataConfig {
  std::size_t num_train = 64;
  std::size_t num_test = 32;
  double max_angle_deg = 45.0;
  std::uint64_t test_seed_offset = 1000003; ///< test samples use seed + offset
};

struct ModelConfig {
  std::size_t levels = 3;
  std::uint64_t coarsen_seed = 0;
  std::size_t posenet_hidden = 256;
  double dropout = 0.5;
  std::vector<std::size_t> widths{64, 64, 32, 32};
  std::size_t cheb_order = 3;
  std::size_t pose_blocks = 2;
  std::size_t blocks_per_level = 2;
  ResidualMode residual = ResidualMode::WithinLevel;

  void validate() const {
    if (levels < 1) throw ConfigError("model.levels must be >= 1");
    if (posenet_hidden < 1) throw ConfigError("model.posenet_hidden must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must be in [0,1)");
    if (widths.empty()) throw ConfigError("model.widths must not be empty");
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (widths[i] < 1) throw ConfigError("model.widths entries must be >= 1");
      if (i > 0 && widths[i] > widths[i - 1]) throw ConfigError("model.widths must be non-increasing");
    }
    if (cheb_order < 1) throw ConfigError("model.cheb_order must be >= 1");
    if (pose_blocks < 1 || blocks_per_level < 1) throw ConfigError("model block counts must be >= 1");
  }
};

struct TrainConfig {
  std::size_t batch_size = 16;
  int stage1_epochs = 200;
  double stage1_lr = 1e-3;
  int stage1_decay_epoch = 150;
  int stage2_epochs = 300;
  double stage2_lr = 1e-3;
  int stage2_decay_epoch = 240;
  double decay_factor = 10.0;
  bool include_pose_loss_stage2 = true;
  bool freeze_posenet = false;
  bool synthesize_errors = true;

  void validate() const {
    if (batch_size < 2) throw ConfigError("train.batch_size must be >= 2 (batch normalization)");
    auto stage = [](int epochs, int decay, double lr, const char* name) {
      if (!(epochs > decay && decay > 0))
        throw ConfigError(std::string("train.") + name + ": epochs > decay epoch > 0 is required");
      if (!(lr > 0.0)) throw ConfigError(std::string("train.") + name + ": lr must be > 0");
    };
    stage(stage1_epochs, stage1_decay_epoch, stage1_lr, "stage1");
    stage(stage2_epochs, stage2_decay_epoch, stage2_lr, "stage2");
    if (!(decay_factor > 0.0)) throw ConfigError("train.decay_factor must be > 0");
  }
};

enum class EvalInput { Gt2d, Gt3d, Synth };

inline std::string to_string(EvalInput m) {
  switch (m) {
  case EvalInput::Gt2d: return "gt2d";
  case EvalInput::Gt3d: return "gt3d";
  case EvalInput::Synth: return "synth";
  }
  return "?";
}

inline EvalInput parse_eval_input(const std::string& s) {
  if (s == "gt2d") return EvalInput::Gt2d;
  if (s == "gt3d") return EvalInput::Gt3d;
  if (s == "synth") return EvalInput::Synth;
  throw ConfigError("eval.input must be one of gt2d, gt3d, synth (got '" + s + "')");
}

struct EvalConfig {
  EvalInput input = EvalInput::Synth;
  std::vector<double> taus{5.0, 15.0};
  std::vector<bool> joint_mask; ///< empty: all joints
  bool fscore_align = true;
  std::uint64_t synth_seed = 12345;
};

struct PathConfig {
  std::string out = "run";
  std::string template_path;
  std::string dataset;
  std::string checkpoint;
};

struct RunConfig {
  std::uint64_t seed = 7;
  std::string profile = "desk";
  TemplateSpec template_spec;
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  LossWeights loss;
  ErrorSynthConfig error_synthesis;
  EvalConfig eval;
  PathConfig paths;

  void validate() const {
    model.validate();
    train.validate();
    loss.validate();
    error_synthesis.validate();
    for (double t : eval.taus)
      if (!(t > 0.0)) throw ConfigError("eval.taus entries must be > 0");
  }
};

/// Desk profile: small widths and many short epochs on a few samples.
inline RunConfig desk_profile() { return RunConfig{}; }

/// Full-size settings (PoseNet width 4096, batch 64, 60/30 and 15/12 epochs).
inline RunConfig paper_profile() {
  RunConfig c;
  c.profile = "paper";
  c.model.posenet_hidden = 4096;
  c.train.batch_size = 64;
  c.train.stage1_epochs = 60;
  c.train.stage1_decay_epoch = 30;
  c.train.stage2_epochs = 15;
  c.train.stage2_decay_epoch = 12;
  return c;
}

inline RunConfig profile_config(const std::string& name) {
  if (name == "desk") return desk_profile();
  if (name == "paper") return paper_profile();
  throw ConfigError("unknown profile '" + name + "' (expected desk or paper)");
}

// ---------------------------------------------------------------------------
// JSON mapping

namespace detail {

/// Reads known keys from a JSON object into fields; rejects anything else.
class ObjectReader {
public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename V>
  ObjectReader& get(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return *this;
    try {
      out = j_.at(key).get<V>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type");
    }
    return *this;
  }

  const nlohmann::json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.contains(k)) throw ConfigError("unknown config key '" + path_ + "." + k + "'");
  }

private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

} // namespace detail

inline nlohmann::json to_json(const ModelConfig& m) {
  return {{"levels", m.levels},
          {"coarsen_seed", m.coarsen_seed},
          {"posenet_hidden", m.posenet_hidden},
          {"dropout", m.dropout},
          {"widths", m.widths},
          {"cheb_order", m.cheb_order},
          {"pose_blocks", m.pose_blocks},
          {"blocks_per_level", m.blocks_per_level},
          {"residual", m.residual == ResidualMode::WithinLevel ? "within" : "across"}};
}

inline void from_json_into(const nlohmann::json& j, ModelConfig& m) {
  detail::ObjectReader r(j, "model");
  std::string residual = m.residual == ResidualMode::WithinLevel ? "within" : "across";
  r.get("levels", m.levels)
      .get("coarsen_seed", m.coarsen_seed)
      .get("posenet_hidden", m.posenet_hidden)
      .get("dropout", m.dropout)
      .get("widths", m.widths)
      .get("cheb_order", m.cheb_order)
      .get("pose_blocks", m.pose_blocks)
      .get("blocks_per_level", m.blocks_per_level)
      .get("residual", residual);
  r.finish();
  if (residual == "within")
    m.residual = ResidualMode::WithinLevel;
  else if (residual == "across")
    m.residual = ResidualMode::AcrossLevel;
  else
    throw ConfigError("model.residual must be 'within' or 'across'");
}

inline nlohmann::json to_json(const TemplateSpec& s) {
  return {{"bone_lengths", s.bone_lengths},
          {"radius", s.radius},
          {"verts_per_ring", s.verts_per_ring},
          {"rings_per_bone", s.rings_per_bone}};
}

inline void from_json_into(const nlohmann::json& j, TemplateSpec& s) {
  detail::ObjectReader r(j, "template");
  r.get("bone_lengths", s.bone_lengths)
      .get("radius", s.radius)
      .get("verts_per_ring", s.verts_per_ring)
      .get("rings_per_bone", s.rings_per_bone);
  r.finish();
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["profile"] = c.profile;
  j["template"] = to_json(c.template_spec);
  j["data"] = {{"num_train", c.data.num_train},
               {"num_test", c.data.num_test},
               {"max_angle_deg", c.data.max_angle_deg},
               {"test_seed_offset", c.data.test_seed_offset}};
  j["model"] = to_json(c.model);
  const auto& t = c.train;
  j["train"] = {{"batch_size", t.batch_size},
                {"stage1_epochs", t.stage1_epochs},
                {"stage1_lr", t.stage1_lr},
                {"stage1_decay_epoch", t.stage1_decay_epoch},
                {"stage2_epochs", t.stage2_epochs},
                {"stage2_lr", t.stage2_lr},
                {"stage2_decay_epoch", t.stage2_decay_epoch},
                {"decay_factor", t.decay_factor},
                {"include_pose_loss_stage2", t.include_pose_loss_stage2},
                {"freeze_posenet", t.freeze_posenet},
                {"synthesize_errors", t.synthesize_errors}};
  const auto& l = c.loss;
  j["loss"] = {{"vertex", l.vertex}, {"joint", l.joint},  {"normal", l.normal},
               {"edge", l.edge},     {"pose", l.pose},    {"edge_loss_start_epoch", l.edge_loss_start_epoch}};
  const auto& e = c.error_synthesis;
  j["error_synthesis"] = {
      {"jitter_sigma_frac", e.jitter_sigma_frac}, {"p_swap", e.p_swap}, {"p_miss", e.p_miss}, {"seed", e.seed}};
  j["eval"] = {{"input", to_string(c.eval.input)},
               {"taus", c.eval.taus},
               {"joint_mask", c.eval.joint_mask},
               {"fscore_align", c.eval.fscore_align},
               {"synth_seed", c.eval.synth_seed}};
  j["paths"] = {{"out", c.paths.out},
                {"template", c.paths.template_path},
                {"dataset", c.paths.dataset},
                {"checkpoint", c.paths.checkpoint}};
  return j;
}

/// Overlays `j` onto `base`. The "profile" key, when present, selects the base.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = desk_profile()) {
  detail::ObjectReader r(j, "config");
  std::string profile = base.profile;
  r.get("profile", profile);
  if (profile != base.profile) base = profile_config(profile);
  RunConfig c = std::move(base);
  r.get("seed", c.seed);
  if (const auto* s = r.sub("template")) from_json_into(*s, c.template_spec);
  if (const auto* s = r.sub("data")) {
    detail::ObjectReader d(*s, "data");
    d.get("num_train", c.data.num_train)
        .get("num_test", c.data.num_test)
        .get("max_angle_deg", c.data.max_angle_deg)
        .get("test_seed_offset", c.data.test_seed_offset);
    d.finish();
  }
  if (const auto* s = r.sub("model")) from_json_into(*s, c.model);
  if (const auto* s = r.sub("train")) {
    auto& t = c.train;
    detail::ObjectReader d(*s, "train");
    d.get("batch_size", t.batch_size)
        .get("stage1_epochs", t.stage1_epochs)
        .get("stage1_lr", t.stage1_lr)
        .get("stage1_decay_epoch", t.stage1_decay_epoch)
        .get("stage2_epochs", t.stage2_epochs)
        .get("stage2_lr", t.stage2_lr)
        .get("stage2_decay_epoch", t.stage2_decay_epoch)
        .get("decay_factor", t.decay_factor)
        .get("include_pose_loss_stage2", t.include_pose_loss_stage2)
        .get("freeze_posenet", t.freeze_posenet)
        .get("synthesize_errors", t.synthesize_errors);
    d.finish();
  }
  if (const auto* s = r.sub("loss")) {
    auto& l = c.loss;
    detail::ObjectReader d(*s, "loss");
    d.get("vertex", l.vertex)
        .get("joint", l.joint)
        .get("normal", l.normal)
        .get("edge", l.edge)
        .get("pose", l.pose)
        .get("edge_loss_start_epoch", l.edge_loss_start_epoch);
    d.finish();
  }
  if (const auto* s = r.sub("error_synthesis")) {
    auto& e = c.error_synthesis;
    detail::ObjectReader d(*s, "error_synthesis");
    d.get("jitter_sigma_frac", e.jitter_sigma_frac).get("p_swap", e.p_swap).get("p_miss", e.p_miss).get("seed", e.seed);
    d.finish();
  }
  if (const auto* s = r.sub("eval")) {
    detail::ObjectReader d(*s, "eval");
    std::string input = to_string(c.eval.input);
    d.get("input", input)
        .get("taus", c.eval.taus)
        .get("joint_mask", c.eval.joint_mask)
        .get("fscore_align", c.eval.fscore_align)
        .get("synth_seed", c.eval.synth_seed);
    d.finish();
    c.eval.input = parse_eval_input(input);
  }
  if (const auto* s = r.sub("paths")) {
    detail::ObjectReader d(*s, "paths");
    d.get("out", c.paths.out)
        .get("template", c.paths.template_path)
        .get("dataset", c.paths.dataset)
        .get("checkpoint", c.paths.checkpoint);
    d.finish();
  }
  r.finish();
  c.profile = profile;
  c.validate();
  return c;
}

} // namespace p2m
