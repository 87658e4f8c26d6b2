#pragma once

// File formats: template JSON, JSON Lines datasets, binary checkpoints and
// Wavefront OBJ meshes.

#include "pose2mesh/data.hpp"
#include "pose2mesh/error.hpp"
#include "pose2mesh/nn.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace p2m {

using json = nlohmann::json;

namespace detail {

inline json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const json& j, const char* what, Eigen::Index cols = -1) {
  if (!j.is_array()) throw IoError(std::string(what) + ": expected an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Eigen::MatrixXd(0, cols < 0 ? 0 : cols);
  if (!j[0].is_array()) throw IoError(std::string(what) + ": expected an array of rows");
  const auto c = static_cast<Eigen::Index>(j[0].size());
  if (cols >= 0 && c != cols)
    throw IoError(std::string(what) + ": expected " + std::to_string(cols) + " columns, got " + std::to_string(c));
  Eigen::MatrixXd m(rows, c);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& r = j[static_cast<std::size_t>(i)];
    if (!r.is_array() || static_cast<Eigen::Index>(r.size()) != c)
      throw IoError(std::string(what) + ": ragged row " + std::to_string(i));
    for (Eigen::Index k = 0; k < c; ++k) {
      const auto& v = r[static_cast<std::size_t>(k)];
      if (!v.is_number()) throw IoError(std::string(what) + ": non-numeric entry in row " + std::to_string(i));
      m(i, k) = v.get<double>();
    }
  }
  return m;
}

template <typename P>
json pairs_to_json(const std::vector<P>& pairs) {
  json a = json::array();
  for (const auto& p : pairs) a.push_back(json::array({p.first, p.second}));
  return a;
}

inline std::vector<IndexPair> pairs_from_json(const json& j, const char* what) {
  std::vector<IndexPair> out;
  if (!j.is_array()) throw IoError(std::string(what) + ": expected an array of pairs");
  for (const auto& p : j) {
    if (!p.is_array() || p.size() != 2) throw IoError(std::string(what) + ": expected [a, b] pairs");
    out.emplace_back(p[0].get<std::size_t>(), p[1].get<std::size_t>());
  }
  return out;
}

inline std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, mode);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

inline json parse_json(std::istream& in, const std::string& what) {
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(what + ": malformed JSON (" + e.what() + ")");
  }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Mesh template

inline json template_to_json(const MeshTemplate& t) {
  json j;
  j["vertices"] = detail::matrix_to_json(t.vertices);
  json faces = json::array();
  for (const auto& f : t.faces) faces.push_back(json::array({f[0], f[1], f[2]}));
  j["faces"] = std::move(faces);
  j["joint_regressor"] = detail::matrix_to_json(t.joint_regressor);
  j["skeleton_edges"] = detail::pairs_to_json(t.skeleton_edges);
  j["symmetry_pairs"] = detail::pairs_to_json(t.symmetry_pairs);
  j["joint_names"] = t.joint_names;
  j["root_index"] = t.root_index;
  if (t.skinning_weights.size() > 0) j["skinning_weights"] = detail::matrix_to_json(t.skinning_weights);
  return j;
}

inline MeshTemplate template_from_json(const json& j) {
  static const std::set<std::string> known{"vertices",       "faces",       "joint_regressor", "skeleton_edges",
                                           "symmetry_pairs", "joint_names", "root_index",      "skinning_weights"};
  if (!j.is_object()) throw IoError("template: expected a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw IoError("template: unknown key '" + k + "'");
  for (const char* k : {"vertices", "faces", "joint_regressor", "skeleton_edges"})
    if (!j.contains(k)) throw IoError(std::string("template: missing key '") + k + "'");
  MeshTemplate t;
  try {
    t.vertices = detail::matrix_from_json(j["vertices"], "template.vertices", 3);
    for (const auto& f : j["faces"]) {
      if (!f.is_array() || f.size() != 3) throw IoError("template.faces: expected [i, j, k] triples");
      t.faces.push_back({f[0].get<std::size_t>(), f[1].get<std::size_t>(), f[2].get<std::size_t>()});
    }
    t.joint_regressor = detail::matrix_from_json(j["joint_regressor"], "template.joint_regressor");
    t.skeleton_edges = detail::pairs_from_json(j["skeleton_edges"], "template.skeleton_edges");
    if (j.contains("symmetry_pairs")) t.symmetry_pairs = detail::pairs_from_json(j["symmetry_pairs"], "template.symmetry_pairs");
    if (j.contains("joint_names")) t.joint_names = j["joint_names"].get<std::vector<std::string>>();
    if (j.contains("root_index")) t.root_index = j["root_index"].get<std::size_t>();
    if (j.contains("skinning_weights"))
      t.skinning_weights = detail::matrix_from_json(j["skinning_weights"], "template.skinning_weights");
  } catch (const json::exception& e) {
    throw IoError(std::string("template: ") + e.what());
  }
  try {
    t.validate();
  } catch (const ValueError& e) {
    throw IoError(e.what());
  }
  return t;
}

inline void save_template(const std::filesystem::path& path, const MeshTemplate& t) {
  auto out = detail::open_out(path);
  out << template_to_json(t).dump() << '\n';
}

inline MeshTemplate load_template(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return template_from_json(detail::parse_json(in, path.string()));
}

// ---------------------------------------------------------------------------
// Dataset (JSON Lines)

inline json sample_to_json(const PoseSample& s) {
  json j;
  j["pose2d"] = detail::matrix_to_json(s.pose2d);
  j["pose3d"] = detail::matrix_to_json(s.pose3d);
  if (s.mesh) j["mesh"] = detail::matrix_to_json(*s.mesh);
  j["camera"] = {{"scale", s.camera.scale}, {"offset", {s.camera.offset(0), s.camera.offset(1)}}};
  return j;
}

inline PoseSample sample_from_json(const json& j) {
  if (!j.is_object()) throw IoError("expected a JSON object");
  for (const auto& [k, v] : j.items())
    if (k != "pose2d" && k != "pose3d" && k != "mesh" && k != "camera") throw IoError("unknown key '" + k + "'");
  if (!j.contains("pose2d") || !j.contains("pose3d")) throw IoError("missing pose2d or pose3d");
  PoseSample s;
  s.pose2d = detail::matrix_from_json(j["pose2d"], "pose2d", 2);
  s.pose3d = detail::matrix_from_json(j["pose3d"], "pose3d", 3);
  if (s.pose2d.rows() != s.pose3d.rows()) throw IoError("pose2d and pose3d joint counts differ");
  if (j.contains("mesh")) s.mesh = detail::matrix_from_json(j["mesh"], "mesh", 3);
  if (j.contains("camera")) {
    const auto& c = j["camera"];
    s.camera.scale = c.at("scale").get<double>();
    const auto& o = c.at("offset");
    if (!o.is_array() || o.size() != 2) throw IoError("camera.offset: expected [x, y]");
    s.camera.offset = Eigen::Vector2d(o[0].get<double>(), o[1].get<double>());
  }
  return s;
}

inline void save_dataset(const std::filesystem::path& path, const std::vector<PoseSample>& samples) {
  auto out = detail::open_out(path);
  for (const auto& s : samples) out << sample_to_json(s).dump() << '\n';
}

/// Blank lines are skipped; errors carry the 1-based line number.
inline std::vector<PoseSample> load_dataset(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  std::vector<PoseSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(sample_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint: "P2M1" | u32 LE manifest length | JSON manifest | f32 LE payloads

inline constexpr char kCheckpointMagic[4] = {'P', '2', 'M', '1'};
inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  json config;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

} // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["config"] = ck.config;
  json entries = json::array();
  std::string payload;
  for (const auto& [name, t] : ck.tensors) {
    entries.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "f32"}, {"byte_offset", payload.size()}});
    for (float v : t.values()) detail::put_u32(payload, std::bit_cast<std::uint32_t>(v));
  }
  manifest["tensors"] = std::move(entries);
  const std::string m = manifest.dump();
  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, static_cast<std::uint32_t>(m.size()));
  out += m;
  out += payload;
  return out;
}

inline Checkpoint parse_checkpoint(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw IoError("checkpoint: bad magic (expected P2M1)");
  const std::uint32_t mlen = detail::get_u32(p + 4);
  if (bytes.size() < 8 + std::size_t(mlen)) throw IoError("checkpoint: truncated manifest");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(8, mlen));
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint: malformed manifest (") + e.what() + ")");
  }
  if (!manifest.is_object() || manifest.value("format_version", -1) != kCheckpointFormatVersion)
    throw IoError("checkpoint: unsupported format_version");
  const std::size_t base = 8 + mlen;
  Checkpoint ck;
  ck.config = manifest.value("config", json::object());
  try {
    for (const auto& e : manifest.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      if (e.at("dtype").get<std::string>() != "f32") throw IoError("checkpoint: tensor " + name + " is not f32");
      const auto shape = e.at("shape").get<Shape>();
      const auto off = e.at("byte_offset").get<std::size_t>();
      const std::size_t n = shape_numel(shape);
      if (base + off + 4 * n > bytes.size()) throw IoError("checkpoint: truncated payload for tensor " + name);
      std::vector<float> data(n);
      for (std::size_t i = 0; i < n; ++i) data[i] = std::bit_cast<float>(detail::get_u32(p + base + off + 4 * i));
      ck.tensors.emplace_back(name, Tensor<float>(shape, std::move(data)));
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint: malformed manifest (") + e.what() + ")");
  } catch (const ShapeError& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  auto out = detail::open_out(path, std::ios::binary);
  const auto bytes = serialize_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto in = detail::open_in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

/// Snapshot of model tensors (values only).
inline std::vector<std::pair<std::string, Tensor<float>>> snapshot(const NamedTensors<float>& named) {
  std::vector<std::pair<std::string, Tensor<float>>> out;
  for (const auto& [n, t] : named) out.emplace_back(n, t.clone());
  return out;
}

/// Copies checkpoint values into the model's tensors, in place. Every model
/// tensor must be present with a matching shape.
inline void restore(const Checkpoint& ck, const NamedTensors<float>& named) {
  for (const auto& [name, t] : named) {
    const auto* src = ck.find(name);
    if (!src) throw IoError("checkpoint: missing tensor " + name);
    if (src->shape() != t.shape())
      throw IoError("checkpoint: tensor " + name + " has shape " + shape_str(src->shape()) + ", model expects " +
                    shape_str(t.shape()));
    auto dst = t;
    std::copy(src->values().begin(), src->values().end(), dst.values().begin());
  }
}

// ---------------------------------------------------------------------------
// Wavefront OBJ

inline void write_obj(std::ostream& out, const Eigen::MatrixXd& vertices, const std::vector<Face>& faces) {
  out << std::setprecision(6);
  for (Eigen::Index i = 0; i < vertices.rows(); ++i)
    out << "v " << vertices(i, 0) << ' ' << vertices(i, 1) << ' ' << vertices(i, 2) << '\n';
  for (const auto& f : faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

inline void save_obj(const std::filesystem::path& path, const Eigen::MatrixXd& vertices, const std::vector<Face>& faces) {
  auto out = detail::open_out(path);
  write_obj(out, vertices, faces);
}

struct ObjMesh {
  Eigen::MatrixXd vertices;
  std::vector<Face> faces;
};

/// Reads "v" and triangular "f" records; face tokens may carry /vt/vn suffixes.
inline ObjMesh read_obj(std::istream& in) {
  std::vector<Eigen::Vector3d> verts;
  ObjMesh m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Eigen::Vector3d v;
      if (!(ls >> v(0) >> v(1) >> v(2))) throw IoError("obj:" + std::to_string(lineno) + ": malformed vertex");
      verts.push_back(v);
    } else if (tag == "f") {
      std::vector<std::size_t> idx;
      std::string tok;
      while (ls >> tok) {
        const long k = std::stol(tok.substr(0, tok.find('/')));
        if (k < 1) throw IoError("obj:" + std::to_string(lineno) + ": unsupported face index");
        idx.push_back(static_cast<std::size_t>(k - 1));
      }
      if (idx.size() != 3) throw IoError("obj:" + std::to_string(lineno) + ": only triangles are supported");
      m.faces.push_back({idx[0], idx[1], idx[2]});
    }
  }
  m.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) m.vertices.row(static_cast<Eigen::Index>(i)) = verts[i].transpose();
  for (const auto& f : m.faces)
    for (auto v : f)
      if (v >= verts.size()) throw IoError("obj: face references missing vertex " + std::to_string(v + 1));
  return m;
}

inline ObjMesh load_obj(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return read_obj(in);
}

} // namespace p2m
