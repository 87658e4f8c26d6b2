#include "pose2mesh/generator.hpp"
#include "pose2mesh/io.hpp"
#include "pose2mesh/models.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace p2m;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("p2m_test_io_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

} // namespace

TEST(TemplateIo, RoundTripIsValueExact) {
  auto t = build_tube_man(TemplateSpec{}).mesh;
  t.vertices(0, 0) = 0.1 + 0.2; // non-terminating binary fraction
  auto dir = temp_dir("template");
  save_template(dir / "t.json", t);
  auto r = load_template(dir / "t.json");
  EXPECT_EQ(r.vertices, t.vertices);
  EXPECT_EQ(r.faces, t.faces);
  EXPECT_EQ(r.joint_regressor, t.joint_regressor);
  EXPECT_EQ(r.skeleton_edges, t.skeleton_edges);
  EXPECT_EQ(r.symmetry_pairs, t.symmetry_pairs);
  EXPECT_EQ(r.joint_names, t.joint_names);
  EXPECT_EQ(r.root_index, t.root_index);
  EXPECT_EQ(r.skinning_weights, t.skinning_weights);
}

TEST(TemplateIo, RejectsBadInput) {
  auto j = template_to_json(build_tube_man(TemplateSpec{}).mesh);
  auto extra = j;
  extra["colour"] = 1;
  EXPECT_THROW(template_from_json(extra), IoError);
  auto missing = j;
  missing.erase("faces");
  EXPECT_THROW(template_from_json(missing), IoError);
  auto bad_face = j;
  bad_face["faces"][0] = json::array({0, 1, 100000});
  EXPECT_THROW(template_from_json(bad_face), IoError);
}

TEST(DatasetIo, RoundTripAndLineNumbers) {
  auto ds = generate_synthetic_dataset(TemplateSpec{}, 5, 1);
  auto dir = temp_dir("dataset");
  save_dataset(dir / "d.jsonl", ds.samples);
  auto back = load_dataset(dir / "d.jsonl");
  ASSERT_EQ(back.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(back[i].pose2d, ds.samples[i].pose2d);
    EXPECT_EQ(back[i].pose3d, ds.samples[i].pose3d);
    EXPECT_EQ(*back[i].mesh, *ds.samples[i].mesh);
    EXPECT_EQ(back[i].camera.scale, ds.samples[i].camera.scale);
    EXPECT_EQ(back[i].camera.offset, ds.samples[i].camera.offset);
  }
  {
    std::ofstream out(dir / "d.jsonl", std::ios::app);
    out << "{\"pose2d\": [[1, 2]], \n";
  }
  try {
    load_dataset(dir / "d.jsonl");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("d.jsonl:6:"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_dataset(dir / "missing.jsonl"), IoError);
}

TEST(CheckpointIo, RoundTripIsBitIdentical) {
  PoseNetConfig cfg;
  cfg.num_joints = 12;
  cfg.hidden = 16;
  PoseNet<float> net(cfg, 3);
  Checkpoint ck;
  ck.config = {{"levels", 3}, {"seed", 7}};
  ck.tensors = snapshot(net.named_tensors());
  ck.tensors.front().second[0] = -0.0f;
  auto dir = temp_dir("checkpoint");
  save_checkpoint(dir / "c.p2m", ck);

  std::ifstream in(dir / "c.p2m", std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  EXPECT_EQ(std::string(magic, 4), "P2M1");

  auto back = load_checkpoint(dir / "c.p2m");
  EXPECT_EQ(back.config, ck.config);
  ASSERT_EQ(back.tensors.size(), ck.tensors.size());
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    EXPECT_EQ(back.tensors[i].first, ck.tensors[i].first);
    EXPECT_EQ(back.tensors[i].second.shape(), ck.tensors[i].second.shape());
    const auto& a = back.tensors[i].second.values();
    const auto& b = ck.tensors[i].second.values();
    EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)), 0);
  }

  PoseNet<float> other(cfg, 99);
  restore(back, other.named_tensors());
  auto x = other.named_tensors();
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i].second.values(), back.tensors[i].second.values());
}

TEST(CheckpointIo, StructuredErrors) {
  Checkpoint ck;
  ck.tensors.emplace_back("w", Tensor<float>::of({2, 2}, {1, 2, 3, 4}));
  const auto bytes = serialize_checkpoint(ck);
  auto bad_magic = bytes;
  bad_magic[3] = '2';
  EXPECT_THROW(parse_checkpoint(bad_magic), IoError);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 3)), IoError);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, 12)), IoError);
  auto bad_manifest = bytes;
  bad_manifest[8] = '[';
  EXPECT_THROW(parse_checkpoint(bad_manifest), IoError);

  NamedTensors<float> model{{"w", Tensor<float>(Shape{3, 2})}};
  EXPECT_THROW(restore(parse_checkpoint(bytes), model), IoError);
  NamedTensors<float> other{{"v", Tensor<float>(Shape{2, 2})}};
  EXPECT_THROW(restore(parse_checkpoint(bytes), other), IoError);
}

TEST(ObjIo, TriangleRoundTrip) {
  Eigen::MatrixXd v(3, 3);
  v << 0, 0, 0, 1.5, 0, 0, 0, 2.25, -1;
  std::vector<Face> f{{0, 1, 2}};
  std::stringstream ss;
  write_obj(ss, v, f);
  EXPECT_EQ(ss.str(), "v 0 0 0\nv 1.5 0 0\nv 0 2.25 -1\nf 1 2 3\n");
  auto m = read_obj(ss);
  EXPECT_EQ(m.vertices, v);
  EXPECT_EQ(m.faces, f);

  std::stringstream six;
  Eigen::MatrixXd p(1, 3);
  p << 123.456789, 0.000123456789, -98765.4321;
  write_obj(six, p, {});
  EXPECT_EQ(six.str(), "v 123.457 0.000123457 -98765.4\n");

  std::stringstream quad("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n");
  EXPECT_THROW(read_obj(quad), IoError);
  std::stringstream dangling("v 0 0 0\nf 1 2 3\n");
  EXPECT_THROW(read_obj(dangling), IoError);
}
