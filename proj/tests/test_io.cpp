#include <gtest/gtest.h>

#include <filesystem>
#include <limits>

#include "srom/config.hpp"
#include "srom/experiments.hpp"
#include "srom/io.hpp"

using namespace srom;
namespace fs = std::filesystem;

namespace {

class IoFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() /
           (std::string("srom_io_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

PipelineConfig tiny_config() {
  PipelineConfig c;
  c.physics = {0.01, 0.2, 0.01, 16};
  c.reduction = {3, 2};
  c.data.num_trajectories = 3;
  c.data.seed = 5;
  c.study.sweep.r_values = {2, 3};
  c.validate();
  return c;
}

void flip_byte(const fs::path& p, std::size_t offset) {
  std::string bytes = read_file(p);
  bytes[offset] = static_cast<char>(bytes[offset] ^ 0x5a);
  write_file(p, bytes);
}

}  // namespace

TEST(Container, LayoutAndRoundTrip) {
  Eigen::MatrixXd m(2, 3);
  m << 1, 2, 3, 4, 5, -0.0;
  const std::string bytes = encode_container(m, 0.25, 1.5);
  ASSERT_EQ(bytes.size(), 4u + 2 + 4 + 4 + 8 + 8 + 6 * 8);
  EXPECT_EQ(bytes.substr(0, 4), "SROM");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 2);  // rows, little endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[10]), 3);  // cols
  detail::Reader in(bytes, "x");
  const Container c = decode_container(in, "x");
  EXPECT_TRUE(c.values == m);
  EXPECT_EQ(c.dt, 0.25);
  EXPECT_EQ(c.t0, 1.5);
  EXPECT_TRUE(in.at_end());
}

TEST(Container, RejectsBadMagicAndTruncation) {
  std::string bytes = encode_container(Eigen::MatrixXd::Ones(2, 2), 0.1, 0.0);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_snapshot(bad), MissingInput);
  EXPECT_THROW(decode_snapshot(bytes.substr(0, bytes.size() - 3)), MissingInput);
}

TEST_F(IoFiles, SnapshotAndBasisRoundTrip) {
  const PipelineConfig c = tiny_config();
  const auto data = generate_training(c, 1);
  write_snapshot(dir_ / "s.srom", data[0]);
  const SnapshotMatrix s = read_snapshot(dir_ / "s.srom");
  EXPECT_TRUE(s.values == data[0].values);
  EXPECT_EQ(s.dt, data[0].dt);

  PodBasis b = ensemble_pod(data, 3);
  write_basis(dir_ / "b.srom", b);
  const PodBasis back = read_basis(dir_ / "b.srom");
  EXPECT_TRUE(back.modes == b.modes);
  EXPECT_TRUE(back.eigenvalues == b.eigenvalues);
  EXPECT_EQ(back.n_trajectories, 3);
  EXPECT_EQ(basis_fingerprint(back), basis_fingerprint(b));
  b.modes(2, 1) += 1e-15;
  EXPECT_NE(basis_fingerprint(back), basis_fingerprint(b));
  EXPECT_THROW(read_basis(dir_ / "s.srom"), MissingInput);
  EXPECT_THROW(read_basis(dir_ / "absent.srom"), MissingInput);
}

TEST_F(IoFiles, ModelRoundTripIsExact) {
  const PipelineConfig c = tiny_config();
  const auto data = generate_training(c, 1);
  const TrainedModel t = train_model(c, data, ensemble_pod(data, 3), 2, 1);
  write_model(dir_ / "m.json", t.srom);
  const SromModel m = read_model(dir_ / "m.json");
  EXPECT_TRUE(m.galerkin.A == t.srom.galerkin.A);
  EXPECT_TRUE(m.closure.A_tilde == t.srom.closure.A_tilde);
  for (int k = 0; k < 3; ++k) {
    EXPECT_TRUE(m.galerkin.B[k] == t.srom.galerkin.B[k]);
    EXPECT_TRUE(m.closure.B_tilde[k] == t.srom.closure.B_tilde[k]);
  }
  EXPECT_TRUE(m.closure.sigma == t.srom.closure.sigma);
  EXPECT_EQ(m.delta, t.srom.delta);
  EXPECT_EQ(m.basis_fingerprint, t.srom.basis_fingerprint);
  EXPECT_EQ(m.provenance.gap, 2);
  EXPECT_EQ(read_file(dir_ / "m.json"), model_to_json(m).dump(2) + "\n");

  nlohmann::json j = model_to_json(m);
  j["sigma"].erase(0);
  EXPECT_THROW(model_from_json(j), InvalidArgument);
  j = model_to_json(m);
  j["format"] = "other";
  EXPECT_THROW(model_from_json(j), InvalidArgument);
}

TEST(Hashing, KnownDigest) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Csv, TrajectoryLayout) {
  Eigen::MatrixXd v(2, 2);
  v << 1.0, 0.5, -2.0, 0.1;
  EXPECT_EQ(trajectory_csv(v, 0.25), "t,a_1,a_2\n0,1,-2\n0.25,0.5,0.10000000000000001\n");
}

TEST(Config, DefaultsRoundTrip) {
  const PipelineConfig c;
  const PipelineConfig back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_EQ(c.physics.n_elements, 256);
  EXPECT_DOUBLE_EQ(c.delta(), 0.025);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  nlohmann::json j = config_to_json(PipelineConfig{});
  j["physics"]["viscosity"] = 0.1;
  EXPECT_THROW(config_from_json(j), InvalidArgument);
  j = config_to_json(PipelineConfig{});
  j["extra"] = 1;
  EXPECT_THROW(config_from_json(j), InvalidArgument);
  j = config_to_json(PipelineConfig{});
  j.erase("version");
  EXPECT_THROW(config_from_json(j), InvalidArgument);
  j = config_to_json(PipelineConfig{});
  j["physics"]["nu"] = -1.0;
  EXPECT_THROW(config_from_json(j), InvalidArgument);
  j = config_to_json(PipelineConfig{});
  j["physics"]["dt"] = 0.003;  // T / dt not an integer
  EXPECT_THROW(config_from_json(j), InvalidArgument);
  j = config_to_json(PipelineConfig{});
  j["regression"]["mode"] = "ridge";
  EXPECT_THROW(config_from_json(j), InvalidArgument);
}

TEST(Config, MissingSectionsTakeDefaults) {
  const PipelineConfig c = config_from_json({{"version", 1}, {"reduction", {{"r", 4}}}});
  EXPECT_EQ(c.reduction.r, 4);
  EXPECT_EQ(c.reduction.gap, 5);
  EXPECT_DOUBLE_EQ(c.physics.nu, 0.002);
}

TEST(Config, ShippedReferenceConfig) {
  const PipelineConfig c = load_config(fs::path(SROM_CONFIG_DIR) / "reference.json");
  EXPECT_DOUBLE_EQ(c.physics.nu, 0.002);
  EXPECT_EQ(c.physics.n_elements, 256);
  EXPECT_DOUBLE_EQ(c.physics.dt, 0.005);
  EXPECT_DOUBLE_EQ(c.physics.T, 2.0);
  EXPECT_EQ(c.initial_condition.n_terms, 50);
  EXPECT_DOUBLE_EQ(c.initial_condition.mean, 0.5);
  EXPECT_DOUBLE_EQ(c.initial_condition.std, 0.2);
  EXPECT_EQ(c.reduction.r, 10);
  EXPECT_EQ(c.reduction.gap, 5);
  load_config(fs::path(SROM_CONFIG_DIR) / "smoke.json");
}

TEST_F(IoFiles, MissingConfigFile) {
  EXPECT_THROW(load_config(dir_ / "nope.json"), MissingInput);
  write_file(dir_ / "bad.json", "{ not json");
  EXPECT_THROW(load_config(dir_ / "bad.json"), InvalidArgument);
}

TEST_F(IoFiles, ManifestVerification) {
  const PipelineConfig c = tiny_config();
  const auto data = generate_training(c, 1);
  const Manifest m = write_dataset(dir_ / "d", c, data);
  ASSERT_EQ(m.files.size(), 3u);
  EXPECT_EQ(m.files[1].sub_seed, sub_seed(5, 1, SeedDomain::training_ic));
  EXPECT_EQ(m.config_hash, physics_hash(c.physics, c.initial_condition));

  const LoadedDataset loaded = load_dataset(dir_ / "d", c);
  ASSERT_EQ(loaded.trajectories.size(), 3u);
  EXPECT_TRUE(loaded.trajectories[2].values == data[2].values);

  PipelineConfig other = c;
  other.physics.nu = 0.02;
  try {
    load_dataset(dir_ / "d", other);
    FAIL() << "expected a compatibility error";
  } catch (const MissingInput& e) {
    EXPECT_NE(std::string(e.what()).find("different physics"), std::string::npos);
  }

  flip_byte(dir_ / "d" / m.files[1].file, 60);
  try {
    load_dataset(dir_ / "d", c);
    FAIL() << "expected a checksum error";
  } catch (const MissingInput& e) {
    EXPECT_NE(std::string(e.what()).find(m.files[1].file), std::string::npos);
  }
  fs::remove(dir_ / "d" / kManifestName);
  EXPECT_THROW(load_dataset(dir_ / "d", c), MissingInput);
}

TEST_F(IoFiles, CoefficientDatasetRoundTrip) {
  const PipelineConfig c = tiny_config();
  const auto data = generate_training(c, 1);
  const PodBasis b = ensemble_pod(data, 3);
  const auto coeffs = project_dataset(data, b, 2);
  write_coefficients(dir_ / "c", c, coeffs, basis_fingerprint(b), SeedDomain::training_ic, 0.2);
  const LoadedCoefficients back = load_coefficients(dir_ / "c");
  EXPECT_EQ(back.manifest.kind, "coefficients");
  EXPECT_EQ(back.manifest.basis_fingerprint, basis_fingerprint(b));
  ASSERT_EQ(back.trajectories.size(), coeffs.size());
  EXPECT_TRUE(back.trajectories[0].values == coeffs[0].values);
  EXPECT_EQ(back.trajectories[0].gap, 2);
  EXPECT_EQ(back.trajectories[0].delta, coeffs[0].delta);
  EXPECT_THROW(load_dataset(dir_ / "c", c), MissingInput);
}

TEST_F(IoFiles, ReportRoundTrip) {
  StudyReport r;
  r.study_id = "demo";
  r.seed = 3;
  r.config = config_to_json(PipelineConfig{});
  Table t{"numbers", {}};
  t.add("x", "1", {1.0, 2.0, 3.0}).add("y", "m", {0.1, std::numeric_limits<double>::quiet_NaN(), 1e-300});
  r.tables.push_back(t);
  r.slopes["y"] = {-0.5, 1.25, 0.99};
  r.markers["flag"] = true;
  write_report(dir_ / "rep", r);
  const StudyReport back = read_report(dir_ / "rep");
  EXPECT_EQ(back.study_id, "demo");
  EXPECT_EQ(back.seed, 3u);
  EXPECT_EQ(back.markers, r.markers);
  EXPECT_EQ(back.slopes.at("y").slope, -0.5);
  const Table& bt = back.table("numbers");
  EXPECT_EQ(bt.column("y").unit, "m");
  EXPECT_EQ(bt.column("y").values[0], 0.1);
  EXPECT_TRUE(std::isnan(bt.column("y").values[1]));
  EXPECT_EQ(bt.column("y").values[2], 1e-300);
  EXPECT_EQ(table_csv(bt), table_csv(t));
  EXPECT_THROW(back.table("missing"), InvalidArgument);
}
