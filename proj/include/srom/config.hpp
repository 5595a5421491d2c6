#pragma once

// Pipeline configuration (strict JSON, versioned) and dataset manifests.
//
// Every object in the config document is checked against a fixed key set;
// unknown keys are rejected. Missing keys take the defaults below, except
// "version", which is mandatory. Serializing always writes every key, so
// load -> save -> load is the identity.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <nlohmann/json.hpp>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "srom/closure.hpp"
#include "srom/error.hpp"
#include "srom/fem.hpp"
#include "srom/io.hpp"
#include "srom/random.hpp"

namespace srom {

inline constexpr int kConfigVersion = 1;
inline constexpr int kManifestVersion = 1;

struct PhysicsConfig {
  double nu = 0.002;
  double T = 2.0;
  double dt = 0.005;
  int n_elements = 256;
};

struct ReductionConfig {
  int r = 10;
  int gap = 5;
};

struct DataConfig {
  int num_trajectories = 200;
  std::uint64_t seed = 20221;
  std::string dir = "data";
};

struct RegressionConfig {
  RegularizationMode mode = RegularizationMode::lcurve;
  double lambda = 0.0;
  int mesh_size = 100;

  Regularization regularization() const { return {mode, lambda, mesh_size}; }
};

struct SweepConfig {
  std::vector<int> r_values{6, 8, 10, 12, 14, 16};
  std::vector<int> gaps{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
  int num_test = 50;
};

struct EnsembleConfig {
  int size = 100;
  std::vector<double> levels{25.0, 75.0, 95.0};
  int repetitions = 100;
};

struct StudyConfig {
  std::vector<int> ladder;  // empty: floor(10^(1 + 2j/9)) clipped to M/2
  int num_test = 100;
  double horizon = 4.0;     // prediction window [0, horizon]
  int single_fits = 20;     // trajectory-wise fits in the estimator study
  SweepConfig sweep;
  EnsembleConfig ensemble;
};

struct PipelineConfig {
  PhysicsConfig physics;
  InitialConditionSpec initial_condition;
  ReductionConfig reduction;
  DataConfig data;
  RegressionConfig regression;
  StudyConfig study;

  double delta() const { return reduction.gap * physics.dt; }

  void validate() const;
};

inline const char* to_string(RegularizationMode mode) {
  switch (mode) {
    case RegularizationMode::none: return "none";
    case RegularizationMode::fixed: return "fixed";
    case RegularizationMode::lcurve: return "lcurve";
  }
  return "none";
}

inline RegularizationMode parse_regularization_mode(const std::string& s) {
  if (s == "none") return RegularizationMode::none;
  if (s == "fixed") return RegularizationMode::fixed;
  if (s == "lcurve") return RegularizationMode::lcurve;
  throw InvalidArgument("config: regression.mode must be none, fixed or lcurve (got '" + s + "')");
}

inline void PipelineConfig::validate() const {
  const auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
  require(positive(physics.nu), "config: physics.nu must be positive");
  require(physics.n_elements >= 2, "config: physics.n_elements must be >= 2");
  step_count(physics.T, physics.dt);
  initial_condition.validate();
  require(reduction.r >= 1 && reduction.r <= physics.n_elements - 1,
          "config: reduction.r must lie in [1, n_elements - 1]");
  const long n_steps = step_count(physics.T, physics.dt);
  require(reduction.gap >= 1 && reduction.gap <= n_steps,
          "config: reduction.gap must lie in [1, T / dt]");
  require(data.num_trajectories >= 1, "config: data.num_trajectories must be >= 1");
  require(regression.lambda >= 0.0 && std::isfinite(regression.lambda),
          "config: regression.lambda must be >= 0");
  require(regression.mesh_size >= 3, "config: regression.mesh_size must be >= 3");
  for (int m : study.ladder) require(m >= 1, "config: study.ladder entries must be >= 1");
  require(study.num_test >= 1, "config: study.num_test must be >= 1");
  step_count(study.horizon, physics.dt);
  require(study.single_fits >= 0, "config: study.single_fits must be >= 0");
  for (int r : study.sweep.r_values)
    require(r >= 1 && r <= physics.n_elements - 1, "config: study.sweep.r_values out of range");
  for (int g : study.sweep.gaps)
    require(g >= 1 && g <= n_steps, "config: study.sweep.gaps out of range");
  require(study.sweep.num_test >= 1, "config: study.sweep.num_test must be >= 1");
  require(study.ensemble.size >= 1, "config: study.ensemble.size must be >= 1");
  require(study.ensemble.repetitions >= 1, "config: study.ensemble.repetitions must be >= 1");
  for (double level : study.ensemble.levels)
    require(level >= 0.0 && level <= 100.0, "config: study.ensemble.levels must lie in [0, 100]");
}

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& where,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw InvalidArgument("config: '" + where + "' must be an object");
  const std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& item : j.items())
    if (!keys.contains(item.key()))
      throw InvalidArgument("config: unknown key '" + where + "." + item.key() + "'");
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline nlohmann::json physics_to_json(const PhysicsConfig& p) {
  return {{"nu", p.nu}, {"T", p.T}, {"dt", p.dt}, {"n_elements", p.n_elements}};
}

inline nlohmann::json initial_condition_to_json(const InitialConditionSpec& s) {
  return {{"n_terms", s.n_terms}, {"mean", s.mean}, {"std", s.std}};
}

inline nlohmann::json config_to_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["version"] = kConfigVersion;
  j["physics"] = physics_to_json(c.physics);
  j["initial_condition"] = initial_condition_to_json(c.initial_condition);
  j["reduction"] = {{"r", c.reduction.r}, {"gap", c.reduction.gap}};
  j["data"] = {{"num_trajectories", c.data.num_trajectories},
               {"seed", c.data.seed},
               {"dir", c.data.dir}};
  j["regression"] = {{"mode", to_string(c.regression.mode)},
                     {"lambda", c.regression.lambda},
                     {"mesh_size", c.regression.mesh_size}};
  j["study"] = {{"ladder", c.study.ladder},
                {"num_test", c.study.num_test},
                {"horizon", c.study.horizon},
                {"single_fits", c.study.single_fits},
                {"sweep",
                 {{"r_values", c.study.sweep.r_values},
                  {"gaps", c.study.sweep.gaps},
                  {"num_test", c.study.sweep.num_test}}},
                {"ensemble",
                 {{"size", c.study.ensemble.size},
                  {"levels", c.study.ensemble.levels},
                  {"repetitions", c.study.ensemble.repetitions}}}};
  return j;
}

inline PipelineConfig config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  try {
    detail::check_keys(j, "root",
                       {"version", "physics", "initial_condition", "reduction", "data",
                        "regression", "study"});
    if (!j.contains("version")) throw InvalidArgument("config: missing 'version'");
    if (j.at("version").get<int>() != kConfigVersion)
      throw InvalidArgument("config: unsupported version " + j.at("version").dump());
    if (j.contains("physics")) {
      const auto& p = j.at("physics");
      detail::check_keys(p, "physics", {"nu", "T", "dt", "n_elements"});
      detail::read_opt(p, "nu", c.physics.nu);
      detail::read_opt(p, "T", c.physics.T);
      detail::read_opt(p, "dt", c.physics.dt);
      detail::read_opt(p, "n_elements", c.physics.n_elements);
    }
    if (j.contains("initial_condition")) {
      const auto& p = j.at("initial_condition");
      detail::check_keys(p, "initial_condition", {"n_terms", "mean", "std"});
      detail::read_opt(p, "n_terms", c.initial_condition.n_terms);
      detail::read_opt(p, "mean", c.initial_condition.mean);
      detail::read_opt(p, "std", c.initial_condition.std);
    }
    if (j.contains("reduction")) {
      const auto& p = j.at("reduction");
      detail::check_keys(p, "reduction", {"r", "gap"});
      detail::read_opt(p, "r", c.reduction.r);
      detail::read_opt(p, "gap", c.reduction.gap);
    }
    if (j.contains("data")) {
      const auto& p = j.at("data");
      detail::check_keys(p, "data", {"num_trajectories", "seed", "dir"});
      detail::read_opt(p, "num_trajectories", c.data.num_trajectories);
      detail::read_opt(p, "seed", c.data.seed);
      detail::read_opt(p, "dir", c.data.dir);
    }
    if (j.contains("regression")) {
      const auto& p = j.at("regression");
      detail::check_keys(p, "regression", {"mode", "lambda", "mesh_size"});
      if (p.contains("mode")) c.regression.mode = parse_regularization_mode(p.at("mode").get<std::string>());
      detail::read_opt(p, "lambda", c.regression.lambda);
      detail::read_opt(p, "mesh_size", c.regression.mesh_size);
    }
    if (j.contains("study")) {
      const auto& p = j.at("study");
      detail::check_keys(p, "study",
                         {"ladder", "num_test", "horizon", "single_fits", "sweep", "ensemble"});
      detail::read_opt(p, "ladder", c.study.ladder);
      detail::read_opt(p, "num_test", c.study.num_test);
      detail::read_opt(p, "horizon", c.study.horizon);
      detail::read_opt(p, "single_fits", c.study.single_fits);
      if (p.contains("sweep")) {
        const auto& s = p.at("sweep");
        detail::check_keys(s, "study.sweep", {"r_values", "gaps", "num_test"});
        detail::read_opt(s, "r_values", c.study.sweep.r_values);
        detail::read_opt(s, "gaps", c.study.sweep.gaps);
        detail::read_opt(s, "num_test", c.study.sweep.num_test);
      }
      if (p.contains("ensemble")) {
        const auto& s = p.at("ensemble");
        detail::check_keys(s, "study.ensemble", {"size", "levels", "repetitions"});
        detail::read_opt(s, "size", c.study.ensemble.size);
        detail::read_opt(s, "levels", c.study.ensemble.levels);
        detail::read_opt(s, "repetitions", c.study.ensemble.repetitions);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const MissingInput&) {
    throw MissingInput("config file not found: " + path.string());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

inline void save_config(const std::filesystem::path& path, const PipelineConfig& c) {
  write_file(path, config_to_json(c).dump(2) + "\n");
}

/// Hash of everything that determines a trajectory's content besides its seed.
inline std::string physics_hash(const PhysicsConfig& p, const InitialConditionSpec& ic) {
  const nlohmann::json j = {{"physics", physics_to_json(p)},
                            {"initial_condition", initial_condition_to_json(ic)}};
  return sha256_hex(j.dump());
}

// ---------------------------------------------------------------------------
// Manifests

inline const char* to_string(SeedDomain d) {
  switch (d) {
    case SeedDomain::training_ic: return "training_ic";
    case SeedDomain::test_ic: return "test_ic";
    case SeedDomain::ensemble_noise: return "ensemble_noise";
  }
  return "training_ic";
}

inline SeedDomain parse_seed_domain(const std::string& s) {
  if (s == "training_ic") return SeedDomain::training_ic;
  if (s == "test_ic") return SeedDomain::test_ic;
  if (s == "ensemble_noise") return SeedDomain::ensemble_noise;
  throw MissingInput("manifest: unknown seed domain '" + s + "'");
}

struct ManifestEntry {
  std::string file;
  int index = 0;
  std::uint64_t sub_seed = 0;
  std::string sha256;
};

/// Index of a directory of binary containers. `kind` is "snapshots" (FOM
/// trajectories) or "coefficients" (projected trajectories).
struct Manifest {
  std::string kind = "snapshots";
  std::string config_hash;
  PhysicsConfig physics;
  InitialConditionSpec initial_condition;
  std::uint64_t seed = 0;
  SeedDomain domain = SeedDomain::training_ic;
  int gap = 1;                    // coefficients only
  std::string basis_fingerprint;  // coefficients only
  std::vector<ManifestEntry> files;
};

inline constexpr const char* kManifestName = "manifest.json";

inline nlohmann::json manifest_to_json(const Manifest& m) {
  nlohmann::json files = nlohmann::json::array();
  for (const auto& f : m.files)
    files.push_back({{"file", f.file}, {"index", f.index}, {"sub_seed", f.sub_seed},
                     {"sha256", f.sha256}});
  nlohmann::json j = {{"format", "srom-manifest"},
                      {"version", kManifestVersion},
                      {"kind", m.kind},
                      {"config_hash", m.config_hash},
                      {"physics", physics_to_json(m.physics)},
                      {"initial_condition", initial_condition_to_json(m.initial_condition)},
                      {"seed", m.seed},
                      {"domain", to_string(m.domain)},
                      {"num_trajectories", static_cast<int>(m.files.size())},
                      {"files", files}};
  if (m.kind == "coefficients") {
    j["gap"] = m.gap;
    j["basis_fingerprint"] = m.basis_fingerprint;
  }
  return j;
}

inline Manifest manifest_from_json(const nlohmann::json& j, const std::string& where) {
  try {
    if (j.at("format").get<std::string>() != "srom-manifest" ||
        j.at("version").get<int>() != kManifestVersion)
      throw MissingInput(where + ": not a version-1 srom manifest");
    Manifest m;
    m.kind = j.at("kind").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    const auto& p = j.at("physics");
    m.physics = {p.at("nu").get<double>(), p.at("T").get<double>(), p.at("dt").get<double>(),
                 p.at("n_elements").get<int>()};
    const auto& ic = j.at("initial_condition");
    m.initial_condition = {ic.at("n_terms").get<int>(), ic.at("mean").get<double>(),
                           ic.at("std").get<double>()};
    m.seed = j.at("seed").get<std::uint64_t>();
    m.domain = parse_seed_domain(j.at("domain").get<std::string>());
    if (m.kind == "coefficients") {
      m.gap = j.at("gap").get<int>();
      m.basis_fingerprint = j.at("basis_fingerprint").get<std::string>();
    } else if (m.kind != "snapshots") {
      throw MissingInput(where + ": unknown manifest kind '" + m.kind + "'");
    }
    for (const auto& f : j.at("files"))
      m.files.push_back({f.at("file").get<std::string>(), f.at("index").get<int>(),
                         f.at("sub_seed").get<std::uint64_t>(), f.at("sha256").get<std::string>()});
    if (static_cast<int>(m.files.size()) != j.at("num_trajectories").get<int>())
      throw MissingInput(where + ": file count does not match num_trajectories");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw MissingInput(where + ": malformed manifest: " + e.what());
  }
}

/// Writes the containers and the manifest. File m holds `payloads[m]`.
inline Manifest write_container_directory(const std::filesystem::path& dir, Manifest manifest,
                                          std::span<const std::string> payloads) {
  manifest.files.clear();
  std::filesystem::create_directories(dir);
  for (std::size_t m = 0; m < payloads.size(); ++m) {
    const std::string name = trajectory_filename(static_cast<int>(m));
    write_file(dir / name, payloads[m]);
    manifest.files.push_back({name, static_cast<int>(m),
                              sub_seed(manifest.seed, m, manifest.domain), sha256_hex(payloads[m])});
  }
  write_file(dir / kManifestName, manifest_to_json(manifest).dump(2) + "\n");
  return manifest;
}

inline Manifest make_manifest(const PipelineConfig& c, SeedDomain domain, double T) {
  Manifest m;
  m.physics = c.physics;
  m.physics.T = T;
  m.initial_condition = c.initial_condition;
  m.config_hash = physics_hash(m.physics, m.initial_condition);
  m.seed = c.data.seed;
  m.domain = domain;
  return m;
}

inline Manifest write_dataset(const std::filesystem::path& dir, const PipelineConfig& c,
                              std::span<const SnapshotMatrix> data,
                              SeedDomain domain = SeedDomain::training_ic) {
  require(!data.empty(), "write_dataset: empty dataset");
  const double T = data.front().dt * static_cast<double>(data.front().n_times() - 1);
  std::vector<std::string> payloads;
  payloads.reserve(data.size());
  for (const auto& y : data) payloads.push_back(encode_snapshot(y));
  return write_container_directory(dir, make_manifest(c, domain, T), payloads);
}

/// Reads the manifest and verifies every listed checksum. Returns the raw
/// payloads in manifest order.
inline std::vector<std::string> verify_container_directory(const std::filesystem::path& dir,
                                                           Manifest& manifest) {
  const std::filesystem::path mpath = dir / kManifestName;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(mpath));
  } catch (const nlohmann::json::exception& e) {
    throw MissingInput(mpath.string() + ": " + e.what());
  }
  manifest = manifest_from_json(j, mpath.string());
  if (manifest.kind == "snapshots" &&
      manifest.config_hash != physics_hash(manifest.physics, manifest.initial_condition))
    throw MissingInput(mpath.string() + ": config hash does not match the recorded settings");
  std::vector<std::string> payloads;
  payloads.reserve(manifest.files.size());
  for (const auto& f : manifest.files) {
    if (f.file.find('/') != std::string::npos || f.file.find('\\') != std::string::npos)
      throw MissingInput(mpath.string() + ": file names must be plain (" + f.file + ")");
    std::string bytes;
    try {
      bytes = read_file(dir / f.file);
    } catch (const MissingInput&) {
      throw MissingInput("dataset file missing: " + (dir / f.file).string());
    }
    if (sha256_hex(bytes) != f.sha256)
      throw MissingInput("checksum mismatch: " + (dir / f.file).string());
    payloads.push_back(std::move(bytes));
  }
  return payloads;
}

/// Fails unless the dataset was produced with the physics and initial-condition
/// settings of `c` (the time window may differ).
inline void check_compatible(const Manifest& m, const PipelineConfig& c, const std::string& where) {
  PhysicsConfig expected = c.physics;
  expected.T = m.physics.T;
  if (m.config_hash != physics_hash(expected, c.initial_condition))
    throw MissingInput(where + ": dataset was generated with different physics or initial-condition "
                               "settings (nu=" + format_double(m.physics.nu) + ", dt=" +
                       format_double(m.physics.dt) + ", n_elements=" +
                       std::to_string(m.physics.n_elements) + ")");
}

struct LoadedDataset {
  Manifest manifest;
  std::vector<SnapshotMatrix> trajectories;
};

inline LoadedDataset load_dataset(const std::filesystem::path& dir, const PipelineConfig& c) {
  LoadedDataset out;
  const auto payloads = verify_container_directory(dir, out.manifest);
  if (out.manifest.kind != "snapshots")
    throw MissingInput(dir.string() + ": expected a snapshot dataset");
  check_compatible(out.manifest, c, dir.string());
  out.trajectories.reserve(payloads.size());
  for (std::size_t m = 0; m < payloads.size(); ++m)
    out.trajectories.push_back(decode_snapshot(payloads[m], (dir / out.manifest.files[m].file).string()));
  for (const auto& y : out.trajectories)
    if (y.n_nodes() != c.physics.n_elements + 1)
      throw MissingInput(dir.string() + ": snapshot dimension does not match n_elements");
  return out;
}

/// Coefficient trajectories are stored as containers of shape r x n_t with
/// dt = delta.
inline Manifest write_coefficients(const std::filesystem::path& dir, const PipelineConfig& c,
                                   std::span<const CoefficientTrajectory> trajs,
                                   const std::string& fingerprint, SeedDomain domain,
                                   double T) {
  Manifest m = make_manifest(c, domain, T);
  m.kind = "coefficients";
  m.gap = trajs.empty() ? c.reduction.gap : trajs.front().gap;
  m.basis_fingerprint = fingerprint;
  std::vector<std::string> payloads;
  for (const auto& t : trajs) payloads.push_back(encode_container(t.values, t.delta, t.t0));
  return write_container_directory(dir, m, payloads);
}

struct LoadedCoefficients {
  Manifest manifest;
  std::vector<CoefficientTrajectory> trajectories;
};

inline LoadedCoefficients load_coefficients(const std::filesystem::path& dir) {
  LoadedCoefficients out;
  const auto payloads = verify_container_directory(dir, out.manifest);
  if (out.manifest.kind != "coefficients")
    throw MissingInput(dir.string() + ": expected a coefficient dataset");
  for (std::size_t m = 0; m < payloads.size(); ++m) {
    const std::string name = (dir / out.manifest.files[m].file).string();
    detail::Reader in(payloads[m], name);
    Container c = decode_container(in, name);
    if (!in.at_end()) throw MissingInput(name + ": trailing bytes");
    if (!c.values.allFinite()) throw MissingInput(name + ": non-finite coefficients");
    CoefficientTrajectory t;
    t.values = std::move(c.values);
    t.delta = c.dt;
    t.t0 = c.t0;
    t.gap = out.manifest.gap;
    out.trajectories.push_back(std::move(t));
  }
  return out;
}

}  // namespace srom
