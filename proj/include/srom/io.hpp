#pragma once

// On-disk formats.
//
// Binary container (.srom), all integers and floats little-endian:
//   "SROM" | u16 version | u32 rows | u32 cols | f64 dt | f64 t0 | rows*cols f64 (row-major)
// A basis file is the container holding the N_x x r mode matrix (dt = t0 = 0)
// followed by a descriptor record:
//   "PODB" | u32 r | u32 M | u8 inner-product tag (0 = euclidean) | u32 n | n f64 eigenvalues
//
// Model file: JSON, see model_to_json.

#include <openssl/evp.h>

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "srom/error.hpp"
#include "srom/fem.hpp"
#include "srom/pod.hpp"
#include "srom/srom.hpp"

namespace srom {

inline constexpr std::uint16_t kContainerVersion = 1;
inline constexpr int kModelFormatVersion = 1;

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(bytes.begin(), bytes.end());
  out.append(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& data, std::string name) : data_(data), name_(std::move(name)) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > data_.size()) throw MissingInput(name_ + ": truncated file");
    std::array<unsigned char, sizeof(T)> bytes{};
    std::memcpy(bytes.data(), data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
      std::reverse(bytes.begin(), bytes.end());
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
  }

  std::string bytes(std::size_t n) {
    if (pos_ + n > data_.size()) throw MissingInput(name_ + ": truncated file");
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInput("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MissingInput("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw MissingInput("write failed for " + path.string());
}

inline std::string sha256_hex(const std::string& data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorCategory::numerical, "sha256 failed");
  std::ostringstream ss;
  for (unsigned int i = 0; i < len; ++i)
    ss << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return ss.str();
}

inline std::string encode_container(const Eigen::MatrixXd& values, double dt, double t0) {
  std::string out = "SROM";
  detail::put_le<std::uint16_t>(out, kContainerVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(values.rows()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(values.cols()));
  detail::put_le<double>(out, dt);
  detail::put_le<double>(out, t0);
  out.reserve(out.size() + 8 * values.size());
  for (Eigen::Index i = 0; i < values.rows(); ++i)
    for (Eigen::Index j = 0; j < values.cols(); ++j) detail::put_le<double>(out, values(i, j));
  return out;
}

struct Container {
  Eigen::MatrixXd values;
  double dt = 0.0;
  double t0 = 0.0;
};

inline Container decode_container(detail::Reader& in, const std::string& name) {
  if (in.bytes(4) != "SROM") throw MissingInput(name + ": bad magic");
  const auto version = in.get<std::uint16_t>();
  if (version != kContainerVersion)
    throw MissingInput(name + ": unsupported container version " + std::to_string(version));
  const auto rows = in.get<std::uint32_t>();
  const auto cols = in.get<std::uint32_t>();
  Container c;
  c.dt = in.get<double>();
  c.t0 = in.get<double>();
  c.values.resize(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j) c.values(i, j) = in.get<double>();
  return c;
}

inline std::string encode_snapshot(const SnapshotMatrix& s) {
  return encode_container(s.values, s.dt, s.t0);
}

inline SnapshotMatrix decode_snapshot(const std::string& bytes, const std::string& name = "snapshot") {
  detail::Reader in(bytes, name);
  Container c = decode_container(in, name);
  if (!in.at_end()) throw MissingInput(name + ": trailing bytes after snapshot payload");
  SnapshotMatrix s{std::move(c.values), c.dt, c.t0};
  s.validate();
  return s;
}

inline void write_snapshot(const std::filesystem::path& path, const SnapshotMatrix& s) {
  write_file(path, encode_snapshot(s));
}

inline SnapshotMatrix read_snapshot(const std::filesystem::path& path) {
  return decode_snapshot(read_file(path), path.string());
}

/// traj_{m:05}.srom
inline std::string trajectory_filename(int m) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "traj_%05d.srom", m);
  return buf;
}

inline std::string encode_basis(const PodBasis& basis) {
  std::string out = encode_container(basis.modes, 0.0, 0.0);
  out += "PODB";
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(basis.r()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(basis.n_trajectories));
  detail::put_le<std::uint8_t>(out, 0);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(basis.eigenvalues.size()));
  for (Eigen::Index i = 0; i < basis.eigenvalues.size(); ++i)
    detail::put_le<double>(out, basis.eigenvalues(i));
  return out;
}

inline PodBasis decode_basis(const std::string& bytes, const std::string& name = "basis") {
  detail::Reader in(bytes, name);
  Container c = decode_container(in, name);
  if (in.bytes(4) != "PODB") throw MissingInput(name + ": missing basis descriptor");
  PodBasis b;
  const auto r = in.get<std::uint32_t>();
  b.n_trajectories = static_cast<int>(in.get<std::uint32_t>());
  if (in.get<std::uint8_t>() != 0) throw MissingInput(name + ": unknown inner-product tag");
  const auto n = in.get<std::uint32_t>();
  b.eigenvalues.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) b.eigenvalues(i) = in.get<double>();
  if (!in.at_end()) throw MissingInput(name + ": trailing bytes");
  if (static_cast<Eigen::Index>(r) != c.values.cols())
    throw MissingInput(name + ": descriptor r does not match the mode matrix");
  b.modes = std::move(c.values);
  return b;
}

inline void write_basis(const std::filesystem::path& path, const PodBasis& basis) {
  write_file(path, encode_basis(basis));
}

inline PodBasis read_basis(const std::filesystem::path& path) {
  return decode_basis(read_file(path), path.string());
}

/// Content hash of the mode matrix.
inline std::string basis_fingerprint(const PodBasis& basis) {
  return sha256_hex(encode_container(basis.modes, 0.0, 0.0));
}

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) arr.push_back(m(i, j));
  return arr;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, int rows, int cols,
                                        const std::string& what) {
  if (!j.is_array() || static_cast<int>(j.size()) != rows * cols)
    throw InvalidArgument("model: '" + what + "' must hold " + std::to_string(rows * cols) +
                          " numbers");
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int k = 0; k < cols; ++k) m(i, k) = j.at(i * cols + k).get<double>();
  return m;
}

inline nlohmann::json tensor_to_json(const Tensor3& t) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& slice : t) arr.push_back(matrix_to_json(slice));
  return arr;
}

inline Tensor3 tensor_from_json(const nlohmann::json& j, int r, const std::string& what) {
  if (!j.is_array() || static_cast<int>(j.size()) != r)
    throw InvalidArgument("model: '" + what + "' must hold " + std::to_string(r) + " slices");
  Tensor3 t;
  for (int k = 0; k < r; ++k) t.push_back(matrix_from_json(j.at(k), r, r, what));
  return t;
}

}  // namespace detail

inline nlohmann::json model_to_json(const SromModel& m) {
  nlohmann::json j;
  j["format"] = "srom-model";
  j["version"] = kModelFormatVersion;
  j["r"] = m.r;
  j["delta"] = m.delta;
  j["nu"] = m.galerkin.nu;
  j["A"] = detail::matrix_to_json(m.galerkin.A);
  j["A_tilde"] = detail::matrix_to_json(m.closure.A_tilde);
  j["B"] = detail::tensor_to_json(m.galerkin.B);
  j["B_tilde"] = detail::tensor_to_json(m.closure.B_tilde);
  j["sigma"] = detail::matrix_to_json(m.closure.sigma);
  j["lambda"] = m.closure.lambda_used;
  j["fit_loss"] = m.closure.fit_loss;
  j["basis_fingerprint"] = m.basis_fingerprint;
  j["provenance"] = {{"nu", m.provenance.nu},
                     {"num_trajectories", m.provenance.n_trajectories},
                     {"gap", m.provenance.gap},
                     {"seed", m.provenance.seed},
                     {"t_start", m.provenance.t_start},
                     {"t_end", m.provenance.t_end}};
  return j;
}

inline SromModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "srom-model")
      throw InvalidArgument("model: not an srom-model document");
    if (j.at("version").get<int>() != kModelFormatVersion)
      throw InvalidArgument("model: unsupported version");
    SromModel m;
    m.r = j.at("r").get<int>();
    require(m.r >= 1, "model: r must be >= 1");
    m.delta = j.at("delta").get<double>();
    m.galerkin.r = m.r;
    m.galerkin.nu = j.at("nu").get<double>();
    m.galerkin.A = detail::matrix_from_json(j.at("A"), m.r, m.r, "A");
    m.galerkin.B = detail::tensor_from_json(j.at("B"), m.r, "B");
    m.closure.A_tilde = detail::matrix_from_json(j.at("A_tilde"), m.r, m.r, "A_tilde");
    m.closure.B_tilde = detail::tensor_from_json(j.at("B_tilde"), m.r, "B_tilde");
    m.closure.sigma = detail::matrix_from_json(j.at("sigma"), m.r, 1, "sigma");
    m.closure.lambda_used = j.at("lambda").get<double>();
    m.closure.fit_loss = j.at("fit_loss").get<double>();
    m.basis_fingerprint = j.at("basis_fingerprint").get<std::string>();
    const auto& p = j.at("provenance");
    m.provenance.nu = p.at("nu").get<double>();
    m.provenance.n_trajectories = p.at("num_trajectories").get<int>();
    m.provenance.gap = p.at("gap").get<int>();
    m.provenance.seed = p.at("seed").get<std::uint64_t>();
    m.provenance.t_start = p.at("t_start").get<double>();
    m.provenance.t_end = p.at("t_end").get<double>();
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("model: ") + e.what());
  }
}

inline void write_model(const std::filesystem::path& path, const SromModel& m) {
  write_file(path, model_to_json(m).dump(2) + "\n");
}

inline SromModel read_model(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
  return model_from_json(j);
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// CSV with header t,a_1..a_r; one row per time instance.
inline std::string trajectory_csv(const Eigen::MatrixXd& values, double delta, double t0 = 0.0) {
  std::string out = "t";
  for (Eigen::Index k = 0; k < values.rows(); ++k) out += ",a_" + std::to_string(k + 1);
  out += "\n";
  for (Eigen::Index l = 0; l < values.cols(); ++l) {
    out += format_double(t0 + static_cast<double>(l) * delta);
    for (Eigen::Index k = 0; k < values.rows(); ++k) out += "," + format_double(values(k, l));
    out += "\n";
  }
  return out;
}

}  // namespace srom
