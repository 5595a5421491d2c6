#pragma once

// Ensemble POD: spatial modes from the trajectory-averaged covariance
//   K_M = (1/M) sum_m Y_m Y_m^T / N_t
// in the Euclidean inner product on nodal values.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "srom/error.hpp"
#include "srom/fem.hpp"
#include "srom/parallel.hpp"

namespace srom {

enum class InnerProduct { euclidean };

struct PodBasis {
  Eigen::MatrixXd modes;        // N_x x r, orthonormal columns
  Eigen::VectorXd eigenvalues;  // length N_x, descending
  int n_trajectories = 0;
  InnerProduct inner_product = InnerProduct::euclidean;
  bool aligned = false;  // set by align_basis

  Eigen::Index n_nodes() const { return modes.rows(); }
  int r() const { return static_cast<int>(modes.cols()); }

  /// Leading r' modes; eigenvalues and metadata are shared.
  PodBasis truncated(int r_new) const {
    require(r_new >= 1 && r_new <= r(), "truncated: r out of range");
    PodBasis out = *this;
    out.modes = modes.leftCols(r_new);
    return out;
  }
};

struct CoefficientTrajectory {
  Eigen::MatrixXd values;  // r x n_t
  double delta = 0.0;
  int gap = 1;
  double t0 = 0.0;

  int r() const { return static_cast<int>(values.rows()); }
  Eigen::Index n_times() const { return values.cols(); }
};

namespace detail {

/// Flip the sign so that the entry of largest magnitude is positive.
inline void canonicalize_sign(Eigen::Ref<Eigen::VectorXd> v) {
  Eigen::Index idx = 0;
  v.cwiseAbs().maxCoeff(&idx);
  if (v(idx) < 0.0) v = -v;
}

}  // namespace detail

/// Trajectory-averaged covariance over the interior nodes.
inline Eigen::MatrixXd averaged_covariance(std::span<const SnapshotMatrix> dataset,
                                           std::size_t threads = 0) {
  require(!dataset.empty(), "ensemble_pod: empty dataset");
  const Eigen::Index n_nodes = dataset.front().n_nodes();
  for (const auto& y : dataset)
    require(y.n_nodes() == n_nodes, "ensemble_pod: snapshot dimension mismatch");
  const Eigen::Index n = n_nodes - 2;
  std::vector<Eigen::MatrixXd> per_traj(dataset.size());
  parallel_for(dataset.size(), threads, [&](std::size_t m) {
    const auto interior = dataset[m].values.middleRows(1, n);
    Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n, n);
    k.selfadjointView<Eigen::Lower>().rankUpdate(interior);
    k = k.selfadjointView<Eigen::Lower>();
    per_traj[m] = k / static_cast<double>(interior.cols());
  });
  return pairwise_sum(std::move(per_traj)) / static_cast<double>(dataset.size());
}

inline PodBasis ensemble_pod(std::span<const SnapshotMatrix> dataset, int r,
                             std::size_t threads = 0) {
  require(!dataset.empty(), "ensemble_pod: empty dataset");
  const Eigen::Index n_nodes = dataset.front().n_nodes();
  require(r >= 1 && r <= n_nodes, "ensemble_pod: r must lie in [1, N_x]");
  const Eigen::MatrixXd cov = averaged_covariance(dataset, threads);
  const Eigen::Index n = cov.rows();

  // Boundary rows of every snapshot vanish, so the full covariance is the
  // interior block padded by zeros; decompose the interior block only.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericalError("ensemble_pod: eigensolver failed");

  PodBasis basis;
  basis.n_trajectories = static_cast<int>(dataset.size());
  basis.eigenvalues = Eigen::VectorXd::Zero(n_nodes);
  for (Eigen::Index i = 0; i < n; ++i)
    basis.eigenvalues(i) = std::max(0.0, eig.eigenvalues()(n - 1 - i));

  basis.modes = Eigen::MatrixXd::Zero(n_nodes, r);
  for (int j = 0; j < r; ++j) {
    if (j < n) {
      basis.modes.col(j).segment(1, n) = eig.eigenvectors().col(n - 1 - j).normalized();
    } else {
      // Only reachable for r > N_x - 2: the null directions are the boundary nodes.
      basis.modes(j == n ? 0 : n_nodes - 1, j) = 1.0;
    }
    detail::canonicalize_sign(basis.modes.col(j));
  }
  return basis;
}

inline PodBasis align_basis(const PodBasis& basis, const PodBasis& reference) {
  require(basis.modes.rows() == reference.modes.rows() && basis.r() == reference.r(),
          "align_basis: dimension mismatch");
  PodBasis out = basis;
  for (int j = 0; j < out.r(); ++j)
    if (out.modes.col(j).dot(reference.modes.col(j)) < 0.0) out.modes.col(j) *= -1.0;
  out.aligned = true;
  return out;
}

/// a_i(t_l) = phi_i^T Y[:, l * gap], l = 0 .. floor((N_t - 1) / gap).
inline CoefficientTrajectory project_trajectory(const SnapshotMatrix& y, const PodBasis& basis,
                                                int gap) {
  require(gap >= 1, "project_trajectory: gap must be >= 1");
  require(y.n_times() >= 2, "project_trajectory: need at least two time instances");
  require(gap <= y.n_times() - 1, "project_trajectory: gap exceeds N_t - 1");
  require(y.n_nodes() == basis.n_nodes(), "project_trajectory: dimension mismatch");
  const Eigen::Index n_t = (y.n_times() - 1) / gap + 1;
  Eigen::MatrixXd sampled(y.n_nodes(), n_t);
  for (Eigen::Index l = 0; l < n_t; ++l) sampled.col(l) = y.values.col(l * gap);
  CoefficientTrajectory out;
  out.values = basis.modes.transpose() * sampled;
  out.delta = gap * y.dt;
  out.gap = gap;
  out.t0 = y.t0;
  return out;
}

inline std::vector<CoefficientTrajectory> project_dataset(std::span<const SnapshotMatrix> dataset,
                                                          const PodBasis& basis, int gap,
                                                          std::size_t threads = 0) {
  std::vector<CoefficientTrajectory> out(dataset.size());
  parallel_for(dataset.size(), threads,
               [&](std::size_t m) { out[m] = project_trajectory(dataset[m], basis, gap); });
  return out;
}

struct EnergyCapture {
  double fraction = 1.0;
  bool zero_energy = false;  // ||Y||_F == 0, fraction is 1 by convention
};

/// ||Phi Phi^T Y||_F^2 / ||Y||_F^2
inline EnergyCapture energy_capture(const SnapshotMatrix& y, const PodBasis& basis) {
  require(y.n_nodes() == basis.n_nodes(), "energy_capture: dimension mismatch");
  const double total = y.values.squaredNorm();
  if (total == 0.0) return {1.0, true};
  const double kept = (basis.modes.transpose() * y.values).squaredNorm();
  return {std::min(1.0, kept / total), false};
}

struct PodErrors {
  Eigen::VectorXd mode_l2;         // ||phi_j - phi_j^ref||_{L2(0,1)}
  Eigen::VectorXd eigenvalue_abs;  // |lambda_j - lambda_j^ref|
};

inline PodErrors pod_errors(const PodBasis& basis, const PodBasis& reference,
                            const FemOperators& fem) {
  require(basis.aligned, "pod_errors: basis must be aligned to the reference first");
  require(basis.modes.rows() == reference.modes.rows() && basis.r() == reference.r(),
          "pod_errors: dimension mismatch");
  require(basis.n_nodes() == fem.n_nodes(), "pod_errors: mesh mismatch");
  PodErrors out;
  const int r = basis.r();
  out.mode_l2.resize(r);
  out.eigenvalue_abs.resize(r);
  for (int j = 0; j < r; ++j) {
    out.mode_l2(j) = fem.mass_norm(basis.modes.col(j) - reference.modes.col(j));
    out.eigenvalue_abs(j) = std::abs(basis.eigenvalues(j) - reference.eigenvalues(j));
  }
  return out;
}

}  // namespace srom
