#pragma once

// Full-order model: viscous Burgers u_t = nu u_xx - u u_x on (0, 1) with
// homogeneous Dirichlet conditions, discretized by piecewise-linear finite
// elements on a uniform mesh and implicit Euler in time.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "srom/error.hpp"
#include "srom/parallel.hpp"
#include "srom/random.hpp"
#include "srom/tridiagonal.hpp"

namespace srom {

/// Mass and stiffness matrices over the interior nodes of a uniform mesh.
struct FemOperators {
  int n_elements = 0;
  double h = 0.0;
  Tridiagonal mass;
  Tridiagonal stiffness;

  int n_interior() const { return n_elements - 1; }
  int n_nodes() const { return n_elements + 1; }

  /// Continuum L2(0,1) norm of the piecewise-linear interpolant of a nodal
  /// vector (boundary entries are assumed to be zero).
  double mass_norm(const Eigen::VectorXd& nodal) const {
    const Eigen::VectorXd interior = nodal.segment(1, n_interior());
    return std::sqrt(std::max(0.0, mass.bilinear(interior, interior)));
  }
};

/// Random initial condition u0(x) = sum_k (w_k / k) sin(pi k x), w_k ~ N(mean, std^2).
struct InitialConditionSpec {
  int n_terms = 50;
  double mean = 0.5;
  double std = 0.2;

  void validate() const {
    require(n_terms >= 1, "initial condition: n_terms must be >= 1");
    require(std >= 0.0 && std::isfinite(std), "initial condition: std must be >= 0");
    require(std::isfinite(mean), "initial condition: mean must be finite");
  }
};

/// One trajectory: rows are nodes (including both boundaries), columns are
/// time instances t0 + l * dt.
struct SnapshotMatrix {
  Eigen::MatrixXd values;
  double dt = 0.0;
  double t0 = 0.0;

  Eigen::Index n_nodes() const { return values.rows(); }
  Eigen::Index n_times() const { return values.cols(); }

  void validate() const {
    require(values.rows() >= 3 && values.cols() >= 1, "snapshot: empty matrix");
    require(dt > 0.0 && std::isfinite(dt), "snapshot: dt must be positive");
    require(values.allFinite(), "snapshot: non-finite entries");
    const Eigen::Index last = values.rows() - 1;
    for (Eigen::Index j = 0; j < values.cols(); ++j)
      require(values(0, j) == 0.0 && values(last, j) == 0.0,
              "snapshot: boundary rows must be zero");
  }
};

inline FemOperators assemble_fem_operators(int n_elements) {
  if (n_elements < 2) throw InvalidArgument("invalid mesh: n_elements must be >= 2");
  FemOperators fem;
  fem.n_elements = n_elements;
  fem.h = 1.0 / n_elements;
  const int n = n_elements - 1;
  const double h = fem.h;
  fem.mass = Tridiagonal(n);
  fem.stiffness = Tridiagonal(n);
  fem.mass.diag.setConstant(4.0 * h / 6.0);
  fem.mass.lower.setConstant(h / 6.0);
  fem.mass.upper.setConstant(h / 6.0);
  fem.stiffness.diag.setConstant(2.0 / h);
  fem.stiffness.lower.setConstant(-1.0 / h);
  fem.stiffness.upper.setConstant(-1.0 / h);
  return fem;
}

/// Nodal interpolation of sum_k (w_k / k) sin(pi k x) on the uniform grid.
inline Eigen::VectorXd initial_condition_from_weights(const Eigen::VectorXd& weights,
                                                      int n_elements) {
  require(n_elements >= 2, "invalid mesh: n_elements must be >= 2");
  Eigen::VectorXd u = Eigen::VectorXd::Zero(n_elements + 1);
  for (int i = 1; i < n_elements; ++i) {
    const double x = static_cast<double>(i) / n_elements;
    double s = 0.0;
    for (Eigen::Index k = 1; k <= weights.size(); ++k)
      s += weights(k - 1) / static_cast<double>(k) *
           std::sin(std::numbers::pi * static_cast<double>(k) * x);
    u(i) = s;
  }
  return u;
}

inline Eigen::VectorXd sample_initial_condition(const InitialConditionSpec& spec, int n_elements,
                                                NormalStream& rng) {
  spec.validate();
  Eigen::VectorXd w(spec.n_terms);
  for (int k = 0; k < spec.n_terms; ++k) w(k) = rng.normal(spec.mean, spec.std);
  return initial_condition_from_weights(w, n_elements);
}

/// Exactly integrated convection vector N_i(U) = int u_h (u_h)_x phi_i dx
/// over interior nodes; `u` holds interior values, boundary values are zero.
inline Eigen::VectorXd convection(const Eigen::VectorXd& u) {
  const Eigen::Index n = u.size();
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double left = i > 0 ? u(i - 1) : 0.0;
    const double right = i + 1 < n ? u(i + 1) : 0.0;
    out(i) = (right * right + u(i) * right - u(i) * left - left * left) / 6.0;
  }
  return out;
}

/// Jacobian of convection(u).
inline Tridiagonal convection_jacobian(const Eigen::VectorXd& u) {
  const Eigen::Index n = u.size();
  Tridiagonal jac(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double left = i > 0 ? u(i - 1) : 0.0;
    const double right = i + 1 < n ? u(i + 1) : 0.0;
    jac.diag(i) = (right - left) / 6.0;
    if (i > 0) jac.lower(i - 1) = -(u(i) + 2.0 * left) / 6.0;
    if (i + 1 < n) jac.upper(i) = (2.0 * right + u(i)) / 6.0;
  }
  return jac;
}

struct NewtonOptions {
  double tolerance = 1e-10;  // max-norm of the residual
  int max_iterations = 50;
};

/// Number of steps T / dt; rejects windows that are not an integer number of steps.
inline long step_count(double T, double dt) {
  require(dt > 0.0 && std::isfinite(dt), "dt must be positive");
  require(T > 0.0 && std::isfinite(T), "T must be positive");
  const double ratio = T / dt;
  const long n = std::lround(ratio);
  if (n < 1 || std::abs(ratio - static_cast<double>(n)) > 1e-9 * std::max(1.0, ratio))
    throw InvalidArgument("T / dt must be an integer (T=" + std::to_string(T) +
                          ", dt=" + std::to_string(dt) + ")");
  return n;
}

/// Implicit Euler with a Newton solve per step:
///   M (U+ - U) / dt + nu S U+ + N(U+) = 0.
inline SnapshotMatrix solve_fom(const Eigen::VectorXd& u0, double nu, double dt, double T,
                                const FemOperators& fem, const NewtonOptions& newton = {}) {
  require(u0.size() == fem.n_nodes(), "solve_fom: u0 length does not match mesh");
  require(u0(0) == 0.0 && u0(u0.size() - 1) == 0.0, "solve_fom: u0 must vanish at the boundary");
  require(u0.allFinite(), "solve_fom: u0 must be finite");
  require(nu > 0.0 && std::isfinite(nu), "solve_fom: nu must be positive");
  const long n_steps = step_count(T, dt);
  const int n = fem.n_interior();

  SnapshotMatrix out;
  out.dt = dt;
  out.t0 = 0.0;
  out.values = Eigen::MatrixXd::Zero(fem.n_nodes(), n_steps + 1);
  out.values.col(0) = u0;

  // Linear part of the Jacobian: M / dt + nu S.
  Tridiagonal linear(n);
  linear.diag = fem.mass.diag / dt + nu * fem.stiffness.diag;
  linear.lower = fem.mass.lower / dt + nu * fem.stiffness.lower;
  linear.upper = fem.mass.upper / dt + nu * fem.stiffness.upper;

  Eigen::VectorXd u = u0.segment(1, n);
  for (long step = 1; step <= n_steps; ++step) {
    const Eigen::VectorXd rhs = fem.mass.apply(u) / dt;
    Eigen::VectorXd next = u;
    bool converged = false;
    for (int it = 0; it <= newton.max_iterations; ++it) {
      const Eigen::VectorXd residual = linear.apply(next) + convection(next) - rhs;
      if (!residual.allFinite())
        throw Blowup(step, std::numeric_limits<double>::infinity(),
                     "solve_fom: non-finite state at step " + std::to_string(step));
      if (residual.lpNorm<Eigen::Infinity>() <= newton.tolerance) {
        converged = true;
        break;
      }
      if (it == newton.max_iterations) break;
      Tridiagonal jac = convection_jacobian(next);
      jac.diag += linear.diag;
      jac.lower += linear.lower;
      jac.upper += linear.upper;
      next -= jac.solve(residual);
    }
    if (!converged)
      throw SolverDivergence(step, "solve_fom: Newton did not converge at step " +
                                       std::to_string(step));
    u = next;
    out.values.col(step).segment(1, n) = u;
  }
  return out;
}

/// Full-order trajectories from random initial conditions. Trajectory m
/// draws its initial condition from sub_seed(seed, m, domain).
inline std::vector<SnapshotMatrix> generate_dataset(const InitialConditionSpec& spec, double nu,
                                                    double dt, double T, const FemOperators& fem,
                                                    int n_trajectories, std::uint64_t seed,
                                                    std::size_t threads = 0,
                                                    SeedDomain domain = SeedDomain::training_ic) {
  require(n_trajectories >= 1, "generate_dataset: need at least one trajectory");
  spec.validate();
  step_count(T, dt);
  std::vector<SnapshotMatrix> data(n_trajectories);
  parallel_for(data.size(), threads, [&](std::size_t m) {
    try {
      NormalStream rng(sub_seed(seed, m, domain));
      data[m] = solve_fom(sample_initial_condition(spec, fem.n_elements, rng), nu, dt, T, fem);
    } catch (const Error& e) {
      throw Error(e.category(), "trajectory " + std::to_string(m) + ": " + e.what());
    }
  });
  return data;
}

}  // namespace srom
