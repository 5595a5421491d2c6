#pragma once

// Closure inference: fit (A~, B~) in
//   F(t_l) = (a(t_{l+1}) - a(t_l)) / delta - (A a + a^T B a)(t_l) ~ A~ a + a^T B~ a
// by multi-trajectory least squares, optionally Tikhonov-regularized with an
// L-curve choice of lambda, then estimate the diagonal noise amplitude.
//
// Feature layout (n_r = r + r (r + 1) / 2):
//   psi = (a_1, ..., a_r, a_1 a_1, a_2 a_1, a_2 a_2, a_3 a_1, ..., a_r a_r)
// i.e. quadratic monomials a_i a_i' with i' <= i in lexicographic (i, i') order.
// The coefficient matrix c is n_r x r; column k predicts output mode k, so
// A~(k, i) = c(i, k).

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "srom/error.hpp"
#include "srom/galerkin.hpp"
#include "srom/parallel.hpp"
#include "srom/pod.hpp"

namespace srom {

constexpr int feature_count(int r) { return r + r * (r + 1) / 2; }

inline Eigen::VectorXd compute_features(const Eigen::VectorXd& a) {
  const Eigen::Index r = a.size();
  Eigen::VectorXd psi(feature_count(static_cast<int>(r)));
  psi.head(r) = a;
  Eigen::Index j = r;
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index ip = 0; ip <= i; ++ip) psi(j++) = a(i) * a(ip);
  return psi;
}

/// F(t_l) for l = 0 .. n_t - 2, one column per step.
inline Eigen::MatrixXd compute_residual_targets(const CoefficientTrajectory& traj,
                                                const GalerkinOperators& ops) {
  require(traj.n_times() >= 2, "residual targets: need at least two samples");
  require(traj.delta > 0.0, "residual targets: delta must be positive");
  require(traj.r() == ops.r, "residual targets: r mismatch");
  const Eigen::Index steps = traj.n_times() - 1;
  Eigen::MatrixXd f(traj.r(), steps);
  for (Eigen::Index l = 0; l < steps; ++l) {
    const Eigen::VectorXd a = traj.values.col(l);
    f.col(l) = (traj.values.col(l + 1) - a) / traj.delta - grom_drift(ops, a);
  }
  return f;
}

/// Normal equations averaged over trajectories. Each trajectory contributes
/// sample means over its steps; the trajectory means are then averaged.
struct RegressionSystem {
  Eigen::MatrixXd normal;           // A_M, n_r x n_r
  Eigen::MatrixXd rhs;              // b_M, n_r x r
  Eigen::VectorXd target_moment;    // averaged mean of F_k^2, length r
  int r = 0;
  long n_samples = 0;
  int n_trajectories = 0;
  double delta = 0.0;

  int n_features() const { return feature_count(r); }
};

namespace detail {

struct TrajectoryMoments {
  Eigen::MatrixXd normal;
  Eigen::MatrixXd rhs;
  Eigen::VectorXd target_moment;
};

inline void check_trajectories(std::span<const CoefficientTrajectory> trajs,
                               const GalerkinOperators& ops) {
  require(!trajs.empty(), "closure: no trajectories");
  const double delta = trajs.front().delta;
  for (const auto& t : trajs) {
    require(t.r() == ops.r, "closure: trajectory r does not match the Galerkin operators");
    require(std::abs(t.delta - delta) <= 1e-12 * delta, "closure: mixed delta across trajectories");
    require(t.n_times() >= 2, "closure: trajectory with fewer than two samples");
  }
}

inline Eigen::MatrixXd feature_matrix(const CoefficientTrajectory& traj, Eigen::Index steps) {
  Eigen::MatrixXd psi(feature_count(traj.r()), steps);
  for (Eigen::Index l = 0; l < steps; ++l) psi.col(l) = compute_features(traj.values.col(l));
  return psi;
}

}  // namespace detail

inline RegressionSystem accumulate_system(std::span<const CoefficientTrajectory> trajs,
                                          const GalerkinOperators& ops, std::size_t threads = 0) {
  detail::check_trajectories(trajs, ops);
  const int r = ops.r;
  const int n_r = feature_count(r);
  std::vector<Eigen::MatrixXd> normals(trajs.size()), rhss(trajs.size());
  std::vector<Eigen::VectorXd> moments(trajs.size());
  std::vector<long> counts(trajs.size());
  parallel_for(trajs.size(), threads, [&](std::size_t m) {
    const Eigen::MatrixXd f = compute_residual_targets(trajs[m], ops);
    const Eigen::Index steps = f.cols();
    const Eigen::MatrixXd psi = detail::feature_matrix(trajs[m], steps);
    Eigen::MatrixXd normal = Eigen::MatrixXd::Zero(n_r, n_r);
    normal.selfadjointView<Eigen::Lower>().rankUpdate(psi);
    normals[m] = Eigen::MatrixXd(normal.selfadjointView<Eigen::Lower>()) / double(steps);
    rhss[m] = psi * f.transpose() / double(steps);
    moments[m] = f.rowwise().squaredNorm() / double(steps);
    counts[m] = steps;
  });
  RegressionSystem sys;
  const double inv_m = 1.0 / static_cast<double>(trajs.size());
  sys.normal = pairwise_sum(std::move(normals)) * inv_m;
  sys.rhs = pairwise_sum(std::move(rhss)) * inv_m;
  sys.target_moment = pairwise_sum(std::move(moments)) * inv_m;
  sys.r = r;
  sys.n_trajectories = static_cast<int>(trajs.size());
  sys.delta = trajs.front().delta;
  for (long c : counts) sys.n_samples += c;
  return sys;
}

/// Eigendecomposition of A_M with b_M rotated into the eigenbasis. Directions
/// whose eigenvalue falls below the rank tolerance are treated as null space
/// for every lambda.
class SpectralSystem {
 public:
  explicit SpectralSystem(const RegressionSystem& sys) : sys_(&sys) {
    const Eigen::MatrixXd sym = 0.5 * (sys.normal + sys.normal.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
    if (eig.info() != Eigen::Success) throw NumericalError("regression: eigensolver failed");
    mu_ = eig.eigenvalues();
    vectors_ = eig.eigenvectors();
    const double mu_max = mu_.size() ? mu_.maxCoeff() : 0.0;
    max_eigenvalue_ = std::max(0.0, mu_max);
    if (mu_.size() && mu_.minCoeff() < -1e-9 * std::max(mu_max, std::numeric_limits<double>::min()))
      throw NumericalError("regression: normal matrix is indefinite (min eigenvalue " +
                           std::to_string(mu_.minCoeff()) + ")");
    tolerance_ = static_cast<double>(mu_.size()) * std::numeric_limits<double>::epsilon() *
                 max_eigenvalue_;
    beta_ = vectors_.transpose() * sys.rhs;
    weight_ = beta_.rowwise().squaredNorm();
  }

  bool included(Eigen::Index i) const { return mu_(i) > tolerance_ && mu_(i) > 0.0; }

  double max_eigenvalue() const { return max_eigenvalue_; }
  double min_included_eigenvalue() const {
    for (Eigen::Index i = 0; i < mu_.size(); ++i)
      if (included(i)) return mu_(i);
    return 0.0;
  }
  bool full_rank() const {
    for (Eigen::Index i = 0; i < mu_.size(); ++i)
      if (!included(i)) return false;
    return true;
  }
  const Eigen::VectorXd& eigenvalues() const { return mu_; }

  Eigen::MatrixXd solve(double lambda) const {
    Eigen::MatrixXd scaled = Eigen::MatrixXd::Zero(beta_.rows(), beta_.cols());
    for (Eigen::Index i = 0; i < mu_.size(); ++i)
      if (included(i)) scaled.row(i) = beta_.row(i) / (mu_(i) + lambda);
    return vectors_ * scaled;
  }

  double solution_norm(double lambda) const {
    double s = 0.0;
    for (Eigen::Index i = 0; i < mu_.size(); ++i)
      if (included(i)) s += weight_(i) / ((mu_(i) + lambda) * (mu_(i) + lambda));
    return std::sqrt(s);
  }

  /// Mean squared data residual, unclamped, at the unregularized solution.
  double min_residual() const {
    double s = sys_->target_moment.sum();
    for (Eigen::Index i = 0; i < mu_.size(); ++i)
      if (included(i)) s -= weight_(i) / mu_(i);
    return s;
  }

  /// rho(lambda) = rho(0) + sum_i w_i lambda^2 / (mu_i (mu_i + lambda)^2).
  double residual(double lambda) const {
    const double floor = 1e-14 * std::max(sys_->target_moment.sum(), std::numeric_limits<double>::min());
    double s = std::max(min_residual(), floor);
    for (Eigen::Index i = 0; i < mu_.size(); ++i)
      if (included(i)) {
        const double d = mu_(i) + lambda;
        s += weight_(i) * lambda * lambda / (mu_(i) * d * d);
      }
    return s;
  }

 private:
  const RegressionSystem* sys_;
  Eigen::VectorXd mu_;
  Eigen::MatrixXd vectors_;
  Eigen::MatrixXd beta_;
  Eigen::VectorXd weight_;
  double max_eigenvalue_ = 0.0;
  double tolerance_ = 0.0;
};

/// c_lambda = (A_M + lambda I)^{-1} b_M, minimum-norm when singular.
inline Eigen::MatrixXd tikhonov_solve(const RegressionSystem& sys, double lambda) {
  require(lambda >= 0.0 && std::isfinite(lambda), "tikhonov_solve: lambda must be >= 0");
  const SpectralSystem spectral(sys);
  if (!spectral.full_rank()) return spectral.solve(lambda);
  // Nonsingular: Cholesky with one step of iterative refinement.
  Eigen::MatrixXd reg = 0.5 * (sys.normal + sys.normal.transpose());
  reg.diagonal().array() += lambda;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(reg);
  if (ldlt.info() != Eigen::Success) return spectral.solve(lambda);
  Eigen::MatrixXd c = ldlt.solve(sys.rhs);
  c += ldlt.solve(sys.rhs - reg * c);
  if (!c.allFinite()) return spectral.solve(lambda);
  return c;
}

struct LCurve {
  std::vector<double> lambdas;
  std::vector<double> residuals;  // rho(lambda)
  std::vector<double> norms;      // ||c_lambda||_F
  std::vector<double> curvature;  // NaN at the mesh ends and at stationary points
  double selected = 0.0;
  int selected_index = -1;
  bool degenerate = false;  // b_M == 0: nothing to regularize, lambda = 0
  bool flat = false;        // A_M has a single distinct eigenvalue, mesh collapses to a point
};

inline LCurve lcurve_select(const RegressionSystem& sys, int n_mesh = 100) {
  LCurve out;
  if (sys.rhs.squaredNorm() == 0.0) {
    out.degenerate = true;
    return out;
  }
  const SpectralSystem spectral(sys);
  const double hi = spectral.max_eigenvalue();
  if (!(hi > 0.0)) throw NumericalError("lcurve_select: normal matrix has no positive eigenvalue");
  const double lo = std::max(spectral.min_included_eigenvalue(), 1e-14 * hi);
  if (hi <= lo * (1.0 + 1e-12)) {
    out.flat = true;
    out.selected = lo;
    out.selected_index = 0;
    out.lambdas = {lo};
    out.residuals = {spectral.residual(lo)};
    out.norms = {spectral.solution_norm(lo)};
    out.curvature = {std::numeric_limits<double>::quiet_NaN()};
    return out;
  }
  if (n_mesh < 3) throw InvalidArgument("lcurve_select: mesh needs at least 3 points");

  const double log_lo = std::log(lo), log_hi = std::log(hi);
  const double step = (log_hi - log_lo) / (n_mesh - 1);
  std::vector<double> x(n_mesh), y(n_mesh);
  for (int i = 0; i < n_mesh; ++i) {
    const double lambda = std::exp(log_lo + step * i);
    out.lambdas.push_back(lambda);
    out.residuals.push_back(spectral.residual(lambda));
    out.norms.push_back(spectral.solution_norm(lambda));
    x[i] = std::log(out.residuals.back());
    y[i] = std::log(out.norms.back());
  }
  out.curvature.assign(n_mesh, std::numeric_limits<double>::quiet_NaN());
  double best = -std::numeric_limits<double>::infinity();
  int usable = 0;
  for (int i = 1; i + 1 < n_mesh; ++i) {
    const double dx = (x[i + 1] - x[i - 1]) / (2.0 * step);
    const double dy = (y[i + 1] - y[i - 1]) / (2.0 * step);
    const double ddx = (x[i + 1] - 2.0 * x[i] + x[i - 1]) / (step * step);
    const double ddy = (y[i + 1] - 2.0 * y[i] + y[i - 1]) / (step * step);
    const double speed2 = dx * dx + dy * dy;
    if (!(speed2 > 0.0) || !std::isfinite(speed2)) continue;
    const double kappa = (dx * ddy - ddx * dy) / std::pow(speed2, 1.5);
    if (!std::isfinite(kappa)) continue;
    out.curvature[i] = kappa;
    ++usable;
    if (kappa > best) {
      best = kappa;
      out.selected_index = i;
    }
  }
  if (usable < 1) throw NumericalError("lcurve_select: fewer than 3 usable mesh points");
  out.selected = out.lambdas[out.selected_index];
  return out;
}

struct ClosureParameters {
  Eigen::MatrixXd A_tilde;  // r x r
  Tensor3 B_tilde;          // r slices, each symmetric
  Eigen::VectorXd sigma;    // diagonal of Sigma
  double lambda_used = 0.0;
  double fit_loss = 0.0;

  int r() const { return static_cast<int>(A_tilde.rows()); }

  static ClosureParameters zero(int r) {
    return {Eigen::MatrixXd::Zero(r, r), zero_tensor(r), Eigen::VectorXd::Zero(r), 0.0, 0.0};
  }
};

/// Drift contribution of the closure alone: A~ a + a^T B~ a.
inline Eigen::VectorXd closure_drift(const ClosureParameters& p, const Eigen::VectorXd& a) {
  return p.A_tilde * a + quadratic_form(p.B_tilde, a);
}

inline void unpack_coefficients(const Eigen::MatrixXd& c, int r, Eigen::MatrixXd& a_tilde,
                                Tensor3& b_tilde) {
  require(c.rows() == feature_count(r) && c.cols() == r, "unpack: coefficient shape mismatch");
  a_tilde = c.topRows(r).transpose();
  b_tilde = zero_tensor(r);
  for (int k = 0; k < r; ++k) {
    int j = r;
    for (int i = 0; i < r; ++i)
      for (int ip = 0; ip <= i; ++ip, ++j) {
        if (i == ip) {
          b_tilde[k](i, i) = c(j, k);
        } else {
          b_tilde[k](i, ip) = 0.5 * c(j, k);
          b_tilde[k](ip, i) = 0.5 * c(j, k);
        }
      }
  }
}

inline Eigen::MatrixXd pack_coefficients(const Eigen::MatrixXd& a_tilde, const Tensor3& b_tilde) {
  const int r = static_cast<int>(a_tilde.rows());
  require(static_cast<int>(b_tilde.size()) == r, "pack: tensor shape mismatch");
  Eigen::MatrixXd c(feature_count(r), r);
  c.topRows(r) = a_tilde.transpose();
  for (int k = 0; k < r; ++k) {
    int j = r;
    for (int i = 0; i < r; ++i)
      for (int ip = 0; ip <= i; ++ip, ++j)
        c(j, k) = i == ip ? b_tilde[k](i, i) : b_tilde[k](i, ip) + b_tilde[k](ip, i);
  }
  return c;
}

enum class RegularizationMode { none, fixed, lcurve };

struct Regularization {
  RegularizationMode mode = RegularizationMode::none;
  double lambda = 0.0;  // used by fixed
  int mesh_size = 100;  // used by lcurve
};

struct ClosureFit {
  ClosureParameters params;
  RegressionSystem system;
  Eigen::MatrixXd coefficients;  // n_r x r
  std::optional<LCurve> lcurve;
  /// sigma(k) = ||A_M c_k - b_k||, kept as a diagnostic only.
  Eigen::VectorXd normal_equation_sigma;
};

/// Per-output mean squared residual of psi^T c against F, averaged like A_M.
inline Eigen::VectorXd residual_moments(std::span<const CoefficientTrajectory> trajs,
                                        const GalerkinOperators& ops, const Eigen::MatrixXd& c,
                                        std::size_t threads = 0) {
  std::vector<Eigen::VectorXd> per_traj(trajs.size());
  parallel_for(trajs.size(), threads, [&](std::size_t m) {
    const Eigen::MatrixXd f = compute_residual_targets(trajs[m], ops);
    const Eigen::MatrixXd psi = detail::feature_matrix(trajs[m], f.cols());
    per_traj[m] = (f - c.transpose() * psi).rowwise().squaredNorm() / double(f.cols());
  });
  return pairwise_sum(std::move(per_traj)) / static_cast<double>(trajs.size());
}

inline ClosureFit fit_closure(std::span<const CoefficientTrajectory> trajs,
                              const GalerkinOperators& ops, const Regularization& reg = {},
                              std::size_t threads = 0) {
  ClosureFit fit;
  fit.system = accumulate_system(trajs, ops, threads);
  double lambda = 0.0;
  switch (reg.mode) {
    case RegularizationMode::none:
      break;
    case RegularizationMode::fixed:
      require(reg.lambda >= 0.0, "fit_closure: lambda must be >= 0");
      lambda = reg.lambda;
      break;
    case RegularizationMode::lcurve:
      fit.lcurve = lcurve_select(fit.system, reg.mesh_size);
      lambda = fit.lcurve->selected;
      break;
  }
  fit.coefficients = tikhonov_solve(fit.system, lambda);
  const int r = ops.r;
  unpack_coefficients(fit.coefficients, r, fit.params.A_tilde, fit.params.B_tilde);
  const Eigen::VectorXd moments = residual_moments(trajs, ops, fit.coefficients, threads);
  fit.params.sigma = (fit.system.delta * moments.array()).sqrt().matrix();
  fit.params.fit_loss = moments.sum();
  fit.params.lambda_used = lambda;
  fit.normal_equation_sigma =
      (fit.system.normal * fit.coefficients - fit.system.rhs).colwise().norm().transpose();
  return fit;
}

struct EstimatorErrors {
  double a_tilde = 0.0;
  double b_tilde = 0.0;
  double sigma = 0.0;
};

/// Normalized Frobenius distances between two fits of the same r.
inline EstimatorErrors estimator_errors(const ClosureParameters& fit,
                                        const ClosureParameters& reference) {
  const int r = fit.r();
  require(r == reference.r() && static_cast<int>(fit.B_tilde.size()) == r &&
              static_cast<int>(reference.B_tilde.size()) == r,
          "estimator_errors: r mismatch");
  EstimatorErrors e;
  e.a_tilde = std::sqrt((fit.A_tilde - reference.A_tilde).squaredNorm() / double(r * r));
  double b = 0.0;
  for (int k = 0; k < r; ++k)
    for (int i = 0; i < r; ++i)
      for (int ip = i; ip < r; ++ip) {
        const double d = fit.B_tilde[k](i, ip) - reference.B_tilde[k](i, ip);
        b += d * d;
      }
  e.b_tilde = std::sqrt(2.0 * b / (double(r) * r * (r + 1)));
  e.sigma = std::sqrt((fit.sigma - reference.sigma).squaredNorm() / double(r));
  return e;
}

}  // namespace srom
