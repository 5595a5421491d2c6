#pragma once

// Discrete-time stochastic reduced model
//   a+ = a + [(A + A~) a + a^T (B + B~) a] delta + sqrt(delta) Sigma xi,
// simulated exactly as this map (no sub-stepping).

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "srom/closure.hpp"
#include "srom/error.hpp"
#include "srom/galerkin.hpp"
#include "srom/parallel.hpp"
#include "srom/pod.hpp"
#include "srom/random.hpp"

namespace srom {

/// A state is blown up when non-finite or when ||a|| exceeds this bound.
inline constexpr double kBlowupNorm = 1e3;

struct Provenance {
  double nu = 0.0;
  int n_trajectories = 0;
  int gap = 1;
  std::uint64_t seed = 0;
  double t_start = 0.0;
  double t_end = 0.0;
};

struct SromModel {
  int r = 0;
  double delta = 0.0;
  GalerkinOperators galerkin;
  ClosureParameters closure;
  std::string basis_fingerprint;
  Provenance provenance;

  void validate() const {
    require(r >= 1, "model: r must be >= 1");
    require(delta > 0.0 && std::isfinite(delta), "model: delta must be positive");
    require(galerkin.r == r && galerkin.A.rows() == r && galerkin.A.cols() == r &&
                static_cast<int>(galerkin.B.size()) == r,
            "model: Galerkin operators do not match r");
    require(closure.A_tilde.rows() == r && closure.A_tilde.cols() == r &&
                static_cast<int>(closure.B_tilde.size()) == r && closure.sigma.size() == r,
            "model: closure does not match r");
    for (int k = 0; k < r; ++k)
      require(galerkin.B[k].rows() == r && galerkin.B[k].cols() == r &&
                  closure.B_tilde[k].rows() == r && closure.B_tilde[k].cols() == r,
              "model: tensor slice shape mismatch");
  }
};

/// The Galerkin ROM as an S-ROM with zero closure and zero noise.
inline SromModel make_grom_model(const GalerkinOperators& ops, double delta) {
  SromModel m;
  m.r = ops.r;
  m.delta = delta;
  m.galerkin = ops;
  m.closure = ClosureParameters::zero(ops.r);
  return m;
}

inline SromModel make_srom_model(const GalerkinOperators& ops, const ClosureParameters& closure,
                                 double delta) {
  SromModel m = make_grom_model(ops, delta);
  m.closure = closure;
  m.validate();
  return m;
}

inline Eigen::VectorXd srom_drift(const SromModel& model, const Eigen::VectorXd& a) {
  return grom_drift(model.galerkin, a) + closure_drift(model.closure, a);
}

inline bool is_blown_up(const Eigen::VectorXd& a) {
  return !a.allFinite() || a.norm() > kBlowupNorm;
}

/// One map step; `xi` empty means deterministic mode.
inline Eigen::VectorXd step(const SromModel& model, const Eigen::VectorXd& a,
                            const Eigen::VectorXd* xi = nullptr) {
  require(a.size() == model.r, "step: state length does not match r");
  Eigen::VectorXd next = a + model.delta * srom_drift(model, a);
  if (xi != nullptr) {
    require(xi->size() == model.r, "step: noise length does not match r");
    next += std::sqrt(model.delta) * model.closure.sigma.cwiseProduct(*xi);
  }
  if (is_blown_up(next)) {
    const double norm = next.allFinite() ? next.norm() : std::numeric_limits<double>::infinity();
    throw Blowup(0, norm, "step: state left the admissible region (norm " + std::to_string(norm) + ")");
  }
  return next;
}

struct Trajectory {
  Eigen::MatrixXd values;  // r x (steps completed + 1)
  double delta = 0.0;
  std::optional<long> blowup_step;  // step index that failed, if any

  bool blew_up() const { return blowup_step.has_value(); }
};

namespace detail {

template <typename Noise>
Trajectory iterate(const SromModel& model, const Eigen::VectorXd& a0, long n_steps, Noise&& noise) {
  require(a0.size() == model.r, "simulate: initial state length does not match r");
  require(a0.allFinite(), "simulate: initial state must be finite");
  require(n_steps >= 0, "simulate: n_steps must be >= 0");
  Trajectory out;
  out.delta = model.delta;
  out.values.resize(model.r, n_steps + 1);
  out.values.col(0) = a0;
  Eigen::VectorXd a = a0;
  for (long l = 1; l <= n_steps; ++l) {
    try {
      a = noise(a);
    } catch (const Blowup&) {
      out.blowup_step = l;
      out.values.conservativeResize(Eigen::NoChange, l);
      return out;
    }
    out.values.col(l) = a;
  }
  return out;
}

}  // namespace detail

inline Trajectory simulate_deterministic(const SromModel& model, const Eigen::VectorXd& a0,
                                         long n_steps) {
  return detail::iterate(model, a0, n_steps,
                         [&](const Eigen::VectorXd& a) { return step(model, a); });
}

/// Stochastic member driven by the normal stream of `seed`.
inline Trajectory simulate_stochastic(const SromModel& model, const Eigen::VectorXd& a0,
                                      long n_steps, std::uint64_t seed) {
  NormalStream rng(seed);
  Eigen::VectorXd xi(model.r);
  return detail::iterate(model, a0, n_steps, [&](const Eigen::VectorXd& a) {
    for (int k = 0; k < model.r; ++k) xi(k) = rng.normal();
    return step(model, a, &xi);
  });
}

/// Linear interpolation between order statistics (position p/100 * (n - 1)).
inline double percentile(std::vector<double> values, double level) {
  require(!values.empty(), "percentile: empty sample");
  require(level >= 0.0 && level <= 100.0, "percentile: level must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = level / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

struct EnsembleResult {
  std::vector<Trajectory> members;
  std::vector<bool> valid;
  Eigen::MatrixXd mean;  // over valid members
  std::vector<double> levels;
  std::vector<Eigen::MatrixXd> percentiles;  // one per level
  int n_invalid = 0;
  std::uint64_t seed = 0;
};

/// Member j uses the normal stream sub_seed(seed, j, ensemble_noise).
inline EnsembleResult simulate_ensemble(const SromModel& model, const Eigen::VectorXd& a0,
                                        long n_steps, int n_ens, std::uint64_t seed,
                                        std::vector<double> levels = {25.0, 75.0, 95.0},
                                        std::size_t threads = 0) {
  require(n_ens >= 1, "simulate_ensemble: n_ens must be >= 1");
  std::sort(levels.begin(), levels.end());
  EnsembleResult out;
  out.seed = seed;
  out.levels = levels;
  out.members.resize(n_ens);
  parallel_for(out.members.size(), threads, [&](std::size_t j) {
    out.members[j] =
        simulate_stochastic(model, a0, n_steps, sub_seed(seed, j, SeedDomain::ensemble_noise));
  });
  out.valid.resize(n_ens);
  std::vector<const Eigen::MatrixXd*> good;
  for (int j = 0; j < n_ens; ++j) {
    out.valid[j] = !out.members[j].blew_up();
    if (out.valid[j]) good.push_back(&out.members[j].values);
  }
  out.n_invalid = n_ens - static_cast<int>(good.size());
  if (good.empty()) throw NumericalError("simulate_ensemble: every member blew up");

  const Eigen::Index cols = n_steps + 1;
  out.mean = Eigen::MatrixXd::Zero(model.r, cols);
  for (const auto* m : good) out.mean += *m;
  out.mean /= static_cast<double>(good.size());

  out.percentiles.assign(levels.size(), Eigen::MatrixXd(model.r, cols));
  std::vector<double> sample(good.size());
  for (int k = 0; k < model.r; ++k)
    for (Eigen::Index l = 0; l < cols; ++l) {
      for (std::size_t j = 0; j < good.size(); ++j) sample[j] = (*good[j])(k, l);
      for (std::size_t q = 0; q < levels.size(); ++q)
        out.percentiles[q](k, l) = percentile(sample, levels[q]);
    }
  return out;
}

/// u(., t_l) = sum_i a_i(t_l) phi_i, boundary rows exactly zero.
inline SnapshotMatrix reconstruct_field(const Eigen::MatrixXd& coefficients, double delta,
                                        const PodBasis& basis, double t0 = 0.0) {
  require(coefficients.rows() == basis.r(), "reconstruct_field: r mismatch");
  SnapshotMatrix out;
  out.values = basis.modes * coefficients;
  out.values.row(0).setZero();
  out.values.row(out.values.rows() - 1).setZero();
  out.dt = delta;
  out.t0 = t0;
  return out;
}

}  // namespace srom
