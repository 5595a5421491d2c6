#pragma once

// Galerkin reduced operators for Burgers: F(a) = A a + a^T B a. With the
// weak-form integrals (exact for piecewise-linear modes)
//   D(i,k)   = -nu int phi_i' phi_k' dx
//   C(i,j,k) = -1/2 int (phi_i phi_j' + phi_j phi_i') phi_k dx
// and the lumped-mass Gram G = h Phi^T Phi over interior nodes,
//   A = G^{-1} D,   B(:,:,k) = sum_m G^{-1}(k,m) C(:,:,m).
// For Euclidean-orthonormal POD modes G = h I, so A stays symmetric and the
// convection term conserves energy exactly.

#include <Eigen/Dense>
#include <vector>

#include "srom/error.hpp"
#include "srom/fem.hpp"
#include "srom/pod.hpp"

namespace srom {

/// r x r x r array stored as r slices; slice k holds T(:, :, k).
using Tensor3 = std::vector<Eigen::MatrixXd>;

inline Tensor3 zero_tensor(int r) { return Tensor3(r, Eigen::MatrixXd::Zero(r, r)); }

/// out_k = a^T T(:, :, k) a
inline Eigen::VectorXd quadratic_form(const Tensor3& t, const Eigen::VectorXd& a) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(t.size()));
  for (std::size_t k = 0; k < t.size(); ++k) out(k) = a.dot(t[k] * a);
  return out;
}

struct GalerkinOperators {
  Eigen::MatrixXd A;
  Tensor3 B;
  int r = 0;
  double nu = 0.0;
};

inline GalerkinOperators assemble_galerkin(const PodBasis& basis, double nu,
                                           const FemOperators& fem) {
  require(basis.n_nodes() == fem.n_nodes(), "assemble_galerkin: basis does not match mesh");
  require(nu >= 0.0, "assemble_galerkin: nu must be nonnegative");
  const int r = basis.r();
  const Eigen::MatrixXd& phi = basis.modes;
  const Eigen::Index n_el = fem.n_elements;

  GalerkinOperators ops;
  ops.r = r;
  ops.nu = nu;
  const Eigen::MatrixXd interior = phi.middleRows(1, fem.n_interior());
  Eigen::MatrixXd s_phi(interior.rows(), r);
  for (int j = 0; j < r; ++j) s_phi.col(j) = fem.stiffness.apply(interior.col(j));
  Eigen::MatrixXd diffusion = -nu * (interior.transpose() * s_phi);
  diffusion = 0.5 * (diffusion + diffusion.transpose()).eval();

  const Eigen::MatrixXd gram = fem.h * (interior.transpose() * interior);
  const Eigen::LLT<Eigen::MatrixXd> gram_llt(gram);
  if (gram_llt.info() != Eigen::Success)
    throw NumericalError("assemble_galerkin: modes are linearly dependent");
  const Eigen::MatrixXd gram_inv = gram_llt.solve(Eigen::MatrixXd::Identity(r, r));
  ops.A = gram_inv * diffusion;

  // Element-wise: phi_j' = (phi_j[e+1] - phi_j[e]) / h, and
  // int_e v z dx = h/6 (2 v0 z0 + v0 z1 + v1 z0 + 2 v1 z1).
  const Eigen::MatrixXd left = phi.topRows(n_el);
  const Eigen::MatrixXd right = phi.bottomRows(n_el);
  const Eigen::MatrixXd diff = right - left;
  Tensor3 convection(r);
  for (int k = 0; k < r; ++k) {
    const Eigen::VectorXd zl = left.col(k);
    const Eigen::VectorXd zr = right.col(k);
    const Eigen::MatrixXd weight =
        left.array().colwise() * (2.0 * zl + zr).array() +
        right.array().colwise() * (zl + 2.0 * zr).array();
    // trilinear(i, j) = int phi_i phi_j' phi_k dx
    const Eigen::MatrixXd trilinear = weight.transpose() * diff / 6.0;
    convection[k] = -0.5 * (trilinear + trilinear.transpose());
  }
  ops.B = zero_tensor(r);
  for (int k = 0; k < r; ++k)
    for (int m = 0; m < r; ++m) ops.B[k] += gram_inv(k, m) * convection[m];
  return ops;
}

inline Eigen::VectorXd grom_drift(const GalerkinOperators& ops, const Eigen::VectorXd& a) {
  return ops.A * a + quadratic_form(ops.B, a);
}

}  // namespace srom
