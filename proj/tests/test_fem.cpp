#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "srom/fem.hpp"
#include "srom/random.hpp"

using namespace srom;

TEST(FemOperators, TwoElementsHandIntegrated) {
  const FemOperators fem = assemble_fem_operators(2);
  ASSERT_EQ(fem.n_interior(), 1);
  EXPECT_DOUBLE_EQ(fem.mass.diag(0), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(fem.stiffness.diag(0), 4.0);
}

TEST(FemOperators, ReferenceMeshShapes) {
  const FemOperators fem = assemble_fem_operators(256);
  EXPECT_EQ(fem.mass.size(), 255);
  EXPECT_EQ(fem.stiffness.size(), 255);
  EXPECT_DOUBLE_EQ(fem.h, std::ldexp(1.0, -8));
  EXPECT_DOUBLE_EQ(fem.mass.diag(100), 4.0 * fem.h / 6.0);
}

TEST(FemOperators, InteriorMassRowsSumToH) {
  for (int n : {3, 8, 50}) {
    const FemOperators fem = assemble_fem_operators(n);
    const Eigen::MatrixXd m = fem.mass.dense();
    // Rows whose hat function has both neighbours in the interior.
    for (Eigen::Index i = 1; i + 1 < m.rows(); ++i) EXPECT_NEAR(m.row(i).sum(), fem.h, 1e-15);
  }
}

TEST(FemOperators, RejectsDegenerateMesh) {
  EXPECT_THROW(assemble_fem_operators(1), InvalidArgument);
}

TEST(InitialCondition, ZeroWeightsGiveZero) {
  const Eigen::VectorXd u = initial_condition_from_weights(Eigen::VectorXd::Zero(5), 16);
  EXPECT_EQ(u.cwiseAbs().maxCoeff(), 0.0);
}

TEST(InitialCondition, SingleSineMode) {
  const int n = 32;
  const Eigen::VectorXd u = initial_condition_from_weights(Eigen::VectorXd::Ones(1), n);
  EXPECT_EQ(u(0), 0.0);
  EXPECT_EQ(u(n), 0.0);
  for (int i = 1; i < n; ++i) EXPECT_NEAR(u(i), std::sin(std::numbers::pi * i / n), 1e-15);
}

TEST(InitialCondition, SpecDefaults) {
  const InitialConditionSpec s;
  EXPECT_EQ(s.n_terms, 50);
  EXPECT_DOUBLE_EQ(s.mean, 0.5);
  EXPECT_DOUBLE_EQ(s.std, 0.2);
}

TEST(Convection, JacobianMatchesFiniteDifferences) {
  Eigen::VectorXd u(6);
  u << 0.3, -0.2, 0.9, 0.1, -0.7, 0.4;
  const Eigen::MatrixXd jac = convection_jacobian(u).dense();
  const double eps = 1e-7;
  for (Eigen::Index j = 0; j < u.size(); ++j) {
    Eigen::VectorXd up = u, dn = u;
    up(j) += eps;
    dn(j) -= eps;
    const Eigen::VectorXd col = (convection(up) - convection(dn)) / (2 * eps);
    for (Eigen::Index i = 0; i < u.size(); ++i) EXPECT_NEAR(jac(i, j), col(i), 1e-8);
  }
}

TEST(Convection, ConservesEnergy) {
  // sum_i U_i N_i(U) = int u^2 u_x dx = 0 for functions vanishing at both ends.
  Eigen::VectorXd u(9);
  u << 0.1, 0.5, -0.3, 0.8, 0.2, -0.9, 0.4, 0.6, -0.1;
  EXPECT_NEAR(u.dot(convection(u)), 0.0, 1e-15);
}

TEST(SolveFom, ZeroIsFixedPoint) {
  const FemOperators fem = assemble_fem_operators(16);
  const SnapshotMatrix y = solve_fom(Eigen::VectorXd::Zero(17), 0.01, 0.01, 0.1, fem);
  EXPECT_EQ(y.n_times(), 11);
  EXPECT_EQ(y.values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(SolveFom, ReferenceColumnCount) {
  const FemOperators fem = assemble_fem_operators(256);
  const Eigen::VectorXd u0 = initial_condition_from_weights(Eigen::VectorXd::Constant(3, 0.5), 256);
  const SnapshotMatrix y = solve_fom(u0, 0.002, 0.005, 2.0, fem);
  EXPECT_EQ(y.n_times(), 401);
  EXPECT_EQ(y.n_nodes(), 257);
  y.validate();
}

TEST(SolveFom, SmallAmplitudeTracksHeatDecay) {
  const int n = 128;
  const double eps = 1e-4, nu = 0.05, dt = 1e-3;
  const FemOperators fem = assemble_fem_operators(n);
  const Eigen::VectorXd u0 = eps * initial_condition_from_weights(Eigen::VectorXd::Ones(1), n);
  const SnapshotMatrix y = solve_fom(u0, nu, dt, 1.0, fem);
  const double decay = std::exp(-nu * std::numbers::pi * std::numbers::pi);
  const Eigen::VectorXd diff = y.values.rightCols(1) - decay * u0;
  // O(eps^2) nonlinearity, O(dt) time error and O(h^2) space error.
  EXPECT_LT(fem.mass_norm(diff) / fem.mass_norm(decay * u0), 1e-3);
}

TEST(SolveFom, EnergyNonIncreasing) {
  const FemOperators fem = assemble_fem_operators(64);
  NormalStream rng(sub_seed(5, 0, SeedDomain::training_ic));
  const Eigen::VectorXd u0 = sample_initial_condition(InitialConditionSpec{}, 64, rng);
  const SnapshotMatrix y = solve_fom(u0, 0.002, 0.005, 1.0, fem);
  for (Eigen::Index l = 1; l < y.n_times(); ++l)
    EXPECT_LE(fem.mass_norm(y.values.col(l)), fem.mass_norm(y.values.col(l - 1)) + 1e-9);
}

TEST(SolveFom, RefinementConverges) {
  // Time refinement at fixed mesh: implicit Euler error roughly halves with dt.
  const FemOperators fem = assemble_fem_operators(64);
  const Eigen::VectorXd u0 = initial_condition_from_weights(Eigen::Vector2d(1.0, 0.5), 64);
  const auto final_state = [&](double dt) {
    return Eigen::VectorXd(solve_fom(u0, 0.01, dt, 0.4, fem).values.rightCols(1));
  };
  const Eigen::VectorXd fine = final_state(0.0005);
  const double e1 = fem.mass_norm(final_state(0.004) - fine);
  const double e2 = fem.mass_norm(final_state(0.002) - fine);
  EXPECT_GT(e1 / e2, 1.7);
  EXPECT_LT(e1 / e2, 2.6);
}

TEST(SolveFom, RejectsBadInput) {
  const FemOperators fem = assemble_fem_operators(8);
  Eigen::VectorXd u0 = Eigen::VectorXd::Zero(9);
  EXPECT_THROW(solve_fom(Eigen::VectorXd::Zero(5), 0.01, 0.1, 1.0, fem), InvalidArgument);
  EXPECT_THROW(solve_fom(u0, 0.0, 0.1, 1.0, fem), InvalidArgument);
  EXPECT_THROW(solve_fom(u0, 0.01, 0.3, 1.0, fem), InvalidArgument);
  u0(0) = 1.0;
  EXPECT_THROW(solve_fom(u0, 0.01, 0.1, 1.0, fem), InvalidArgument);
}

TEST(GenerateDataset, SingleTrajectoryIsComposition) {
  const FemOperators fem = assemble_fem_operators(32);
  const InitialConditionSpec spec;
  const auto data = generate_dataset(spec, 0.002, 0.01, 0.2, fem, 1, 42, 1);
  NormalStream rng(sub_seed(42, 0, SeedDomain::training_ic));
  const SnapshotMatrix direct = solve_fom(sample_initial_condition(spec, 32, rng), 0.002, 0.01, 0.2, fem);
  ASSERT_EQ(data.size(), 1u);
  EXPECT_TRUE(data[0].values == direct.values);
}

TEST(GenerateDataset, DeterministicAcrossThreadCounts) {
  const FemOperators fem = assemble_fem_operators(32);
  const auto a = generate_dataset(InitialConditionSpec{}, 0.002, 0.01, 0.2, fem, 6, 9, 1);
  const auto b = generate_dataset(InitialConditionSpec{}, 0.002, 0.01, 0.2, fem, 6, 9, 4);
  for (std::size_t m = 0; m < a.size(); ++m) EXPECT_TRUE(a[m].values == b[m].values);
  const auto test = generate_dataset(InitialConditionSpec{}, 0.002, 0.01, 0.2, fem, 1, 9, 1,
                                     SeedDomain::test_ic);
  EXPECT_FALSE(test[0].values == a[0].values);
}

TEST(Random, SubSeedsAreDistinctPerDomainAndIndex) {
  EXPECT_NE(sub_seed(1, 0, SeedDomain::training_ic), sub_seed(1, 1, SeedDomain::training_ic));
  EXPECT_NE(sub_seed(1, 0, SeedDomain::training_ic), sub_seed(1, 0, SeedDomain::test_ic));
  EXPECT_NE(sub_seed(1, 0, SeedDomain::test_ic), sub_seed(1, 0, SeedDomain::ensemble_noise));
  EXPECT_EQ(sub_seed(1, 3, SeedDomain::test_ic), sub_seed(1, 3, SeedDomain::test_ic));
}

TEST(Random, NormalStreamMoments) {
  NormalStream rng(123);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}
