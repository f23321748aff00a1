#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "isotherm/propagate.hpp"
#include "test_support.hpp"

using namespace isotherm;
using namespace isotherm::propagate;
using isotherm::testing::driven_model;
using isotherm::testing::static_model;

namespace {

// L(s) = R(s) diag(0, 1) R(s)†, R a real rotation by angle s; tracked vector R(s) e0.
struct RotatingQubit {
    Index state_dim() const { return 2; }
    double s0() const { return 0.0; }
    double s1() const { return 1.0; }
    static Matrix rotation(double s) {
        Matrix r(2, 2);
        r << std::cos(s), -std::sin(s), std::sin(s), std::cos(s);
        return r;
    }
    Matrix generator_matrix(double s) const {
        Matrix d = Matrix::Zero(2, 2);
        d(1, 1) = 1.0;
        return rotation(s) * d * rotation(s).adjoint();
    }
    Matrix apply(double s, const Matrix& y) const { return generator_matrix(s) * y; }
    TrackedPair tracked(double s) const {
        Vector w(2), dw(2);
        w << std::cos(s), std::sin(s);
        dw << -std::sin(s), std::cos(s);
        return {w, dw};
    }
    double rate_bound(double) const { return 1.0; }
};

static_assert(GeneratorFamily<RotatingQubit>);
static_assert(GeneratorFamily<ThermalFamily>);

Vector omega0(const model::ModelFamily& m) { return model::equilibrium_vector(m, m.schedule().s0()).omega; }

Vector random_state(Index n, std::uint64_t seed) {
    linop::Rng rng(seed);
    return linop::random_unit_vector(n, rng);
}

} // namespace

TEST(EvolveTrue, ConstantScheduleMatchesClosedForm) {
    const auto m = static_model();
    const ThermalFamily fam(m);
    const double tau = 7.0;
    const Vector psi0 = random_state(fam.state_dim(), 1);
    const auto grid = uniform_grid(0.0, 1.0, 11);
    const Matrix l = fam.generator_matrix(0.0);
    for (Engine e : {Engine::adaptive, Engine::magnus}) {
        const auto traj = evolve_true(fam, tau, psi0, grid, {1e-10, e});
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const Vector exact = linop::unitary_exp(l, tau * grid[i]) * psi0;
            EXPECT_LT((traj.unitaries[i].col(0) - exact).norm(), 1e-8) << engine_name(e) << " s=" << grid[i];
        }
    }
}

TEST(EvolveTrue, NormPreservedAlongTrajectory) {
    const auto m = driven_model(2);
    const ThermalFamily fam(m);
    const auto traj = evolve_true(fam, 40.0, random_state(fam.state_dim(), 2), uniform_grid(0, 1, 50));
    for (const auto& y : traj.unitaries) EXPECT_NEAR(y.col(0).norm(), 1.0, 1e-9);
    EXPECT_EQ(traj.kind, GridKind::states);
}

TEST(EvolveTrue, CompositionOfSegments) {
    const auto m = driven_model(2);
    const double split = 0.43, tau = 25.0;
    const Vector psi0 = random_state(m.dim() * m.dim(), 3);
    const std::vector<double> whole{split, 1.0};
    const auto direct = evolve_true(ThermalFamily(m), tau, psi0, whole);

    const auto tail_model = m.with_schedule(isotherm::testing::polynomial_drive(1.0, split, 1.0));
    const std::vector<double> end{1.0};
    const auto tail = evolve_true(ThermalFamily(tail_model), tau, direct.unitaries[0], end);
    EXPECT_LT((tail.unitaries[0] - direct.unitaries[1]).norm(), 1e-8);
}

TEST(EvolveTrue, FullPropagatorsAreUnitaryAndComposeAsAGroup) {
    const auto m = driven_model(1);
    const ThermalFamily fam(m);
    const Index n = fam.state_dim();
    const std::vector<double> grid{0.0, 0.3, 1.0};
    const auto full = evolve_true(fam, 15.0, Matrix::Identity(n, n), grid);
    EXPECT_EQ(full.kind, GridKind::full);
    EXPECT_EQ(full.unitaries[0], Matrix::Identity(n, n));
    for (const auto& u : full.unitaries) EXPECT_LT((u.adjoint() * u - Matrix::Identity(n, n)).norm(), 1e-8);

    const auto tail_model = m.with_schedule(isotherm::testing::polynomial_drive(1.0, 0.3, 1.0));
    const std::vector<double> end{1.0};
    const auto tail = evolve_true(ThermalFamily(tail_model), 15.0, Matrix::Identity(n, n), end);
    // U(1, 0) = U(1, 0.3) U(0.3, 0) and U(0.3, 1) = U(1, 0.3)†.
    EXPECT_LT((tail.unitaries[0] * full.unitaries[1] - full.unitaries[2]).norm(), 1e-8);
    EXPECT_LT((tail.unitaries[0].adjoint() * full.unitaries[2] - full.unitaries[1]).norm(), 1e-8);
}

TEST(EvolveTrue, EnginesAgreeOnDrivenModel) {
    const auto m = driven_model(2);
    const ThermalFamily fam(m);
    const Vector psi0 = random_state(fam.state_dim(), 4);
    const auto grid = uniform_grid(0, 1, 5);
    const auto a = evolve_true(fam, 30.0, psi0, grid, {1e-10, Engine::adaptive});
    const auto b = evolve_true(fam, 30.0, psi0, grid, {1e-10, Engine::magnus});
    for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_LT((a.unitaries[i] - b.unitaries[i]).norm(), 1e-8);
}

TEST(EvolveTrue, ValidatesArguments) {
    const auto m = driven_model(1);
    const ThermalFamily fam(m);
    const Vector psi0 = random_state(fam.state_dim(), 5);
    const std::vector<double> grid{0.5, 1.0};
    EXPECT_THROW(evolve_true(fam, 0.0, psi0, grid), InvalidInput);
    EXPECT_THROW(evolve_true(fam, 1.0, psi0, grid, {1e-14}), InvalidInput);
    const std::vector<double> descending{1.0, 0.5};
    EXPECT_THROW(evolve_true(fam, 1.0, psi0, descending), InvalidInput);
    const std::vector<double> outside{0.5, 1.5};
    EXPECT_THROW(evolve_true(fam, 1.0, psi0, outside), RangeError);
    EXPECT_THROW(evolve_true(fam, 1.0, Vector::Ones(3), grid), InvalidInput);
}

TEST(EvolveAdiabatic, ConstantScheduleEqualsTrueEvolution) {
    const auto m = static_model();
    const ThermalFamily fam(m);
    const Vector psi0 = random_state(fam.state_dim(), 6);
    const auto grid = uniform_grid(0, 1, 9);
    const auto u = evolve_true(fam, 12.0, psi0, grid);
    const auto ua = evolve_adiabatic(fam, 12.0, psi0, grid);
    EXPECT_LT(true_vs_adiabatic_distance(u, ua).sup, 2e-10);
}

TEST(EvolveAdiabatic, TracksEquilibriumVector) {
    const auto m = driven_model(2);
    const ThermalFamily fam(m);
    const auto grid = uniform_grid(0, 1, 41);
    const auto ua = evolve_adiabatic(fam, 50.0, omega0(m), grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Vector y = ua.unitaries[i].col(0);
        EXPECT_NEAR(y.norm(), 1.0, 1e-9);
        const Vector omega = model::equilibrium_vector(m, grid[i]).omega;
        EXPECT_LT((y - omega * omega.dot(y)).norm(), 1e-6);
    }
    EXPECT_LE(check_intertwining(fam, ua), 1e-7);
}

TEST(EvolveAdiabatic, FullAndStateIntertwiningAgree) {
    const auto m = driven_model(1);
    const ThermalFamily fam(m);
    const Index n = fam.state_dim();
    const auto grid = uniform_grid(0, 1, 11);
    const auto full = evolve_adiabatic(fam, 20.0, Matrix::Identity(n, n), grid);
    const auto state = evolve_adiabatic(fam, 20.0, omega0(m), grid);
    EXPECT_LE(check_intertwining(fam, full), 1e-7);
    EXPECT_LE(check_intertwining(fam, state), 1e-7);

    // Oracle on full matrices: ‖U_a P(s0) U_a† − P(s)‖.
    const Matrix p0 = omega0(m) * omega0(m).adjoint();
    double worst = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Vector w = model::equilibrium_vector(m, grid[i]).omega;
        const Matrix diff = full.unitaries[i] * p0 * full.unitaries[i].adjoint() - w * w.adjoint();
        worst = std::max(worst, linop::operator_norm(diff));
    }
    EXPECT_NEAR(check_intertwining(fam, full), worst, 1e-12);
}

TEST(EvolveAdiabatic, EnginesAgreeOnGenericFamily) {
    const RotatingQubit fam;
    const auto grid = uniform_grid(0, 1, 6);
    const auto a = evolve_adiabatic(fam, 30.0, Matrix::Identity(2, 2), grid, {1e-10, Engine::adaptive});
    const auto b = evolve_adiabatic(fam, 30.0, Matrix::Identity(2, 2), grid, {1e-10, Engine::magnus});
    for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_LT((a.unitaries[i] - b.unitaries[i]).norm(), 1e-8);
    EXPECT_LE(check_intertwining(fam, a), 1e-9);
}

TEST(EvolveAdiabatic, IntertwiningResidualDoesNotGrowWithTau) {
    const RotatingQubit fam;
    const auto grid = uniform_grid(0, 1, 21);
    const double r10 = check_intertwining(fam, evolve_adiabatic(fam, 10.0, Matrix::Identity(2, 2), grid));
    const double r1000 = check_intertwining(fam, evolve_adiabatic(fam, 1000.0, Matrix::Identity(2, 2), grid));
    EXPECT_LE(r10, 1e-8);
    EXPECT_LE(r1000, 1e-8);
}

TEST(ProjectorDistance, MatchesFullMatrixNorm) {
    linop::Rng rng(7);
    for (int k = 0; k < 5; ++k) {
        const Vector a = linop::random_unit_vector(6, rng);
        const Vector b = linop::random_unit_vector(6, rng);
        const double oracle = linop::operator_norm(a * a.adjoint() - b * b.adjoint());
        EXPECT_NEAR(rank_one_projector_distance(a, b), oracle, 1e-12);
    }
    const Vector a = linop::random_unit_vector(4, rng);
    EXPECT_LT(rank_one_projector_distance(a, a * std::exp(kI * 0.3)), 1e-14);
}

TEST(Distance, BoundedAndGridChecked) {
    const RotatingQubit fam;
    const auto grid = uniform_grid(0, 1, 5);
    const auto u = evolve_true(fam, 3.0, Matrix::Identity(2, 2), grid);
    const auto ua = evolve_adiabatic(fam, 3.0, Matrix::Identity(2, 2), grid);
    const auto d = true_vs_adiabatic_distance(u, ua);
    EXPECT_GT(d.sup, 0.0);
    EXPECT_LE(d.sup, 2.0);
    EXPECT_FALSE(d.is_lower_bound);
    const auto other = evolve_true(fam, 3.0, Matrix::Identity(2, 2), uniform_grid(0, 1, 6));
    EXPECT_THROW(true_vs_adiabatic_distance(other, ua), InvalidInput);
}

TEST(EvolveDensity, GibbsStateIsStationary) {
    const auto m = static_model();
    const auto rho0 = model::gibbs_state(m.hamiltonian_matrix(0.0), m.beta());
    const auto traj = evolve_density(m, 20.0, rho0, uniform_grid(0, 1, 11));
    for (const auto& r : traj) EXPECT_LT((r.matrix() - rho0.matrix()).norm(), 1e-9);
}

TEST(EvolveDensity, PreservesTraceSpectrumAndPurity) {
    const auto m = driven_model(2);
    linop::Rng rng(8);
    const auto rho0 = linop::random_density(m.dim(), rng);
    const auto spec0 = linop::eig_hermitian(rho0.matrix()).values;
    const double purity0 = (rho0.matrix() * rho0.matrix()).trace().real();
    const auto traj = evolve_density(m, 30.0, rho0, uniform_grid(0, 1, 21));
    for (const auto& r : traj) {
        EXPECT_NEAR(r.matrix().trace().real(), 1.0, 1e-10);
        EXPECT_NEAR((r.matrix() * r.matrix()).trace().real(), purity0, 1e-9);
        EXPECT_LT((linop::eig_hermitian(r.matrix()).values - spec0).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(EvolveDensity, MatchesSuperoperatorEvolution) {
    const auto m = driven_model(2, 11);
    linop::Rng rng(9);
    const auto rho0 = linop::random_density(m.dim(), rng);
    const auto grid = uniform_grid(0, 1, 6);
    const auto direct = evolve_density(m, 20.0, rho0, grid, {1e-10, Engine::adaptive});
    const auto lifted = evolve_density(m, 20.0, rho0, grid, {1e-10, Engine::magnus});
    const auto vec_path = evolve_true(ThermalFamily(m), 20.0, linop::vec(rho0.matrix()), grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Matrix from_vec = linop::unvec(Vector(vec_path.unitaries[i].col(0)), m.dim());
        EXPECT_LT((direct[i].matrix() - from_vec).norm(), 1e-8);
        EXPECT_LT((direct[i].matrix() - lifted[i].matrix()).norm(), 1e-8);
    }
}

TEST(InitialBlock, ProbesAboveCap) {
    linop::Rng a(3), b(3);
    EXPECT_EQ(initial_block(16, 256, 20, a), Matrix::Identity(16, 16));
    const Matrix p = initial_block(1024, 256, 20, a);
    EXPECT_EQ(p.cols(), 20);
    EXPECT_NEAR(p.col(3).norm(), 1.0, 1e-14);
    linop::Rng c(3);
    EXPECT_EQ(initial_block(1024, 256, 20, b), initial_block(1024, 256, 20, c));
}
