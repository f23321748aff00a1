#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "isotherm/experiments.hpp"
#include "test_support.hpp"

using namespace isotherm;
using namespace isotherm::experiments;
using isotherm::testing::small_model;
using isotherm::testing::static_model;

namespace {

std::vector<double> power_law(const std::vector<double>& taus, double a, double p) {
    std::vector<double> e;
    for (double t : taus) e.push_back(a * std::pow(t, -p));
    return e;
}

} // namespace

TEST(GenericFamily, RotationIsOrthogonal) {
    const auto fam = GenericFamily::gapped(6);
    for (double s : {-1.0, -0.3, 0.0, 0.8}) {
        const Matrix r = fam.rotation(s);
        EXPECT_LT((r.adjoint() * r - Matrix::Identity(6, 6)).norm(), 1e-13);
    }
}

TEST(GenericFamily, RotationDerivativeMatchesCentralDifference) {
    const auto fam = GenericFamily::closing(5, 1.0);
    const double h = 1e-5;
    for (double s : {-0.9, -0.2, 0.4, 0.95}) {
        const Matrix fd = (fam.rotation(s + h) - fam.rotation(s - h)) / (2 * h);
        EXPECT_LT((fam.rotation_derivative(s) - fd).norm(), 1e-8) << "s = " << s;
    }
}

TEST(GenericFamily, SpectrumIsPrescribed) {
    const auto fam = GenericFamily::gapped(5, 0.7);
    Eigen::SelfAdjointEigenSolver<Matrix> es(fam.generator_matrix(0.3));
    const std::vector<double> expected{0.0, 0.7, 2.0, 3.0, 4.0};
    for (Index k = 0; k < 5; ++k) EXPECT_NEAR(es.eigenvalues()(k), expected[static_cast<std::size_t>(k)], 1e-12);
}

TEST(GenericFamily, TrackedVectorSpansKernel) {
    const auto fam = GenericFamily::gapped();
    for (double s : {-1.0, 0.1, 1.0}) {
        const auto tr = fam.tracked(s);
        EXPECT_LT((fam.generator_matrix(s) * tr.omega).norm(), 1e-12);
        EXPECT_NEAR(tr.omega.norm(), 1.0, 1e-14);
    }
}

TEST(GenericFamily, ClosingGapVanishesAtOrigin) {
    const auto fam = GenericFamily::closing(4, 2.0);
    EXPECT_EQ(fam.gap(0.0), 0.0);
    EXPECT_NEAR(fam.gap(-0.5), 0.25, 1e-15);
    EXPECT_NEAR(fam.gap(1.0), 1.0, 1e-15);
}

TEST(GenericFamily, RejectsBadArguments) {
    EXPECT_THROW(GenericFamily::gapped(3), InvalidInput);
    EXPECT_THROW(GenericFamily::gapped(17), InvalidInput);
    EXPECT_THROW(GenericFamily::gapped(4, 0.0), InvalidInput);
    EXPECT_THROW(GenericFamily::gapped().generator_matrix(1.5), RangeError);
}

TEST(RateFit, RecoversExactPowerLaws) {
    const auto taus = geometric_taus(10, 2000, 8);
    for (double p : {1.0, 0.5}) {
        const auto f = rate_fit(taus, power_law(taus, 3.0, p));
        EXPECT_NEAR(f.exponent, p, 1e-6);
        EXPECT_NEAR(f.intercept, std::log(3.0), 1e-6);
        EXPECT_NEAR(f.r2, 1.0, 1e-12);
        EXPECT_EQ(f.points, 8u);
    }
}

TEST(RateFit, ToleratesMultiplicativeNoise) {
    const auto taus = geometric_taus(10, 2000, 12);
    auto errors = power_law(taus, 1.0, 1.0);
    std::mt19937_64 rng(11);
    std::normal_distribution<double> noise(0.0, 0.05);
    for (double& e : errors) e *= std::exp(noise(rng));
    const auto f = rate_fit(taus, errors);
    EXPECT_NEAR(f.exponent, 1.0, 0.1);
    EXPECT_GE(f.r2, 0.95);
}

TEST(RateFit, ExcludesFloorPoints) {
    const auto taus = geometric_taus(10, 10000, 10);
    auto errors = power_law(taus, 1.0, 1.0);
    for (double& e : errors) e = std::max(e, 1e-3);
    const auto f = rate_fit(taus, errors, 1e-3);
    EXPECT_NEAR(f.exponent, 1.0, 1e-9);
    EXPECT_LT(f.points, 10u);
}

TEST(RateFit, NeedsFivePoints) {
    const std::vector<double> taus{1, 2, 4, 8};
    EXPECT_THROW(rate_fit(taus, power_law(taus, 1, 1)), InsufficientData);
    const std::vector<double> flat{1, 2, 4, 8, 16};
    EXPECT_THROW(rate_fit(flat, std::vector<double>(5, 1e-3), 1e-3), InsufficientData);
    EXPECT_THROW(rate_fit(flat, std::vector<double>(4, 1.0)), InvalidInput);
}

TEST(Floor, PlateauUsesMedianOfLastTwo) {
    const std::vector<double> e{1.0, 0.5, 0.101, 0.1, 0.098};
    const auto f = estimate_floor(e);
    EXPECT_TRUE(f.plateau);
    EXPECT_DOUBLE_EQ(f.value, 0.099);
}

TEST(Floor, WithoutPlateauFallsBackToMinimum) {
    const std::vector<double> e{1.0, 0.5, 0.25, 0.125};
    const auto f = estimate_floor(e);
    EXPECT_FALSE(f.plateau);
    EXPECT_DOUBLE_EQ(f.value, 0.125);
    EXPECT_THROW(estimate_floor(std::vector<double>{}), InsufficientData);
}

TEST(Monotonicity, CountsViolations) {
    const std::vector<double> e{1.0, 0.8, 0.85, 0.9, 1.2, 0.1};
    EXPECT_EQ(monotonicity_violations(e, 0.1), 1u);
    EXPECT_EQ(strict_decrease_failures(e), 3u);
}

TEST(GeometricTaus, EndpointsAndRatio) {
    const auto t = geometric_taus(10, 2000, 8);
    ASSERT_EQ(t.size(), 8u);
    EXPECT_EQ(t.front(), 10.0);
    EXPECT_EQ(t.back(), 2000.0);
    for (std::size_t i = 2; i < t.size(); ++i) EXPECT_NEAR(t[i] / t[i - 1], t[1] / t[0], 1e-12);
    EXPECT_THROW(geometric_taus(0, 1, 3), InvalidInput);
}

TEST(RunJobs, KeepsInputOrderAndRethrows) {
    const std::function<int(std::size_t)> square = [](std::size_t i) { return static_cast<int>(i * i); };
    const auto out = run_jobs(7, square, 3);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], static_cast<int>(i * i));
    const std::function<int(std::size_t)> bad = [](std::size_t i) -> int {
        if (i == 2) throw std::runtime_error("boom");
        return 0;
    };
    EXPECT_THROW(run_jobs(4, bad, 2), std::runtime_error);
}

TEST(AdiabaticSweep, ConstantScheduleIsExact) {
    const auto m = static_model(2);
    const propagate::ThermalFamily fam(m);
    SweepOptions opt;
    opt.grid_points = 20;
    const std::vector<double> taus{1, 5, 25};
    const auto r = adiabatic_sweep(fam, taus, opt);
    for (std::size_t i = 0; i < taus.size(); ++i) {
        EXPECT_LE(r.errors[i], 2 * opt.integrator.tol);
        EXPECT_FALSE(r.lower_bound[i]);
    }
    EXPECT_FALSE(r.fit.has_value());
    EXPECT_FALSE(r.diagnostics.empty());
}

TEST(AdiabaticSweep, LargeStatesUseProbes) {
    const auto m = small_model(4, 3, isotherm::testing::polynomial_drive());
    const propagate::ThermalFamily fam(m);
    SweepOptions opt;
    opt.grid_points = 5;
    const std::vector<double> taus{1};
    const auto r = adiabatic_sweep(fam, taus, opt);
    EXPECT_TRUE(r.lower_bound[0]);
    EXPECT_TRUE(std::isnan(r.intertwining[0]));
}

TEST(AdiabaticSweep, GappedFamilyConvergesAtFirstOrder) {
    const auto fam = GenericFamily::gapped();
    SweepOptions opt;
    opt.grid_points = 50;
    const std::vector<double> taus{10, 20, 40, 80, 160};
    const auto r = adiabatic_sweep(fam, taus, opt, "gapped");
    EXPECT_EQ(strict_decrease_failures(r.errors), 0u);
    ASSERT_TRUE(r.fit.has_value());
    EXPECT_NEAR(r.fit->exponent, 1.0, 0.2);
    EXPECT_GE(r.fit->r2, 0.9);
    EXPECT_EQ(r.model, "gapped");
    for (double x : r.intertwining) EXPECT_LT(x, 1e-9);
}

TEST(AdiabaticSweep, WorkerCountDoesNotChangeResults) {
    const auto fam = GenericFamily::closing();
    SweepOptions one, two;
    one.grid_points = two.grid_points = 30;
    one.workers = 1;
    two.workers = 2;
    const std::vector<double> taus{5, 10, 20};
    const auto a = adiabatic_sweep(fam, taus, one);
    const auto b = adiabatic_sweep(fam, taus, two);
    EXPECT_EQ(a.errors, b.errors);
}

TEST(IsothermalSweep, ConstantScheduleStaysAtEquilibrium) {
    const auto m = static_model(2);
    SweepOptions opt;
    opt.grid_points = 20;
    const std::vector<double> taus{10, 100};
    const auto r = isothermal_sweep(m, taus, opt);
    for (double e : r.errors) EXPECT_LT(e, 1e-8);
    for (double e : r.errors_phasefree) EXPECT_LT(e, 1e-8);
}

TEST(IsothermalSweep, SlowRampDeviatesLess) {
    const auto m = thermal_model(2, 1, ramp_drive());
    SweepOptions opt;
    opt.grid_points = 100;
    const std::vector<double> taus{10, 500};
    const auto r = isothermal_sweep(m, taus, opt);
    EXPECT_LT(r.errors[1], r.errors[0]);
    for (std::size_t i = 0; i < taus.size(); ++i) EXPECT_LE(r.errors_phasefree[i], r.errors[i] + 1e-12);
}

TEST(BathScan, RowsAverageOverSeeds) {
    const std::vector<int> modes{1, 2};
    const std::vector<std::uint64_t> seeds{1, 2};
    const std::vector<double> taus{5, 10, 20};
    SweepOptions opt;
    opt.grid_points = 20;
    const auto rows = bath_size_scan([](int n, std::uint64_t s) { return thermal_model(n, s, ramp_drive()); }, modes,
                                     seeds, taus, opt);
    ASSERT_EQ(rows.size(), 2u);
    for (const auto& row : rows) {
        ASSERT_EQ(row.per_seed.size(), 2u);
        for (std::size_t i = 0; i < taus.size(); ++i) {
            EXPECT_DOUBLE_EQ(row.mean_errors[i], 0.5 * row.per_seed[0].errors[i] + 0.5 * row.per_seed[1].errors[i]);
        }
    }
}

TEST(Decoupling, TraceDistanceOfDiagonalStates) {
    Matrix a = Matrix::Zero(2, 2), b = Matrix::Zero(2, 2);
    a(0, 0) = 0.7;
    a(1, 1) = 0.3;
    b(0, 0) = 0.4;
    b(1, 1) = 0.6;
    EXPECT_NEAR(trace_distance(a, b), 0.3, 1e-15);
    EXPECT_NEAR(trace_distance(a, a), 0.0, 1e-15);
}

TEST(Decoupling, InfiniteTemperatureIsTrivial) {
    const auto m = thermal_model(2, 1, rotating_drive(model::SwitchOffCurve{1.0, 0.0, 1.0}, true),
                                 model::CouplingProfile::uniform, 0.1, 0.0);
    const auto alt = coupling_vector(2, model::CouplingProfile::graded, 1);
    const auto r = decoupling_run(m, 20, {}, &alt);
    EXPECT_LE(r.distance, 1e-9);
    ASSERT_TRUE(r.distance_alt.has_value());
    EXPECT_LE(*r.distance_alt, 1e-9);
}

TEST(Decoupling, RequiresSwitchOff) {
    const auto m = thermal_model(2, 1, rotating_drive(model::ConstantCurve{1.0}));
    EXPECT_THROW(decoupling_run(m, 10), InvalidInput);
}

TEST(Decoupling, ReducedStateIsADensityMatrix) {
    const auto m = thermal_model(2, 2, rotating_drive(model::SwitchOffCurve{1.0, 0.0, 1.0}, true));
    const auto r = decoupling_run(m, 20);
    EXPECT_NEAR(r.reduced.trace().real(), 1.0, 1e-9);
    EXPECT_LT((r.reduced - r.reduced.adjoint()).norm(), 1e-12);
    EXPECT_NEAR(r.distance, trace_distance(r.reduced, r.target), 1e-15);
}

TEST(CouplingVector, MatchesModelCouplings) {
    const auto m = thermal_model(3, 5, ramp_drive(), model::CouplingProfile::graded);
    const auto c = coupling_vector(3, model::CouplingProfile::graded, 5);
    EXPECT_EQ(c, m.bath().couplings);
    EXPECT_NEAR(std::inner_product(c.begin(), c.end(), c.begin(), 0.0), 1.0, 1e-14);
}
