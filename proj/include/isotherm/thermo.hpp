// Thermodynamic functionals of the small system along a driven
// process: internal energy, bath-subtracted entropy, free energy, heat flux,
// work rate, the reversible (instantaneous-equilibrium) values, and residual
// checks of the first law and of the isothermal entropy-rate identity.
//
// Rates are per unit physical time t = τ s. Boltzmann's constant is 1.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "isotherm/errors.hpp"
#include "isotherm/linop.hpp"
#include "isotherm/model.hpp"
#include "isotherm/propagate.hpp"

namespace isotherm::thermo {

struct ThermoSample {
    double s = 0.0;
    double t = 0.0;
    double U_sigma = 0.0;
    double S_sigma = 0.0;
    double F_sigma = 0.0;
    double dQ_dt = 0.0;
    double dA_dt = 0.0;
    double U_rev = 0.0;
    double S_rev = 0.0;
    double dU_dt = 0.0;  // stencil derivatives along the trajectory
    double dS_dt = 0.0;
    double first_law_residual = 0.0;
    double entropy_rate_residual = 0.0;
};

struct ProcessRecord {
    std::string model_id;
    double tau = 0.0;
    double beta = 0.0;
    std::vector<ThermoSample> samples;
    double tol = 0.0;
    std::string engine;
    std::size_t eigenvalue_clips = 0;
    integrate::AdaptiveStats stats;
};

namespace detail {

inline void require_state(const Matrix& rho, const model::ModelFamily& m) {
    if (rho.rows() != m.dim() || rho.cols() != m.dim()) {
        throw InvalidInput("thermo: state dimension " + std::to_string(rho.rows()) + " does not match model dimension " +
                           std::to_string(m.dim()));
    }
}

inline double expectation(const Matrix& rho, const Matrix& a) {
    // tr(ρA) = Σ_ij ρ_ij A_ji
    return (rho.transpose().cwiseProduct(a)).sum().real();
}

// Eigenvalue entropy −Σ p ln p; eigenvalues at or below the log clip count as
// clipped and contribute nothing.
inline double von_neumann(const Matrix& rho, std::size_t* clipped) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(rho, Eigen::EigenvaluesOnly);
    double s = 0.0;
    for (Index i = 0; i < es.eigenvalues().size(); ++i) {
        const double p = es.eigenvalues()(i);
        if (p <= linop::kLogClip) {
            if (clipped) ++*clipped;
            continue;
        }
        s -= p * std::log(p);
    }
    return s;
}

} // namespace detail

// tr(ρ (1 ⊗ H_0^Σ(s) + g(s) W)).
inline double internal_energy(const Matrix& rho, const model::ModelFamily& m, double s) {
    detail::require_state(rho, m);
    return detail::expectation(rho, m.sigma_hamiltonian(s));
}

inline double internal_energy(const linop::DensityMatrix& rho, const model::ModelFamily& m, double s) {
    return internal_energy(rho.matrix(), m, s);
}

// −tr ρ ln ρ − β tr(ρ (H^R ⊗ 1)) − ln Z_R, i.e. −tr(ρ[ln ρ − ln(ρ_R^β ⊗ 1)]).
inline double relative_entropy_sigma(const Matrix& rho, const model::ModelFamily& m, std::size_t* clipped = nullptr) {
    detail::require_state(rho, m);
    const double beta = m.beta();
    const Matrix rho_bath = linop::partial_trace(rho, m.split(), linop::Subsystem::bath);
    const double bath_energy = detail::expectation(rho_bath, m.bath_hamiltonian());
    return detail::von_neumann(rho, clipped) - beta * bath_energy - model::log_partition(m.bath_hamiltonian(), beta);
}

inline double relative_entropy_sigma(const linop::DensityMatrix& rho, const model::ModelFamily& m,
                                     std::size_t* clipped = nullptr) {
    return relative_entropy_sigma(rho.matrix(), m, clipped);
}

// β F = −(ln Z(s) − ln Z_R); finite at β = 0.
inline double beta_free_energy(const model::ModelFamily& m, double s) {
    return -(model::log_partition(m.hamiltonian_matrix(s), m.beta()) -
             model::log_partition(m.bath_hamiltonian(), m.beta()));
}

// F = −(1/β) ln(Z(s)/Z_R). At β = 0 the ratio is d_Σ and F = −∞.
inline double free_energy(const model::ModelFamily& m, double s) {
    if (m.beta() == 0.0) return -std::numeric_limits<double>::infinity();
    return beta_free_energy(m, s) / m.beta();
}

// −d/dt tr(ρ H^R) = g(s) tr(ρ i[H^R ⊗ 1, W]).
inline double heat_flux(const Matrix& rho, const model::ModelFamily& m, double s) {
    detail::require_state(rho, m);
    m.schedule().require(s);
    const double g = m.coupling(s);
    if (g == 0.0) return 0.0;
    return g * detail::expectation(rho, m.heat_current());
}

inline double heat_flux(const linop::DensityMatrix& rho, const model::ModelFamily& m, double s) {
    return heat_flux(rho.matrix(), m, s);
}

// tr(ρ ∂_t H^Σ) = (1/τ) tr(ρ (1 ⊗ ∂_s H_0^Σ + ∂_s g W)).
inline double work_rate(const Matrix& rho, const model::ModelFamily& m, double s, double tau) {
    detail::require_state(rho, m);
    if (!(tau > 0.0)) throw InvalidInput("work_rate: tau must be positive");
    return detail::expectation(rho, m.sigma_hamiltonian_derivative(s)) / tau;
}

inline double work_rate(const linop::DensityMatrix& rho, const model::ModelFamily& m, double s, double tau) {
    return work_rate(rho.matrix(), m, s, tau);
}

struct Reversible {
    double U_rev = 0.0;
    double S_rev = 0.0;
    double F = 0.0;
    double beta_F = 0.0;

    // |S_rev − (β U_rev − β F)|, well defined at β = 0.
    double identity_residual(double beta) const { return std::abs(S_rev - (beta * U_rev - beta_F)); }
};

// Values in the instantaneous equilibrium state e^{−βH(s)}/Z. S_rev is
// computed from the relative-entropy formula, independently of U_rev and F.
inline Reversible reversible_quantities(const model::ModelFamily& m, double s) {
    const Matrix rho = model::equilibrium_vector(m, s).density();
    Reversible r;
    r.U_rev = internal_energy(rho, m, s);
    r.S_rev = relative_entropy_sigma(rho, m);
    r.beta_F = beta_free_energy(m, s);
    r.F = free_energy(m, s);
    return r;
}

// ∂_s of the reversible entropy and of F, exact: ∂_s F = tr(ρ_β ∂_s H^Σ) and
// ∂_s S_rev = β tr(∂_s ρ_β H^Σ).
struct ReversibleRates {
    double dS_rev_ds = 0.0;
    double dF_ds = 0.0;
};

inline ReversibleRates reversible_rates(const model::ModelFamily& m, double s) {
    const auto jet = model::equilibrium_jet(m, s);
    const Index d = m.dim();
    const Matrix x = linop::unvec(jet.omega, d);
    const Matrix dx = linop::unvec(jet.omega_dot, d);
    const Matrix rho = x * x.adjoint();
    const Matrix drho = dx * x.adjoint() + x * dx.adjoint();
    return {m.beta() * detail::expectation(drho, m.sigma_hamiltonian(s)),
            detail::expectation(rho, m.sigma_hamiltonian_derivative(s))};
}

// ---------------------------------------------------------------------------
// Process records

struct ProcessOptions {
    propagate::IntegratorOptions integrator;
    // Stencil spacing in physical time for dU/dt and dS/dt.
    double stencil_dt = 0.01;
    std::string model_id = "model";
};

namespace detail {

// First derivative from five equally spaced samples f(x0 + kδ), k = 0..4, at
// position `at` ∈ {0..4}; fourth-order accurate.
inline double five_point_derivative(const std::array<double, 5>& f, int at, double delta) {
    static constexpr double w[5][5] = {
        {-25.0, 48.0, -36.0, 16.0, -3.0},
        {-3.0, -10.0, 18.0, -6.0, 1.0},
        {1.0, -8.0, 0.0, 8.0, -1.0},
        {-1.0, 6.0, -18.0, 10.0, 3.0},
        {3.0, -16.0, 36.0, -48.0, 25.0},
    };
    double acc = 0.0;
    for (int k = 0; k < 5; ++k) acc += w[at][k] * f[static_cast<std::size_t>(k)];
    return acc / (12.0 * delta);
}

struct Stencil {
    double first = 0.0;  // s of the first stencil point
    double step = 0.0;   // spacing in s
    int at = 2;          // index of the sample point inside the stencil
};

// Centered where it fits; shifted toward the interior at the ends of [s0, s1].
inline Stencil make_stencil(double s, double s0, double s1, double ds) {
    const double len = s1 - s0;
    ds = std::min(ds, len / 8.0);
    Stencil st{s - 2.0 * ds, ds, 2};
    if (s - 2.0 * ds < s0) {
        st.at = static_cast<int>(std::floor((s - s0) / ds));
        st.at = std::clamp(st.at, 0, 2);
        st.first = s - st.at * ds;
    } else if (s + 2.0 * ds > s1) {
        const int room = std::clamp(static_cast<int>(std::floor((s1 - s) / ds)), 0, 2);
        st.at = 4 - room;
        st.first = s - st.at * ds;
    }
    return st;
}

} // namespace detail

// Evolves the initial equilibrium state e^{−βH(s0)}/Z under the Liouville
// equation and records every quantity on `grid`. dU/dt and dS/dt come from a
// five-point stencil in t around each grid point, with stencil states taken
// from the same integration run.
inline ProcessRecord record_process(const model::ModelFamily& m, double tau, std::span<const double> grid,
                                    const ProcessOptions& opt = {}) {
    if (grid.size() < 3) throw InvalidInput("record_process: need at least 3 grid points");
    const auto& sch = m.schedule();
    const double ds = opt.stencil_dt / tau;

    // Collect all evaluation points; several stencil points may coincide.
    std::map<double, std::size_t> slot;
    std::vector<detail::Stencil> stencils;
    stencils.reserve(grid.size());
    for (double s : grid) {
        sch.require(s);
        const auto st = detail::make_stencil(s, sch.s0(), sch.s1(), ds);
        stencils.push_back(st);
        for (int k = 0; k < 5; ++k) {
            const double sk = k == st.at ? s : std::clamp(st.first + k * st.step, sch.s0(), sch.s1());
            slot.emplace(sk, 0);
        }
    }
    std::vector<double> points;
    points.reserve(slot.size());
    for (auto& [s, idx] : slot) {
        idx = points.size();
        points.push_back(s);
    }

    const Matrix rho0 = model::equilibrium_vector(m, sch.s0()).density();
    ProcessRecord rec;
    rec.model_id = opt.model_id;
    rec.tau = tau;
    rec.beta = m.beta();
    rec.tol = opt.integrator.tol;
    rec.engine = propagate::engine_name(opt.integrator.engine);
    const auto states = propagate::evolve_density_raw(m, tau, rho0, points, opt.integrator, &rec.stats);

    std::vector<double> energy(points.size()), entropy(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        energy[i] = internal_energy(states[i], m, points[i]);
        entropy[i] = relative_entropy_sigma(states[i], m, &rec.eigenvalue_clips);
    }

    rec.samples.reserve(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double s = grid[i];
        const auto& st = stencils[i];
        std::array<double, 5> fu{}, fs{};
        for (int k = 0; k < 5; ++k) {
            const double sk = k == st.at ? s : std::clamp(st.first + k * st.step, sch.s0(), sch.s1());
            const std::size_t j = slot.at(sk);
            fu[static_cast<std::size_t>(k)] = energy[j];
            fs[static_cast<std::size_t>(k)] = entropy[j];
        }
        const std::size_t j = slot.at(s);
        const Matrix& rho = states[j];
        const auto rev = reversible_quantities(m, s);

        ThermoSample x;
        x.s = s;
        x.t = tau * s;
        x.U_sigma = energy[j];
        x.S_sigma = entropy[j];
        x.F_sigma = rev.F;
        x.dQ_dt = heat_flux(rho, m, s);
        x.dA_dt = work_rate(rho, m, s, tau);
        x.U_rev = rev.U_rev;
        x.S_rev = rev.S_rev;
        const double dt = tau * st.step;
        x.dU_dt = detail::five_point_derivative(fu, st.at, dt);
        x.dS_dt = detail::five_point_derivative(fs, st.at, dt);
        x.first_law_residual = x.dU_dt - x.dQ_dt - x.dA_dt;
        x.entropy_rate_residual = x.dS_dt - m.beta() * x.dQ_dt;
        rec.samples.push_back(x);
    }
    return rec;
}

namespace detail {

template <class Field>
double max_interior(const ProcessRecord& rec, Field&& field) {
    if (rec.samples.size() < 3) throw InvalidInput("residual: need at least 3 samples");
    double worst = 0.0;
    for (std::size_t i = 1; i + 1 < rec.samples.size(); ++i) worst = std::max(worst, std::abs(field(rec.samples[i])));
    return worst;
}

} // namespace detail

// max over interior samples of |dU/dt − δQ/dt − δA/dt|.
inline double first_law_residual(const ProcessRecord& rec) {
    return detail::max_interior(rec, [](const ThermoSample& x) { return x.first_law_residual; });
}

// max over interior samples of |dS/dt − β δQ/dt|.
inline double entropy_rate_residual(const ProcessRecord& rec) {
    return detail::max_interior(rec, [](const ThermoSample& x) { return x.entropy_rate_residual; });
}

// Largest S^Σ over a record, for the ln d_Σ bound.
inline double max_entropy(const ProcessRecord& rec) {
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& x : rec.samples) worst = std::max(worst, x.S_sigma);
    return worst;
}

struct QuasistaticRow {
    double tau = 0.0;
    double entropy_rate_gap = 0.0;  // sup_s |∂_s S^Σ − ∂_s S_rev|
    double work_rate_gap = 0.0;     // sup_s |∂_s A − ∂_s F|
};

// Per record, sup-norm gaps between the process rates and the reversible
// rates. Compared per unit s (τ × the t-rate), where both sides stay O(1).
inline std::vector<QuasistaticRow> quasistatic_convergence_report(const model::ModelFamily& m,
                                                                  std::span<const ProcessRecord> records) {
    std::vector<QuasistaticRow> rows;
    if (records.empty()) return rows;
    const auto& ref = records.front().samples;
    std::vector<ReversibleRates> rates;
    rates.reserve(ref.size());
    for (const auto& x : ref) rates.push_back(reversible_rates(m, x.s));
    for (const auto& rec : records) {
        if (rec.samples.size() != ref.size()) throw InvalidInput("quasistatic_convergence_report: inconsistent grids");
        QuasistaticRow row{rec.tau, 0.0, 0.0};
        for (std::size_t i = 0; i < ref.size(); ++i) {
            const auto& x = rec.samples[i];
            if (x.s != ref[i].s) throw InvalidInput("quasistatic_convergence_report: inconsistent grids");
            row.entropy_rate_gap = std::max(row.entropy_rate_gap, std::abs(rec.tau * x.dS_dt - rates[i].dS_rev_ds));
            row.work_rate_gap = std::max(row.work_rate_gap, std::abs(rec.tau * x.dA_dt - rates[i].dF_ds));
        }
        rows.push_back(row);
    }
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.tau < b.tau; });
    return rows;
}

} // namespace isotherm::thermo
