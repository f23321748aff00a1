// τ-scaled true and adiabatic evolution on the doubled
// (vectorized) space, density-matrix evolution, and the intertwining and
// true-vs-adiabatic distance checks.
//
// The true propagator solves      i ∂_s U = τ L(s) U,
// the adiabatic one solves        i ∂_s U_a = (τ L(s) + i[Ṗ(s), P(s)]) U_a,
// with P(s) = |Ω(s)⟩⟨Ω(s)| the projection onto the tracked 0-eigenvector.

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "isotherm/errors.hpp"
#include "isotherm/integrators.hpp"
#include "isotherm/linop.hpp"
#include "isotherm/model.hpp"

namespace isotherm::propagate {

enum class Engine { adaptive, magnus };

inline const char* engine_name(Engine e) {
    return e == Engine::adaptive ? "adaptive" : "magnus";
}

struct IntegratorOptions {
    double tol = 1e-10;
    Engine engine = Engine::adaptive;
};

// Tracked eigenvector and its s-derivative.
struct TrackedPair {
    Vector omega;
    Vector omega_dot;
};

// A smooth family of selfadjoint generators L(s) on C^n with a tracked
// eigenvector. Blocks are n×k with one state per column.
template <class F>
concept GeneratorFamily = requires(const F& f, double s, const Matrix& block) {
    { f.state_dim() } -> std::convertible_to<Index>;
    { f.s0() } -> std::convertible_to<double>;
    { f.s1() } -> std::convertible_to<double>;
    { f.apply(s, block) } -> std::convertible_to<Matrix>;
    { f.tracked(s) } -> std::convertible_to<TrackedPair>;
    { f.generator_matrix(s) } -> std::convertible_to<Matrix>;
    { f.rate_bound(s) } -> std::convertible_to<double>;
};

// Thermal model viewed as a generator family on vec(d×d) = C^{d²}.
class ThermalFamily {
public:
    explicit ThermalFamily(const model::ModelFamily& m) : m_(&m) {}

    const model::ModelFamily& model() const noexcept { return *m_; }
    Index state_dim() const noexcept { return m_->dim() * m_->dim(); }
    double s0() const noexcept { return m_->schedule().s0(); }
    double s1() const noexcept { return m_->schedule().s1(); }

    Matrix apply(double s, const Matrix& block) const {
        const Matrix h = m_->hamiltonian_matrix(s);
        const Index d = h.rows();
        Matrix out(block.rows(), block.cols());
        for (Index c = 0; c < block.cols(); ++c) {
            const Eigen::Map<const Matrix> x(block.col(c).data(), d, d);
            Eigen::Map<Matrix> y(out.col(c).data(), d, d);
            y.noalias() = h * x;
            y.noalias() -= x * h;
        }
        return out;
    }

    TrackedPair tracked(double s) const {
        auto jet = model::equilibrium_jet(*m_, s);
        return {std::move(jet.omega), std::move(jet.omega_dot)};
    }

    Matrix generator_matrix(double s) const { return model::build_liouvillian(*m_, s).matrix(); }

    // Base Hamiltonian: L(s) = ad_{H(s)}, so exponentials reduce to conjugations.
    Matrix conjugation_hamiltonian(double s) const { return m_->hamiltonian_matrix(s); }

    // Spectral radius of ad_H is the spread of H's spectrum.
    double rate_bound(double s) const {
        Eigen::SelfAdjointEigenSolver<Matrix> es(m_->hamiltonian_matrix(s), Eigen::EigenvaluesOnly);
        return es.eigenvalues().maxCoeff() - es.eigenvalues().minCoeff();
    }

private:
    const model::ModelFamily* m_;
};

enum class GridKind {
    full,    // each entry is the full propagator U(s, s0)
    probes,  // U(s, s0) applied to seeded random unit vectors
    states,  // trajectory of a single initial state
};

struct PropagatorGrid {
    std::vector<double> grid;
    std::vector<Matrix> unitaries;
    double tau = 0.0;
    GridKind kind = GridKind::states;
    integrate::AdaptiveStats stats;
};

namespace detail {

inline void check_grid(std::span<const double> grid, double s0, double s1) {
    if (grid.empty()) throw InvalidInput("propagate: empty output grid");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (grid[i] < s0 - 1e-12 || grid[i] > s1 + 1e-12) throw RangeError("propagate: grid point outside schedule");
        if (i > 0 && !(grid[i] > grid[i - 1])) throw InvalidInput("propagate: grid must be strictly ascending");
    }
}

inline void check_options(double tau, const IntegratorOptions& opt) {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw InvalidInput("propagate: tau must be positive");
    if (!(opt.tol >= 1e-12 && opt.tol <= 1e-4)) throw InvalidInput("propagate: tol must lie in [1e-12, 1e-4]");
}

// [Ṗ, P] Y for P = ΩΩ†, Ṗ = Ω̇Ω† + ΩΩ̇†, without forming d²×d² matrices.
inline Matrix projection_commutator(const TrackedPair& t, const Matrix& y) {
    const Eigen::RowVectorXcd a = t.omega.adjoint() * y;      // Ω† Y
    const Eigen::RowVectorXcd b = t.omega_dot.adjoint() * y;  // Ω̇† Y
    const cplx oo = t.omega.squaredNorm();
    const cplx od = t.omega.dot(t.omega_dot);                 // ⟨Ω, Ω̇⟩
    // ṖPY = Ω̇ (Ω†Ω) a + Ω ⟨Ω̇,Ω⟩ a ;  PṖY = Ω (⟨Ω,Ω̇⟩ a + (Ω†Ω) b)
    Matrix out = t.omega_dot * (oo * a);
    out.noalias() += t.omega * (std::conj(od) * a - od * a - oo * b);
    return out;
}

// Generator of the adiabatic evolution as a dense Hermitian matrix: τL + i[Ṗ,P].
template <GeneratorFamily F>
Matrix adiabatic_generator_matrix(const F& fam, double s, double tau) {
    const TrackedPair t = fam.tracked(s);
    const Matrix p = t.omega * t.omega.adjoint();
    const Matrix pdot = t.omega_dot * t.omega.adjoint() + t.omega * t.omega_dot.adjoint();
    Matrix g = tau * fam.generator_matrix(s) + kI * (pdot * p - p * pdot);
    return 0.5 * (g + g.adjoint());
}

template <class F>
concept ConjugationFamily = GeneratorFamily<F> && requires(const F& f, double s) {
    { f.conjugation_hamiltonian(s) } -> std::convertible_to<Matrix>;
};

template <GeneratorFamily F, class Rhs>
PropagatorGrid run_adaptive(const F& fam, double tau, const Matrix& y0, std::span<const double> grid,
                            const IntegratorOptions& opt, Rhs&& rhs, GridKind kind) {
    PropagatorGrid out{std::vector<double>(grid.begin(), grid.end()), {}, tau, kind, {}};
    out.unitaries.resize(grid.size());
    integrate::AdaptiveOptions ao;
    ao.tol = opt.tol;
    ao.rate_hint = tau * std::max(fam.rate_bound(fam.s0()), 1e-3);
    out.stats = integrate::integrate_adaptive(rhs, fam.s0(), y0, grid, ao,
                                  [&](std::size_t i, double, const Matrix& y) { out.unitaries[i] = y; });
    if (!grid.empty() && grid.front() == fam.s0()) out.unitaries.front() = y0;
    return out;
}

// Fixed-step commutator-free integration; `generator(s)` returns the Hermitian
// generator and `expmul(G, h, y)` applies exp(-ihG).
template <GeneratorFamily F, class Gen, class ExpMul>
PropagatorGrid run_magnus(const F& fam, double tau, const Matrix& y0, std::span<const double> grid,
                          const IntegratorOptions& opt, Gen&& generator, ExpMul&& expmul, GridKind kind) {
    PropagatorGrid out{std::vector<double>(grid.begin(), grid.end()), {}, tau, kind, {}};
    out.unitaries.reserve(grid.size());
    Matrix y = y0;
    double s = fam.s0();
    const double rate = tau * std::max(fam.rate_bound(fam.s0()), 1e-3) + 1.0;
    for (double target : grid) {
        const double ds = target - s;
        if (ds > 0.0) {
            const std::size_t n = integrate::cf4_substeps(ds, rate, opt.tol);
            const double h = ds / static_cast<double>(n);
            for (std::size_t k = 0; k < n; ++k) {
                const double sa = s + static_cast<double>(k) * h;
                const Matrix g1 = generator(sa + integrate::cf4::node1 * h);
                const Matrix g2 = generator(sa + integrate::cf4::node2 * h);
                y = integrate::cf4_step(g1, g2, h, y, expmul);
            }
            out.stats.accepted += n;
            s = target;
        }
        out.unitaries.push_back(y);
    }
    return out;
}

inline Matrix apply_unitary_exp(const Matrix& g, double h, const Matrix& y) {
    return linop::unitary_exp(g, h) * y;
}

} // namespace detail

// Solves i ∂_s Y = τ L(s) Y from Y(s0) = y0 and samples Y on `grid`.
// y0 may hold one state or a block of states (identity → full propagator).
template <GeneratorFamily F>
PropagatorGrid evolve_true(const F& fam, double tau, const Matrix& y0, std::span<const double> grid,
                           const IntegratorOptions& opt = {}) {
    detail::check_options(tau, opt);
    detail::check_grid(grid, fam.s0(), fam.s1());
    if (y0.rows() != fam.state_dim()) throw InvalidInput("evolve_true: initial block has wrong row count");
    const GridKind kind = y0.cols() == fam.state_dim() && y0.isIdentity() ? GridKind::full : GridKind::states;

    if (opt.engine == Engine::adaptive) {
        auto rhs = [&](double s, const Matrix& y) -> Matrix { return (-kI * tau) * fam.apply(s, y); };
        return detail::run_adaptive(fam, tau, y0, grid, opt, rhs, kind);
    }
    if constexpr (detail::ConjugationFamily<F>) {
        // exp(-ih τ ad_G) vec(X) = vec(e^{-ihτG} X e^{ihτG}).
        auto gen = [&](double s) { return fam.conjugation_hamiltonian(s); };
        auto expmul = [&](const Matrix& g, double h, const Matrix& y) -> Matrix {
            const Matrix u = linop::unitary_exp(g, tau * h);
            const Index d = u.rows();
            Matrix out(y.rows(), y.cols());
            for (Index c = 0; c < y.cols(); ++c) {
                const Eigen::Map<const Matrix> x(y.col(c).data(), d, d);
                Eigen::Map<Matrix>(out.col(c).data(), d, d) = u * x * u.adjoint();
            }
            return out;
        };
        return detail::run_magnus(fam, tau, y0, grid, opt, gen, expmul, kind);
    } else {
        auto gen = [&](double s) -> Matrix { return tau * fam.generator_matrix(s); };
        return detail::run_magnus(fam, tau, y0, grid, opt, gen, detail::apply_unitary_exp, kind);
    }
}

// Solves i ∂_s Y = (τ L(s) + i[Ṗ(s), P(s)]) Y.
template <GeneratorFamily F>
PropagatorGrid evolve_adiabatic(const F& fam, double tau, const Matrix& y0, std::span<const double> grid,
                                const IntegratorOptions& opt = {}) {
    detail::check_options(tau, opt);
    detail::check_grid(grid, fam.s0(), fam.s1());
    if (y0.rows() != fam.state_dim()) throw InvalidInput("evolve_adiabatic: initial block has wrong row count");
    const GridKind kind = y0.cols() == fam.state_dim() && y0.isIdentity() ? GridKind::full : GridKind::states;

    if (opt.engine == Engine::adaptive) {
        auto rhs = [&](double s, const Matrix& y) -> Matrix {
            Matrix out = (-kI * tau) * fam.apply(s, y);
            out += detail::projection_commutator(fam.tracked(s), y);
            return out;
        };
        return detail::run_adaptive(fam, tau, y0, grid, opt, rhs, kind);
    }
    if (fam.state_dim() > 256) {
        throw ResourceError("evolve_adiabatic: dense exponential engine limited to state dimension 256");
    }
    auto gen = [&](double s) { return detail::adiabatic_generator_matrix(fam, s, tau); };
    return detail::run_magnus(fam, tau, y0, grid, opt, gen, detail::apply_unitary_exp, kind);
}

// Liouville equation dρ/dt = −i[H(t), ρ] with t = τs, sampled on `grid`.
// Returns raw matrices; see evolve_density for validated states.
inline std::vector<Matrix> evolve_density_raw(const model::ModelFamily& m, double tau, const Matrix& rho0,
                                              std::span<const double> grid, const IntegratorOptions& opt = {},
                                              integrate::AdaptiveStats* stats = nullptr) {
    detail::check_options(tau, opt);
    const auto& sch = m.schedule();
    detail::check_grid(grid, sch.s0(), sch.s1());
    if (rho0.rows() != m.dim() || rho0.cols() != m.dim()) throw InvalidInput("evolve_density: wrong state dimension");

    std::vector<Matrix> out(grid.size());
    if (opt.engine == Engine::adaptive) {
        auto rhs = [&](double s, const Matrix& r) -> Matrix {
            const Matrix h = m.hamiltonian_matrix(s);
            Matrix k(r.rows(), r.cols());
            k.noalias() = h * r;
            k.noalias() -= r * h;
            return (-kI * tau) * k;
        };
        integrate::AdaptiveOptions ao;
        ao.tol = opt.tol;
        ao.rate_hint = tau * std::max(ThermalFamily(m).rate_bound(sch.s0()), 1e-3);
        auto st = integrate::integrate_adaptive(rhs, sch.s0(), rho0, grid, ao,
                                    [&](std::size_t i, double, const Matrix& r) { out[i] = 0.5 * (r + r.adjoint()); });
        if (stats) *stats = st;
        return out;
    }
    const ThermalFamily fam(m);
    const Matrix vec0 = linop::vec(rho0);
    const auto traj = evolve_true(fam, tau, vec0, grid, opt);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Matrix r = linop::unvec(Vector(traj.unitaries[i].col(0)), m.dim());
        out[i] = 0.5 * (r + r.adjoint());
    }
    if (stats) *stats = traj.stats;
    return out;
}

inline std::vector<linop::DensityMatrix> evolve_density(const model::ModelFamily& m, double tau,
                                                        const linop::DensityMatrix& rho0,
                                                        std::span<const double> grid,
                                                        const IntegratorOptions& opt = {}) {
    const auto raw = evolve_density_raw(m, tau, rho0.matrix(), grid, opt);
    std::vector<linop::DensityMatrix> out;
    out.reserve(raw.size());
    const double slack = std::max(1e-10, 10.0 * opt.tol);
    for (const auto& r : raw) out.emplace_back(r, slack);
    return out;
}

// ‖aa† − bb†‖ for a unit vector b, computed in span{a, b}.
inline double rank_one_projector_distance(const Vector& a, const Vector& b) {
    const cplx a1 = b.dot(a);  // ⟨b, a⟩
    const double a2 = (a - b * a1).norm();
    // In the basis {b, r/|r|}: aa† − bb† = [[|a1|²−1, a1 a2], [a2 conj(a1), a2²]].
    Eigen::Matrix2cd m;
    m << std::norm(a1) - 1.0, a1 * a2, a2 * std::conj(a1), a2 * a2;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2cd> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

// max over the grid of ‖U_a(s,s0) P(s0) U_a(s,s0)† − P(s)‖. Works on full
// propagators or on the trajectory of Ω(s0) (for rank-one P these agree).
template <GeneratorFamily F>
double check_intertwining(const F& fam, const PropagatorGrid& adiabatic) {
    if (adiabatic.kind == GridKind::probes) {
        throw InvalidInput("check_intertwining: needs full propagators or the trajectory of Ω(s0)");
    }
    const Vector omega0 = fam.tracked(fam.s0()).omega;
    double worst = 0.0;
    for (std::size_t i = 0; i < adiabatic.grid.size(); ++i) {
        const Vector moved = adiabatic.kind == GridKind::full ? Vector(adiabatic.unitaries[i] * omega0)
                                                              : Vector(adiabatic.unitaries[i].col(0));
        const Vector omega = fam.tracked(adiabatic.grid[i]).omega;
        worst = std::max(worst, rank_one_projector_distance(moved, omega));
    }
    return worst;
}

struct DistanceReport {
    double sup = 0.0;
    bool is_lower_bound = false;
};

// sup over the grid of ‖U(s,s0) − U_a(s,s0)‖ (operator norm; on probe blocks
// the max column norm, which bounds the operator norm from below).
inline DistanceReport true_vs_adiabatic_distance(const PropagatorGrid& u, const PropagatorGrid& ua) {
    if (u.grid != ua.grid || u.unitaries.size() != ua.unitaries.size() || u.kind != ua.kind) {
        throw InvalidInput("true_vs_adiabatic_distance: mismatched grids");
    }
    DistanceReport r;
    r.is_lower_bound = u.kind != GridKind::full;
    for (std::size_t i = 0; i < u.unitaries.size(); ++i) {
        const Matrix diff = u.unitaries[i] - ua.unitaries[i];
        const double d = u.kind == GridKind::full ? linop::operator_norm(diff) : diff.colwise().norm().maxCoeff();
        r.sup = std::max(r.sup, d);
    }
    return r;
}

// Full propagators when the state dimension is at most full_cap, otherwise
// `probes` seeded random unit vectors.
inline Matrix initial_block(Index state_dim, Index full_cap, int probes, linop::Rng& rng) {
    if (state_dim <= full_cap) return Matrix::Identity(state_dim, state_dim);
    Matrix b(state_dim, probes);
    for (int k = 0; k < probes; ++k) b.col(k) = linop::random_unit_vector(state_dim, rng);
    return b;
}

inline std::vector<double> uniform_grid(double s0, double s1, std::size_t points) {
    if (points < 2) throw InvalidInput("uniform_grid: need at least two points");
    std::vector<double> g(points);
    for (std::size_t i = 0; i < points; ++i) {
        g[i] = s0 + (s1 - s0) * static_cast<double>(i) / static_cast<double>(points - 1);
    }
    g.back() = s1;
    return g;
}

} // namespace isotherm::propagate
