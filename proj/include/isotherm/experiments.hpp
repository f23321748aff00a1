// Packaged numerical experiments: adiabatic convergence
// sweeps on a controllable generic family, isothermal deviation sweeps on the
// thermal model (with bath-size scans), power-law fits, and decoupling runs.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "isotherm/errors.hpp"
#include "isotherm/linop.hpp"
#include "isotherm/model.hpp"
#include "isotherm/propagate.hpp"

namespace isotherm::experiments {

// ---------------------------------------------------------------------------
// Generic family: L(s) = R(s) diag(0, gap(s), 2, 3, …, n−1) R(s)ᵀ on [−1, 1]
// with R(s) a product of Givens rotations G_{ij}(ω s). The tracked eigenvalue
// is λ(s) = 0 with eigenvector R(s) e_0.

enum class GapProfile { gapped, closing };

class GenericFamily {
public:
    struct Rotation {
        Index i;
        Index j;
        double rate;
    };

    GenericFamily(Index n, GapProfile profile, double parameter) : n_(n), profile_(profile), param_(parameter) {
        if (n < 4 || n > 16) throw InvalidInput("GenericFamily: dimension must lie in [4, 16]");
        if (!(parameter > 0.0) || !std::isfinite(parameter)) {
            throw InvalidInput("GenericFamily: gap or exponent must be positive");
        }
        static constexpr double table[] = {0.7, 0.5, 0.3, 0.6, 0.4, 0.2};
        std::size_t k = 0;
        for (Index dist = 1; dist < n; ++dist)
            for (Index i = 0; i + dist < n; ++i) rotations_.push_back({i, i + dist, table[k++ % 6]});
    }

    static GenericFamily gapped(Index n = 4, double delta = 1.0) { return {n, GapProfile::gapped, delta}; }
    static GenericFamily closing(Index n = 4, double alpha = 1.0) { return {n, GapProfile::closing, alpha}; }

    Index state_dim() const noexcept { return n_; }
    double s0() const noexcept { return -1.0; }
    double s1() const noexcept { return 1.0; }
    GapProfile profile() const noexcept { return profile_; }
    double parameter() const noexcept { return param_; }
    const std::vector<Rotation>& rotations() const noexcept { return rotations_; }

    double gap(double s) const { return profile_ == GapProfile::gapped ? param_ : std::pow(std::abs(s), param_); }

    Matrix rotation(double s) const {
        Eigen::MatrixXd r = Eigen::MatrixXd::Identity(n_, n_);
        for (const auto& g : rotations_) apply_givens(r, g, s, false);
        return r.cast<cplx>();
    }

    // dR/ds by the product rule.
    Matrix rotation_derivative(double s) const {
        Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n_, n_);
        for (std::size_t k = 0; k < rotations_.size(); ++k) {
            Eigen::MatrixXd r = Eigen::MatrixXd::Identity(n_, n_);
            for (std::size_t q = 0; q < rotations_.size(); ++q) apply_givens(r, rotations_[q], s, q == k);
            sum += r;
        }
        return sum.cast<cplx>();
    }

    Matrix generator_matrix(double s) const {
        require(s);
        Eigen::VectorXd d(n_);
        d(0) = 0.0;
        d(1) = gap(s);
        for (Index k = 2; k < n_; ++k) d(k) = static_cast<double>(k);
        const Matrix r = rotation(s);
        Matrix l = r * d.cast<cplx>().asDiagonal() * r.adjoint();
        return 0.5 * (l + l.adjoint());
    }

    Matrix apply(double s, const Matrix& block) const { return generator_matrix(s) * block; }

    propagate::TrackedPair tracked(double s) const {
        require(s);
        return {rotation(s).col(0), rotation_derivative(s).col(0)};
    }

    double rate_bound(double) const { return std::max(static_cast<double>(n_ - 1), param_); }

    std::string describe() const {
        return "generic n=" + std::to_string(n_) +
               (profile_ == GapProfile::gapped ? " gapped delta=" : " closing alpha=") + std::to_string(param_);
    }

private:
    void require(double s) const {
        if (s < s0() - 1e-12 || s > s1() + 1e-12) throw RangeError("GenericFamily: s outside [-1, 1]");
    }

    // r ← r · G (or r · dG/ds when `derivative`), G the (i, j) rotation by rate·s.
    static void apply_givens(Eigen::MatrixXd& r, const Rotation& g, double s, bool derivative) {
        const double th = g.rate * s;
        double c = std::cos(th), sn = std::sin(th);
        if (derivative) {
            // d/ds [[c, −s], [s, c]] = rate · [[−s, −c], [c, −s]], zero elsewhere.
            const Eigen::VectorXd ci = r.col(g.i), cj = r.col(g.j);
            r.setZero();
            r.col(g.i) = g.rate * (-sn * ci + c * cj);
            r.col(g.j) = g.rate * (-c * ci - sn * cj);
            return;
        }
        const Eigen::VectorXd ci = r.col(g.i), cj = r.col(g.j);
        r.col(g.i) = c * ci + sn * cj;
        r.col(g.j) = -sn * ci + c * cj;
    }

    Index n_;
    GapProfile profile_;
    double param_;
    std::vector<Rotation> rotations_;
};

static_assert(propagate::GeneratorFamily<GenericFamily>);

// ---------------------------------------------------------------------------
// Fits and floors

struct FitResult {
    double exponent = 0.0;  // error ∝ τ^{−p}
    double intercept = 0.0; // ln error = intercept − p ln τ
    double r2 = 0.0;
    std::size_t points = 0;
};

// Least squares on (ln τ, ln error). Points with error ≤ 2·floor are excluded.
inline FitResult rate_fit(std::span<const double> taus, std::span<const double> errors, double floor = 0.0) {
    if (taus.size() != errors.size()) throw InvalidInput("rate_fit: length mismatch");
    std::vector<double> x, y;
    for (std::size_t i = 0; i < taus.size(); ++i) {
        if (!(taus[i] > 0.0)) throw InvalidInput("rate_fit: tau must be positive");
        if (errors[i] > 2.0 * floor && errors[i] > 0.0) {
            x.push_back(std::log(taus[i]));
            y.push_back(std::log(errors[i]));
        }
    }
    if (x.size() < 5) {
        throw InsufficientData("rate_fit: " + std::to_string(x.size()) + " usable points, need at least 5");
    }
    const auto n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) throw InsufficientData("rate_fit: all tau values coincide");
    const double slope = sxy / sxx;
    FitResult f;
    f.exponent = -slope;
    f.intercept = my - slope * mx;
    f.r2 = syy == 0.0 ? 1.0 : 1.0 - (syy - slope * sxy) / syy;
    f.points = x.size();
    return f;
}

struct FloorEstimate {
    double value = 0.0;
    bool plateau = false;  // last three errors pairwise within 20%
};

// Median of the last two errors on a plateau; otherwise the smallest error
// seen, which bounds the floor from above.
inline FloorEstimate estimate_floor(std::span<const double> errors) {
    if (errors.empty()) throw InsufficientData("estimate_floor: no errors");
    FloorEstimate f;
    f.value = *std::min_element(errors.begin(), errors.end());
    if (errors.size() >= 3) {
        const double a = errors[errors.size() - 3], b = errors[errors.size() - 2], c = errors[errors.size() - 1];
        auto close = [](double u, double v) { return std::abs(u - v) < 0.2 * std::max(u, v); };
        if (close(a, b) && close(b, c) && close(a, c)) {
            f.plateau = true;
            f.value = 0.5 * (b + c);
        }
    }
    return f;
}

// Number of steps i → i+1 where the error grows by more than `slack` (relative).
inline std::size_t monotonicity_violations(std::span<const double> errors, double slack = 0.1) {
    std::size_t v = 0;
    for (std::size_t i = 1; i < errors.size(); ++i)
        if (errors[i] > errors[i - 1] * (1.0 + slack)) ++v;
    return v;
}

// Number of steps where the error fails to decrease at all.
inline std::size_t strict_decrease_failures(std::span<const double> errors) {
    std::size_t v = 0;
    for (std::size_t i = 1; i < errors.size(); ++i)
        if (!(errors[i] < errors[i - 1])) ++v;
    return v;
}

inline std::vector<double> geometric_taus(double lo, double hi, std::size_t count) {
    if (!(lo > 0.0) || !(hi > lo) || count < 2) throw InvalidInput("geometric_taus: need 0 < lo < hi and count >= 2");
    std::vector<double> t(count);
    for (std::size_t i = 0; i < count; ++i) {
        t[i] = lo * std::pow(hi / lo, static_cast<double>(i) / static_cast<double>(count - 1));
    }
    t.front() = lo;
    t.back() = hi;
    return t;
}

// ---------------------------------------------------------------------------
// Job runner: independent jobs on a small thread pool, results in input order.

template <class R>
std::vector<R> run_jobs(std::size_t count, const std::function<R(std::size_t)>& job, unsigned workers = 0) {
    std::vector<R> out(count);
    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, count));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) out[i] = job(i);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(count);
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    out[i] = job(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepOptions {
    propagate::IntegratorOptions integrator;
    std::size_t grid_points = 200;
    Index full_cap = 256;  // full propagators up to this state dimension
    int probes = 20;
    std::uint64_t seed = 1;
    unsigned workers = 0;
};

struct SweepResult {
    std::vector<double> taus;
    std::vector<double> errors;
    std::vector<double> errors_phasefree;  // NaN where not applicable
    std::vector<bool> lower_bound;
    std::vector<double> intertwining;  // adiabatic sweeps only; NaN on probe blocks
    std::optional<FitResult> fit;
    FloorEstimate floor;
    std::vector<std::string> diagnostics;
    std::string model;
    std::size_t grid_points = 0;
    double tol = 0.0;
    std::uint64_t seed = 0;
};

namespace detail {

inline void check_taus(std::span<const double> taus) {
    if (taus.empty()) throw InvalidInput("sweep: empty tau list");
    for (std::size_t i = 0; i < taus.size(); ++i) {
        if (!(taus[i] > 0.0) || !std::isfinite(taus[i])) throw InvalidInput("sweep: tau values must be positive");
        if (i > 0 && !(taus[i] > taus[i - 1])) throw InvalidInput("sweep: tau values must be strictly increasing");
    }
}

inline void finish_sweep(SweepResult& r) {
    r.floor = estimate_floor(r.errors);
    const double excluded = r.floor.plateau ? r.floor.value : 0.0;
    try {
        r.fit = rate_fit(r.taus, r.errors, excluded);
    } catch (const InsufficientData& e) {
        r.diagnostics.emplace_back(e.what());
    }
    const auto v = monotonicity_violations(r.errors);
    if (v > 0 && r.fit && r.fit->r2 < 0.5) {
        r.diagnostics.push_back("errors are not monotone in tau (" + std::to_string(v) +
                                " violations) and the power-law fit is poor (R^2 = " + std::to_string(r.fit->r2) + ")");
    }
}

// min over φ of ‖ψ − e^{iφ}Ω‖, evaluated directly at the optimal phase to
// avoid the cancellation in sqrt(2 − 2|⟨Ω, ψ⟩|).
inline double phase_free_distance(const Vector& psi, const Vector& omega) {
    const cplx overlap = omega.dot(psi);
    const cplx phase = std::abs(overlap) > 0.0 ? overlap / std::abs(overlap) : cplx(1.0);
    return (psi - phase * omega).norm();
}

} // namespace detail

// sup_s ‖U(s, s0) − U_a(s, s0)‖ for each τ.
template <propagate::GeneratorFamily F>
SweepResult adiabatic_sweep(const F& fam, std::span<const double> taus, const SweepOptions& opt = {},
                            std::string model = "family") {
    detail::check_taus(taus);
    const auto grid = propagate::uniform_grid(fam.s0(), fam.s1(), opt.grid_points);
    linop::Rng rng(opt.seed);
    const Matrix block = propagate::initial_block(fam.state_dim(), opt.full_cap, opt.probes, rng);

    struct Outcome {
        propagate::DistanceReport distance;
        double intertwining = 0.0;
    };
    const std::function<Outcome(std::size_t)> job = [&](std::size_t i) {
        const auto u = propagate::evolve_true(fam, taus[i], block, grid, opt.integrator);
        const auto ua = propagate::evolve_adiabatic(fam, taus[i], block, grid, opt.integrator);
        Outcome o{propagate::true_vs_adiabatic_distance(u, ua), std::nan("")};
        if (ua.kind == propagate::GridKind::full) o.intertwining = propagate::check_intertwining(fam, ua);
        return o;
    };
    const auto outcomes = run_jobs(taus.size(), job, opt.workers);

    SweepResult r;
    r.taus.assign(taus.begin(), taus.end());
    for (const auto& o : outcomes) {
        r.errors.push_back(o.distance.sup);
        r.errors_phasefree.push_back(std::nan(""));
        r.lower_bound.push_back(o.distance.is_lower_bound);
        r.intertwining.push_back(o.intertwining);
    }
    r.model = std::move(model);
    r.grid_points = opt.grid_points;
    r.tol = opt.integrator.tol;
    r.seed = opt.seed;
    detail::finish_sweep(r);
    return r;
}

struct DeviationTrace {
    double sup = 0.0;
    double sup_phasefree = 0.0;
};

// sup_s ‖Ψ(s) − Ω(s)‖ for Ψ the true evolution of Ω(s0). Ψ is evolved as the
// d×d amplitude e^{−βH(s0)/2}/‖·‖ under X ↦ U X U†.
inline DeviationTrace isothermal_deviation(const model::ModelFamily& m, double tau,
                                           std::span<const double> grid,
                                           const propagate::IntegratorOptions& opt = {}) {
    const auto& sch = m.schedule();
    const Matrix x0 = model::equilibrium_vector(m, sch.s0()).amplitude();
    const auto traj = propagate::evolve_density_raw(m, tau, x0, grid, opt);
    DeviationTrace d;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Vector psi = linop::vec(traj[i]);
        const Vector omega = model::equilibrium_vector(m, grid[i]).omega;
        d.sup = std::max(d.sup, (psi - omega).norm());
        d.sup_phasefree = std::max(d.sup_phasefree, detail::phase_free_distance(psi, omega));
    }
    return d;
}

inline SweepResult isothermal_sweep(const model::ModelFamily& m, std::span<const double> taus,
                                    const SweepOptions& opt = {}, std::string model = "thermal") {
    detail::check_taus(taus);
    const auto& sch = m.schedule();
    const auto grid = propagate::uniform_grid(sch.s0(), sch.s1(), opt.grid_points);
    const std::function<DeviationTrace(std::size_t)> job = [&](std::size_t i) {
        return isothermal_deviation(m, taus[i], grid, opt.integrator);
    };
    const auto traces = run_jobs(taus.size(), job, opt.workers);
    SweepResult r;
    r.taus.assign(taus.begin(), taus.end());
    for (const auto& t : traces) {
        r.errors.push_back(t.sup);
        r.errors_phasefree.push_back(t.sup_phasefree);
        r.lower_bound.push_back(false);
    }
    r.model = std::move(model);
    r.grid_points = opt.grid_points;
    r.tol = opt.integrator.tol;
    r.seed = opt.seed;
    detail::finish_sweep(r);
    return r;
}

// Seed-averaged isothermal sweeps for each bath size.
struct BathScanRow {
    int modes = 0;
    std::vector<double> mean_errors;
    FloorEstimate floor;
    std::vector<SweepResult> per_seed;
};

using ModelBuilder = std::function<model::ModelFamily(int modes, std::uint64_t seed)>;

inline std::vector<BathScanRow> bath_size_scan(const ModelBuilder& build, std::span<const int> modes,
                                               std::span<const std::uint64_t> seeds, std::span<const double> taus,
                                               const SweepOptions& opt = {}) {
    if (seeds.empty()) throw InvalidInput("bath_size_scan: need at least one seed");
    std::vector<BathScanRow> rows;
    for (int n : modes) {
        BathScanRow row;
        row.modes = n;
        row.mean_errors.assign(taus.size(), 0.0);
        for (std::uint64_t seed : seeds) {
            const auto m = build(n, seed);
            auto r = isothermal_sweep(m, taus, opt, "thermal n=" + std::to_string(n) + " seed=" + std::to_string(seed));
            for (std::size_t i = 0; i < taus.size(); ++i) row.mean_errors[i] += r.errors[i] / static_cast<double>(seeds.size());
            row.per_seed.push_back(std::move(r));
        }
        row.floor = estimate_floor(row.mean_errors);
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Decoupling

inline double trace_distance(const Matrix& a, const Matrix& b) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * ((a - b) + (a - b).adjoint()), Eigen::EigenvaluesOnly);
    return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

struct DecouplingReport {
    double tau = 0.0;
    double distance = 0.0;                  // with the model's own coupling W
    std::optional<double> distance_alt;     // with the alternative coupling
    Matrix reduced;                          // ρ_Σ(s1)
    Matrix target;                           // e^{−β H_0^Σ(s1)} / Z_Σ
};

namespace detail {

inline double final_system_distance(const model::ModelFamily& m, double tau, const propagate::IntegratorOptions& opt,
                                    Matrix* reduced, Matrix* target) {
    const auto& sch = m.schedule();
    const std::vector<double> end{sch.s1()};
    const Matrix rho0 = model::equilibrium_vector(m, sch.s0()).density();
    const auto traj = propagate::evolve_density_raw(m, tau, rho0, end, opt);
    const Matrix red = linop::partial_trace(traj.back(), m.split(), linop::Subsystem::system);
    const Matrix gib = model::gibbs_state(m.system_hamiltonian(sch.s1()), m.beta()).matrix();
    if (reduced) *reduced = red;
    if (target) *target = gib;
    return trace_distance(red, gib);
}

} // namespace detail

// Starts in the joint equilibrium at s0, switches the coupling off, and
// compares the final reduced state of the small system with its own Gibbs
// state. With `alt_couplings`, repeats the run with that coupling vector.
inline DecouplingReport decoupling_run(const model::ModelFamily& m, double tau,
                                       const propagate::IntegratorOptions& opt = {},
                                       const std::vector<double>* alt_couplings = nullptr) {
    if (!m.schedule().switch_off()) throw InvalidInput("decoupling_run: schedule must switch the coupling off");
    DecouplingReport r;
    r.tau = tau;
    r.distance = detail::final_system_distance(m, tau, opt, &r.reduced, &r.target);
    if (alt_couplings) r.distance_alt = detail::final_system_distance(m.with_couplings(*alt_couplings), tau, opt, nullptr, nullptr);
    return r;
}

// ---------------------------------------------------------------------------
// Default drives

// eps(s) = 1 − s², delta(s) = 2s − s²: the field turns from z toward x.
inline model::Schedule rotating_drive(model::Curve coupling, bool switch_off = false) {
    return {0.0, 1.0, model::PolynomialCurve{{1.0, 0.0, -1.0}}, model::PolynomialCurve{{0.0, 2.0, -1.0}},
            std::move(coupling), switch_off};
}

// eps ramps linearly from 1 to 1.5 at fixed delta = 0.3: the system gap widens
// by about half, sweeping it across the bath band.
inline model::Schedule ramp_drive(model::Curve coupling = model::ConstantCurve{1.0}) {
    return {0.0, 1.0, model::LinearCurve{1.0, 1.5}, model::ConstantCurve{0.3}, std::move(coupling)};
}

inline model::ModelFamily thermal_model(int modes, std::uint64_t seed, model::Schedule schedule,
                                        model::CouplingProfile profile = model::CouplingProfile::uniform,
                                        double coupling_scale = 0.1, double beta = 1.0, Index system_dim = 2,
                                        double omega_min = 0.5, double omega_max = 1.5) {
    linop::Rng rng(seed);
    auto bath = model::make_bath(modes, omega_min, omega_max, profile, rng);
    return {system_dim, std::move(bath), coupling_scale, beta, std::move(schedule)};
}

// Normalized coupling vector of a profile, without touching the energies.
inline std::vector<double> coupling_vector(int modes, model::CouplingProfile profile, std::uint64_t seed) {
    linop::Rng rng(seed);
    return model::make_bath(modes, 0.5, 1.5, profile, rng).couplings;
}

} // namespace isotherm::experiments
