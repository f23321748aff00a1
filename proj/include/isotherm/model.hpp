// The driven composed system: a small spin coupled to a finite
// bath of two-level modes, its Hamiltonian H(s), the commutator Liouvillian
// L(s) on vectorized matrices, and the instantaneous equilibrium vector
// Ω(s) = vec(e^{-βH(s)/2}) / ‖·‖ with its projection P(s).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "isotherm/errors.hpp"
#include "isotherm/linop.hpp"
#include "isotherm/schedule.hpp"

namespace isotherm {

// Dense d²×d² matrix acting on column-stacked d×d matrices.
class Superoperator {
public:
    Superoperator() = default;
    Superoperator(Matrix m, Index base_dim) : m_(std::move(m)), base_(base_dim) {
        if (m_.rows() != base_ * base_ || m_.cols() != m_.rows()) {
            throw InvalidInput("Superoperator: matrix is not d²×d²");
        }
    }

    const Matrix& matrix() const noexcept { return m_; }
    Index dim() const noexcept { return m_.rows(); }
    Index base_dim() const noexcept { return base_; }

    Vector apply(const Vector& v) const { return m_ * v; }

private:
    Matrix m_;
    Index base_ = 0;
};

} // namespace isotherm

namespace isotherm::model {

// Spin-j matrices for a d-level system, j = (d − 1)/2, basis |m = j⟩ … |m = −j⟩.
struct SpinOperators {
    Matrix jz;
    Matrix jx;
};

inline SpinOperators spin_operators(Index d) {
    if (d < 2) throw InvalidInput("spin_operators: dimension must be at least 2");
    const double j = 0.5 * static_cast<double>(d - 1);
    SpinOperators ops{Matrix::Zero(d, d), Matrix::Zero(d, d)};
    for (Index k = 0; k < d; ++k) {
        const double m = j - static_cast<double>(k);
        ops.jz(k, k) = m;
        if (k + 1 < d) {
            // ⟨m|J+|m−1⟩ = sqrt(j(j+1) − m(m−1))
            const double a = 0.5 * std::sqrt(j * (j + 1.0) - m * (m - 1.0));
            ops.jx(k, k + 1) = a;
            ops.jx(k + 1, k) = a;
        }
    }
    return ops;
}

enum class CouplingProfile { uniform, graded, random };

// Bath of n two-level modes: H^R = Σ_k ω_k σ_z^{(k)}/2, interaction
// W = Σ_k c_k σ_x^{(k)} ⊗ 2J_x^Σ.
struct BathSpec {
    std::vector<double> energies;
    std::vector<double> couplings;
};

// Energies uniform in [omega_min, omega_max] (seeded), sorted; couplings normalized to unit 2-norm.
inline BathSpec make_bath(int modes, double omega_min, double omega_max, CouplingProfile profile,
                          linop::Rng& rng) {
    if (modes < 1) throw InvalidInput("make_bath: need at least one bath mode");
    if (!(omega_min <= omega_max)) throw InvalidInput("make_bath: empty energy band");
    BathSpec b;
    std::uniform_real_distribution<double> band(omega_min, omega_max);
    for (int k = 0; k < modes; ++k) b.energies.push_back(band(rng));
    std::sort(b.energies.begin(), b.energies.end());

    std::normal_distribution<double> normal(0.0, 1.0);
    for (int k = 0; k < modes; ++k) {
        switch (profile) {
            case CouplingProfile::uniform: b.couplings.push_back(1.0); break;
            case CouplingProfile::graded:
                b.couplings.push_back(modes == 1 ? 1.0 : 0.5 + static_cast<double>(k) / (modes - 1));
                break;
            case CouplingProfile::random: b.couplings.push_back(normal(rng)); break;
        }
    }
    double norm = 0.0;
    for (double c : b.couplings) norm += c * c;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw InvalidInput("make_bath: zero coupling vector");
    for (double& c : b.couplings) c /= norm;
    return b;
}

struct ModelLimits {
    Index max_dim = 128;           // d = d_R · d_Σ
    Index max_superop_dim = 1024;  // dense d² cap for build_liouvillian
};

class ModelFamily {
public:
    ModelFamily(Index system_dim, BathSpec bath, double coupling_scale, double beta, Schedule schedule,
                ModelLimits limits = {})
        : ds_(system_dim), bath_(std::move(bath)), coupling_scale_(coupling_scale), beta_(beta),
          schedule_(std::move(schedule)), limits_(limits) {
        if (ds_ < 2) throw InvalidInput("ModelFamily: system dimension must be at least 2");
        if (bath_.energies.empty() || bath_.energies.size() != bath_.couplings.size()) {
            throw InvalidInput("ModelFamily: bath energies and couplings must be non-empty and equal length");
        }
        if (!(beta >= 0.0) || !std::isfinite(beta)) throw InvalidInput("ModelFamily: beta must be finite and >= 0");
        const auto modes = bath_.energies.size();
        if (modes > 20) throw ResourceError("ModelFamily: too many bath modes");
        dr_ = Index{1} << modes;
        if (dr_ * ds_ > limits_.max_dim) {
            throw ResourceError("ModelFamily: total dimension " + std::to_string(dr_ * ds_) + " exceeds cap " +
                                std::to_string(limits_.max_dim));
        }
        build_static_terms();
    }

    Index system_dim() const noexcept { return ds_; }
    Index bath_dim() const noexcept { return dr_; }
    Index dim() const noexcept { return dr_ * ds_; }
    std::size_t bath_modes() const noexcept { return bath_.energies.size(); }
    double beta() const noexcept { return beta_; }
    double coupling_scale() const noexcept { return coupling_scale_; }
    double bath_offset() const noexcept { return bath_offset_; }
    const BathSpec& bath() const noexcept { return bath_; }
    const Schedule& schedule() const noexcept { return schedule_; }
    const ModelLimits& limits() const noexcept { return limits_; }
    linop::SplitDims split() const noexcept { return {dr_, ds_}; }

    // Bath Hamiltonian on the bath factor alone (d_R × d_R), including any offset.
    const Matrix& bath_hamiltonian() const noexcept { return hr_local_; }
    // H^R ⊗ 1 on the full space.
    const Matrix& bath_term() const noexcept { return hr_full_; }
    // W on the full space.
    const Matrix& interaction() const noexcept { return w_; }
    // i[H^R ⊗ 1, W]; the heat flux is g(s)·tr(ρ C).
    const Matrix& heat_current() const noexcept { return heat_current_; }
    const SpinOperators& spin() const noexcept { return spin_; }

    double coupling(double s) const { return coupling_scale_ * schedule_.coupling().value(s); }
    double coupling_derivative(double s) const { return coupling_scale_ * schedule_.coupling().derivative(s); }

    // H_0^Σ(s) on the system factor.
    Matrix system_hamiltonian(double s) const {
        return schedule_.eps().value(s) * spin_.jz + schedule_.delta().value(s) * spin_.jx;
    }
    Matrix system_hamiltonian_derivative(double s) const {
        return schedule_.eps().derivative(s) * spin_.jz + schedule_.delta().derivative(s) * spin_.jx;
    }

    // H^Σ(s) = 1 ⊗ H_0^Σ(s) + g(s) W on the full space.
    Matrix sigma_hamiltonian(double s) const {
        schedule_.require(s);
        return embed_system(system_hamiltonian(s)) + coupling(s) * w_;
    }
    Matrix sigma_hamiltonian_derivative(double s) const {
        schedule_.require(s);
        return embed_system(system_hamiltonian_derivative(s)) + coupling_derivative(s) * w_;
    }

    // H(s) = H^R ⊗ 1 + H^Σ(s).
    Matrix hamiltonian_matrix(double s) const { return hr_full_ + sigma_hamiltonian(s); }

    Matrix embed_system(const Matrix& a) const { return linop::kron(Matrix::Identity(dr_, dr_), a); }
    Matrix embed_bath(const Matrix& a) const { return linop::kron(a, Matrix::Identity(ds_, ds_)); }

    // Copies with one ingredient changed.
    ModelFamily with_bath_offset(double c) const {
        ModelFamily m = *this;
        m.bath_offset_ = bath_offset_ + c;
        m.build_static_terms();
        return m;
    }
    ModelFamily with_couplings(std::vector<double> couplings) const {
        BathSpec b = bath_;
        b.couplings = std::move(couplings);
        return ModelFamily(ds_, std::move(b), coupling_scale_, beta_, schedule_, limits_).with_bath_offset(bath_offset_);
    }
    ModelFamily with_beta(double beta) const {
        return ModelFamily(ds_, bath_, coupling_scale_, beta, schedule_, limits_).with_bath_offset(bath_offset_);
    }
    ModelFamily with_schedule(Schedule schedule) const {
        return ModelFamily(ds_, bath_, coupling_scale_, beta_, std::move(schedule), limits_)
            .with_bath_offset(bath_offset_);
    }

private:
    void build_static_terms() {
        spin_ = spin_operators(ds_);
        const auto modes = bath_.energies.size();
        Matrix sz(2, 2), sx(2, 2);
        sz << 1.0, 0.0, 0.0, -1.0;
        sx << 0.0, 1.0, 1.0, 0.0;
        auto single_mode = [&](const Matrix& op, std::size_t k) {
            Matrix out = Matrix::Identity(1, 1);
            for (std::size_t j = 0; j < modes; ++j) {
                out = linop::kron(out, j == k ? op : Matrix::Identity(2, 2));
            }
            return out;
        };
        hr_local_ = bath_offset_ * Matrix::Identity(dr_, dr_);
        Matrix wb = Matrix::Zero(dr_, dr_);
        for (std::size_t k = 0; k < modes; ++k) {
            hr_local_ += 0.5 * bath_.energies[k] * single_mode(sz, k);
            wb += bath_.couplings[k] * single_mode(sx, k);
        }
        hr_full_ = embed_bath(hr_local_);
        w_ = linop::kron(wb, 2.0 * spin_.jx);
        const Matrix c = kI * linop::commutator(hr_full_, w_);
        heat_current_ = 0.5 * (c + c.adjoint());
    }

    Index ds_;
    Index dr_ = 1;
    BathSpec bath_;
    double coupling_scale_;
    double beta_;
    double bath_offset_ = 0.0;
    Schedule schedule_;
    ModelLimits limits_;
    SpinOperators spin_;
    Matrix hr_local_;
    Matrix hr_full_;
    Matrix w_;
    Matrix heat_current_;
};

inline linop::HermitianMatrix build_hamiltonian(const ModelFamily& m, double s) {
    return linop::HermitianMatrix(m.hamiltonian_matrix(s));
}

inline Superoperator build_liouvillian(const ModelFamily& m, double s) {
    const Index d = m.dim();
    if (d * d > m.limits().max_superop_dim) {
        throw ResourceError("build_liouvillian: superoperator dimension " + std::to_string(d * d) +
                            " exceeds cap " + std::to_string(m.limits().max_superop_dim));
    }
    return Superoperator(linop::commutator_superoperator(m.hamiltonian_matrix(s)), d);
}

// L(s) applied to vec(X) without forming the superoperator.
inline Vector apply_liouvillian(const Matrix& h, const Vector& v) {
    const Matrix x = linop::unvec(v, h.rows());
    return linop::vec(h * x - x * h);
}

// ln tr e^{-βH}, shifted by the ground energy for overflow safety.
inline double log_partition(const RealVector& energies, double beta) {
    const double e0 = energies.minCoeff();
    double z = 0.0;
    for (Index i = 0; i < energies.size(); ++i) z += std::exp(-beta * (energies(i) - e0));
    return -beta * e0 + std::log(z);
}

inline double log_partition(const Matrix& h, double beta) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(h, Eigen::EigenvaluesOnly);
    return log_partition(es.eigenvalues(), beta);
}

// e^{-βH}/Z.
inline linop::DensityMatrix gibbs_state(const Matrix& h, double beta) {
    const auto es = linop::eig_hermitian(h);
    const double e0 = es.values.minCoeff();
    RealVector w = (-beta * (es.values.array() - e0)).exp();
    w /= w.sum();
    Matrix rho = es.vectors * w.cast<cplx>().asDiagonal() * es.vectors.adjoint();
    return linop::DensityMatrix(0.5 * (rho + rho.adjoint()), 1e-10);
}

struct EquilibriumData {
    Vector omega;  // unit vector of length d²
    double s = 0.0;
    Index base_dim = 0;

    // |Ω⟩⟨Ω|, d²×d².
    Matrix projection() const { return omega * omega.adjoint(); }
    // unvec(Ω), the normalized square root of the Gibbs state.
    Matrix amplitude() const { return linop::unvec(omega, base_dim); }
    // unvec(Ω) unvec(Ω)† = e^{-βH}/Z.
    Matrix density() const {
        const Matrix x = amplitude();
        return x * x.adjoint();
    }
};

namespace detail {

// Normalized e^{-βH/2} and its s-derivative given Ḣ (Daleckii–Krein).
struct SqrtGibbs {
    Matrix x;
    Matrix dx;
};

inline SqrtGibbs sqrt_gibbs(const Matrix& h, const Matrix* hdot, double beta) {
    const auto es = linop::eig_hermitian(h);
    const double e0 = es.values.minCoeff();
    const double c = -0.5 * beta;
    const Index n = es.values.size();
    RealVector f(n);
    for (Index i = 0; i < n; ++i) f(i) = std::exp(c * (es.values(i) - e0));
    Matrix x = es.vectors * f.cast<cplx>().asDiagonal() * es.vectors.adjoint();
    const double norm = x.norm();
    SqrtGibbs out{x / norm, Matrix()};
    if (hdot == nullptr) return out;

    // First divided differences of f(λ) = exp(c(λ − e0)).
    Matrix k = es.vectors.adjoint() * (*hdot) * es.vectors;
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) {
            const double dl = es.values(i) - es.values(j);
            const double arg = c * dl;
            const double dd = std::abs(arg) < 1e-300 ? f(j) * c : f(j) * std::expm1(arg) / dl;
            k(i, j) *= dd;
        }
    }
    const Matrix dx = es.vectors * k * es.vectors.adjoint();
    // d/ds (x/‖x‖) = ẋ/‖x‖ − x Re⟨x, ẋ⟩/‖x‖³
    const double re = (x.adjoint() * dx).trace().real();
    out.dx = dx / norm - x * (re / (norm * norm * norm));
    return out;
}

} // namespace detail

inline EquilibriumData equilibrium_vector(const ModelFamily& m, double s) {
    if (!std::isfinite(m.beta())) throw InvalidInput("equilibrium_vector: beta must be finite");
    const auto g = detail::sqrt_gibbs(m.hamiltonian_matrix(s), nullptr, m.beta());
    return {linop::vec(g.x), s, m.dim()};
}

// dΩ/ds, exact up to rounding.
inline Vector equilibrium_derivative(const ModelFamily& m, double s) {
    const Matrix hdot = m.sigma_hamiltonian_derivative(s);
    const auto g = detail::sqrt_gibbs(m.hamiltonian_matrix(s), &hdot, m.beta());
    return linop::vec(g.dx);
}

struct EquilibriumJet {
    Vector omega;
    Vector omega_dot;
};

inline EquilibriumJet equilibrium_jet(const ModelFamily& m, double s) {
    const Matrix hdot = m.sigma_hamiltonian_derivative(s);
    const auto g = detail::sqrt_gibbs(m.hamiltonian_matrix(s), &hdot, m.beta());
    return {linop::vec(g.x), linop::vec(g.dx)};
}

// Central difference (P(s+h) − P(s−h))/2h of the equilibrium projection.
// Compares against steps h/2 and h/4: if the differences fail to shrink
// (cancellation dominates truncation) a StepSizeError with a better h is thrown.
inline Matrix projection_derivative(const ModelFamily& m, double s, double h) {
    const auto& sch = m.schedule();
    if (!(h > 0.0)) throw InvalidInput("projection_derivative: step must be positive");
    if (!sch.contains(s - h) || !sch.contains(s + h)) {
        throw RangeError("projection_derivative: s ± h leaves the schedule interval");
    }
    auto central = [&](double step) {
        const Matrix pp = equilibrium_vector(m, s + step).projection();
        const Matrix pm = equilibrium_vector(m, s - step).projection();
        return Matrix((pp - pm) / (2.0 * step));
    };
    const Matrix d1 = central(h);
    const Matrix d2 = central(0.5 * h);
    const Matrix d4 = central(0.25 * h);
    const double e12 = (d1 - d2).norm();
    const double e24 = (d2 - d4).norm();
    const double scale = std::max(1.0, d2.norm());
    // Truncation-dominated differences shrink ~4x per halving; rounding-dominated ones grow.
    if (e24 > 1e-10 * scale && e12 < 2.0 * e24) {
        const double suggested = std::cbrt(std::numeric_limits<double>::epsilon()) * (sch.s1() - sch.s0());
        throw StepSizeError("projection_derivative: cancellation dominates the central difference", suggested);
    }
    return d1;
}

} // namespace isotherm::model
