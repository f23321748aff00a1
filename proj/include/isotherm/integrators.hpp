// Two independent engines for linear evolution equations
// y'(s) = f(s, y) on matrix-valued states:
//
//   * Dormand–Prince 8(5,3) with error-per-unit-step control and the
//     7th-order continuous extension for output points between steps;
//   * the 4th-order commutator-free exponential scheme on Gauss points
//     (two exponentials of Hermitian combinations per step, exactly unitary).

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "isotherm/dop853_tableau.hpp"
#include "isotherm/errors.hpp"
#include "isotherm/linop.hpp"

namespace isotherm::integrate {

struct AdaptiveOptions {
    double tol = 1e-10;
    // Rate scale of the problem (≈ spectral radius of the generator); sets the first step.
    double rate_hint = 1.0;
    double min_step = 1e-13;
    std::size_t max_steps = 100'000'000;
};

struct AdaptiveStats {
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    std::size_t rhs_evaluations = 0;
};

// Integrates y' = f(s, y) from s_begin over the ascending `outputs` with the
// Dormand–Prince 8(5,3) pair, calling observe(index, s, y) at each output.
// A step is accepted when the local error estimate is at most
// tol · h / (s_end − s_begin), so the accumulated error stays near tol.
// Outputs between steps come from the 7th-order continuous extension.
template <class Rhs, class Observer>
AdaptiveStats integrate_adaptive(Rhs&& f, double s_begin, Matrix y, std::span<const double> outputs,
                                 const AdaptiveOptions& opt, Observer&& observe) {
    namespace tb = dop853;
    AdaptiveStats stats;
    if (outputs.empty()) return stats;
    if (!(opt.tol > 0.0)) throw InvalidInput("integrate_adaptive: tolerance must be positive");
    const double s_end = outputs.back();
    const double span = s_end - s_begin;
    std::size_t next = 0;
    while (next < outputs.size() && outputs[next] <= s_begin) {
        observe(next, outputs[next], y);
        ++next;
    }
    if (next == outputs.size()) return stats;

    // Linear combination y + h Σ_j w[j] K[j] over the first n stages.
    auto combine = [](const Matrix& base, double h, const double* w, const Matrix* k, int n) {
        Matrix out = base;
        for (int j = 0; j < n; ++j)
            if (w[j] != 0.0) out.noalias() += (h * w[j]) * k[j];
        return out;
    };

    double s = s_begin;
    double h = std::min(span, 0.5 / std::max(opt.rate_hint, 1e-300));
    std::array<Matrix, tb::stages_extended> k;
    k[0] = f(s, y);
    ++stats.rhs_evaluations;
    Matrix ynew;

    while (next < outputs.size()) {
        if (stats.accepted + stats.rejected >= opt.max_steps) {
            throw IntegrationError("integrate_adaptive: step budget exhausted", s);
        }
        if (h < opt.min_step * std::max(1.0, std::abs(span))) {
            throw IntegrationError("integrate_adaptive: step size underflow", s);
        }
        const bool last = s + h >= s_end;
        if (last) h = s_end - s;

        for (int i = 1; i < tb::stages; ++i) k[i] = f(s + tb::c[i] * h, combine(y, h, tb::a[i], k.data(), i));
        ynew = combine(y, h, tb::b, k.data(), tb::stages);
        k[tb::stages] = f(s + h, ynew);
        stats.rhs_evaluations += tb::stages;

        Matrix err5 = Matrix::Zero(y.rows(), y.cols());
        Matrix err3 = Matrix::Zero(y.rows(), y.cols());
        for (int j = 0; j <= tb::stages; ++j) {
            if (tb::e5[j] != 0.0) err5.noalias() += tb::e5[j] * k[j];
            if (tb::e3[j] != 0.0) err3.noalias() += tb::e3[j] * k[j];
        }
        const double n5 = err5.cwiseAbs().maxCoeff();
        const double n3 = err3.cwiseAbs().maxCoeff();
        const double err = (n5 == 0.0 && n3 == 0.0) ? 0.0 : h * n5 * n5 / std::sqrt(n5 * n5 + 0.01 * n3 * n3);
        const double scale = std::max(1.0, std::max(y.cwiseAbs().maxCoeff(), ynew.cwiseAbs().maxCoeff()));
        const double ratio = err / (opt.tol * scale * (h / span));
        if (!std::isfinite(ratio)) throw IntegrationError("integrate_adaptive: non-finite state", s);

        if (ratio <= 1.0) {
            ++stats.accepted;
            const double s_new = last ? s_end : s + h;
            if (next < outputs.size() && outputs[next] < s_new) {
                // Continuous extension: three extra stages and seven coefficient blocks.
                for (int i = tb::stages + 1; i < tb::stages_extended; ++i) {
                    k[i] = f(s + tb::c[i] * h, combine(y, h, tb::a[i], k.data(), i));
                }
                stats.rhs_evaluations += tb::stages_extended - tb::stages - 1;
                std::array<Matrix, tb::interpolator_power> fc;
                const Matrix dy = ynew - y;
                fc[0] = dy;
                fc[1] = h * k[0] - dy;
                fc[2] = 2.0 * dy - h * (k[tb::stages] + k[0]);
                for (int r = 0; r < tb::interpolator_power - 3; ++r) {
                    fc[3 + r] = combine(Matrix::Zero(y.rows(), y.cols()), h, tb::d[r], k.data(), tb::stages_extended);
                }
                while (next < outputs.size() && outputs[next] < s_new) {
                    const double x = (outputs[next] - s) / h;
                    Matrix yi = Matrix::Zero(y.rows(), y.cols());
                    for (int r = tb::interpolator_power - 1; r >= 0; --r) {
                        yi += fc[r];
                        yi *= (r % 2 == 0) ? x : 1.0 - x;
                    }
                    yi += y;
                    observe(next, outputs[next], yi);
                    ++next;
                }
            }
            while (next < outputs.size() && outputs[next] <= s_new) {
                observe(next, outputs[next], ynew);
                ++next;
            }
            s = s_new;
            y.swap(ynew);
            std::swap(k[0], k[tb::stages]);
            const double grow = ratio == 0.0 ? 5.0 : std::min(5.0, 0.9 * std::pow(ratio, -1.0 / 8.0));
            h *= grow;
        } else {
            ++stats.rejected;
            h *= std::max(0.2, 0.9 * std::pow(ratio, -1.0 / 8.0));
        }
    }
    return stats;
}

// Gauss nodes and weights of the 4th-order commutator-free scheme.
namespace cf4 {
inline const double sqrt3 = std::sqrt(3.0);
inline const double node1 = 0.5 - sqrt3 / 6.0;
inline const double node2 = 0.5 + sqrt3 / 6.0;
inline const double early = 0.25 + sqrt3 / 6.0;  // weight of the first node in the first factor
inline const double late = 0.25 - sqrt3 / 6.0;
} // namespace cf4

// One step y ← exp(-i h (l·G1 + e·G2)) exp(-i h (e·G1 + l·G2)) y for
// Hermitian generator samples G1 = G(s + node1 h), G2 = G(s + node2 h).
// `expmul(G, h, y)` must return exp(-i h G) applied to y.
template <class ExpMul>
Matrix cf4_step(const Matrix& g1, const Matrix& g2, double h, const Matrix& y, ExpMul&& expmul) {
    const Matrix first = cf4::early * g1 + cf4::late * g2;
    const Matrix second = cf4::late * g1 + cf4::early * g2;
    return expmul(second, h, expmul(first, h, y));
}

// Substeps per output interval of length ds so that h · rate ≈ phase_per_step.
inline std::size_t cf4_substeps(double ds, double rate, double tol) {
    const double phase = std::clamp(2.0 * std::pow(tol, 0.2), 1e-3, 0.5);
    const double n = std::ceil(std::abs(ds) * rate / phase);
    return static_cast<std::size_t>(std::max(1.0, n));
}

} // namespace isotherm::integrate
