// Smooth parameter curves on [s0, s1] and the schedule that
// drives the small-system Hamiltonian and the coupling.

#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "isotherm/errors.hpp"

namespace isotherm::model {

struct ConstantCurve {
    double value = 0.0;
};

// Linear interpolation from `start` at s0 to `end` at s1.
struct LinearCurve {
    double start = 0.0;
    double end = 0.0;
    double s0 = 0.0;
    double s1 = 1.0;
};

// Σ_k c_k s^k.
struct PolynomialCurve {
    std::vector<double> coefficients;
};

// initial · cos²(π u / 2), u = (s − s0)/(s1 − s0). Vanishes with zero slope at s1.
struct SwitchOffCurve {
    double initial = 1.0;
    double s0 = 0.0;
    double s1 = 1.0;
};

class Curve {
public:
    using Variant = std::variant<ConstantCurve, LinearCurve, PolynomialCurve, SwitchOffCurve>;

    Curve() : c_(ConstantCurve{}) {}
    Curve(ConstantCurve c) : c_(c) {}
    Curve(LinearCurve c) : c_(c) {}
    Curve(PolynomialCurve c) : c_(std::move(c)) {}
    Curve(SwitchOffCurve c) : c_(c) {}

    double value(double s) const { return eval(s, 0); }
    double derivative(double s) const { return eval(s, 1); }
    double second_derivative(double s) const { return eval(s, 2); }

    const Variant& variant() const noexcept { return c_; }

private:
    double eval(double s, int order) const {
        return std::visit([&](const auto& c) { return eval_one(c, s, order); }, c_);
    }

    static double eval_one(const ConstantCurve& c, double, int order) {
        return order == 0 ? c.value : 0.0;
    }

    static double eval_one(const LinearCurve& c, double s, int order) {
        const double slope = (c.end - c.start) / (c.s1 - c.s0);
        if (order == 0) return c.start + slope * (s - c.s0);
        return order == 1 ? slope : 0.0;
    }

    static double eval_one(const PolynomialCurve& c, double s, int order) {
        // Horner on the order-th derivative's coefficients.
        double acc = 0.0;
        const auto n = static_cast<int>(c.coefficients.size());
        for (int k = n - 1; k >= order; --k) {
            double factor = 1.0;
            for (int j = 0; j < order; ++j) factor *= static_cast<double>(k - j);
            acc = acc * s + factor * c.coefficients[static_cast<std::size_t>(k)];
        }
        return acc;
    }

    static double eval_one(const SwitchOffCurve& c, double s, int order) {
        const double w = std::numbers::pi / (c.s1 - c.s0);
        const double x = w * (s - c.s0);
        // cos²(x/2) = (1 + cos x)/2
        switch (order) {
            case 0: return c.initial * 0.5 * (1.0 + std::cos(x));
            case 1: return -c.initial * 0.5 * w * std::sin(x);
            default: return -c.initial * 0.5 * w * w * std::cos(x);
        }
    }

    Variant c_;
};

enum class Smoothness { analytic };

// Drive curves for H_0^Σ(s) = eps(s)·J_z + delta(s)·J_x and the coupling
// multiplier g(s).
class Schedule {
public:
    Schedule(double s0, double s1, Curve eps, Curve delta, Curve g, bool switch_off = false)
        : s0_(s0), s1_(s1), eps_(std::move(eps)), delta_(std::move(delta)), g_(std::move(g)),
          switch_off_(switch_off) {
        if (!(s0 < s1) || !std::isfinite(s0) || !std::isfinite(s1)) {
            throw InvalidInput("Schedule: need finite s0 < s1");
        }
        for (const Curve* c : {&eps_, &delta_, &g_}) {
            for (int i = 0; i <= 16; ++i) {
                const double s = s0_ + (s1_ - s0_) * i / 16.0;
                if (!std::isfinite(c->value(s)) || !std::isfinite(c->derivative(s))) {
                    throw InvalidInput("Schedule: curve is not finite on [s0, s1]");
                }
            }
        }
        if (switch_off_ && std::abs(g_.value(s1_)) > 1e-14) {
            throw InvalidInput("Schedule: switch-off schedule requires g(s1) = 0");
        }
    }

    static Schedule constant(double eps, double delta, double g, double s0 = 0.0, double s1 = 1.0) {
        return {s0, s1, ConstantCurve{eps}, ConstantCurve{delta}, ConstantCurve{g}};
    }

    double s0() const noexcept { return s0_; }
    double s1() const noexcept { return s1_; }
    const Curve& eps() const noexcept { return eps_; }
    const Curve& delta() const noexcept { return delta_; }
    const Curve& coupling() const noexcept { return g_; }
    bool switch_off() const noexcept { return switch_off_; }
    Smoothness smoothness() const noexcept { return Smoothness::analytic; }

    bool is_constant() const {
        auto constant = [](const Curve& c) { return std::holds_alternative<ConstantCurve>(c.variant()); };
        return constant(eps_) && constant(delta_) && constant(g_);
    }

    bool contains(double s) const noexcept {
        const double slack = 1e-12 * (s1_ - s0_);
        return s >= s0_ - slack && s <= s1_ + slack;
    }

    void require(double s) const {
        if (!contains(s)) {
            throw RangeError("s = " + std::to_string(s) + " outside schedule [" + std::to_string(s0_) + ", " +
                             std::to_string(s1_) + "]");
        }
    }

private:
    double s0_;
    double s1_;
    Curve eps_;
    Curve delta_;
    Curve g_;
    bool switch_off_;
};

} // namespace isotherm::model
