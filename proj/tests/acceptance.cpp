// Acceptance run: one PASS/FAIL line per criterion, thresholds fixed below.
// Models come from the bundled configs in configs/. Exit status is the
// number of failed criteria (capped at 1).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "isotherm/config.hpp"
#include "isotherm/experiments.hpp"
#include "isotherm/runner.hpp"
#include "isotherm/thermo.hpp"

using namespace isotherm;
namespace fs = std::filesystem;

namespace {

// Thresholds.
constexpr double kTol = 1e-10;
constexpr double kIntertwining = 1e-6;
constexpr double kIntertwiningSeconds = 120.0;
constexpr double kExponentLo = 0.8, kExponentHi = 1.2, kMinR2 = 0.9;
constexpr double kMaxViolationFraction = 0.1;
constexpr double kSweepSeconds = 600.0;
constexpr double kIdentity = 1e-6;
constexpr double kRefinement = 5.0;
constexpr double kShift = 1e-10;
constexpr double kIsothermalSeconds = 1200.0;
constexpr double kReversible = 1e-9;
constexpr double kDecouplingRatio = 2.0;
constexpr double kEntropySlack = 1e-9;

using clock_type = std::chrono::steady_clock;
double seconds_since(clock_type::time_point t0) {
    return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string sci(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", x);
    return buf;
}

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    if (!pass) ++failures;
    std::cout << (pass ? "PASS" : "FAIL") << "  " << id << "  " << name << ": " << detail << std::endl;
}

// Runs one criterion; an exception counts as a failure with its message.
void criterion(int id, const std::string& name, const std::function<void()>& body) {
    try {
        body();
    } catch (const std::exception& e) {
        report(id, name, false, std::string("error: ") + e.what());
    }
}

config::ExperimentConfig bundled(const std::string& name) {
    auto c = config::load(std::string(ISOTHERM_CONFIG_DIR) + "/" + name);
    config::validate(c);
    return c;
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// Every state the check for the entropy bound looks at: ρ = X X† along a
// trajectory of the amplitude X.
double max_entropy_along(const model::ModelFamily& m, double tau, std::size_t points) {
    const auto& sch = m.schedule();
    const auto grid = propagate::uniform_grid(sch.s0(), sch.s1(), points);
    const Matrix rho0 = model::equilibrium_vector(m, sch.s0()).density();
    const auto traj = propagate::evolve_density_raw(m, tau, rho0, grid, {kTol});
    double worst = -INFINITY;
    for (const auto& r : traj) worst = std::max(worst, thermo::relative_entropy_sigma(r, m));
    return worst;
}

} // namespace

int main() {
    const auto identities = bundled("identities.json");
    const auto driven = config::build_model(identities);
    const auto process_grid = propagate::uniform_grid(0.0, 1.0, identities.run.grid_points);
    const double tau_id = identities.run.taus.front();

    criterion(1, "intertwining", [&] {
        const propagate::ThermalFamily thermal(driven);
        const auto generic = experiments::GenericFamily::gapped(4);
        double worst_thermal = 0.0, worst_generic = 0.0, slowest = 0.0;
        for (double tau : {10.0, 100.0, 1000.0}) {
            auto t0 = clock_type::now();
            const auto grid = propagate::uniform_grid(thermal.s0(), thermal.s1(), 200);
            const auto ua = propagate::evolve_adiabatic(thermal, tau, thermal.tracked(thermal.s0()).omega, grid, {kTol});
            worst_thermal = std::max(worst_thermal, propagate::check_intertwining(thermal, ua));
            slowest = std::max(slowest, seconds_since(t0));

            t0 = clock_type::now();
            const auto ggrid = propagate::uniform_grid(generic.s0(), generic.s1(), 200);
            const auto ug = propagate::evolve_adiabatic(generic, tau, Matrix::Identity(4, 4), ggrid, {kTol});
            worst_generic = std::max(worst_generic, propagate::check_intertwining(generic, ug));
            slowest = std::max(slowest, seconds_since(t0));
        }
        const bool pass = worst_thermal <= kIntertwining && worst_generic <= kIntertwining && slowest <= kIntertwiningSeconds;
        report(1, "intertwining", pass,
               "thermal d=16 max " + sci(worst_thermal) + ", generic n=4 max " + sci(worst_generic) + " (limit " +
                   sci(kIntertwining) + "), slowest tau " + sci(slowest) + " s (limit " + sci(kIntertwiningSeconds) + " s)");
    });

    criterion(2, "norm convergence", [&] {
        const auto t0 = clock_type::now();
        auto sweep = [](const config::ExperimentConfig& c) {
            experiments::SweepOptions o;
            o.integrator = {c.run.tol, c.run.engine};
            o.grid_points = c.run.grid_points;
            o.seed = c.seed();
            const auto fam = config::build_generic(*c.run.generic);
            return experiments::adiabatic_sweep(fam, c.run.taus, o, fam.describe());
        };
        const auto gapped = sweep(bundled("adiabatic_sweep.json"));
        const auto closing = sweep(bundled("adiabatic_sweep_closing.json"));
        const double elapsed = seconds_since(t0);
        const double steps = static_cast<double>(gapped.errors.size() - 1);
        const double bad = static_cast<double>(experiments::strict_decrease_failures(gapped.errors));
        const bool fits = gapped.fit && closing.fit;
        const double p = fits ? gapped.fit->exponent : NAN, r2 = fits ? gapped.fit->r2 : NAN;
        const double pc = fits ? closing.fit->exponent : NAN;
        const bool closing_converges = closing.errors.back() < closing.errors.front() && pc > 0.0 && pc < p;
        const bool pass = fits && bad / steps <= kMaxViolationFraction && p >= kExponentLo && p <= kExponentHi &&
                          r2 >= kMinR2 && closing_converges && elapsed <= kSweepSeconds;
        report(2, "norm convergence", pass,
               "gapped p = " + sci(p) + " (in [" + sci(kExponentLo) + ", " + sci(kExponentHi) + "]), R^2 = " + sci(r2) +
                   " (>= " + sci(kMinR2) + "), non-decreasing steps " + sci(bad) + "/" + sci(steps) +
                   "; closing p = " + sci(pc) + ", error " + sci(closing.errors.front()) + " -> " +
                   sci(closing.errors.back()) + "; " + sci(elapsed) + " s (limit " + sci(kSweepSeconds) + " s)");
    });

    // Records for criteria 3, 4 and 8.
    thermo::ProcessOptions po;
    po.integrator = {kTol};
    po.stencil_dt = identities.run.stencil_dt;
    std::optional<thermo::ProcessRecord> record;
    auto get_record = [&]() -> const thermo::ProcessRecord& {
        if (!record) record = thermo::record_process(driven, tau_id, process_grid, po);
        return *record;
    };

    criterion(3, "first law", [&] {
        const double fine = thermo::first_law_residual(get_record());
        thermo::ProcessOptions loose = po;
        loose.integrator.tol = 100 * kTol;
        const double coarse = thermo::first_law_residual(thermo::record_process(driven, tau_id, process_grid, loose));
        const double ratio = coarse / fine;
        report(3, "first law", fine <= kIdentity && ratio >= kRefinement,
               "max residual " + sci(fine) + " at tol " + sci(kTol) + " (limit " + sci(kIdentity) + "), " + sci(coarse) +
                   " at tol " + sci(100 * kTol) + ", ratio " + sci(ratio) + " (>= " + sci(kRefinement) + ")");
    });

    criterion(4, "entropy-rate identity", [&] {
        const auto& rec = get_record();
        const double res = thermo::entropy_rate_residual(rec);
        const auto shifted = thermo::record_process(driven.with_bath_offset(3.7), tau_id, process_grid, po);
        double drift = 0.0;
        for (std::size_t i = 0; i < rec.samples.size(); ++i) {
            const auto& a = rec.samples[i];
            const auto& b = shifted.samples[i];
            drift = std::max({drift, std::abs(a.S_sigma - b.S_sigma), std::abs(a.dQ_dt - b.dQ_dt),
                              std::abs(a.entropy_rate_residual - b.entropy_rate_residual)});
        }
        report(4, "entropy-rate identity", res <= kIdentity && drift <= kShift,
               "max |dS/dt - beta dQ/dt| " + sci(res) + " (limit " + sci(kIdentity) + "), change under H_R + 3.7 " +
                   sci(drift) + " (limit " + sci(kShift) + ")");
    });

    criterion(5, "isothermal deviation", [&] {
        const auto t0 = clock_type::now();
        const auto c = bundled("isothermal_sweep.json");
        experiments::SweepOptions o;
        o.integrator = {c.run.tol, c.run.engine};
        o.grid_points = c.run.grid_points;
        const auto rows = experiments::bath_size_scan(
            [&](int n, std::uint64_t seed) { return config::build_model(c, n, seed); }, c.run.bath_modes, c.run.seeds,
            c.run.taus, o);
        const auto grid = propagate::uniform_grid(0.0, 1.0, c.run.grid_points);
        bool slower_is_closer = true, floors_nonincreasing = true;
        std::string detail;
        for (std::size_t k = 0; k < rows.size(); ++k) {
            std::vector<double> at10, at500;
            for (auto seed : c.run.seeds) {
                const auto m = config::build_model(c, rows[k].modes, seed);
                at10.push_back(experiments::isothermal_deviation(m, 10.0, grid, o.integrator).sup);
                at500.push_back(experiments::isothermal_deviation(m, 500.0, grid, o.integrator).sup);
            }
            slower_is_closer = slower_is_closer && mean(at500) < mean(at10);
            if (k > 0) floors_nonincreasing = floors_nonincreasing && rows[k].floor.value <= rows[k - 1].floor.value;
            detail += (k ? "; " : "") + std::string("n=") + std::to_string(rows[k].modes) + " dev(10) " +
                      sci(mean(at10)) + " dev(500) " + sci(mean(at500)) + " floor " + sci(rows[k].floor.value) +
                      (rows[k].floor.plateau ? "" : " (no plateau)");
        }
        const double elapsed = seconds_since(t0);
        report(5, "isothermal deviation", slower_is_closer && floors_nonincreasing && elapsed <= kIsothermalSeconds,
               detail + "; " + sci(elapsed) + " s (limit " + sci(kIsothermalSeconds) + " s)");
    });

    criterion(6, "reversible identity", [&] {
        std::mt19937_64 rng(2024);
        std::uniform_real_distribution<double> beta(0.2, 3.0);
        std::uniform_int_distribution<int> modes(1, 3);
        double worst = 0.0;
        for (int k = 0; k < 5; ++k) {
            const auto m = experiments::thermal_model(modes(rng), rng(), experiments::rotating_drive(model::ConstantCurve{1.0}),
                                                      model::CouplingProfile::random, 0.3, beta(rng));
            for (double s : propagate::uniform_grid(0.0, 1.0, 50)) {
                worst = std::max(worst, thermo::reversible_quantities(m, s).identity_residual(m.beta()));
            }
        }
        report(6, "reversible identity", worst <= kReversible,
               "max |S_rev - beta(U_rev - F)| over 5 models x 50 points " + sci(worst) + " (limit " + sci(kReversible) + ")");
    });

    criterion(7, "decoupling", [&] {
        const auto c = bundled("decoupling.json");
        const int n = c.model->bath.modes;
        std::vector<double> d20, d500, a20, a500;
        for (auto seed : c.run.seeds) {
            const auto m = config::build_model(c, n, seed);
            const auto alt = config::alt_couplings(c, n, seed);
            const auto r20 = experiments::decoupling_run(m, c.run.taus.front(), {c.run.tol}, &alt);
            const auto r500 = experiments::decoupling_run(m, c.run.taus.back(), {c.run.tol}, &alt);
            d20.push_back(r20.distance);
            a20.push_back(*r20.distance_alt);
            d500.push_back(r500.distance);
            a500.push_back(*r500.distance_alt);
        }
        const double w1 = mean(d500), w2 = mean(a500), ref = std::min(mean(d20), mean(a20));
        const double ratio = std::max(w1, w2) / std::min(w1, w2);
        const bool pass = w1 < mean(d20) && ratio <= kDecouplingRatio && w1 < ref && w2 < ref;
        report(7, "decoupling", pass,
               "mean over " + std::to_string(c.run.seeds.size()) + " seeds: W1 " + sci(mean(d20)) + " -> " + sci(w1) +
                   ", W2 " + sci(mean(a20)) + " -> " + sci(w2) + " (tau 20 -> 500), W1/W2 ratio " + sci(ratio) +
                   " (limit " + sci(kDecouplingRatio) + ")");
    });

    criterion(8, "entropy bound", [&] {
        double worst = thermo::max_entropy(get_record());
        const auto iso = bundled("isothermal_sweep.json");
        for (int n : iso.run.bath_modes) {
            for (double tau : {10.0, 500.0}) worst = std::max(worst, max_entropy_along(config::build_model(iso, n, iso.seed()), tau, 200));
        }
        const auto dec = bundled("decoupling.json");
        for (double tau : dec.run.taus) worst = std::max(worst, max_entropy_along(config::build_model(dec), tau, 200));
        const double bound = std::log(2.0);
        report(8, "entropy bound", worst <= bound + kEntropySlack,
               "max S_sigma " + sci(worst) + " vs ln d_sigma " + sci(bound) + " (slack " + sci(kEntropySlack) + ")");
    });

    criterion(9, "determinism", [&] {
        const fs::path base = fs::temp_directory_path() / ("isotherm_acceptance_" + std::to_string(::getpid()));
        bool same = true;
        std::size_t compared = 0;
        for (const char* name : {"identities.json", "decoupling.json"}) {
            auto c = bundled(name);
            c.io.output_dir = (base / "a").string();
            const auto a = runner::run(c);
            c.io.output_dir = (base / "b").string();
            const auto b = runner::run(c);
            same = same && a.files.size() == b.files.size() && !a.files.empty();
            for (std::size_t i = 0; same && i < a.files.size(); ++i) {
                std::ifstream fa(a.dir / a.files[i].name, std::ios::binary), fb(b.dir / b.files[i].name, std::ios::binary);
                std::stringstream sa, sb;
                sa << fa.rdbuf();
                sb << fb.rdbuf();
                same = a.files[i].name == b.files[i].name && a.files[i].checksum == b.files[i].checksum &&
                       sa.str() == sb.str();
                ++compared;
            }
            fs::remove_all(base);
        }
        report(9, "determinism", same, std::to_string(compared) + " output files byte-identical across repeated runs");
    });

    return failures == 0 ? 0 : 1;
}
