// Executes an ExperimentConfig: runs the experiment, writes
// CSV/JSON outputs atomically through a single writer, checks contracts,
// and records a manifest (checksums, config hash, stage timings, warnings).
// summarize() turns a finished output directory back into a text report.

#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "isotherm/config.hpp"
#include "isotherm/errors.hpp"
#include "isotherm/experiments.hpp"
#include "isotherm/thermo.hpp"

#ifndef ISOTHERM_VERSION
#define ISOTHERM_VERSION "0.0.0"
#endif

namespace isotherm::runner {

using json = nlohmann::json;
namespace fs = std::filesystem;

enum ExitCode : int {
    exit_ok = 0,
    exit_contract = 1,
    exit_parse = 2,
    exit_validation = 3,
    exit_resource = 4,
    exit_numeric = 5,
};

inline std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t x) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
    return buf;
}

// 17 significant digits, enough to round-trip a double.
inline std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

// JSON number, or null where JSON has no representation (inf, NaN).
inline json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

class CsvTable {
public:
    explicit CsvTable(std::string header) : out_(std::move(header) + "\n") {}

    template <class... T>
    void row(const T&... cells) {
        bool first = true;
        ((out_ += (first ? "" : ","), out_ += cell(cells), first = false), ...);
        out_ += "\n";
    }

    const std::string& str() const noexcept { return out_; }

private:
    static std::string cell(double x) { return fmt(x); }
    static std::string cell(int x) { return std::to_string(x); }
    static std::string cell(std::uint64_t x) { return std::to_string(x); }
    static std::string cell(bool x) { return x ? "1" : "0"; }

    std::string out_;
};

struct FileRecord {
    std::string name;
    std::uint64_t checksum = 0;
    std::size_t bytes = 0;
};

// Writes `content` to dir/name via a temp file and a rename.
inline void atomic_write(const fs::path& dir, const std::string& name, const std::string& content) {
    const fs::path target = dir / name;
    const fs::path tmp = dir / ("." + name + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    fs::rename(tmp, target);
}

struct Contract {
    std::string name;
    double value = 0.0;
    double limit = 0.0;
    bool pass = false;
};

struct RunOutcome {
    int exit_code = exit_ok;
    std::string status = "ok";
    std::string message;
    fs::path dir;
    std::vector<FileRecord> files;
    std::vector<Contract> contracts;
};

namespace detail {

class Session {
public:
    Session(const config::ExperimentConfig& cfg, fs::path dir) : cfg_(cfg), dir_(std::move(dir)) {
        fs::create_directories(dir_);
        hash_ = hex64(fnv1a64(config::to_json(cfg_).dump()));
    }

    void write(const std::string& name, const std::string& content) {
        atomic_write(dir_, name, content);
        files_.push_back({name, fnv1a64(content), content.size()});
    }
    void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

    template <class F>
    void stage(const std::string& name, F&& body) {
        current_ = name;
        const auto t0 = std::chrono::steady_clock::now();
        body();
        stages_.push_back({{"name", name},
                           {"seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}});
    }

    void check(std::string name, double value, double limit) {
        contracts_.push_back({std::move(name), value, limit, std::isfinite(value) && value <= limit});
    }

    bool violated() const {
        for (const auto& c : contracts_)
            if (!c.pass) return true;
        return false;
    }

    json& results() { return results_; }
    std::size_t& clips() { return clips_; }
    std::size_t& lower_bounds() { return lower_bounds_; }
    const std::string& current_stage() const { return current_; }
    const fs::path& dir() const { return dir_; }

    RunOutcome finish(int code, std::string status, std::string message) {
        json files = json::array();
        for (const auto& f : files_) files.push_back({{"name", f.name}, {"bytes", f.bytes}, {"fnv1a64", hex64(f.checksum)}});
        json contracts = json::array();
        for (const auto& c : contracts_) {
            contracts.push_back({{"name", c.name}, {"value", num(c.value)}, {"limit", c.limit}, {"pass", c.pass}});
        }
        json m{{"artifact", "isotherm"},
               {"version", ISOTHERM_VERSION},
               {"schema_version", config::schema_version},
               {"kind", config::kind_name(cfg_.run.kind)},
               {"config_hash", hash_},
               {"config", config::to_json(cfg_)},
               {"seed", cfg_.seed()},
               {"status", status},
               {"exit_code", code},
               {"files", files},
               {"stages", stages_},
               {"warnings", {{"eigenvalue_clips", clips_}, {"lower_bound_norms", lower_bounds_}}},
               {"contracts", contracts},
               {"results", results_}};
        if (!message.empty()) m["failure"] = {{"stage", current_}, {"message", message}};
        atomic_write(dir_, "manifest.json", m.dump(2) + "\n");
        return {code, std::move(status), std::move(message), dir_, files_, contracts_};
    }

private:
    const config::ExperimentConfig& cfg_;
    fs::path dir_;
    std::string hash_;
    std::vector<FileRecord> files_;
    json stages_ = json::array();
    std::vector<Contract> contracts_;
    json results_ = json::object();
    std::size_t clips_ = 0;
    std::size_t lower_bounds_ = 0;
    std::string current_;
};

inline std::string tau_label(double tau) {
    std::ostringstream os;
    os << tau;
    return os.str();
}

inline propagate::IntegratorOptions integrator(const config::ExperimentConfig& c) {
    return {c.run.tol, c.run.engine};
}

inline experiments::SweepOptions sweep_options(const config::ExperimentConfig& c) {
    experiments::SweepOptions o;
    o.integrator = integrator(c);
    o.grid_points = c.run.grid_points;
    o.full_cap = c.run.full_cap;
    o.probes = c.run.probes;
    o.seed = c.seed();
    o.workers = c.run.workers;
    return o;
}

inline json fit_json(const experiments::SweepResult& r) {
    json j{{"floor", num(r.floor.value)}};
    if (r.fit) {
        j["exponent"] = num(r.fit->exponent);
        j["intercept"] = num(r.fit->intercept);
        j["r2"] = num(r.fit->r2);
    } else {
        j["exponent"] = nullptr;
        j["intercept"] = nullptr;
        j["r2"] = nullptr;
    }
    return j;
}

inline void write_sweep(Session& s, const config::ExperimentConfig& c, const experiments::SweepResult& r) {
    if (c.wants("csv")) {
        CsvTable t("tau,sup_error,sup_error_phasefree,is_lower_bound");
        for (std::size_t i = 0; i < r.taus.size(); ++i) {
            t.row(r.taus[i], r.errors[i], r.errors_phasefree[i], static_cast<bool>(r.lower_bound[i]));
        }
        s.write("sweep.csv", t.str());
    }
    json detail{{"model", r.model},
                {"grid_points", r.grid_points},
                {"tol", r.tol},
                {"seed", r.seed},
                {"floor_plateau", r.floor.plateau},
                {"fit_points", r.fit ? r.fit->points : 0},
                {"strict_decrease_failures", experiments::strict_decrease_failures(r.errors)},
                {"monotonicity_violations", experiments::monotonicity_violations(r.errors)},
                {"diagnostics", r.diagnostics}};
    if (!r.intertwining.empty()) {
        json col = json::array();
        for (double x : r.intertwining) col.push_back(num(x));
        detail["intertwining_residual"] = col;
    }
    if (c.wants("json")) {
        s.write_json("fit.json", fit_json(r));
        s.write_json("sweep.json", detail);
    }
    json summary = fit_json(r);
    summary["floor_plateau"] = r.floor.plateau;
    summary["model"] = r.model;
    summary["diagnostics"] = r.diagnostics;
    s.results()["fit"] = summary;
    for (bool lb : r.lower_bound) s.lower_bounds() += lb ? 1 : 0;
}

inline void run_identities(Session& s, const config::ExperimentConfig& c) {
    const auto m = config::build_model(c);
    const auto grid = propagate::uniform_grid(m.schedule().s0(), m.schedule().s1(), c.run.grid_points);
    thermo::ProcessOptions po;
    po.integrator = integrator(c);
    po.stencil_dt = c.run.stencil_dt;
    po.model_id = "thermal";
    const double ln_d = std::log(static_cast<double>(m.system_dim()));

    std::vector<thermo::ProcessRecord> records;
    json per_tau = json::array();
    for (std::size_t k = 0; k < c.run.taus.size(); ++k) {
        const double tau = c.run.taus[k];
        const std::string label = "tau=" + tau_label(tau);
        s.stage("process " + label, [&] {
            auto rec = thermo::record_process(m, tau, grid, po);
            s.clips() += rec.eigenvalue_clips;
            double identity = 0.0;
            for (const auto& x : rec.samples) {
                identity = std::max(identity, thermo::reversible_quantities(m, x.s).identity_residual(m.beta()));
            }
            const double first = thermo::first_law_residual(rec);
            const double entropy = thermo::entropy_rate_residual(rec);
            const double smax = thermo::max_entropy(rec);
            s.check("first_law_residual " + label, first, 1e-6);
            s.check("entropy_rate_residual " + label, entropy, 1e-6);
            s.check("reversible_identity_residual " + label, identity, 1e-9);
            s.check("entropy_bound_excess " + label, smax - ln_d, 1e-9);

            if (c.wants("csv")) {
                CsvTable t("s,t,U_sigma,S_sigma,F_sigma,dQ_dt,dA_dt,U_rev,S_rev,first_law_residual,entropy_rate_residual");
                for (const auto& x : rec.samples) {
                    t.row(x.s, x.t, x.U_sigma, x.S_sigma, x.F_sigma, x.dQ_dt, x.dA_dt, x.U_rev, x.S_rev,
                          x.first_law_residual, x.entropy_rate_residual);
                }
                s.write(k == 0 ? "process.csv" : "process_" + std::to_string(k) + ".csv", t.str());
            }
            per_tau.push_back({{"tau", tau},
                               {"first_law_residual", num(first)},
                               {"entropy_rate_residual", num(entropy)},
                               {"reversible_identity_residual", num(identity)},
                               {"max_entropy_sigma", num(smax)},
                               {"ln_system_dim", ln_d},
                               {"eigenvalue_clips", rec.eigenvalue_clips},
                               {"steps", rec.stats.accepted}});
            records.push_back(std::move(rec));
        });
    }
    s.results()["identities"] = per_tau;
    if (records.size() >= 2) {
        s.stage("quasistatic", [&] {
            const auto rows = thermo::quasistatic_convergence_report(m, records);
            if (c.wants("csv")) {
                CsvTable t("tau,entropy_rate_gap,work_rate_gap");
                for (const auto& r : rows) t.row(r.tau, r.entropy_rate_gap, r.work_rate_gap);
                s.write("quasistatic.csv", t.str());
            }
        });
    }
    if (c.wants("json")) s.write_json("identities.json", per_tau);
}

inline void run_adiabatic(Session& s, const config::ExperimentConfig& c) {
    experiments::SweepResult r;
    s.stage("adiabatic sweep", [&] {
        if (c.run.generic) {
            const auto fam = config::build_generic(*c.run.generic);
            r = experiments::adiabatic_sweep(fam, c.run.taus, sweep_options(c), fam.describe());
        } else {
            const auto m = config::build_model(c);
            const propagate::ThermalFamily fam(m);
            r = experiments::adiabatic_sweep(fam, c.run.taus, sweep_options(c), "thermal");
        }
    });
    double worst = 0.0;
    bool any = false;
    for (double x : r.intertwining) {
        if (std::isnan(x)) continue;
        worst = std::max(worst, x);
        any = true;
    }
    if (any) s.check("intertwining_residual", worst, 1e-6);
    s.stage("write", [&] { write_sweep(s, c, r); });
}

inline void run_isothermal(Session& s, const config::ExperimentConfig& c) {
    const auto m = config::build_model(c);
    experiments::SweepResult r;
    s.stage("isothermal sweep", [&] { r = experiments::isothermal_sweep(m, c.run.taus, sweep_options(c), "thermal"); });
    s.stage("write", [&] { write_sweep(s, c, r); });

    if (c.run.bath_modes.empty() && c.run.seeds.empty()) return;
    std::vector<int> modes = c.run.bath_modes;
    if (modes.empty()) modes.push_back(static_cast<int>(m.bath().energies.size()));
    std::vector<std::uint64_t> seeds = c.run.seeds;
    if (seeds.empty()) seeds.push_back(c.seed());
    std::vector<experiments::BathScanRow> rows;
    s.stage("bath scan", [&] {
        rows = experiments::bath_size_scan([&](int n, std::uint64_t seed) { return config::build_model(c, n, seed); },
                                           modes, seeds, c.run.taus, sweep_options(c));
    });
    json scan{{"modes", json::array()}, {"floor", json::array()}, {"floor_plateau", json::array()}, {"seeds", seeds}};
    CsvTable t("modes,tau,mean_error");
    for (const auto& row : rows) {
        scan["modes"].push_back(row.modes);
        scan["floor"].push_back(num(row.floor.value));
        scan["floor_plateau"].push_back(row.floor.plateau);
        for (std::size_t i = 0; i < c.run.taus.size(); ++i) t.row(row.modes, c.run.taus[i], row.mean_errors[i]);
    }
    s.stage("write scan", [&] {
        if (c.wants("csv")) s.write("bath_scan.csv", t.str());
        if (c.wants("json")) s.write_json("bath_scan.json", scan);
    });
    s.results()["bath_scan"] = scan;
}

inline void run_decoupling(Session& s, const config::ExperimentConfig& c) {
    std::vector<std::uint64_t> seeds = c.run.seeds;
    if (seeds.empty()) seeds.push_back(c.seed());
    const bool alt = c.run.alt_profile || c.run.alt_couplings;
    const auto n_tau = c.run.taus.size();

    struct Row {
        std::uint64_t seed;
        double tau;
        double distance;
        double distance_alt;
    };
    const int modes = static_cast<int>(config::build_model(c).bath().energies.size());
    std::vector<Row> rows(seeds.size() * n_tau);
    s.stage("decoupling", [&] {
        const std::function<Row(std::size_t)> job = [&](std::size_t i) {
            const auto seed = seeds[i / n_tau];
            const double tau = c.run.taus[i % n_tau];
            const auto m = config::build_model(c, modes, seed);
            const auto w2 = alt ? config::alt_couplings(c, modes, seed) : std::vector<double>{};
            const auto rep = experiments::decoupling_run(m, tau, integrator(c), alt ? &w2 : nullptr);
            return Row{seed, tau, rep.distance, rep.distance_alt.value_or(std::nan(""))};
        };
        rows = experiments::run_jobs(rows.size(), job, c.run.workers);
    });
    std::vector<double> mean(n_tau, 0.0), mean_alt(n_tau, 0.0);
    CsvTable t("seed,tau,distance,distance_alt");
    for (std::size_t i = 0; i < rows.size(); ++i) {
        t.row(rows[i].seed, rows[i].tau, rows[i].distance, rows[i].distance_alt);
        mean[i % n_tau] += rows[i].distance / static_cast<double>(seeds.size());
        mean_alt[i % n_tau] += rows[i].distance_alt / static_cast<double>(seeds.size());
    }
    json summary{{"tau", c.run.taus}, {"seeds", seeds}, {"mean_distance", json::array()}, {"mean_distance_alt", json::array()}};
    for (std::size_t k = 0; k < n_tau; ++k) {
        summary["mean_distance"].push_back(num(mean[k]));
        summary["mean_distance_alt"].push_back(num(mean_alt[k]));
    }
    s.stage("write", [&] {
        if (c.wants("csv")) s.write("decoupling.csv", t.str());
        if (c.wants("json")) s.write_json("decoupling.json", summary);
    });
    s.results()["decoupling"] = summary;
}

} // namespace detail

// Runs a validated config. Numeric failures mid-run leave the outputs
// written so far plus a manifest with a failure record (exit 5); resource
// caps hit mid-run exit 4. A contract violation exits 1.
inline RunOutcome run(const config::ExperimentConfig& c) {
    detail::Session s(c, config::output_dir(c));
    try {
        switch (c.run.kind) {
            case config::Kind::identities: detail::run_identities(s, c); break;
            case config::Kind::adiabatic_sweep: detail::run_adiabatic(s, c); break;
            case config::Kind::isothermal_sweep: detail::run_isothermal(s, c); break;
            case config::Kind::decoupling: detail::run_decoupling(s, c); break;
        }
    } catch (const ResourceError& e) {
        return s.finish(exit_resource, "resource_error", e.what());
    } catch (const IntegrationError& e) {
        return s.finish(exit_numeric, "numeric_failure", e.what());
    } catch (const DomainError& e) {
        return s.finish(exit_numeric, "numeric_failure", e.what());
    } catch (const StepSizeError& e) {
        return s.finish(exit_numeric, "numeric_failure", e.what());
    }
    if (s.violated()) return s.finish(exit_contract, "contract_violation", "");
    return s.finish(exit_ok, "ok", "");
}

// Manifest for a run that never started (config rejected before execution).
inline void write_failure_manifest(const fs::path& dir, int code, const std::string& status, const std::string& message) {
    fs::create_directories(dir);
    const json m{{"artifact", "isotherm"},
                 {"version", ISOTHERM_VERSION},
                 {"schema_version", config::schema_version},
                 {"status", status},
                 {"exit_code", code},
                 {"files", json::array()},
                 {"failure", {{"stage", "config"}, {"message", message}}}};
    atomic_write(dir, "manifest.json", m.dump(2) + "\n");
}

class ManifestMissing : public std::runtime_error {
public:
    explicit ManifestMissing(const fs::path& dir) : std::runtime_error("no manifest in " + dir.string()) {}
};

inline std::string summarize(const fs::path& dir) {
    const fs::path path = dir / "manifest.json";
    if (!fs::exists(path)) throw ManifestMissing(dir);
    std::ifstream in(path);
    json m;
    try {
        m = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("unreadable manifest " + path.string() + ": " + e.what());
    }

    std::ostringstream os;
    auto num_str = [](const json& v) -> std::string {
        if (v.is_null()) return "n/a";
        std::ostringstream s;
        s << std::setprecision(6) << v.get<double>();
        return s.str();
    };
    os << "isotherm " << m.value("version", "?") << "  run: " << m.value("kind", "?")
       << "  status: " << m.value("status", "?") << " (exit " << m.value("exit_code", -1) << ")\n";
    if (m.contains("config_hash")) os << "config " << m["config_hash"].get<std::string>() << "  seed " << m.value("seed", 0) << "\n";
    if (m.contains("failure")) {
        os << "failure in " << m["failure"].value("stage", "?") << ": " << m["failure"].value("message", "") << "\n";
    }

    if (m.contains("contracts") && !m["contracts"].empty()) {
        os << "\ncontracts\n";
        for (const auto& c : m["contracts"]) {
            os << "  " << std::left << std::setw(44) << c.value("name", "") << std::right << std::setw(14)
               << num_str(c["value"]) << "  limit " << std::setw(8) << num_str(c["limit"]) << "  "
               << (c.value("pass", false) ? "pass" : "FAIL") << "\n";
        }
    }
    const json& r = m.contains("results") ? m["results"] : json::object();
    if (r.contains("identities")) {
        os << "\nidentities\n";
        for (const auto& x : r["identities"]) {
            os << "  tau " << num_str(x["tau"]) << ": first law " << num_str(x["first_law_residual"])
               << ", entropy rate " << num_str(x["entropy_rate_residual"]) << ", reversible identity "
               << num_str(x["reversible_identity_residual"]) << ", max S_sigma " << num_str(x["max_entropy_sigma"])
               << " (ln d = " << num_str(x["ln_system_dim"]) << ")\n";
        }
    }
    if (r.contains("fit")) {
        const auto& f = r["fit"];
        os << "\nfit (" << f.value("model", "") << ")\n  exponent p = " << num_str(f["exponent"])
           << "  R^2 = " << num_str(f["r2"]) << "  intercept = " << num_str(f["intercept"])
           << "\n  floor = " << num_str(f["floor"]) << (f.value("floor_plateau", false) ? " (plateau)" : " (no plateau)")
           << "\n";
        for (const auto& d : f.value("diagnostics", json::array())) os << "  note: " << d.get<std::string>() << "\n";
    }
    if (r.contains("bath_scan")) {
        const auto& b = r["bath_scan"];
        os << "\nbath-size scan (" << b["seeds"].size() << " seeds)\n";
        for (std::size_t i = 0; i < b["modes"].size(); ++i) {
            os << "  modes " << b["modes"][i].get<int>() << ": floor " << num_str(b["floor"][i])
               << (b["floor_plateau"][i].get<bool>() ? "" : " (no plateau)") << "\n";
        }
    }
    if (r.contains("decoupling")) {
        const auto& d = r["decoupling"];
        os << "\ndecoupling (" << d["seeds"].size() << " seeds, mean trace distance to the system Gibbs state)\n";
        for (std::size_t i = 0; i < d["tau"].size(); ++i) {
            os << "  tau " << num_str(d["tau"][i]) << ": " << num_str(d["mean_distance"][i]);
            if (!d["mean_distance_alt"][i].is_null()) os << "  alt coupling: " << num_str(d["mean_distance_alt"][i]);
            os << "\n";
        }
    }
    if (m.contains("warnings")) {
        os << "\nwarnings: eigenvalue clips " << m["warnings"].value("eigenvalue_clips", 0) << ", lower-bound norms "
           << m["warnings"].value("lower_bound_norms", 0) << "\n";
    }
    if (m.contains("files")) {
        os << "files:";
        for (const auto& f : m["files"]) os << " " << f.value("name", "");
        os << "\n";
    }
    return os.str();
}

} // namespace isotherm::runner
