// Declarative experiment configs: strict JSON parsing (unknown
// fields rejected), command-line overrides, validation, and construction of
// the model, schedule and family an experiment runs on.

#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "isotherm/errors.hpp"
#include "isotherm/experiments.hpp"
#include "isotherm/model.hpp"
#include "isotherm/propagate.hpp"

namespace isotherm::config {

using json = nlohmann::json;

inline constexpr int schema_version = 1;

// Malformed JSON, wrong types, unknown or missing fields.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& where, const std::string& what)
        : std::runtime_error(where.empty() ? what : where + ": " + what) {}
};

// Well-formed config whose values violate an invariant.
class ValidationError : public std::runtime_error {
public:
    ValidationError(const std::string& where, const std::string& what)
        : std::runtime_error(where.empty() ? what : where + ": " + what) {}
};

enum class Kind { identities, adiabatic_sweep, isothermal_sweep, decoupling };

inline const char* kind_name(Kind k) {
    switch (k) {
        case Kind::identities: return "identities";
        case Kind::adiabatic_sweep: return "adiabatic-sweep";
        case Kind::isothermal_sweep: return "isothermal-sweep";
        case Kind::decoupling: return "decoupling";
    }
    return "?";
}

struct BathConfig {
    int modes = 3;
    double band_lo = 0.5;
    double band_hi = 1.5;
    std::optional<std::vector<double>> energies;
    model::CouplingProfile profile = model::CouplingProfile::uniform;
    std::optional<std::vector<double>> couplings;
};

struct ModelConfig {
    Index system_dim = 2;
    BathConfig bath;
    double coupling_scale = 0.1;
    double beta = 1.0;
};

struct ScheduleConfig {
    std::string type;
    double s0 = 0.0;
    double s1 = 1.0;
    json eps, delta, g;  // curve specs, kept raw until the interval is known
};

struct GenericConfig {
    Index n = 4;
    experiments::GapProfile profile = experiments::GapProfile::gapped;
    double parameter = 1.0;
};

struct RunConfig {
    Kind kind = Kind::identities;
    std::vector<double> taus;
    double tol = 1e-10;
    std::size_t grid_points = 200;
    propagate::Engine engine = propagate::Engine::adaptive;
    double stencil_dt = 0.01;
    unsigned workers = 1;
    // adiabatic-sweep
    std::optional<GenericConfig> generic;  // empty: the thermal model
    Index full_cap = 256;
    int probes = 20;
    // isothermal-sweep and decoupling
    std::vector<int> bath_modes;           // bath-size scan; empty: no scan
    std::vector<std::uint64_t> seeds;      // seed average; empty: io.seed only
    // decoupling
    std::optional<model::CouplingProfile> alt_profile;
    std::optional<std::vector<double>> alt_couplings;
};

struct IoConfig {
    std::string output_dir;
    std::vector<std::string> formats{"csv", "json"};
    std::optional<std::uint64_t> seed;
};

struct ExperimentConfig {
    std::optional<ModelConfig> model;
    std::optional<ScheduleConfig> schedule;
    RunConfig run;
    IoConfig io;

    bool wants(const std::string& format) const {
        for (const auto& f : io.formats)
            if (f == format) return true;
        return false;
    }
    std::uint64_t seed() const { return io.seed.value_or(0); }
};

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<double> tol;
    std::optional<std::string> out;
};

namespace detail {

// Reads fields of one JSON object, remembering which were consumed so that
// leftovers can be reported as unknown.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ParseError(path_.empty() ? "/" : path_, "expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    const json& raw(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key)) throw ParseError(at(key), "missing required field");
        return j_.at(key);
    }

    template <class T>
    T get(const std::string& key) {
        const json& v = raw(key);
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) throw ParseError(at(key), "expected a number");
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer()) throw ParseError(at(key), "expected an integer");
                if constexpr (std::is_unsigned_v<T>) {
                    if (v.is_number_integer() && !v.is_number_unsigned()) {
                        throw ValidationError(at(key), "must be non-negative");
                    }
                }
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ParseError(at(key), "expected a string");
            }
            return v.get<T>();
        } catch (const json::exception& e) {
            throw ParseError(at(key), e.what());
        }
    }

    template <class T>
    T get_or(const std::string& key, T fallback) {
        return has(key) ? get<T>(key) : fallback;
    }

    template <class T>
    std::vector<T> list(const std::string& key) {
        const json& v = raw(key);
        if (!v.is_array()) throw ParseError(at(key), "expected an array");
        std::vector<T> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const std::string p = at(key) + "/" + std::to_string(i);
            if constexpr (std::is_same_v<T, double>) {
                if (!v[i].is_number()) throw ParseError(p, "expected a number");
            } else if constexpr (std::is_integral_v<T>) {
                if (!v[i].is_number_integer()) throw ParseError(p, "expected an integer");
                if (std::is_unsigned_v<T> && !v[i].is_number_unsigned()) throw ValidationError(p, "must be non-negative");
            } else {
                if (!v[i].is_string()) throw ParseError(p, "expected a string");
            }
            out.push_back(v[i].get<T>());
        }
        return out;
    }

    Reader object(const std::string& key) { return Reader(raw(key), at(key)); }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) throw ParseError(at(it.key()), "unknown field");
        }
    }

    std::string at(const std::string& key) const { return path_ + "/" + key; }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline model::CouplingProfile parse_profile(const std::string& name, const std::string& where) {
    if (name == "uniform") return model::CouplingProfile::uniform;
    if (name == "graded") return model::CouplingProfile::graded;
    if (name == "random") return model::CouplingProfile::random;
    throw ValidationError(where, "unknown coupling profile '" + name + "' (uniform, graded, random)");
}

inline const char* profile_name(model::CouplingProfile p) {
    switch (p) {
        case model::CouplingProfile::uniform: return "uniform";
        case model::CouplingProfile::graded: return "graded";
        case model::CouplingProfile::random: return "random";
    }
    return "?";
}

inline Kind parse_kind(const std::string& name, const std::string& where) {
    for (Kind k : {Kind::identities, Kind::adiabatic_sweep, Kind::isothermal_sweep, Kind::decoupling})
        if (name == kind_name(k)) return k;
    throw ValidationError(where, "unknown experiment kind '" + name + "'");
}

inline ModelConfig parse_model(Reader r) {
    ModelConfig m;
    m.system_dim = r.get_or<Index>("system_dim", m.system_dim);
    m.coupling_scale = r.get_or<double>("coupling_scale", m.coupling_scale);
    m.beta = r.get_or<double>("beta", m.beta);
    if (r.has("bath")) {
        Reader b = r.object("bath");
        auto& bath = m.bath;
        bath.modes = b.get_or<int>("modes", bath.modes);
        if (b.has("band")) {
            const auto band = b.list<double>("band");
            if (band.size() != 2) throw ValidationError(b.at("band"), "expected [low, high]");
            bath.band_lo = band[0];
            bath.band_hi = band[1];
        }
        if (b.has("energies")) bath.energies = b.list<double>("energies");
        if (b.has("coupling_profile")) {
            bath.profile = parse_profile(b.get<std::string>("coupling_profile"), b.at("coupling_profile"));
        }
        if (b.has("couplings")) bath.couplings = b.list<double>("couplings");
        b.finish();
    }
    r.finish();
    return m;
}

inline ScheduleConfig parse_schedule(Reader r) {
    ScheduleConfig s;
    s.type = r.get<std::string>("type");
    s.s0 = r.get_or<double>("s0", s.s0);
    s.s1 = r.get_or<double>("s1", s.s1);
    s.eps = r.raw("eps");
    s.delta = r.raw("delta");
    s.g = r.raw("g");
    r.finish();
    return s;
}

inline RunConfig parse_run(Reader r) {
    RunConfig run;
    run.kind = parse_kind(r.get<std::string>("kind"), r.at("kind"));
    run.taus = r.list<double>("tau");
    run.tol = r.get_or<double>("tol", run.tol);
    run.grid_points = r.get_or<std::size_t>("grid_points", run.grid_points);
    if (r.has("engine")) {
        const auto e = r.get<std::string>("engine");
        if (e == "adaptive") run.engine = propagate::Engine::adaptive;
        else if (e == "magnus") run.engine = propagate::Engine::magnus;
        else throw ValidationError(r.at("engine"), "unknown engine '" + e + "' (adaptive, magnus)");
    }
    run.stencil_dt = r.get_or<double>("stencil_dt", run.stencil_dt);
    run.workers = r.get_or<unsigned>("workers", run.workers);
    if (r.has("family")) {
        Reader f = r.object("family");
        const auto type = f.get<std::string>("type");
        if (type == "generic") {
            GenericConfig g;
            g.n = f.get_or<Index>("n", g.n);
            const auto profile = f.get_or<std::string>("profile", "gapped");
            if (profile == "gapped") g.profile = experiments::GapProfile::gapped;
            else if (profile == "closing") g.profile = experiments::GapProfile::closing;
            else throw ValidationError(f.at("profile"), "unknown gap profile '" + profile + "' (gapped, closing)");
            g.parameter = f.get_or<double>("parameter", g.parameter);
            run.generic = g;
        } else if (type != "thermal") {
            throw ValidationError(f.at("type"), "unknown family '" + type + "' (thermal, generic)");
        }
        f.finish();
    }
    run.full_cap = r.get_or<Index>("full_cap", run.full_cap);
    run.probes = r.get_or<int>("probes", run.probes);
    if (r.has("bath_modes")) run.bath_modes = r.list<int>("bath_modes");
    if (r.has("seeds")) run.seeds = r.list<std::uint64_t>("seeds");
    if (r.has("alt_coupling")) {
        Reader a = r.object("alt_coupling");
        if (a.has("profile")) run.alt_profile = parse_profile(a.get<std::string>("profile"), a.at("profile"));
        if (a.has("couplings")) run.alt_couplings = a.list<double>("couplings");
        a.finish();
    }
    r.finish();
    return run;
}

inline IoConfig parse_io(Reader r) {
    IoConfig io;
    io.output_dir = r.get_or<std::string>("output_dir", "");
    if (r.has("formats")) io.formats = r.list<std::string>("formats");
    if (r.has("seed")) io.seed = r.get<std::uint64_t>("seed");
    r.finish();
    return io;
}

inline void require(bool ok, const std::string& where, const std::string& what) {
    if (!ok) throw ValidationError(where, what);
}

inline bool finite_positive(double x) { return std::isfinite(x) && x > 0.0; }

} // namespace detail

// nlohmann's parse errors already carry the line and column.
inline json parse_json(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError("", e.what());
    }
}

// Structure and types only; value checks live in validate().
inline ExperimentConfig from_json(const json& j) {
    detail::Reader top(j, "");
    const int version = top.get<int>("schema_version");
    if (version != schema_version) {
        throw ParseError("/schema_version", "unsupported schema version " + std::to_string(version) + " (expected " +
                                                std::to_string(schema_version) + ")");
    }
    ExperimentConfig c;
    if (top.has("model")) c.model = detail::parse_model(top.object("model"));
    if (top.has("schedule")) c.schedule = detail::parse_schedule(top.object("schedule"));
    c.run = detail::parse_run(top.object("run"));
    c.io = detail::parse_io(top.object("io"));
    top.finish();
    return c;
}

inline ExperimentConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path, "cannot open config file");
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(parse_json(ss.str()));
}

inline void apply(ExperimentConfig& c, const Overrides& o) {
    if (o.seed) c.io.seed = *o.seed;
    if (o.tol) c.run.tol = *o.tol;
    if (o.out) c.io.output_dir = *o.out;
}

// Output directory: the config (or --out), then $ISOTHERM_OUT, then ./isotherm_out.
inline std::string output_dir(const ExperimentConfig& c) {
    if (!c.io.output_dir.empty()) return c.io.output_dir;
    if (const char* env = std::getenv("ISOTHERM_OUT"); env && *env) return env;
    return "isotherm_out";
}

namespace detail {

inline model::Curve build_curve(const json& spec, const ScheduleConfig& s, const std::string& where) {
    const std::string& type = s.type;
    if (spec.is_number()) return model::ConstantCurve{spec.get<double>()};
    if (type == "constant") throw ValidationError(where, "constant schedules take plain numbers");
    if (!spec.is_object() || spec.size() != 1) {
        throw ParseError(where, "expected a number or one of {\"linear\": [a, b]}, {\"polynomial\": [c0, ...]}, "
                                "{\"switch_off\": g0}");
    }
    const auto& [key, value] = *spec.items().begin();
    auto numbers = [&](std::size_t min_size) {
        if (!value.is_array() || value.size() < min_size) throw ParseError(where + "/" + key, "expected a number array");
        std::vector<double> v;
        for (const auto& x : value) {
            if (!x.is_number()) throw ParseError(where + "/" + key, "expected a number array");
            v.push_back(x.get<double>());
        }
        return v;
    };
    if (key == "linear") {
        const auto v = numbers(2);
        if (v.size() != 2) throw ValidationError(where + "/linear", "expected [start, end]");
        if (type == "custom-polynomial") throw ValidationError(where, "custom-polynomial schedules take polynomials");
        return model::LinearCurve{v[0], v[1], s.s0, s.s1};
    }
    if (key == "polynomial") {
        if (type == "linear-ramp") throw ValidationError(where, "linear-ramp schedules take numbers or linear curves");
        return model::PolynomialCurve{numbers(1)};
    }
    if (key == "switch_off") {
        if (!value.is_number()) throw ParseError(where + "/switch_off", "expected a number");
        if (type != "smooth-switchoff") throw ValidationError(where, "switch_off curves need a smooth-switchoff schedule");
        return model::SwitchOffCurve{value.get<double>(), s.s0, s.s1};
    }
    throw ParseError(where + "/" + key, "unknown curve type");
}

} // namespace detail

inline model::Schedule build_schedule(const ScheduleConfig& s) {
    static const std::set<std::string> types{"constant", "linear-ramp", "smooth-switchoff", "custom-polynomial"};
    if (!types.count(s.type)) throw ValidationError("/schedule/type", "unknown schedule type '" + s.type + "'");
    if (!(std::isfinite(s.s0) && std::isfinite(s.s1) && s.s0 < s.s1)) {
        throw ValidationError("/schedule", "need finite s0 < s1");
    }
    const bool off = s.type == "smooth-switchoff";
    if (off && !(s.g.is_object() && s.g.contains("switch_off"))) {
        throw ValidationError("/schedule/g", "smooth-switchoff schedules need g = {\"switch_off\": g0}");
    }
    try {
        return {s.s0, s.s1, detail::build_curve(s.eps, s, "/schedule/eps"), detail::build_curve(s.delta, s, "/schedule/delta"),
                detail::build_curve(s.g, s, "/schedule/g"), off};
    } catch (const InvalidInput& e) {
        throw ValidationError("/schedule", e.what());
    }
}

// Thermal model with `modes` bath modes drawn from `seed` (explicit energies
// and couplings in the config take precedence).
inline model::ModelFamily build_model(const ExperimentConfig& c, int modes, std::uint64_t seed) {
    const auto& mc = *c.model;
    model::BathSpec bath;
    linop::Rng rng(seed);
    if (mc.bath.energies) {
        bath.energies = *mc.bath.energies;
        bath.couplings = model::make_bath(modes, mc.bath.band_lo, mc.bath.band_hi, mc.bath.profile, rng).couplings;
    } else {
        bath = model::make_bath(modes, mc.bath.band_lo, mc.bath.band_hi, mc.bath.profile, rng);
    }
    if (mc.bath.couplings) bath.couplings = *mc.bath.couplings;
    return {mc.system_dim, std::move(bath), mc.coupling_scale, mc.beta, build_schedule(*c.schedule)};
}

inline model::ModelFamily build_model(const ExperimentConfig& c) {
    const auto& b = c.model->bath;
    return build_model(c, b.energies ? static_cast<int>(b.energies->size()) : b.modes, c.seed());
}

inline experiments::GenericFamily build_generic(const GenericConfig& g) {
    return {g.n, g.profile, g.parameter};
}

inline std::vector<double> alt_couplings(const ExperimentConfig& c, int modes, std::uint64_t seed) {
    if (c.run.alt_couplings) return *c.run.alt_couplings;
    return experiments::coupling_vector(modes, *c.run.alt_profile, seed);
}

// Value-level invariants. Builds every object the run will need, so that
// any failure surfaces here rather than mid-run. Dimension caps raise
// ResourceError.
inline void validate(const ExperimentConfig& c) {
    using detail::require;
    const auto& r = c.run;
    require(c.io.seed.has_value(), "/io/seed", "a seed is required (no unseeded runs)");
    require(!r.taus.empty(), "/run/tau", "tau list must not be empty");
    for (std::size_t i = 0; i < r.taus.size(); ++i) {
        require(detail::finite_positive(r.taus[i]), "/run/tau/" + std::to_string(i), "tau must be positive and finite");
        if (i > 0) require(r.taus[i] > r.taus[i - 1], "/run/tau", "tau values must be strictly increasing");
    }
    require(r.tol >= 1e-12 && r.tol <= 1e-4, "/run/tol", "tol must lie in [1e-12, 1e-4]");
    require(r.grid_points >= 3, "/run/grid_points", "need at least 3 output points");
    require(detail::finite_positive(r.stencil_dt), "/run/stencil_dt", "must be positive");
    require(r.workers >= 1, "/run/workers", "need at least one worker");
    require(r.probes >= 1, "/run/probes", "need at least one probe");
    for (const auto& f : c.io.formats) require(f == "csv" || f == "json", "/io/formats", "unknown format '" + f + "'");

    const bool generic = r.kind == Kind::adiabatic_sweep && r.generic;
    require(!r.generic || r.kind == Kind::adiabatic_sweep, "/run/family", "only adiabatic sweeps take a family");
    require(r.bath_modes.empty() || r.kind == Kind::isothermal_sweep, "/run/bath_modes",
            "bath-size scans belong to isothermal sweeps");
    require(r.seeds.empty() || r.kind == Kind::isothermal_sweep || r.kind == Kind::decoupling, "/run/seeds",
            "seed averaging applies to isothermal sweeps and decoupling runs");
    for (int n : r.bath_modes) require(n >= 1, "/run/bath_modes", "mode counts must be positive");
    require(!(r.alt_profile && r.alt_couplings), "/run/alt_coupling", "give a profile or explicit couplings, not both");
    require(!(r.alt_profile || r.alt_couplings) || r.kind == Kind::decoupling, "/run/alt_coupling",
            "alternative couplings belong to decoupling runs");

    if (generic) {
        try {
            (void)build_generic(*r.generic);
        } catch (const InvalidInput& e) {
            throw ValidationError("/run/family", e.what());
        }
        return;
    }
    require(c.model.has_value(), "/model", "missing model block");
    require(c.schedule.has_value(), "/schedule", "missing schedule block");
    const auto& m = *c.model;
    require(m.system_dim >= 2, "/model/system_dim", "must be at least 2");
    require(std::isfinite(m.beta) && m.beta >= 0.0, "/model/beta", "must be finite and >= 0");
    require(std::isfinite(m.coupling_scale), "/model/coupling_scale", "must be finite");
    require(m.bath.modes >= 1, "/model/bath/modes", "need at least one mode");
    require(m.bath.band_lo <= m.bath.band_hi, "/model/bath/band", "empty energy band");
    if (m.bath.energies) require(!m.bath.energies->empty(), "/model/bath/energies", "must not be empty");
    if (m.bath.couplings) {
        const auto expected = m.bath.energies ? m.bath.energies->size() : static_cast<std::size_t>(m.bath.modes);
        require(m.bath.couplings->size() == expected, "/model/bath/couplings", "length must match the mode count");
    }
    require(!(r.kind == Kind::isothermal_sweep || r.kind == Kind::decoupling) || !m.bath.energies || r.bath_modes.empty(),
            "/run/bath_modes", "a bath-size scan needs drawn energies, not an explicit list");

    const auto sch = build_schedule(*c.schedule);
    require(r.kind != Kind::decoupling || sch.switch_off(), "/schedule/type", "decoupling runs need smooth-switchoff");
    try {
        (void)build_model(c);
        for (int n : r.bath_modes) (void)build_model(c, n, c.seed());
        if (r.kind == Kind::decoupling && (r.alt_profile || r.alt_couplings)) {
            const auto base = build_model(c);
            (void)base.with_couplings(alt_couplings(c, static_cast<int>(base.bath().energies.size()), c.seed()));
        }
    } catch (const InvalidInput& e) {
        throw ValidationError("/model", e.what());
    }
}

// The effective config with defaults filled in, as canonical JSON. Hashing
// this gives the manifest's config hash.
inline json to_json(const ExperimentConfig& c) {
    json j;
    j["schema_version"] = schema_version;
    if (c.model) {
        const auto& m = *c.model;
        json bath{{"modes", m.bath.modes},
                  {"band", {m.bath.band_lo, m.bath.band_hi}},
                  {"coupling_profile", detail::profile_name(m.bath.profile)}};
        if (m.bath.energies) bath["energies"] = *m.bath.energies;
        if (m.bath.couplings) bath["couplings"] = *m.bath.couplings;
        j["model"] = {{"system_dim", m.system_dim}, {"bath", bath}, {"coupling_scale", m.coupling_scale}, {"beta", m.beta}};
    }
    if (c.schedule) {
        const auto& s = *c.schedule;
        j["schedule"] = {{"type", s.type}, {"s0", s.s0}, {"s1", s.s1}, {"eps", s.eps}, {"delta", s.delta}, {"g", s.g}};
    }
    const auto& r = c.run;
    json run{{"kind", kind_name(r.kind)},
             {"tau", r.taus},
             {"tol", r.tol},
             {"grid_points", r.grid_points},
             {"engine", propagate::engine_name(r.engine)},
             {"stencil_dt", r.stencil_dt},
             {"workers", r.workers},
             {"full_cap", r.full_cap},
             {"probes", r.probes}};
    if (r.generic) {
        run["family"] = {{"type", "generic"},
                         {"n", r.generic->n},
                         {"profile", r.generic->profile == experiments::GapProfile::gapped ? "gapped" : "closing"},
                         {"parameter", r.generic->parameter}};
    } else if (r.kind == Kind::adiabatic_sweep) {
        run["family"] = {{"type", "thermal"}};
    }
    if (!r.bath_modes.empty()) run["bath_modes"] = r.bath_modes;
    if (!r.seeds.empty()) run["seeds"] = r.seeds;
    if (r.alt_profile) run["alt_coupling"] = {{"profile", detail::profile_name(*r.alt_profile)}};
    if (r.alt_couplings) run["alt_coupling"] = {{"couplings", *r.alt_couplings}};
    j["run"] = run;
    json io{{"formats", c.io.formats}};
    if (c.io.seed) io["seed"] = *c.io.seed;
    j["io"] = io;
    return j;
}

} // namespace isotherm::config
