// isotherm: command-line runner.
//
//   isotherm run <config.json> [--seed N] [--tol X] [--out DIR]
//   isotherm validate <config.json> [--seed N] [--tol X]
//   isotherm summarize <output-dir>
//
// Exit codes: 0 ok, 1 contract violated, 2 parse error, 3 validation error,
// 4 resource cap, 5 numeric failure.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "isotherm/config.hpp"
#include "isotherm/runner.hpp"

namespace {

using namespace isotherm;

struct Options {
    std::string path;
    std::optional<std::uint64_t> seed;
    std::optional<double> tol;
    std::optional<std::string> out;
};

void add_overrides(CLI::App* cmd, Options& o, bool with_out) {
    cmd->add_option("--seed", o.seed, "Override io.seed");
    cmd->add_option("--tol", o.tol, "Override run.tol");
    if (with_out) cmd->add_option("--out", o.out, "Override the output directory");
}

// Loads, overrides and validates. On failure prints the error, writes a
// failure manifest when the output directory is known, and returns the
// exit code.
int prepare(const Options& o, config::ExperimentConfig& cfg, bool write_manifest) {
    int code = runner::exit_ok;
    std::string status, message;
    try {
        cfg = config::load(o.path);
        config::apply(cfg, {o.seed, o.tol, o.out});
        config::validate(cfg);
        return runner::exit_ok;
    } catch (const config::ParseError& e) {
        code = runner::exit_parse;
        status = "parse_error";
        message = e.what();
    } catch (const config::ValidationError& e) {
        code = runner::exit_validation;
        status = "validation_error";
        message = e.what();
    } catch (const ResourceError& e) {
        code = runner::exit_resource;
        status = "resource_error";
        message = e.what();
    }
    std::cerr << "isotherm: " << status << ": " << message << "\n";
    if (write_manifest) {
        config::ExperimentConfig where = cfg;
        if (o.out) where.io.output_dir = *o.out;
        try {
            runner::write_failure_manifest(config::output_dir(where), code, status, message);
        } catch (const std::exception& e) {
            std::cerr << "isotherm: could not write manifest: " << e.what() << "\n";
        }
    }
    return code;
}

int cmd_run(const Options& o) {
    config::ExperimentConfig cfg;
    if (int code = prepare(o, cfg, true); code != runner::exit_ok) return code;
    runner::RunOutcome out;
    try {
        out = runner::run(cfg);
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "isotherm: cannot write outputs: " << e.what() << "\n";
        return runner::exit_resource;
    }
    std::cout << "wrote " << out.files.size() << " files and manifest.json to " << out.dir.string() << "\n";
    for (const auto& c : out.contracts) {
        if (!c.pass) std::cerr << "contract violated: " << c.name << " = " << c.value << " > " << c.limit << "\n";
    }
    if (!out.message.empty()) std::cerr << "isotherm: " << out.status << ": " << out.message << "\n";
    return out.exit_code;
}

int cmd_validate(const Options& o) {
    config::ExperimentConfig cfg;
    if (int code = prepare(o, cfg, false); code != runner::exit_ok) return code;
    std::cout << "ok: " << config::kind_name(cfg.run.kind) << ", config hash "
              << runner::hex64(runner::fnv1a64(config::to_json(cfg).dump())) << "\n";
    return runner::exit_ok;
}

int cmd_summarize(const std::string& dir) {
    try {
        std::cout << runner::summarize(dir);
        return runner::exit_ok;
    } catch (const runner::ManifestMissing& e) {
        std::cerr << "isotherm: " << e.what() << "\n";
        return runner::exit_parse;
    } catch (const std::exception& e) {
        std::cerr << "isotherm: " << e.what() << "\n";
        return runner::exit_parse;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Driven spin-bath experiments: adiabatic and isothermal sweeps, thermodynamic identities"};
    app.set_version_flag("--version", std::string(ISOTHERM_VERSION));
    app.require_subcommand(1);

    Options run_opt, validate_opt;
    std::string summary_dir;

    auto* run = app.add_subcommand("run", "Run an experiment config and write its outputs");
    run->add_option("config", run_opt.path, "Experiment config (JSON)")->required();
    add_overrides(run, run_opt, true);

    auto* validate = app.add_subcommand("validate", "Check a config without running it");
    validate->add_option("config", validate_opt.path, "Experiment config (JSON)")->required();
    add_overrides(validate, validate_opt, false);

    auto* summarize = app.add_subcommand("summarize", "Print a report for a finished output directory");
    summarize->add_option("dir", summary_dir, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : runner::exit_parse;
    }

    if (*run) return cmd_run(run_opt);
    if (*validate) return cmd_validate(validate_opt);
    return cmd_summarize(summary_dir);
}
