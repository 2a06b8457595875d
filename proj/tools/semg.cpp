// semg <experiment> [--config FILE] [--seed N] [--out DIR] [section.key=value ...]

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "semg/experiments.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Spectrum estimation and UAV transmission experiments"};
    std::string experiment;
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::vector<std::string> overrides;
    bool quiet = false;

    std::string names;
    for (const auto& n : semg::experiment_names()) names += (names.empty() ? "" : ", ") + n;
    app.add_option("experiment", experiment, "one of: " + names)->required();
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--seed", seed, "master seed (overrides run.seed)");
    app.add_option("--out", out, "output root (default: $SEMG_OUT, else .)");
    app.add_option("overrides", overrides, "section.key=value overrides");
    app.add_flag("-q,--quiet", quiet, "no progress output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    const auto& known = semg::experiment_names();
    if (std::find(known.begin(), known.end(), experiment) == known.end()) {
        std::fprintf(stderr, "semg: unknown experiment '%s' (expected %s)\n", experiment.c_str(), names.c_str());
        return 1;
    }
    if (out.empty()) {
        const char* env = std::getenv("SEMG_OUT");
        out = env && *env ? env : ".";
    }

    try {
        semg::ExperimentConfig cfg = semg::load_config(config_path, overrides);
        if (seed) {
            semg::apply_master_seed(cfg, *seed);
            semg::validate(cfg);
        }
        semg::Logger log = [&](const std::string& line) {
            if (!quiet) std::fprintf(stderr, "%s\n", line.c_str());
        };
        const auto outcome = semg::run_experiment(experiment, cfg, out, log);
        std::printf("%s\n", outcome.dir.string().c_str());
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "semg: %s\n", e.what());
        return semg::exit_code_for(e);
    }
}
