#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "qtb/errors.hpp"
#include "qtb/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Three-body geodesic flow, Langevin noise and KL chaos pipeline"};
    app.set_version_flag("--version", std::string(qtb::kVersion));
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    bool force = false;

    const char* commands[][2] = {
        {"simulate", "integrate the reference and perturbed trajectories"},
        {"ensemble", "Langevin ensemble around the reference trajectory"},
        {"fpe", "Fokker-Planck density series for both trajectories"},
        {"chaos", "KL divergence between the two density series"},
        {"channels", "asymptotic channel of each trajectory"},
    };
    for (const auto& c : commands) {
        CLI::App* sub = app.add_subcommand(c[0], c[1]);
        sub->add_option("--config", config_path, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "output directory (default: output_dir from the config)");
        sub->add_option("--seed", seed, "noise seed, overrides the config");
        sub->add_flag("--force", force, "overwrite a previous run of this stage");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        qtb::RunConfig cfg = qtb::load_config(config_path);
        if (seed) cfg.seed = *seed;
        if (!out_dir.empty()) cfg.output_dir = out_dir;
        const std::string name = app.get_subcommands().front()->get_name();
        qtb::run_stage(qtb::stage_from_string(name), cfg, {cfg.output_dir, force});
        std::cout << name << ": done (" << cfg.output_dir << ")\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return qtb::exit_code(e);
    }
}
