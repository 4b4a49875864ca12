#include <sfde/sfde.hpp>

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv)
{
    CLI::App app{"Numerical lab for stochastic delay reaction-diffusion equations"};
    std::string kind, config_path, out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    app.add_option("kind", kind, "experiment kind")->required()->check(CLI::IsMember(sfde::experiment_kinds()));
    app.add_option("--config", config_path, "JSON configuration")->required();
    app.add_option("--seed", seed, "override the config seed");
    app.add_option("--out", out_dir, "output directory (default: config output)");
    app.add_option("--threads", threads, "worker threads for ensemble loops");
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return sfde::kExitConfig;
    }

    sfde::ExperimentConfig cfg;
    try {
        cfg = sfde::parse_config(config_path, kind);
        if (seed) cfg.seed = *seed;
        if (threads) {
            if (*threads < 1) throw sfde::ConfigError(sfde::kExitConfig, {"--threads must be >= 1"});
            cfg.threads = *threads;
        }
    } catch (const sfde::ConfigError& e) {
        std::cerr << "config error:\n";
        for (const auto& v : e.violations()) std::cerr << "  - " << v << '\n';
        return e.exit_code();
    }

    const std::string dir = out_dir.empty() ? cfg.output : out_dir;
    try {
        const int code = sfde::run_and_write(cfg, dir, cfg.threads);
        if (code == sfde::kExitPass) std::cout << kind << ": pass (" << dir << ")\n";
        else std::cout << kind << ": FAIL exit " << code << " (see " << dir << "/report.json)\n";
        return code;
    } catch (const sfde::InvalidArgument& e) {
        std::cerr << "invalid argument: " << e.what() << '\n';
        return sfde::kExitConfig;
    }
}
