#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "plora/config.hpp"
#include "plora/errors.hpp"
#include "plora/report.hpp"
#include "plora/sweep.hpp"

namespace fs = std::filesystem;

namespace {

struct Common {
    std::vector<std::string> overrides;
    std::string out;
    std::vector<std::uint64_t> seeds;
    std::size_t threads = 0;
};

plora::ExperimentSpec load_spec(const std::string& path, const Common& c) {
    plora::ExperimentSpec spec = path.empty() ? plora::ExperimentSpec{} : plora::load_config(path);
    for (const auto& o : c.overrides) plora::apply_override(spec, o);
    if (!c.out.empty()) spec.out = c.out;
    if (!c.seeds.empty()) spec.seeds = c.seeds;
    if (c.threads > 0) spec.fed.threads = c.threads;
    spec.validate();
    return spec;
}

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--set", c.overrides, "Override a config key, e.g. --set federation.rounds_stage1=10");
    cmd->add_option("--out", c.out, "Output directory");
    cmd->add_option("--seed", c.seeds, "Seed(s), replacing run.seeds");
    cmd->add_option("--threads", c.threads, "Client worker threads");
}

int cmd_run(const std::string& config, const Common& c) {
    const plora::ExperimentSpec spec = load_spec(config, c);
    const plora::PreparedData data = plora::prepare(spec);
    const std::uint64_t seed = spec.seeds.front();
    const plora::RunOutput run = plora::run_seed(spec, data, seed);
    fs::create_directories(spec.out);
    plora::write_text(spec.out / "config.ini", plora::print_config(spec));
    plora::write_run(spec, run, data.w0, spec.out);
    std::printf("%s seed %llu: final accuracy %.4f, rounds %zu, %.6f Gbit\n",
                plora::to_string(spec.fed.algorithm).c_str(), static_cast<unsigned long long>(seed),
                run.report.final_accuracy, run.report.stage1_rounds + run.report.stage2_rounds,
                static_cast<double>(run.report.ledger.bits_total()) / 1e9);
    return 0;
}

int cmd_sweep(const std::string& config, const Common& c) {
    const plora::ExperimentSpec spec = load_spec(config, c);
    const plora::SweepSummary s = plora::run_sweep(spec, spec.out);
    std::printf("%s: %zu seeds, mean %.4f, std %.4f, best-3 mean %.4f\n",
                plora::to_string(spec.fed.algorithm).c_str(), s.seeds.size(), s.stats.mean, s.stats.std,
                s.stats.best3_mean);
    for (const auto& f : s.failures) std::fprintf(stderr, "seed failed: %s\n", f.c_str());
    return s.failures.empty() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated parameter-efficient fine-tuning simulator"};
    app.require_subcommand(1);

    Common run_opts, sweep_opts, print_opts;
    std::string run_config, sweep_config, print_config;

    auto* run = app.add_subcommand("run", "Run one experiment (first seed)");
    run->add_option("config", run_config, "Config file")->required()->check(CLI::ExistingFile);
    add_common(run, run_opts);

    auto* sweep = app.add_subcommand("sweep", "Run every seed and summarise");
    sweep->add_option("config", sweep_config, "Config file")->required()->check(CLI::ExistingFile);
    add_common(sweep, sweep_opts);

    std::vector<std::string> dirs;
    std::string mode = "rounds";
    auto* compare = app.add_subcommand("compare", "Compare completed runs");
    compare->add_option("dirs", dirs, "Run directories")->required()->expected(2, -1);
    compare->add_option("--mode", mode, "budget or rounds")->check(CLI::IsMember({"budget", "rounds"}));

    auto* print = app.add_subcommand("print-config", "Print the effective config");
    print->add_option("config", print_config, "Config file (defaults if omitted)");
    add_common(print, print_opts);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) return cmd_run(run_config, run_opts);
        if (*sweep) return cmd_sweep(sweep_config, sweep_opts);
        if (*compare) {
            std::vector<fs::path> paths(dirs.begin(), dirs.end());
            const plora::Comparison c = plora::compare_report(paths, plora::parse_compare_mode(mode));
            std::fputs(c.table().c_str(), stdout);
            return 0;
        }
        if (*print) {
            std::fputs(plora::print_config(load_spec(print_config, print_opts)).c_str(), stdout);
            return 0;
        }
    } catch (const plora::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 1;
}
