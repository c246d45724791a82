#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "oracles.hpp"
#include "plora/checkpoint.hpp"
#include "plora/config.hpp"
#include "plora/errors.hpp"
#include "plora/report.hpp"
#include "plora/sweep.hpp"

using namespace plora;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("plora_cli_test_" + name);
    fs::remove_all(p);
    return p;
}

ExperimentSpec small_spec(Algorithm a) {
    ExperimentSpec s;
    s.data.synth = SynthOptions{5, 8, 300, 1.0, 1.0, 3, 0, 0.0};
    s.pretrain.samples = 200;
    s.pretrain.epochs = 2;
    s.model.width = 12;
    s.model.pre_cls_width = 10;
    s.partition.alpha = 0.5;
    s.fed.algorithm = a;
    s.fed.clients = 6;
    s.fed.participants = 3;
    s.fed.rounds_stage1 = 2;
    s.fed.rounds_stage2 = 3;
    s.fed.hidden_rank = 3;
    s.fed.pre_cls_rank = 4;
    return s;
}

std::string slurp(const fs::path& p) { return read_text(p); }

int run_cli(const std::string& args) {
    const std::string cmd = std::string(PLORA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Config, EmptyFileGivesDefaults) {
    const ExperimentSpec s = parse_config("");
    EXPECT_EQ(s, ExperimentSpec{});
    EXPECT_EQ(s.fed.clients, 100u);
    EXPECT_EQ(s.fed.local_epochs, 1u);
    EXPECT_EQ(s.fed.batch_size, 32u);
    EXPECT_EQ(print_config(s), print_config(parse_config("# nothing\n\n")));
}

TEST(Config, AlgorithmAndDensity) {
    const ExperimentSpec s = parse_config("[federation]\nalgorithm = slora\n[peft]\ndensity = 0.10\n");
    EXPECT_EQ(s.fed.algorithm, Algorithm::slora);
    EXPECT_DOUBLE_EQ(s.fed.density, 0.10);
}

TEST(Config, RoundTripIdentity) {
    ExperimentSpec s = small_spec(Algorithm::houlsby);
    s.seeds = {4, 9, 2};
    s.fed.lr = 0.1 + 0.2;
    s.fed.beta = 1.0 / 3.0;
    s.fed.lora_scope = RoleScope::all();
    s.fed.mask_scope.pre_classification = false;
    s.partition.kind = HeterogeneityKind::pathological;
    s.fed.aggregation = AggregationMode::weighted;
    s.fed.stage2_init = Stage2Init::random;
    s.checkpoints = false;
    s.pretrain.mean_shift = 0.75;
    const std::string text = print_config(s);
    EXPECT_EQ(parse_config(text), s);
    EXPECT_EQ(print_config(parse_config(text)), text);
}

TEST(Config, ErrorsNameTheKey) {
    const auto key_of = [](const std::string& text) {
        try {
            parse_config(text);
        } catch (const ConfigError& e) {
            return e.key();
        }
        return std::string("<none>");
    };
    EXPECT_EQ(key_of("[federation]\nbogus = 1\n"), "federation.bogus");
    EXPECT_EQ(key_of("[federation]\nclients = many\n"), "federation.clients");
    EXPECT_EQ(key_of("[peft]\ndensity = 1.5\n"), "peft.density");
    EXPECT_EQ(key_of("[federation]\nalgorithm = sgd\n"), "federation.algorithm");
    EXPECT_EQ(key_of("[run]\nseeds = \n"), "run.seeds");
    EXPECT_EQ(key_of("[data]\nsource = csv\npath = /nonexistent/file.csv\n"), "data.path");
    EXPECT_THROW(parse_config("just text\n"), ConfigError);
}

TEST(Config, Overrides) {
    ExperimentSpec s;
    apply_override(s, "federation.rounds_stage1=7");
    apply_override(s, "run.seeds=1,2,3");
    EXPECT_EQ(s.fed.rounds_stage1, 7u);
    EXPECT_EQ(s.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
    EXPECT_THROW(apply_override(s, "nokey"), ConfigError);
    EXPECT_THROW(apply_override(s, "federation.nope=1"), ConfigError);
}

TEST(RoundsCsv, VersionedAndRoundTrips) {
    std::vector<RoundRecord> recs(3);
    recs[0].accuracy = 0.5;
    recs[1].round = 1;
    recs[1].stage = 1;
    recs[1].bits_up = 64;
    recs[1].bits_down = 64;
    recs[1].cum_bits = 128;
    recs[1].cum_flops = 99;
    recs[2].round = 2;
    recs[2].stage = 2;
    recs[2].accuracy = 0.25;
    const std::string text = rounds_csv(recs);
    EXPECT_EQ(text.rfind(kRoundsCsvVersion, 0), 0u);
    const auto back = parse_rounds_csv(text);
    ASSERT_EQ(back.size(), 3u);
    EXPECT_FALSE(back[1].accuracy);
    EXPECT_EQ(back[1].cum_bits, 128u);
    EXPECT_EQ(*back[2].accuracy, 0.25);
    EXPECT_EQ(rounds_csv(back), text);
}

TEST(Checkpoint, BitExactRoundTrip) {
    const ModelParams m = init_params(ModelConfig::toy(8, 12, 10, 5), 1);
    AdaptedModel am = adapter_attach(m, 3, AdapterPlacement::after_hidden_each, 2);
    am.lora = lora_init_plan(m, default_rank_plan(m, 2, 3), 1.0 / 3.0, 4);
    for_each_tensor(am, [k = 1](std::span<double> t) mutable {
        for (double& v : t) v += std::ldexp(1.0, -(k++ % 60)) / 3.0;
    });
    const Checkpoint ck{am, mask_generate(m, 0.3, 5)};
    const fs::path p = scratch("ckpt.bin");
    save_checkpoint(ck, p);
    EXPECT_EQ(load_checkpoint(p), ck);
    const Checkpoint plain{AdaptedModel{m, {}, {}}, std::nullopt};
    save_checkpoint(plain, p);
    EXPECT_EQ(load_checkpoint(p), plain);
    std::ofstream(p, std::ios::binary) << "NOTACKPT";
    EXPECT_THROW(load_checkpoint(p), Error);
    fs::remove(p);
}

TEST(SeedStats, SampleStdAndBestThree) {
    const auto one = seed_stats({0.7});
    EXPECT_EQ(one.mean, 0.7);
    EXPECT_EQ(one.std, 0.0);
    EXPECT_EQ(one.best3_mean, 0.7);
    const auto five = seed_stats({0.1, 0.5, 0.3, 0.9, 0.7});
    EXPECT_NEAR(five.mean, 0.5, 1e-15);
    EXPECT_NEAR(five.std, std::sqrt(0.1), 1e-15);
    EXPECT_NEAR(five.best3_mean, 0.7, 1e-15);
}

TEST(Sweep, OneSeedSummaryEqualsRun) {
    ExperimentSpec s = small_spec(Algorithm::slora);
    const fs::path out = scratch("sweep1");
    const auto sum = run_sweep(s, out);
    ASSERT_EQ(sum.final_accuracy.size(), 1u);
    EXPECT_EQ(sum.stats.mean, sum.final_accuracy[0]);
    const auto j = nlohmann::json::parse(slurp(out / "sweep_summary.json"));
    EXPECT_EQ(j["final_accuracy"]["mean"].get<double>(), sum.final_accuracy[0]);
    const auto run = nlohmann::json::parse(slurp(out / "seed_1" / "summary.json"));
    EXPECT_EQ(run["accuracy"]["final"].get<double>(), sum.final_accuracy[0]);
    for (const char* f : {"rounds.csv", "summary.json", "partition.json", "w0.ckpt", "final.ckpt"})
        EXPECT_TRUE(fs::exists(out / "seed_1" / f)) << f;
    fs::remove_all(out);
}

TEST(Sweep, FiveSeedsBestThreeAndByteIdenticalRerun) {
    ExperimentSpec s = small_spec(Algorithm::lora);
    s.seeds = {1, 2, 3, 4, 5};
    const fs::path a = scratch("sweep5a");
    const fs::path b = scratch("sweep5b");
    const auto sum = run_sweep(s, a);
    run_sweep(s, b);
    EXPECT_TRUE(sum.failures.empty());
    const auto j = nlohmann::json::parse(slurp(a / "sweep_summary.json"));
    EXPECT_TRUE(j["final_accuracy"].contains("best3_mean"));
    EXPECT_EQ(j["runs"].size(), 5u);
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        const fs::path rel = fs::relative(entry.path(), a);
        EXPECT_EQ(slurp(entry.path()), slurp(b / rel)) << rel;
    }
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Compare, SelfComparisonHasZeroDeltas) {
    const ExperimentSpec s = small_spec(Algorithm::slora);
    const PreparedData data = prepare(s);
    const fs::path dir = scratch("cmp_self");
    write_run(s, run_seed(s, data, 1), data.w0, dir);
    for (auto mode : {CompareMode::rounds, CompareMode::budget}) {
        const Comparison c = compare_report({dir, dir}, mode);
        for (const auto& row : c.rows) EXPECT_EQ(row.delta_accuracy, 0.0);
    }
    EXPECT_THROW(compare_report({dir}, CompareMode::rounds), ComparisonError);
    fs::remove_all(dir);
}

TEST(Compare, RoundsModeTruncatesAndBudgetModeAligns) {
    ExperimentSpec s = small_spec(Algorithm::slora);
    const PreparedData data = prepare(s);
    const fs::path sl = scratch("cmp_slora");
    const fs::path fft = scratch("cmp_fft");
    write_run(s, run_seed(s, data, 1), data.w0, sl);
    ExperimentSpec f = s;
    f.fed.algorithm = Algorithm::fft;
    f.fed.rounds_stage1 = 8;
    write_run(f, run_seed(f, data, 1), data.w0, fft);

    const Comparison byr = compare_report({fft, sl}, CompareMode::rounds);
    EXPECT_EQ(byr.reference, sl.filename().string());
    EXPECT_EQ(byr.rows[0].rounds, 5u);
    const auto fft_rows = parse_rounds_csv(slurp(fft / "rounds.csv"));
    EXPECT_EQ(byr.rows[0].accuracy, *fft_rows[5].accuracy);

    const Comparison byb = compare_report({fft, sl}, CompareMode::budget);
    const auto sl_rows = parse_rounds_csv(slurp(sl / "rounds.csv"));
    const std::uint64_t budget = sl_rows.back().cum_bits;
    EXPECT_GE(fft_rows[byb.rows[0].rounds].cum_bits, budget);
    EXPECT_LT(fft_rows[byb.rows[0].rounds - 1].cum_bits, budget);
    EXPECT_NE(byb.table().find("reference"), std::string::npos);

    ExperimentSpec other = s;
    other.data.synth.seed = 99;
    const PreparedData other_data = prepare(other);
    const fs::path od = scratch("cmp_other");
    write_run(other, run_seed(other, other_data, 1), other_data.w0, od);
    EXPECT_THROW(compare_report({sl, od}, CompareMode::rounds), ComparisonError);
    for (const auto& d : {sl, fft, od}) fs::remove_all(d);
}

TEST(Binary, ExitCodes) {
    const fs::path dir = scratch("bin");
    fs::create_directories(dir);
    const fs::path cfg = dir / "exp.ini";
    std::ofstream(cfg) << print_config(small_spec(Algorithm::slora));
    EXPECT_EQ(run_cli("run " + cfg.string() + " --out " + (dir / "run").string()), 0);
    EXPECT_TRUE(fs::exists(dir / "run" / "rounds.csv"));
    EXPECT_EQ(run_cli("compare " + (dir / "run").string() + " " + (dir / "run").string() + " --mode budget"), 0);

    std::ofstream(dir / "bad.ini") << "[federation]\nwhat = 3\n";
    EXPECT_NE(run_cli("run " + (dir / "bad.ini").string()), 0);
    EXPECT_NE(run_cli("run " + (dir / "missing.ini").string()), 0);

    ExperimentSpec diverge = small_spec(Algorithm::fft);
    diverge.fed.lr = 1e200;
    diverge.seeds = {1, 2};
    std::ofstream(dir / "diverge.ini") << print_config(diverge);
    EXPECT_NE(run_cli("sweep " + (dir / "diverge.ini").string() + " --out " + (dir / "sw").string()), 0);
    EXPECT_TRUE(fs::exists(dir / "sw" / "sweep_summary.json"));
    fs::remove_all(dir);
}
