#include "plora/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "json.hpp"
#include "plora/checkpoint.hpp"
#include "plora/errors.hpp"
#include "plora/report.hpp"

namespace plora {

PreparedData prepare(const ExperimentSpec& spec) {
    spec.validate();
    PreparedData p;
    if (spec.data.source == "csv") {
        p.full = load_csv(spec.data.path);
    } else {
        p.full = synth_generate(spec.data.synth);
    }
    p.full.validate();
    p.split = split_train_test(p.full, spec.data.train_fraction, spec.data.split_seed);
    p.model_config = ModelConfig::toy(p.full.dims(), spec.model.width, spec.model.pre_cls_width,
                                      p.full.num_classes);

    Dataset source;
    if (spec.pretrain.source == "csv") {
        source = load_csv(spec.pretrain.path);
        source.num_classes = p.full.num_classes;
    } else {
        SynthOptions o = spec.data.synth;
        o.num_classes = p.full.num_classes;
        o.dims = p.full.dims();
        o.samples = spec.pretrain.samples;
        o.mean_seed = spec.data.synth.mean_seed != 0 ? spec.data.synth.mean_seed : spec.data.synth.seed;
        o.seed = spec.pretrain.seed;
        o.mean_shift = spec.pretrain.mean_shift;
        source = synth_generate(o);
    }
    p.w0 = pretrain(p.model_config, source, spec.pretrain.epochs, spec.pretrain.lr, spec.pretrain.seed,
                    spec.pretrain.batch_size);
    return p;
}

Partition make_partition(const ExperimentSpec& spec, const Dataset& train, std::uint64_t seed) {
    switch (spec.partition.kind) {
        case HeterogeneityKind::iid: return partition_iid(train, spec.fed.clients, seed);
        case HeterogeneityKind::dirichlet:
            return partition_dirichlet(train, spec.fed.clients, spec.partition.alpha, seed);
        case HeterogeneityKind::pathological:
            return partition_pathological(train, spec.fed.clients, spec.partition.shards_per_client, seed);
    }
    throw ConfigError("unknown partition kind", "partition.kind");
}

RunOutput run_seed(const ExperimentSpec& spec, const PreparedData& data, std::uint64_t seed) {
    FedConfig cfg = spec.fed;
    cfg.seed = seed;
    Partition part = make_partition(spec, data.split.train, seed);
    ExperimentReport rep = run_experiment(cfg, data.w0, data.split.train, data.split.test, part);
    return {std::move(rep), std::move(part)};
}

void write_run(const ExperimentSpec& spec, const RunOutput& run, const ModelParams& w0,
               const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_text(dir / "rounds.csv", rounds_csv(run.report.records));
    write_text(dir / "summary.json", summary_json(run.report));
    write_text(dir / "partition.json", run.partition.to_json() + "\n");
    if (spec.checkpoints) {
        save_checkpoint(Checkpoint{AdaptedModel{w0, {}, {}}, std::nullopt}, dir / "w0.ckpt");
        save_checkpoint(Checkpoint{run.report.final_model, run.report.mask}, dir / "final.ckpt");
    }
}

SeedStats seed_stats(const std::vector<double>& values) {
    SeedStats s;
    if (values.empty()) return s;
    const double n = static_cast<double>(values.size());
    for (double v : values) s.mean += v;
    s.mean /= n;
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / (n - 1.0));
    }
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const std::size_t top = std::min<std::size_t>(3, sorted.size());
    for (std::size_t i = 0; i < top; ++i) s.best3_mean += sorted[i];
    s.best3_mean /= static_cast<double>(top);
    return s;
}

SweepSummary run_sweep(const ExperimentSpec& spec, const std::filesystem::path& out) {
    spec.validate();
    std::filesystem::create_directories(out);
    write_text(out / "config.ini", print_config(spec));
    const PreparedData data = prepare(spec);

    SweepSummary sum;
    nlohmann::ordered_json runs = nlohmann::ordered_json::array();
    std::string csv = "seed,final_accuracy,total_rounds,cum_bits\n";
    for (std::uint64_t seed : spec.seeds) {
        try {
            const RunOutput run = run_seed(spec, data, seed);
            write_run(spec, run, data.w0, out / ("seed_" + std::to_string(seed)));
            sum.seeds.push_back(seed);
            sum.final_accuracy.push_back(run.report.final_accuracy);
            const std::size_t total = run.report.stage1_rounds + run.report.stage2_rounds;
            char line[128];
            std::snprintf(line, sizeof line, "%llu,%.6f,%zu,%llu\n", static_cast<unsigned long long>(seed),
                          run.report.final_accuracy, total,
                          static_cast<unsigned long long>(run.report.ledger.bits_total()));
            csv += line;
            runs.push_back({{"seed", seed},
                            {"final_accuracy", run.report.final_accuracy},
                            {"dir", "seed_" + std::to_string(seed)}});
        } catch (const std::exception& e) {
            sum.failures.push_back(std::to_string(seed) + ": " + e.what());
        }
    }
    sum.stats = seed_stats(sum.final_accuracy);

    nlohmann::ordered_json j;
    j["schema"] = "plora-sweep v1";
    j["algorithm"] = to_string(spec.fed.algorithm);
    j["runs"] = std::move(runs);
    j["final_accuracy"] = {{"mean", sum.stats.mean}, {"std", sum.stats.std}, {"best3_mean", sum.stats.best3_mean}};
    j["failures"] = sum.failures;
    write_text(out / "sweep_summary.json", j.dump(2) + "\n");
    write_text(out / "sweep.csv", csv);
    return sum;
}

CompareMode parse_compare_mode(const std::string& s) {
    if (s == "budget") return CompareMode::budget;
    if (s == "rounds") return CompareMode::rounds;
    throw ConfigError("expected budget or rounds", "--mode");
}

namespace {

struct LoadedRun {
    std::string name;
    nlohmann::json summary;
    std::vector<RoundRecord> rounds;

    std::string algorithm() const { return summary.at("algorithm").get<std::string>(); }
    std::size_t trainable() const {
        const auto& t = summary.at("trainable");
        return std::max(t.at("stage1").at("count").get<std::size_t>(),
                        t.at("stage2").at("count").get<std::size_t>());
    }
};

LoadedRun load_run(const std::filesystem::path& dir) {
    LoadedRun r;
    r.name = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
    try {
        r.summary = nlohmann::json::parse(read_text(dir / "summary.json"));
    } catch (const nlohmann::json::exception& e) {
        throw ComparisonError(dir.string() + ": bad summary.json: " + e.what());
    }
    r.rounds = parse_rounds_csv(read_text(dir / "rounds.csv"));
    if (r.rounds.empty()) throw ComparisonError(dir.string() + ": empty rounds.csv");
    return r;
}

// Latest evaluated accuracy at or before `round`.
double accuracy_at(const LoadedRun& run, std::size_t round) {
    double acc = 0.0;
    for (const auto& r : run.rounds) {
        if (r.round > round) break;
        if (r.accuracy) acc = *r.accuracy;
    }
    return acc;
}

std::uint64_t bits_at(const LoadedRun& run, std::size_t round) {
    std::uint64_t bits = 0;
    for (const auto& r : run.rounds) {
        if (r.round > round) break;
        bits = r.cum_bits;
    }
    return bits;
}

}  // namespace

Comparison compare_report(const std::vector<std::filesystem::path>& dirs, CompareMode mode) {
    if (dirs.size() < 2) throw ComparisonError("compare needs at least two runs");
    std::vector<LoadedRun> runs;
    for (const auto& d : dirs) runs.push_back(load_run(d));
    const std::string hash = runs.front().summary.at("dataset_hash").get<std::string>();
    for (const auto& r : runs) {
        if (r.summary.at("dataset_hash").get<std::string>() != hash) {
            throw ComparisonError("run " + r.name + " used a different dataset");
        }
    }
    std::size_t ref = 0;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const std::string a = runs[i].algorithm();
        if (a == "slora" || a == "flora") {
            ref = i;
            break;
        }
    }
    const LoadedRun& reference = runs[ref];
    const std::size_t ref_rounds = reference.rounds.back().round;
    const std::uint64_t ref_bits = reference.rounds.back().cum_bits;

    Comparison c;
    c.mode = mode;
    c.reference = reference.name;
    for (const auto& run : runs) {
        ComparisonRow row;
        row.run = run.name;
        row.algorithm = run.algorithm();
        row.trainable = run.trainable();
        const std::size_t last = run.rounds.back().round;
        if (mode == CompareMode::rounds) {
            row.rounds = std::min(last, ref_rounds);
            row.rounds_needed = ref_rounds;
            row.reached = last >= ref_rounds;
        } else {
            const std::uint64_t per_round = last > 0 ? run.rounds.back().cum_bits / last : 0;
            row.rounds_needed = per_round > 0 ? static_cast<std::size_t>((ref_bits + per_round - 1) / per_round) : 0;
            row.rounds = last;
            for (const auto& r : run.rounds) {
                if (r.round > 0 && r.cum_bits >= ref_bits) {
                    row.rounds = r.round;
                    break;
                }
            }
            row.reached = bits_at(run, row.rounds) >= ref_bits;
        }
        row.accuracy = accuracy_at(run, row.rounds);
        row.gbits = static_cast<double>(bits_at(run, row.rounds)) / 1e9;
        c.rows.push_back(row);
    }
    const double ref_acc = c.rows[ref].accuracy;
    for (auto& row : c.rows) row.delta_accuracy = row.accuracy - ref_acc;
    return c;
}

std::string Comparison::table() const {
    std::string out = std::string("mode: ") + (mode == CompareMode::budget ? "budget" : "rounds") +
                      "  reference: " + reference + "\n";
    char line[256];
    std::snprintf(line, sizeof line, "%-20s %-9s %12s %8s %8s %10s %12s %10s\n", "run", "method", "trainable",
                  "rounds", "needed", "accuracy", "comm_gbits", "delta_acc");
    out += line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-20s %-9s %12zu %8zu %8zu %10.4f %12.6f %+10.4f%s\n", r.run.c_str(),
                      r.algorithm.c_str(), r.trainable, r.rounds, r.rounds_needed, r.accuracy, r.gbits,
                      r.delta_accuracy, r.reached ? "" : "  (short)");
        out += line;
    }
    return out;
}

}  // namespace plora
