#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "plora/config.hpp"
#include "plora/fed.hpp"

namespace plora {

/// Seed-independent inputs: dataset, train/test split and the frozen W₀.
struct PreparedData {
    Dataset full;
    TrainTest split;
    ModelConfig model_config;
    ModelParams w0;
};

PreparedData prepare(const ExperimentSpec& spec);
Partition make_partition(const ExperimentSpec& spec, const Dataset& train, std::uint64_t seed);

struct RunOutput {
    ExperimentReport report;
    Partition partition;
};

RunOutput run_seed(const ExperimentSpec& spec, const PreparedData& data, std::uint64_t seed);
/// rounds.csv, summary.json, partition.json and (optionally) w0/final checkpoints.
void write_run(const ExperimentSpec& spec, const RunOutput& run, const ModelParams& w0,
               const std::filesystem::path& dir);

struct SeedStats {
    double mean = 0.0;
    double std = 0.0;        // sample standard deviation, 0 for one seed
    double best3_mean = 0.0; // mean of the top min(3, n) values
};
SeedStats seed_stats(const std::vector<double>& values);

struct SweepSummary {
    std::vector<std::uint64_t> seeds;
    std::vector<double> final_accuracy;
    std::vector<std::string> failures;  // "seed: message"
    SeedStats stats;
};

/// One run per seed under out/seed_<s>/, then sweep_summary.json and
/// sweep.csv in `out`. Failed seeds are recorded; completed ones are kept.
SweepSummary run_sweep(const ExperimentSpec& spec, const std::filesystem::path& out);

enum class CompareMode { budget, rounds };
CompareMode parse_compare_mode(const std::string& s);

struct ComparisonRow {
    std::string run;
    std::string algorithm;
    std::size_t trainable = 0;
    std::size_t rounds = 0;          // rounds counted at the comparison point
    std::size_t rounds_needed = 0;   // budget mode: rounds to reach the budget
    bool reached = true;             // budget mode: log long enough
    double accuracy = 0.0;
    double gbits = 0.0;
    double delta_accuracy = 0.0;     // vs the reference run
};

struct Comparison {
    CompareMode mode = CompareMode::rounds;
    std::string reference;
    std::vector<ComparisonRow> rows;
    std::string table() const;
};

/// Aligns completed runs at the reference run's round count (rounds mode) or
/// communication total (budget mode). The reference is the first primed-LoRA
/// run (flora/slora) among `dirs`, else the first. Runs over different data
/// raise ComparisonError.
Comparison compare_report(const std::vector<std::filesystem::path>& dirs, CompareMode mode);

}  // namespace plora
