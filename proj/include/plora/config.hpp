#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "plora/data.hpp"
#include "plora/fed.hpp"

namespace plora {

struct DataSpec {
    std::string source = "synth";  // synth | csv
    std::filesystem::path path;
    SynthOptions synth{20, 32, 4000, 1.0, 1.0, 1, 0, 0.0};
    double train_fraction = 0.6;
    std::uint64_t split_seed = 1;
    bool operator==(const DataSpec&) const = default;
};

/// Source task used to manufacture the frozen W₀. When synthetic it shares
/// the target's class-mean seed and classes/dims, with its own shift.
struct PretrainSpec {
    std::string source = "synth";  // synth | csv
    std::filesystem::path path;
    std::size_t samples = 4000;
    double mean_shift = 0.0;
    std::uint64_t seed = 7;
    std::size_t epochs = 10;
    double lr = 0.05;
    std::size_t batch_size = 32;
    bool operator==(const PretrainSpec&) const = default;
};

struct ModelSpec {
    std::size_t width = 64;
    std::size_t pre_cls_width = 32;
    bool operator==(const ModelSpec&) const = default;
};

struct PartitionSpec {
    HeterogeneityKind kind = HeterogeneityKind::dirichlet;
    double alpha = 0.1;
    std::size_t shards_per_client = 2;
    bool operator==(const PartitionSpec&) const = default;
};

struct ExperimentSpec {
    DataSpec data;
    PretrainSpec pretrain;
    ModelSpec model;
    PartitionSpec partition;
    FedConfig fed;
    std::vector<std::uint64_t> seeds{1};
    std::filesystem::path out = "runs";
    bool checkpoints = true;

    /// Cross-field checks, including that referenced files exist.
    void validate() const;
    bool operator==(const ExperimentSpec&) const = default;
};

/// `[section]` headers and `key = value` lines; `#` starts a comment.
/// Unknown keys and malformed values raise ConfigError naming the key.
ExperimentSpec parse_config(const std::string& text);
ExperimentSpec load_config(const std::filesystem::path& path);
/// Applies one `section.key=value` override.
void apply_override(ExperimentSpec& spec, const std::string& assignment);
/// Canonical dump of every key; parse_config(print_config(s)) == s.
std::string print_config(const ExperimentSpec& spec);

std::string to_string(HeterogeneityKind k);
HeterogeneityKind parse_heterogeneity(const std::string& s);

}  // namespace plora
