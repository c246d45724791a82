#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "plora/costs.hpp"
#include "plora/data.hpp"
#include "plora/model.hpp"
#include "plora/peft.hpp"

namespace plora {

enum class Algorithm { fft, lora, sft, bitfit, houlsby, pfeiffer, flora, slora };
enum class AggregationMode { uniform, weighted };
enum class Stage2Init { primed, random };

std::string to_string(Algorithm a);
Algorithm parse_algorithm(const std::string& s);
std::string to_string(AggregationMode m);
AggregationMode parse_aggregation(const std::string& s);
std::string to_string(Stage2Init s);
Stage2Init parse_stage2_init(const std::string& s);

struct FedConfig {
    std::size_t clients = 100;        // N
    std::size_t participants = 10;    // K
    std::size_t local_epochs = 1;     // E
    std::size_t rounds_stage1 = 0;    // R1
    std::size_t rounds_stage2 = 0;    // R2
    Algorithm algorithm = Algorithm::slora;
    double density = 0.10;            // d1 for slora, mask density for sft
    std::size_t hidden_rank = 10;
    std::size_t pre_cls_rank = 18;
    double beta = 0.0;                // <= 0 means beta = rank for each block
    std::size_t adapter_rank = 8;
    RoleScope lora_scope;
    RoleScope mask_scope;
    Stage2Init stage2_init = Stage2Init::primed;
    double lr = 0.05;
    std::size_t batch_size = 32;
    AggregationMode aggregation = AggregationMode::uniform;
    std::size_t eval_stride = 1;
    std::uint64_t bits_per_param = 32;
    double bandwidth_up = 5e6;        // bits/s
    double bandwidth_down = 5e6;
    double flops_rate = 1e9;          // FLOP/s per client
    std::uint64_t budget_bits = 0;    // > 0: pad single-stage runs to this budget
    std::uint64_t seed = 1;
    std::size_t threads = 1;          // execution only; never affects results

    /// Throws ConfigError naming the offending field.
    void validate() const;
    double beta_for(std::size_t rank) const;
    bool operator==(const FedConfig&) const = default;
};

struct RoundUpdate {
    std::size_t client_id = 0;
    AdaptedModel delta;
    std::size_t sample_count = 0;
    std::uint64_t flops = 0;
};

struct RoundRecord {
    std::size_t round = 0;  // global, 0 = initial evaluation
    int stage = 0;
    std::vector<std::size_t> clients;
    std::optional<double> accuracy;
    std::uint64_t bits_up = 0;
    std::uint64_t bits_down = 0;
    std::uint64_t cum_bits = 0;
    std::uint64_t cum_flops = 0;
    double seconds = 0.0;
};

/// Uniform sample of K of N client ids without replacement, ascending, seeded
/// by (seed, round).
std::vector<std::size_t> sample_clients(std::size_t round, std::size_t n, std::size_t k,
                                        std::uint64_t seed);

/// E epochs of shuffled mini-batch SGD on the trainable set; returns the
/// delta against the received state. `stream_seed` drives the shuffle.
RoundUpdate local_train(const AdaptedModel& global, const TrainableSet& trainable,
                        const Dataset& client_data, std::size_t client_id, std::size_t epochs,
                        double lr, std::size_t batch_size, std::uint64_t stream_seed);

/// Elementwise mean of the deltas, summed in ascending client id order.
AdaptedModel aggregate(std::vector<RoundUpdate> updates, AggregationMode mode);

/// Shared inputs of one federated experiment.
struct FedContext {
    const Dataset& train;
    const Dataset& test;
    const Partition& partition;
    std::vector<Dataset> client_data;

    FedContext(const Dataset& train, const Dataset& test, const Partition& partition);
};

struct Stage1Result {
    ModelParams weights;  // W_R
    SparseMask mask;
    std::vector<RoundRecord> records;
    CostLedger ledger;
};

struct Stage2Result {
    AdaptedModel model;   // frozen base + trained blocks
    AdaptedModel primed;  // state right after priming
    ModelParams frozen_base;
    double primed_accuracy = 0.0;
    std::vector<RoundRecord> records;
    CostLedger ledger;
};

/// Stage 1: dense (flora/fft) or server-seeded sparse (slora/sft) rounds.
Stage1Result run_stage1(const FedConfig& cfg, const ModelParams& w0, const FedContext& ctx);

/// Primes LoRA blocks from ΔW = W_R − W₀ and runs R2 rounds that exchange
/// only the blocks. Entries of ΔW not covered by a block (biases, layers
/// outside the rank plan) are folded into the frozen Stage-2 base.
Stage2Result run_stage2(const FedConfig& cfg, const ModelParams& w0, const ModelParams& w_r,
                        const FedContext& ctx, std::size_t round_offset = 0,
                        CostLedger* ledger = nullptr);

/// LoRA blocks primed from ΔW plus the carried residual base.
AdaptedModel prime_model(const FedConfig& cfg, const ModelParams& w0, const ModelParams& w_r);

struct ExperimentReport {
    FedConfig config;
    std::uint64_t dataset_hash = 0;
    std::vector<RoundRecord> records;
    CostLedger ledger;
    double initial_accuracy = 0.0;
    std::optional<double> stage1_accuracy;
    std::optional<double> primed_accuracy;
    double final_accuracy = 0.0;
    std::size_t stage1_rounds = 0;
    std::size_t stage2_rounds = 0;
    TrainableCount stage1_trainable;
    TrainableCount stage2_trainable;
    AdaptedModel final_model;
    std::optional<SparseMask> mask;
};

ExperimentReport run_experiment(const FedConfig& cfg, const ModelParams& w0, const Dataset& train,
                                const Dataset& test, const Partition& partition);

}  // namespace plora
