#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "plora/peft.hpp"

namespace plora {

/// update_params · participants · bits_per_param · directions.
std::uint64_t comm_bits(std::uint64_t update_params, std::uint64_t participants,
                        std::uint64_t bits_per_param, std::uint64_t directions);

/// ceil(log2(total_params)); bits needed to address one parameter.
std::uint64_t index_bits(std::uint64_t total_params);

/// (index, value) encoding of a sparse update: popcount · (bits_per_param + index_bits).
std::uint64_t sparse_comm_bits(std::uint64_t popcount, std::uint64_t bits_per_param,
                               std::uint64_t total_params);

/// Matmul FLOPs of one forward + backward pass over `batch_size` samples,
/// mirroring exactly what adapted_forward / adapted_backward execute.
/// FLOPs are linear in the batch size, so a local epoch over n samples costs
/// flops_estimate(model, trainable, n).
std::uint64_t flops_estimate(const AdaptedModel& model, const TrainableSet& trainable,
                             std::size_t batch_size);
/// Forward-only FLOPs (inference) for `batch_size` samples.
std::uint64_t inference_flops(const AdaptedModel& model, std::size_t batch_size);

/// Human-readable statement of the accounting used by the ledger.
std::string cost_formulas();

struct RoundCost {
    std::size_t round = 0;
    int stage = 1;
    std::size_t participants = 0;
    std::uint64_t client_bits_up = 0;    // per participant
    std::uint64_t client_bits_down = 0;  // per participant
    std::uint64_t client_bits_up_sparse = 0;
    std::uint64_t flops = 0;             // summed over participants
    std::uint64_t max_client_flops = 0;  // synchronous critical path

    std::uint64_t bits_up() const { return client_bits_up * participants; }
    std::uint64_t bits_down() const { return client_bits_down * participants; }
    std::uint64_t bits_up_sparse() const { return client_bits_up_sparse * participants; }
};

class CostLedger {
public:
    explicit CostLedger(std::uint64_t bits_per_param = 32) : bits_per_param_(bits_per_param) {}

    /// Throws ProtocolError if the entry would break monotonicity or the
    /// bits_per_param divisibility of the dense counters.
    void add(const RoundCost& cost);

    const std::vector<RoundCost>& rounds() const { return rounds_; }
    std::uint64_t bits_per_param() const { return bits_per_param_; }
    std::uint64_t bits_up() const { return bits_up_; }
    std::uint64_t bits_down() const { return bits_down_; }
    std::uint64_t bits_total() const { return bits_up_ + bits_down_; }
    std::uint64_t bits_up_sparse() const { return bits_up_sparse_; }
    std::uint64_t flops() const { return flops_; }

private:
    std::uint64_t bits_per_param_;
    std::vector<RoundCost> rounds_;
    std::uint64_t bits_up_ = 0;
    std::uint64_t bits_down_ = 0;
    std::uint64_t bits_up_sparse_ = 0;
    std::uint64_t flops_ = 0;
};

/// Σ over rounds of client_bits_up / bw_up + client_bits_down / bw_down +
/// max_client_flops / flops_rate (seconds).
double wallclock_model(const CostLedger& ledger, double bandwidth_up, double bandwidth_down,
                       double flops_rate);

}  // namespace plora
