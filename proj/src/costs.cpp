#include "plora/costs.hpp"

#include <bit>

#include "plora/errors.hpp"

namespace plora {

std::uint64_t comm_bits(std::uint64_t update_params, std::uint64_t participants,
                        std::uint64_t bits_per_param, std::uint64_t directions) {
    return update_params * participants * bits_per_param * directions;
}

std::uint64_t index_bits(std::uint64_t total_params) {
    if (total_params <= 1) return 0;
    return static_cast<std::uint64_t>(std::bit_width(total_params - 1));
}

std::uint64_t sparse_comm_bits(std::uint64_t popcount, std::uint64_t bits_per_param,
                               std::uint64_t total_params) {
    return popcount * (bits_per_param + index_bits(total_params));
}

std::uint64_t inference_flops(const AdaptedModel& model, std::size_t batch_size) {
    const std::uint64_t n = batch_size;
    std::uint64_t f = 0;
    for (std::size_t li = 0; li < model.base.layers.size(); ++li) {
        const std::uint64_t d = model.base.layers[li].out_dim();
        const std::uint64_t k = model.base.layers[li].in_dim();
        f += 2 * n * d * k;
        if (auto it = model.lora.find(li); it != model.lora.end()) {
            f += 2 * n * it->second.rank * (d + k);
        }
        if (auto it = model.adapters.find(li); it != model.adapters.end()) {
            f += 4 * n * d * it->second.rank;
        }
    }
    return f;
}

std::uint64_t flops_estimate(const AdaptedModel& model, const TrainableSet& trainable,
                             std::size_t batch_size) {
    const std::uint64_t n = batch_size;
    std::uint64_t f = inference_flops(model, batch_size);
    for (std::size_t li = 0; li < model.base.layers.size(); ++li) {
        const std::uint64_t d = model.base.layers[li].out_dim();
        const std::uint64_t k = model.base.layers[li].in_dim();
        const bool has_input_grad = li > 0;
        if (auto it = model.adapters.find(li); it != model.adapters.end()) {
            const std::uint64_t r = it->second.rank;
            f += 4 * n * d * r;                       // through the bottleneck
            if (trainable.adapters) f += 4 * n * d * r;  // up / down gradients
        }
        // Sparse updates still materialise the dense weight gradient.
        if (trainable.base_mask && trainable.base_mask->any_weight(li)) f += 2 * n * d * k;
        if (has_input_grad) f += 2 * n * d * k;
        if (auto it = model.lora.find(li); it != model.lora.end()) {
            const std::uint64_t r = it->second.rank;
            if (trainable.lora) {
                f += 4 * n * d * r + 2 * n * r * k;
                if (has_input_grad) f += 2 * n * r * k;
            } else if (has_input_grad) {
                f += 2 * n * d * r + 2 * n * r * k;
            }
        }
    }
    return f;
}

std::string cost_formulas() {
    return "bits_up(round) = K * trainable_params * bits_per_param (dense values of the trainable set); "
           "bits_down(round) = K * trainable_params * bits_per_param; "
           "bits_up_sparse(round) = K * popcount * (bits_per_param + ceil(log2(total_params))); "
           "cum_bits = sum over rounds of bits_up + bits_down; "
           "flops(client) = local_epochs * matmul flops of forward+backward over the client's samples "
           "(2mnk per product; frozen weights skip weight gradients; sparse masks count dense weight "
           "gradients; the first layer skips its input gradient); "
           "seconds(round) = client_bits_up/bandwidth_up + client_bits_down/bandwidth_down + "
           "max_client_flops/flops_rate; the one-time priming broadcast and server-side SVD are not counted";
}

void CostLedger::add(const RoundCost& cost) {
    if (cost.client_bits_up % bits_per_param_ != 0 || cost.client_bits_down % bits_per_param_ != 0) {
        throw ProtocolError("dense round bits must be a multiple of bits_per_param");
    }
    if (!rounds_.empty() && cost.round <= rounds_.back().round) {
        throw ProtocolError("ledger rounds must be strictly increasing");
    }
    rounds_.push_back(cost);
    bits_up_ += cost.bits_up();
    bits_down_ += cost.bits_down();
    bits_up_sparse_ += cost.bits_up_sparse();
    flops_ += cost.flops;
}

double wallclock_model(const CostLedger& ledger, double bandwidth_up, double bandwidth_down,
                       double flops_rate) {
    if (!(bandwidth_up > 0.0) || !(bandwidth_down > 0.0) || !(flops_rate > 0.0)) {
        throw ConfigError("bandwidths and flops rate must be > 0", "costs.bandwidth_up");
    }
    double seconds = 0.0;
    for (const auto& r : ledger.rounds()) {
        seconds += static_cast<double>(r.client_bits_up) / bandwidth_up +
                   static_cast<double>(r.client_bits_down) / bandwidth_down +
                   static_cast<double>(r.max_client_flops) / flops_rate;
    }
    return seconds;
}

}  // namespace plora
