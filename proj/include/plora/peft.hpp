#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "plora/linalg.hpp"
#include "plora/model.hpp"

namespace plora {

/// Low-rank adapter running parallel to one dense layer:
/// h = W₀x + b + (beta / rank)·B·A·x.
struct LoraBlock {
    Matrix a;  // rank × in
    Matrix b;  // out × rank
    std::size_t rank = 0;
    double beta = 1.0;
    std::size_t layer = 0;

    double scale() const { return beta / static_cast<double>(rank); }
    std::size_t param_count() const { return a.size() + b.size(); }
    bool operator==(const LoraBlock&) const = default;
};

enum class AdapterPlacement { after_hidden_each, after_last_hidden };

std::string to_string(AdapterPlacement p);
AdapterPlacement parse_adapter_placement(const std::string& s);

/// Serial bottleneck after a layer's activation: h + up(relu(down(h))).
struct AdapterBlock {
    Matrix down;  // rank × d
    std::vector<double> down_bias;
    Matrix up;  // d × rank
    std::vector<double> up_bias;
    std::size_t rank = 0;
    std::size_t layer = 0;

    std::size_t param_count() const {
        return down.size() + down_bias.size() + up.size() + up_bias.size();
    }
    bool operator==(const AdapterBlock&) const = default;
};

/// Which layer roles a mask or LoRA placement covers.
struct RoleScope {
    bool embedding = false;
    bool hidden = true;
    bool pre_classification = true;
    bool classification = false;

    bool contains(LayerRole r) const;
    static RoleScope all() { return {true, true, true, true}; }
    bool operator==(const RoleScope&) const = default;
};

/// Binary trainability mask over every weight and bias entry of a model.
/// Immutable once built.
class SparseMask {
public:
    using Bits = std::vector<std::vector<std::uint8_t>>;

    SparseMask() = default;
    SparseMask(Bits weight_bits, Bits bias_bits, double density, std::uint64_t seed);

    static SparseMask full(const ModelParams& model);
    static SparseMask none(const ModelParams& model);

    const Bits& weight_bits() const { return weights_; }
    const Bits& bias_bits() const { return biases_; }
    double density() const { return density_; }
    std::uint64_t seed() const { return seed_; }

    std::size_t layers() const { return weights_.size(); }
    std::size_t popcount(std::size_t layer) const;
    std::size_t popcount() const;
    bool any_weight(std::size_t layer) const;
    bool congruent(const ModelParams& model) const;
    bool operator==(const SparseMask&) const = default;

private:
    Bits weights_;
    Bits biases_;
    double density_ = 0.0;
    std::uint64_t seed_ = 0;
};

/// round-half-up(density · size), floored at 1.
std::size_t mask_popcount_for(double density, std::size_t size);

/// Uniform random mask with exactly mask_popcount_for(density, layer size)
/// ones per in-scope layer (weights and bias pooled); out-of-scope layers are
/// all zero.
SparseMask mask_generate(const ModelParams& model, double density, std::uint64_t seed,
                         const RoleScope& scope = {});
SparseMask bitfit_mask(const ModelParams& model);

/// SGD step on masked entries only; off-mask entries are copied untouched.
ModelParams masked_step(const ModelParams& model, const ParamDelta& grads, const SparseMask& mask,
                        double lr);

using RankPlan = std::map<std::size_t, std::size_t>;

/// hidden_rank for hidden layers, pre_cls_rank for the pre_classification
/// layer, restricted to `scope`.
RankPlan default_rank_plan(const ModelParams& model, std::size_t hidden_rank,
                           std::size_t pre_cls_rank, const RoleScope& scope = {});

/// A ~ N(0, 0.02²) seeded, B = 0.
LoraBlock lora_init_random(const ModelParams& model, std::size_t layer, std::size_t rank, double beta,
                           std::uint64_t seed);
std::map<std::size_t, LoraBlock> lora_init_plan(const ModelParams& model, const RankPlan& plan,
                                                double beta, std::uint64_t seed);

std::vector<double> lora_forward(const DenseLayer& layer, const LoraBlock& block,
                                 std::span<const double> x);

/// Truncated-SVD priming: per planned layer (B, A) = rank-r factors of ΔW,
/// with B rescaled by r/β so that (β/r)·B·A is the rank-r approximation.
std::map<std::size_t, LoraBlock> lora_prime(const ParamDelta& delta, const RankPlan& plan,
                                            double beta);

/// Base network with optional LoRA blocks and serial adapters, keyed by layer.
struct AdaptedModel {
    ModelParams base;
    std::map<std::size_t, LoraBlock> lora;
    std::map<std::size_t, AdapterBlock> adapters;

    bool operator==(const AdaptedModel&) const = default;
};

AdaptedModel adapter_attach(const ModelParams& model, std::size_t rank, AdapterPlacement placement,
                            std::uint64_t seed);

struct TrainableSet {
    std::optional<SparseMask> base_mask;  // nullopt: base frozen
    bool lora = false;
    bool adapters = false;
};

struct AdaptedCache {
    std::vector<Matrix> inputs;
    std::vector<Matrix> preact;
    std::map<std::size_t, Matrix> lora_mid;     // x·Aᵀ
    std::map<std::size_t, Matrix> adapter_in;   // activation fed to the adapter
    std::map<std::size_t, Matrix> adapter_pre;  // down-projection pre-activation
};

struct AdaptedForward {
    Matrix logits;
    AdaptedCache cache;
};

struct AdaptedLoss {
    double loss = 0.0;
    AdaptedModel grads;  // zero outside the trainable set
};

AdaptedForward adapted_forward(const AdaptedModel& model, const Matrix& batch);
Matrix adapted_logits(const AdaptedModel& model, const Matrix& batch);
AdaptedLoss adapted_backward(const AdaptedModel& model, const AdaptedCache& cache,
                             const std::vector<std::size_t>& labels, const TrainableSet& trainable);
/// In-place SGD restricted to the trainable set.
void adapted_step(AdaptedModel& model, const AdaptedModel& grads, const TrainableSet& trainable,
                  double lr);

/// Every tensor of the model in a fixed order: base layers (weight, bias),
/// then LoRA blocks (a, b), then adapters (down, down_bias, up, up_bias).
void for_each_tensor(AdaptedModel& m, const std::function<void(std::span<double>)>& fn);
void for_each_tensor(const AdaptedModel& m, const std::function<void(std::span<const double>)>& fn);
bool congruent(const AdaptedModel& a, const AdaptedModel& b);
AdaptedModel zeros_like(const AdaptedModel& m);
AdaptedModel adapted_delta(const AdaptedModel& current, const AdaptedModel& origin);
/// dst += s · src
void adapted_axpy(AdaptedModel& dst, const AdaptedModel& src, double s);

struct TrainableCount {
    std::size_t count = 0;
    std::size_t total = 0;  // base model size
    double density() const {
        return total == 0 ? 0.0 : static_cast<double>(count) / static_cast<double>(total);
    }
};

TrainableCount trainable_count(const AdaptedModel& model, const TrainableSet& trainable);

}  // namespace plora
