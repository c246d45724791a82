#include "plora/peft.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "plora/errors.hpp"
#include "plora/rng.hpp"

namespace plora {

namespace {

constexpr double kLoraInitStd = 0.02;

std::string layer_tag(std::size_t layer) { return "layer " + std::to_string(layer); }

}  // namespace

std::string to_string(AdapterPlacement p) {
    return p == AdapterPlacement::after_hidden_each ? "after_hidden_each" : "after_last_hidden";
}

AdapterPlacement parse_adapter_placement(const std::string& s) {
    if (s == "after_hidden_each" || s == "houlsby") return AdapterPlacement::after_hidden_each;
    if (s == "after_last_hidden" || s == "pfeiffer") return AdapterPlacement::after_last_hidden;
    throw ConfigError("unknown adapter placement '" + s + "'", "peft.adapter_placement");
}

bool RoleScope::contains(LayerRole r) const {
    switch (r) {
        case LayerRole::embedding: return embedding;
        case LayerRole::hidden: return hidden;
        case LayerRole::pre_classification: return pre_classification;
        case LayerRole::classification: return classification;
    }
    return false;
}

// ---------------------------------------------------------------------------
// SparseMask

SparseMask::SparseMask(Bits weight_bits, Bits bias_bits, double density, std::uint64_t seed)
    : weights_(std::move(weight_bits)), biases_(std::move(bias_bits)), density_(density), seed_(seed) {
    if (weights_.size() != biases_.size()) throw ShapeError("mask weight/bias layer count mismatch");
}

SparseMask SparseMask::full(const ModelParams& model) {
    Bits w, b;
    for (const auto& l : model.layers) {
        w.emplace_back(l.weight.size(), 1);
        b.emplace_back(l.bias.size(), 1);
    }
    return SparseMask(std::move(w), std::move(b), 1.0, 0);
}

SparseMask SparseMask::none(const ModelParams& model) {
    Bits w, b;
    for (const auto& l : model.layers) {
        w.emplace_back(l.weight.size(), 0);
        b.emplace_back(l.bias.size(), 0);
    }
    return SparseMask(std::move(w), std::move(b), 0.0, 0);
}

std::size_t SparseMask::popcount(std::size_t layer) const {
    return static_cast<std::size_t>(std::count(weights_[layer].begin(), weights_[layer].end(), 1) +
                                    std::count(biases_[layer].begin(), biases_[layer].end(), 1));
}

std::size_t SparseMask::popcount() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) n += popcount(l);
    return n;
}

bool SparseMask::any_weight(std::size_t layer) const {
    return std::find(weights_[layer].begin(), weights_[layer].end(), 1) != weights_[layer].end();
}

bool SparseMask::congruent(const ModelParams& model) const {
    if (weights_.size() != model.layers.size()) return false;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        if (weights_[l].size() != model.layers[l].weight.size()) return false;
        if (biases_[l].size() != model.layers[l].bias.size()) return false;
    }
    return true;
}

std::size_t mask_popcount_for(double density, std::size_t size) {
    const auto k = static_cast<std::size_t>(std::floor(density * static_cast<double>(size) + 0.5));
    return std::clamp<std::size_t>(k, 1, size);
}

SparseMask mask_generate(const ModelParams& model, double density, std::uint64_t seed,
                         const RoleScope& scope) {
    if (!(density > 0.0 && density <= 1.0)) {
        throw ConfigError("mask density must lie in (0, 1]", "peft.density");
    }
    SparseMask::Bits w, b;
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        const auto& l = model.layers[li];
        std::vector<std::uint8_t> wb(l.weight.size(), 0), bb(l.bias.size(), 0);
        if (scope.contains(l.role)) {
            const std::size_t size = l.param_count();
            const std::size_t k = mask_popcount_for(density, size);
            std::vector<std::size_t> pool(size);
            std::iota(pool.begin(), pool.end(), 0);
            Rng rng(derive_seed(seed, {stream::kMask, li}));
            // Partial Fisher-Yates: the first k slots are a uniform k-subset.
            for (std::size_t i = 0; i < k; ++i) {
                std::uniform_int_distribution<std::size_t> pick(i, size - 1);
                std::swap(pool[i], pool[pick(rng)]);
                const std::size_t pos = pool[i];
                if (pos < wb.size()) wb[pos] = 1;
                else bb[pos - wb.size()] = 1;
            }
        }
        w.push_back(std::move(wb));
        b.push_back(std::move(bb));
    }
    return SparseMask(std::move(w), std::move(b), density, seed);
}

SparseMask bitfit_mask(const ModelParams& model) {
    SparseMask::Bits w, b;
    std::size_t biases = 0;
    for (const auto& l : model.layers) {
        w.emplace_back(l.weight.size(), 0);
        b.emplace_back(l.bias.size(), 1);
        biases += l.bias.size();
    }
    const double density =
        static_cast<double>(biases) / static_cast<double>(std::max<std::size_t>(1, model.total_params()));
    return SparseMask(std::move(w), std::move(b), density, 0);
}

ModelParams masked_step(const ModelParams& model, const ParamDelta& grads, const SparseMask& mask,
                        double lr) {
    if (!mask.congruent(model)) throw ShapeError("masked_step: mask does not match model");
    if (grads.weights.size() != model.layers.size() || grads.biases.size() != model.layers.size()) {
        throw ShapeError("masked_step: gradient depth mismatch");
    }
    ModelParams out = model;
    for (std::size_t li = 0; li < out.layers.size(); ++li) {
        auto& l = out.layers[li];
        const auto& gw = grads.weights[li];
        if (gw.rows() != l.weight.rows() || gw.cols() != l.weight.cols() ||
            grads.biases[li].size() != l.bias.size()) {
            throw ShapeError("masked_step: gradient shape mismatch at " + layer_tag(li));
        }
        auto w = l.weight.data();
        auto g = gw.data();
        const auto& wb = mask.weight_bits()[li];
        for (std::size_t i = 0; i < w.size(); ++i)
            if (wb[i]) w[i] -= lr * g[i];
        const auto& bb = mask.bias_bits()[li];
        for (std::size_t i = 0; i < l.bias.size(); ++i)
            if (bb[i]) l.bias[i] -= lr * grads.biases[li][i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// LoRA

RankPlan default_rank_plan(const ModelParams& model, std::size_t hidden_rank,
                           std::size_t pre_cls_rank, const RoleScope& scope) {
    RankPlan plan;
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        const LayerRole role = model.layers[li].role;
        if (!scope.contains(role)) continue;
        if (role == LayerRole::pre_classification) plan[li] = pre_cls_rank;
        else plan[li] = hidden_rank;
    }
    return plan;
}

namespace {

void check_rank(const ModelParams& model, std::size_t layer, std::size_t rank) {
    if (layer >= model.layers.size()) throw ShapeError(layer_tag(layer) + " does not exist");
    const auto& w = model.layers[layer].weight;
    const std::size_t limit = std::min(w.rows(), w.cols());
    if (rank < 1 || rank > limit) {
        throw RankError(layer_tag(layer) + ": rank " + std::to_string(rank) + " outside [1, " +
                        std::to_string(limit) + "]");
    }
}

}  // namespace

LoraBlock lora_init_random(const ModelParams& model, std::size_t layer, std::size_t rank, double beta,
                           std::uint64_t seed) {
    check_rank(model, layer, rank);
    const auto& w = model.layers[layer].weight;
    LoraBlock blk{Matrix(rank, w.cols()), Matrix(w.rows(), rank), rank, beta, layer};
    Rng rng(derive_seed(seed, {stream::kLora, layer}));
    std::normal_distribution<double> gauss(0.0, kLoraInitStd);
    for (double& v : blk.a.data()) v = gauss(rng);
    return blk;
}

std::map<std::size_t, LoraBlock> lora_init_plan(const ModelParams& model, const RankPlan& plan,
                                                double beta, std::uint64_t seed) {
    std::map<std::size_t, LoraBlock> blocks;
    for (const auto& [layer, rank] : plan) blocks.emplace(layer, lora_init_random(model, layer, rank, beta, seed));
    return blocks;
}

std::vector<double> lora_forward(const DenseLayer& layer, const LoraBlock& block,
                                 std::span<const double> x) {
    const std::size_t d = layer.weight.rows(), k = layer.weight.cols();
    if (x.size() != k) throw ShapeError("lora_forward: input length mismatch");
    if (block.a.rows() != block.rank || block.a.cols() != k || block.b.rows() != d ||
        block.b.cols() != block.rank) {
        throw ShapeError("lora_forward: block does not compose with layer");
    }
    std::vector<double> ax(block.rank, 0.0);
    for (std::size_t r = 0; r < block.rank; ++r)
        for (std::size_t j = 0; j < k; ++j) ax[r] += block.a(r, j) * x[j];
    const double s = block.scale();
    std::vector<double> h(d);
    for (std::size_t i = 0; i < d; ++i) {
        double base = layer.bias[i];
        for (std::size_t j = 0; j < k; ++j) base += layer.weight(i, j) * x[j];
        double low = 0.0;
        for (std::size_t r = 0; r < block.rank; ++r) low += block.b(i, r) * ax[r];
        h[i] = base + s * low;
    }
    return h;
}

std::map<std::size_t, LoraBlock> lora_prime(const ParamDelta& delta, const RankPlan& plan,
                                            double beta) {
    if (!(beta > 0.0)) throw ConfigError("beta must be > 0", "peft.beta");
    std::map<std::size_t, LoraBlock> blocks;
    for (const auto& [layer, rank] : plan) {
        if (layer >= delta.weights.size()) throw ShapeError(layer_tag(layer) + " missing from delta");
        const Matrix& dw = delta.weights[layer];
        linalg::LowRankFactors f;
        try {
            f = linalg::truncated_factors(dw, rank);
        } catch (const RankError& e) {
            throw RankError(layer_tag(layer) + ": " + e.what());
        }
        LoraBlock blk{std::move(f.a), std::move(f.b), rank, beta, layer};
        const double absorb = static_cast<double>(rank) / beta;
        if (absorb != 1.0) blk.b = linalg::scaled(blk.b, absorb);
        blocks.emplace(layer, std::move(blk));
    }
    return blocks;
}

// ---------------------------------------------------------------------------
// Adapters

AdaptedModel adapter_attach(const ModelParams& model, std::size_t rank, AdapterPlacement placement,
                            std::uint64_t seed) {
    if (rank < 1) throw ConfigError("adapter rank must be >= 1", "peft.adapter_rank");
    std::vector<std::size_t> sites;
    for (std::size_t li = 0; li < model.layers.size(); ++li)
        if (model.layers[li].role == LayerRole::hidden) sites.push_back(li);
    if (sites.empty()) throw ConfigError("model has no hidden layers to host adapters");
    if (placement == AdapterPlacement::after_last_hidden) sites = {sites.back()};

    AdaptedModel out{model, {}, {}};
    std::normal_distribution<double> gauss(0.0, kLoraInitStd);
    for (std::size_t li : sites) {
        const std::size_t d = model.layers[li].out_dim();
        AdapterBlock blk{Matrix(rank, d), std::vector<double>(rank, 0.0), Matrix(d, rank),
                         std::vector<double>(d, 0.0), rank, li};
        Rng rng(derive_seed(seed, {stream::kAdapter, li}));
        for (double& v : blk.down.data()) v = gauss(rng);
        out.adapters.emplace(li, std::move(blk));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Adapted network

AdaptedForward adapted_forward(const AdaptedModel& model, const Matrix& batch) {
    const ModelParams& base = model.base;
    if (batch.cols() != base.input_dim) {
        throw ShapeError("batch has " + std::to_string(batch.cols()) + " features, model expects " +
                         std::to_string(base.input_dim));
    }
    AdaptedForward r;
    Matrix x = batch;
    for (std::size_t li = 0; li < base.layers.size(); ++li) {
        const auto& layer = base.layers[li];
        Matrix z = nn::affine(x, layer.weight, layer.bias);
        if (auto it = model.lora.find(li); it != model.lora.end()) {
            const LoraBlock& blk = it->second;
            Matrix mid = linalg::matmul_nt(x, blk.a);
            linalg::axpy(z, linalg::matmul_nt(mid, blk.b), blk.scale());
            r.cache.lora_mid.emplace(li, std::move(mid));
        }
        Matrix h = nn::activate(z, layer.activation);
        if (auto it = model.adapters.find(li); it != model.adapters.end()) {
            const AdapterBlock& ad = it->second;
            Matrix pre = nn::affine(h, ad.down, ad.down_bias);
            Matrix up = nn::affine(nn::activate(pre, Activation::relu), ad.up, ad.up_bias);
            r.cache.adapter_in.emplace(li, h);
            r.cache.adapter_pre.emplace(li, std::move(pre));
            linalg::axpy(h, up, 1.0);
        }
        r.cache.inputs.push_back(std::move(x));
        r.cache.preact.push_back(std::move(z));
        x = std::move(h);
    }
    r.logits = std::move(x);
    return r;
}

Matrix adapted_logits(const AdaptedModel& model, const Matrix& batch) {
    return adapted_forward(model, batch).logits;
}

AdaptedModel zeros_like(const AdaptedModel& m) {
    AdaptedModel z = m;
    for_each_tensor(z, [](std::span<double> t) { std::fill(t.begin(), t.end(), 0.0); });
    return z;
}

AdaptedLoss adapted_backward(const AdaptedModel& model, const AdaptedCache& cache,
                             const std::vector<std::size_t>& labels, const TrainableSet& trainable) {
    const ModelParams& base = model.base;
    const std::size_t depth = base.layers.size();
    if (cache.inputs.size() != depth) throw ShapeError("forward cache does not match model depth");
    if (trainable.base_mask && !trainable.base_mask->congruent(base)) {
        throw ShapeError("trainable mask does not match model");
    }

    // The last layer's output is the logits unless an adapter follows it.
    Matrix logits = nn::activate(cache.preact.back(), base.layers.back().activation);
    if (auto it = model.adapters.find(depth - 1); it != model.adapters.end()) {
        const AdapterBlock& ad = it->second;
        linalg::axpy(logits,
                     nn::affine(nn::activate(cache.adapter_pre.at(depth - 1), Activation::relu), ad.up,
                                ad.up_bias),
                     1.0);
    }
    nn::SoftmaxLoss sl = nn::softmax_cross_entropy(logits, labels);

    AdaptedLoss out;
    out.loss = sl.loss;
    out.grads = zeros_like(model);
    Matrix grad = std::move(sl.dlogits);
    for (std::size_t li = depth; li-- > 0;) {
        const auto& layer = base.layers[li];

        if (auto it = model.adapters.find(li); it != model.adapters.end()) {
            const AdapterBlock& ad = it->second;
            const Matrix& pre = cache.adapter_pre.at(li);
            const Matrix q = nn::activate(pre, Activation::relu);
            Matrix dq = linalg::matmul(grad, ad.up);
            nn::activation_backward(dq, pre, Activation::relu);
            if (trainable.adapters) {
                AdapterBlock& g = out.grads.adapters.at(li);
                g.up = linalg::matmul_tn(grad, q);
                g.up_bias = nn::column_sums(grad);
                g.down = linalg::matmul_tn(dq, cache.adapter_in.at(li));
                g.down_bias = nn::column_sums(dq);
            }
            linalg::axpy(grad, linalg::matmul(dq, ad.down), 1.0);
        }

        nn::activation_backward(grad, cache.preact[li], layer.activation);

        if (trainable.base_mask) {
            if (trainable.base_mask->any_weight(li)) {
                out.grads.base.layers[li].weight = linalg::matmul_tn(grad, cache.inputs[li]);
            }
            out.grads.base.layers[li].bias = nn::column_sums(grad);
        }

        Matrix dx;
        if (li > 0) dx = linalg::matmul(grad, layer.weight);

        if (auto it = model.lora.find(li); it != model.lora.end() && trainable.lora) {
            const LoraBlock& blk = it->second;
            const double s = blk.scale();
            LoraBlock& g = out.grads.lora.at(li);
            g.b = linalg::scaled(linalg::matmul_tn(grad, cache.lora_mid.at(li)), s);
            const Matrix dmid = linalg::scaled(linalg::matmul(grad, blk.b), s);
            g.a = linalg::matmul_tn(dmid, cache.inputs[li]);
            if (li > 0) linalg::axpy(dx, linalg::matmul(dmid, blk.a), 1.0);
        } else if (it != model.lora.end() && li > 0) {
            const LoraBlock& blk = it->second;
            const Matrix dmid = linalg::scaled(linalg::matmul(grad, blk.b), blk.scale());
            linalg::axpy(dx, linalg::matmul(dmid, blk.a), 1.0);
        }
        if (li > 0) grad = std::move(dx);
    }
    return out;
}

void adapted_step(AdaptedModel& model, const AdaptedModel& grads, const TrainableSet& trainable,
                  double lr) {
    if (trainable.base_mask) {
        ParamDelta g;
        for (const auto& l : grads.base.layers) {
            g.weights.push_back(l.weight);
            g.biases.push_back(l.bias);
        }
        model.base = masked_step(model.base, g, *trainable.base_mask, lr);
    }
    if (trainable.lora) {
        for (auto& [li, blk] : model.lora) {
            const LoraBlock& g = grads.lora.at(li);
            linalg::axpy(blk.a, g.a, -lr);
            linalg::axpy(blk.b, g.b, -lr);
        }
    }
    if (trainable.adapters) {
        for (auto& [li, ad] : model.adapters) {
            const AdapterBlock& g = grads.adapters.at(li);
            linalg::axpy(ad.down, g.down, -lr);
            linalg::axpy(ad.up, g.up, -lr);
            for (std::size_t i = 0; i < ad.down_bias.size(); ++i) ad.down_bias[i] -= lr * g.down_bias[i];
            for (std::size_t i = 0; i < ad.up_bias.size(); ++i) ad.up_bias[i] -= lr * g.up_bias[i];
        }
    }
}

// ---------------------------------------------------------------------------
// Tensor traversal

void for_each_tensor(AdaptedModel& m, const std::function<void(std::span<double>)>& fn) {
    for (auto& l : m.base.layers) {
        fn(l.weight.data());
        fn(l.bias);
    }
    for (auto& [li, blk] : m.lora) {
        fn(blk.a.data());
        fn(blk.b.data());
    }
    for (auto& [li, ad] : m.adapters) {
        fn(ad.down.data());
        fn(ad.down_bias);
        fn(ad.up.data());
        fn(ad.up_bias);
    }
}

void for_each_tensor(const AdaptedModel& m, const std::function<void(std::span<const double>)>& fn) {
    for (const auto& l : m.base.layers) {
        fn(l.weight.data());
        fn(l.bias);
    }
    for (const auto& [li, blk] : m.lora) {
        fn(blk.a.data());
        fn(blk.b.data());
    }
    for (const auto& [li, ad] : m.adapters) {
        fn(ad.down.data());
        fn(ad.down_bias);
        fn(ad.up.data());
        fn(ad.up_bias);
    }
}

namespace {

std::vector<std::size_t> tensor_sizes(const AdaptedModel& m) {
    std::vector<std::size_t> sizes;
    for_each_tensor(m, [&](std::span<const double> t) { sizes.push_back(t.size()); });
    return sizes;
}

std::vector<std::span<const double>> const_tensors(const AdaptedModel& m) {
    std::vector<std::span<const double>> out;
    for_each_tensor(m, [&](std::span<const double> t) { out.push_back(t); });
    return out;
}

}  // namespace

bool congruent(const AdaptedModel& a, const AdaptedModel& b) {
    if (a.base.layers.size() != b.base.layers.size()) return false;
    for (const auto& [li, blk] : a.lora)
        if (!b.lora.contains(li)) return false;
    for (const auto& [li, ad] : a.adapters)
        if (!b.adapters.contains(li)) return false;
    if (a.lora.size() != b.lora.size() || a.adapters.size() != b.adapters.size()) return false;
    return tensor_sizes(a) == tensor_sizes(b);
}

AdaptedModel adapted_delta(const AdaptedModel& current, const AdaptedModel& origin) {
    if (!congruent(current, origin)) throw ShapeError("adapted_delta: incongruent models");
    AdaptedModel d = current;
    const auto src = const_tensors(origin);
    std::size_t k = 0;
    for_each_tensor(d, [&](std::span<double> t) {
        const auto o = src[k++];
        for (std::size_t i = 0; i < t.size(); ++i) t[i] -= o[i];
    });
    return d;
}

void adapted_axpy(AdaptedModel& dst, const AdaptedModel& src, double s) {
    if (!congruent(dst, src)) throw ShapeError("adapted_axpy: incongruent models");
    const auto in = const_tensors(src);
    std::size_t k = 0;
    for_each_tensor(dst, [&](std::span<double> t) {
        const auto v = in[k++];
        for (std::size_t i = 0; i < t.size(); ++i) t[i] += s * v[i];
    });
}

TrainableCount trainable_count(const AdaptedModel& model, const TrainableSet& trainable) {
    TrainableCount c;
    c.total = model.base.total_params();
    if (trainable.base_mask) c.count += trainable.base_mask->popcount();
    if (trainable.lora)
        for (const auto& [li, blk] : model.lora) c.count += blk.param_count();
    if (trainable.adapters)
        for (const auto& [li, ad] : model.adapters) c.count += ad.param_count();
    return c;
}

}  // namespace plora
