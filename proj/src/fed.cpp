#include "plora/fed.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "plora/errors.hpp"
#include "plora/rng.hpp"

namespace plora {

namespace {

struct Named {
    Algorithm algo;
    const char* name;
};

constexpr Named kAlgorithms[] = {
    {Algorithm::fft, "fft"},         {Algorithm::lora, "lora"},
    {Algorithm::sft, "sft"},         {Algorithm::bitfit, "bitfit"},
    {Algorithm::houlsby, "houlsby"}, {Algorithm::pfeiffer, "pfeiffer"},
    {Algorithm::flora, "flora"},     {Algorithm::slora, "slora"},
};

}  // namespace

std::string to_string(Algorithm a) {
    for (const auto& n : kAlgorithms)
        if (n.algo == a) return n.name;
    return "?";
}

Algorithm parse_algorithm(const std::string& s) {
    for (const auto& n : kAlgorithms)
        if (s == n.name) return n.algo;
    throw ConfigError("unknown algorithm '" + s + "'", "federation.algorithm");
}

std::string to_string(AggregationMode m) { return m == AggregationMode::uniform ? "uniform" : "weighted"; }

AggregationMode parse_aggregation(const std::string& s) {
    if (s == "uniform") return AggregationMode::uniform;
    if (s == "weighted") return AggregationMode::weighted;
    throw ConfigError("unknown aggregation mode '" + s + "'", "federation.aggregation");
}

std::string to_string(Stage2Init s) { return s == Stage2Init::primed ? "primed" : "random"; }

Stage2Init parse_stage2_init(const std::string& s) {
    if (s == "primed") return Stage2Init::primed;
    if (s == "random") return Stage2Init::random;
    throw ConfigError("unknown stage-2 init '" + s + "'", "peft.stage2_init");
}

void FedConfig::validate() const {
    if (clients < 1) throw ConfigError("must be >= 1", "federation.clients");
    if (participants < 1 || participants > clients) {
        throw ConfigError("must satisfy 1 <= K <= N", "federation.participants");
    }
    if (batch_size < 1) throw ConfigError("must be >= 1", "train.batch_size");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("must be > 0", "train.lr");
    if (!(density > 0.0 && density <= 1.0)) throw ConfigError("must lie in (0, 1]", "peft.density");
    if (hidden_rank < 1) throw ConfigError("must be >= 1", "peft.hidden_rank");
    if (pre_cls_rank < 1) throw ConfigError("must be >= 1", "peft.pre_cls_rank");
    if (adapter_rank < 1) throw ConfigError("must be >= 1", "peft.adapter_rank");
    if (!std::isfinite(beta)) throw ConfigError("must be finite", "peft.beta");
    if (eval_stride < 1) throw ConfigError("must be >= 1", "run.eval_stride");
    if (bits_per_param < 1) throw ConfigError("must be >= 1", "costs.bits_per_param");
    if (!(bandwidth_up > 0.0)) throw ConfigError("must be > 0", "costs.bandwidth_up");
    if (!(bandwidth_down > 0.0)) throw ConfigError("must be > 0", "costs.bandwidth_down");
    if (!(flops_rate > 0.0)) throw ConfigError("must be > 0", "costs.flops_rate");
    if (threads < 1) throw ConfigError("must be >= 1", "run.threads");
}

double FedConfig::beta_for(std::size_t rank) const {
    return beta > 0.0 ? beta : static_cast<double>(rank);
}

std::vector<std::size_t> sample_clients(std::size_t round, std::size_t n, std::size_t k,
                                        std::uint64_t seed) {
    if (k > n) throw ConfigError("cannot sample K > N clients", "federation.participants");
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(derive_seed(seed, {stream::kSample, round}));
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(ids[i], ids[pick(rng)]);
    }
    ids.resize(k);
    std::sort(ids.begin(), ids.end());
    return ids;
}

RoundUpdate local_train(const AdaptedModel& global, const TrainableSet& trainable,
                        const Dataset& client_data, std::size_t client_id, std::size_t epochs,
                        double lr, std::size_t batch_size, std::uint64_t stream_seed) {
    if (client_data.size() == 0) {
        throw PartitionError("client " + std::to_string(client_id) + " holds no samples");
    }
    if (batch_size < 1) throw ConfigError("must be >= 1", "train.batch_size");
    AdaptedModel local = global;
    Rng rng(stream_seed);
    std::vector<std::size_t> order(client_data.size());
    for (std::size_t e = 0; e < epochs; ++e) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t end = std::min(order.size(), start + batch_size);
            const Dataset batch =
                client_data.subset(std::vector<std::size_t>(order.begin() + start, order.begin() + end));
            const AdaptedForward fw = adapted_forward(local, batch.features);
            const AdaptedLoss lg = adapted_backward(local, fw.cache, batch.labels, trainable);
            adapted_step(local, lg.grads, trainable, lr);
        }
    }
    RoundUpdate u;
    u.client_id = client_id;
    u.delta = adapted_delta(local, global);
    u.sample_count = client_data.size();
    u.flops = epochs * flops_estimate(global, trainable, client_data.size());
    return u;
}

AdaptedModel aggregate(std::vector<RoundUpdate> updates, AggregationMode mode) {
    if (updates.empty()) throw ProtocolError("aggregate: no updates");
    std::sort(updates.begin(), updates.end(),
              [](const RoundUpdate& a, const RoundUpdate& b) { return a.client_id < b.client_id; });
    for (const auto& u : updates)
        if (!congruent(u.delta, updates.front().delta)) throw ShapeError("aggregate: incongruent updates");

    std::vector<double> weights(updates.size(), 1.0);
    if (mode == AggregationMode::weighted) {
        for (std::size_t i = 0; i < updates.size(); ++i) weights[i] = static_cast<double>(updates[i].sample_count);
    }
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (!(total > 0.0)) throw ProtocolError("aggregate: zero total weight");

    AdaptedModel sum = zeros_like(updates.front().delta);
    for (std::size_t i = 0; i < updates.size(); ++i) adapted_axpy(sum, updates[i].delta, weights[i]);
    for_each_tensor(sum, [total](std::span<double> t) {
        for (double& v : t) v /= total;
    });
    return sum;
}

FedContext::FedContext(const Dataset& train_, const Dataset& test_, const Partition& partition_)
    : train(train_), test(test_), partition(partition_) {
    partition.validate(train.size());
    client_data.reserve(partition.num_clients());
    for (const auto& idx : partition.clients) client_data.push_back(train.subset(idx));
}

namespace {

double evaluate(const AdaptedModel& m, const Dataset& test) {
    return accuracy(adapted_logits(m, test.features), test.labels);
}

// Synchronous FedAvg rounds over `state` restricted to `trainable`.
void run_rounds(const FedConfig& cfg, AdaptedModel& state, const TrainableSet& trainable,
                std::size_t rounds, int stage, std::size_t round_offset, const FedContext& ctx,
                CostLedger& ledger, std::vector<RoundRecord>& records) {
    if (cfg.clients != ctx.partition.num_clients()) {
        throw ConfigError("partition has " + std::to_string(ctx.partition.num_clients()) +
                              " clients, config expects " + std::to_string(cfg.clients),
                          "federation.clients");
    }
    const TrainableCount tc = trainable_count(state, trainable);
    const std::uint64_t client_bits = comm_bits(tc.count, 1, cfg.bits_per_param, 1);
    const std::uint64_t client_sparse = sparse_comm_bits(tc.count, cfg.bits_per_param, tc.total);

    for (std::size_t r = 1; r <= rounds; ++r) {
        const std::size_t round = round_offset + r;
        const auto ids = sample_clients(round, cfg.clients, cfg.participants, cfg.seed);

        std::vector<RoundUpdate> updates(ids.size());
        std::vector<std::exception_ptr> errors(ids.size());
        auto work = [&](std::size_t i) {
            try {
                const std::size_t c = ids[i];
                updates[i] = local_train(state, trainable, ctx.client_data[c], c, cfg.local_epochs,
                                         cfg.lr, cfg.batch_size,
                                         derive_seed(cfg.seed, {stream::kShuffle, round, c}));
            } catch (...) {
                errors[i] = std::current_exception();
            }
        };
        const std::size_t workers = std::min(cfg.threads, ids.size());
        if (workers <= 1) {
            for (std::size_t i = 0; i < ids.size(); ++i) work(i);
        } else {
            std::vector<std::jthread> pool;
            for (std::size_t t = 0; t < workers; ++t) {
                pool.emplace_back([&, t] {
                    for (std::size_t i = t; i < ids.size(); i += workers) work(i);
                });
            }
        }
        for (const auto& e : errors)
            if (e) std::rethrow_exception(e);

        RoundCost cost;
        cost.round = round;
        cost.stage = stage;
        cost.participants = ids.size();
        cost.client_bits_up = client_bits;
        cost.client_bits_down = client_bits;
        cost.client_bits_up_sparse = client_sparse;
        for (const auto& u : updates) {
            cost.flops += u.flops;
            cost.max_client_flops = std::max(cost.max_client_flops, u.flops);
        }

        adapted_axpy(state, aggregate(std::move(updates), cfg.aggregation), 1.0);
        ledger.add(cost);

        RoundRecord rec;
        rec.round = round;
        rec.stage = stage;
        rec.clients = ids;
        rec.bits_up = cost.bits_up();
        rec.bits_down = cost.bits_down();
        rec.cum_bits = ledger.bits_total();
        rec.cum_flops = ledger.flops();
        rec.seconds = static_cast<double>(cost.client_bits_up) / cfg.bandwidth_up +
                      static_cast<double>(cost.client_bits_down) / cfg.bandwidth_down +
                      static_cast<double>(cost.max_client_flops) / cfg.flops_rate;
        if (round % cfg.eval_stride == 0 || r == rounds) rec.accuracy = evaluate(state, ctx.test);
        records.push_back(std::move(rec));
    }
}

SparseMask stage1_mask(const FedConfig& cfg, const ModelParams& w0) {
    switch (cfg.algorithm) {
        case Algorithm::fft:
        case Algorithm::flora: return SparseMask::full(w0);
        case Algorithm::sft:
        case Algorithm::slora:
            return mask_generate(w0, cfg.density, derive_seed(cfg.seed, {stream::kMask}), cfg.mask_scope);
        case Algorithm::bitfit: return bitfit_mask(w0);
        default: break;
    }
    throw ConfigError("algorithm " + to_string(cfg.algorithm) + " has no stage-1 mask",
                      "federation.algorithm");
}

std::size_t padded_rounds(const FedConfig& cfg, std::size_t rounds, std::uint64_t trainable) {
    if (cfg.budget_bits == 0) return rounds;
    const std::uint64_t per_round = comm_bits(trainable, cfg.participants, cfg.bits_per_param, 2);
    if (per_round == 0) return rounds;
    const std::uint64_t needed = (cfg.budget_bits + per_round - 1) / per_round;
    return std::max<std::size_t>(rounds, needed);
}

}  // namespace

Stage1Result run_stage1(const FedConfig& cfg, const ModelParams& w0, const FedContext& ctx) {
    cfg.validate();
    Stage1Result res{w0, stage1_mask(cfg, w0), {}, CostLedger(cfg.bits_per_param)};
    AdaptedModel state{w0, {}, {}};
    TrainableSet ts{res.mask, false, false};
    run_rounds(cfg, state, ts, cfg.rounds_stage1, 1, 0, ctx, res.ledger, res.records);
    res.weights = std::move(state.base);
    return res;
}

AdaptedModel prime_model(const FedConfig& cfg, const ModelParams& w0, const ModelParams& w_r) {
    const ParamDelta dw = delta(w_r, w0);
    const RankPlan plan = default_rank_plan(w0, cfg.hidden_rank, cfg.pre_cls_rank, cfg.lora_scope);

    AdaptedModel m{w0, {}, {}};
    for (std::size_t li = 0; li < m.base.layers.size(); ++li) {
        auto& layer = m.base.layers[li];
        for (std::size_t j = 0; j < layer.bias.size(); ++j) layer.bias[j] += dw.biases[li][j];
        if (!plan.contains(li)) linalg::axpy(layer.weight, dw.weights[li], 1.0);
    }
    for (const auto& [li, rank] : plan) {
        const double beta = cfg.beta_for(rank);
        if (cfg.stage2_init == Stage2Init::primed) {
            auto blocks = lora_prime(dw, RankPlan{{li, rank}}, beta);
            m.lora.emplace(li, std::move(blocks.at(li)));
        } else {
            m.lora.emplace(li, lora_init_random(w0, li, rank, beta, derive_seed(cfg.seed, {stream::kLora})));
        }
    }
    return m;
}

Stage2Result run_stage2(const FedConfig& cfg, const ModelParams& w0, const ModelParams& w_r,
                        const FedContext& ctx, std::size_t round_offset, CostLedger* ledger) {
    cfg.validate();
    Stage2Result res;
    res.primed = prime_model(cfg, w0, w_r);
    res.frozen_base = res.primed.base;
    res.primed_accuracy = evaluate(res.primed, ctx.test);
    res.model = res.primed;
    res.ledger = CostLedger(cfg.bits_per_param);
    CostLedger& target = ledger ? *ledger : res.ledger;
    run_rounds(cfg, res.model, TrainableSet{std::nullopt, true, false}, cfg.rounds_stage2, 2,
               round_offset, ctx, target, res.records);
    if (ledger) res.ledger = *ledger;
    return res;
}

ExperimentReport run_experiment(const FedConfig& cfg, const ModelParams& w0, const Dataset& train,
                                const Dataset& test, const Partition& partition) {
    cfg.validate();
    w0.validate();
    const FedContext ctx(train, test, partition);

    ExperimentReport rep;
    rep.config = cfg;
    rep.dataset_hash = train.content_hash() ^ (test.content_hash() * 0x9e3779b97f4a7c15ull);
    rep.ledger = CostLedger(cfg.bits_per_param);

    AdaptedModel base_state{w0, {}, {}};
    rep.initial_accuracy = evaluate(base_state, test);
    RoundRecord initial;
    initial.accuracy = rep.initial_accuracy;
    rep.records.push_back(initial);

    FedConfig run_cfg = cfg;
    switch (cfg.algorithm) {
        case Algorithm::fft:
        case Algorithm::sft: {
            const SparseMask mask = stage1_mask(cfg, w0);
            run_cfg.rounds_stage1 = padded_rounds(cfg, cfg.rounds_stage1, mask.popcount());
            Stage1Result s1 = run_stage1(run_cfg, w0, ctx);
            rep.records.insert(rep.records.end(), s1.records.begin(), s1.records.end());
            rep.ledger = std::move(s1.ledger);
            rep.stage1_rounds = run_cfg.rounds_stage1;
            rep.stage1_trainable = {s1.mask.popcount(), w0.total_params()};
            rep.final_model = AdaptedModel{std::move(s1.weights), {}, {}};
            rep.mask = std::move(s1.mask);
            break;
        }
        case Algorithm::lora:
        case Algorithm::bitfit:
        case Algorithm::houlsby:
        case Algorithm::pfeiffer: {
            AdaptedModel state{w0, {}, {}};
            TrainableSet ts;
            if (cfg.algorithm == Algorithm::lora) {
                const RankPlan plan = default_rank_plan(w0, cfg.hidden_rank, cfg.pre_cls_rank, cfg.lora_scope);
                for (const auto& [li, rank] : plan) {
                    state.lora.emplace(li, lora_init_random(w0, li, rank, cfg.beta_for(rank),
                                                            derive_seed(cfg.seed, {stream::kLora})));
                }
                ts.lora = true;
            } else if (cfg.algorithm == Algorithm::bitfit) {
                ts.base_mask = bitfit_mask(w0);
                rep.mask = ts.base_mask;
            } else {
                const auto placement = cfg.algorithm == Algorithm::houlsby ? AdapterPlacement::after_hidden_each
                                                                           : AdapterPlacement::after_last_hidden;
                state = adapter_attach(w0, cfg.adapter_rank, placement, derive_seed(cfg.seed, {stream::kAdapter}));
                ts.adapters = true;
            }
            const TrainableCount tc = trainable_count(state, ts);
            run_cfg.rounds_stage2 = padded_rounds(cfg, cfg.rounds_stage2, tc.count);
            std::vector<RoundRecord> recs;
            run_rounds(run_cfg, state, ts, run_cfg.rounds_stage2, 2, 0, ctx, rep.ledger, recs);
            rep.records.insert(rep.records.end(), recs.begin(), recs.end());
            rep.stage2_rounds = run_cfg.rounds_stage2;
            rep.stage2_trainable = tc;
            rep.final_model = std::move(state);
            break;
        }
        case Algorithm::flora:
        case Algorithm::slora: {
            Stage1Result s1 = run_stage1(cfg, w0, ctx);
            rep.records.insert(rep.records.end(), s1.records.begin(), s1.records.end());
            rep.stage1_rounds = cfg.rounds_stage1;
            rep.stage1_trainable = {s1.mask.popcount(), w0.total_params()};
            rep.stage1_accuracy = evaluate(AdaptedModel{s1.weights, {}, {}}, test);
            CostLedger ledger = std::move(s1.ledger);
            Stage2Result s2 = run_stage2(cfg, w0, s1.weights, ctx, cfg.rounds_stage1, &ledger);
            rep.records.insert(rep.records.end(), s2.records.begin(), s2.records.end());
            rep.ledger = std::move(ledger);
            rep.primed_accuracy = s2.primed_accuracy;
            rep.stage2_rounds = cfg.rounds_stage2;
            rep.stage2_trainable = trainable_count(s2.model, TrainableSet{std::nullopt, true, false});
            rep.final_model = std::move(s2.model);
            rep.mask = std::move(s1.mask);
            break;
        }
    }
    rep.final_accuracy = evaluate(rep.final_model, test);
    return rep;
}

}  // namespace plora
