#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "plora/errors.hpp"
#include "plora/fed.hpp"
#include "plora/report.hpp"

using namespace plora;

namespace {

struct Fixture {
    Dataset full = synth_generate(5, 8, 500, 3);
    TrainTest split = split_train_test(full, 0.6, 1);
    ModelParams w0 = pretrain(ModelConfig::toy(8, 12, 10, 5), synth_generate(5, 8, 300, 4), 2, 0.05, 7);
    Partition part = partition_dirichlet(split.train, 10, 0.5, 2);

    FedConfig cfg(Algorithm a) const {
        FedConfig c;
        c.algorithm = a;
        c.clients = 10;
        c.participants = 4;
        c.rounds_stage1 = 3;
        c.rounds_stage2 = 3;
        c.hidden_rank = 3;
        c.pre_cls_rank = 4;
        c.adapter_rank = 3;
        c.density = 0.2;
        return c;
    }
    ExperimentReport run(const FedConfig& c) const { return run_experiment(c, w0, split.train, split.test, part); }
};

const Fixture& fx() {
    static const Fixture f;
    return f;
}

RoundUpdate random_update(const AdaptedModel& shape, std::size_t id, std::uint64_t seed, std::size_t n = 1) {
    RoundUpdate u;
    u.client_id = id;
    u.sample_count = n;
    u.delta = zeros_like(shape);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    for_each_tensor(u.delta, [&](std::span<double> t) {
        for (double& v : t) v = g(rng);
    });
    return u;
}

}  // namespace

TEST(SampleClients, AllWhenKEqualsN) {
    const auto ids = sample_clients(3, 7, 7, 1);
    EXPECT_EQ(ids, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6}));
}

TEST(SampleClients, DeterministicSortedDistinct) {
    for (std::size_t r = 1; r <= 20; ++r) {
        const auto a = sample_clients(r, 100, 10, 5);
        EXPECT_EQ(a, sample_clients(r, 100, 10, 5));
        EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
        EXPECT_EQ(std::adjacent_find(a.begin(), a.end()), a.end());
        EXPECT_EQ(a.size(), 10u);
    }
    EXPECT_NE(sample_clients(1, 100, 10, 5), sample_clients(2, 100, 10, 5));
    EXPECT_THROW(sample_clients(1, 3, 4, 1), ConfigError);
}

TEST(FedConfig, Defaults) {
    const FedConfig c;
    EXPECT_EQ(c.clients, 100u);
    EXPECT_EQ(c.participants, 10u);
    EXPECT_EQ(c.local_epochs, 1u);
    EXPECT_EQ(c.batch_size, 32u);
    EXPECT_EQ(c.hidden_rank, 10u);
    EXPECT_EQ(c.pre_cls_rank, 18u);
    EXPECT_DOUBLE_EQ(c.density, 0.10);
    EXPECT_DOUBLE_EQ(c.bandwidth_up, 5e6);
    EXPECT_DOUBLE_EQ(c.bandwidth_down, 5e6);
    EXPECT_NO_THROW(c.validate());
    FedConfig bad = c;
    bad.participants = 101;
    try {
        bad.validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.key(), "federation.participants");
    }
}

TEST(LocalTrain, ZeroEpochsGivesZeroDelta) {
    const AdaptedModel g{fx().w0, {}, {}};
    const Dataset d = fx().split.train.subset({0, 1, 2, 3});
    const auto u = local_train(g, {SparseMask::full(fx().w0), false, false}, d, 0, 0, 0.1, 2, 1);
    EXPECT_EQ(u.delta, zeros_like(g));
    EXPECT_EQ(u.sample_count, 4u);
}

TEST(LocalTrain, SparseSupportWithinMask) {
    const AdaptedModel g{fx().w0, {}, {}};
    const SparseMask mask = mask_generate(fx().w0, 0.1, 3);
    const Dataset d = fx().split.train.subset({0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    const auto u = local_train(g, {mask, false, false}, d, 0, 2, 0.1, 3, 1);
    std::size_t moved = 0;
    for (std::size_t li = 0; li < g.base.layers.size(); ++li) {
        const auto& w = u.delta.base.layers[li].weight;
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (w.data()[i] != 0.0) {
                EXPECT_EQ(mask.weight_bits()[li][i], 1);
                ++moved;
            }
        }
        const auto& b = u.delta.base.layers[li].bias;
        for (std::size_t i = 0; i < b.size(); ++i)
            if (b[i] != 0.0) { EXPECT_EQ(mask.bias_bits()[li][i], 1); }
    }
    EXPECT_GT(moved, 0u);
}

TEST(LocalTrain, EmptyClientIsPartitionError) {
    const AdaptedModel g{fx().w0, {}, {}};
    EXPECT_THROW(local_train(g, {}, fx().split.train.subset({}), 3, 1, 0.1, 2, 1), PartitionError);
}

TEST(Aggregate, SingleUpdateIsItself) {
    const AdaptedModel shape{fx().w0, {}, {}};
    const RoundUpdate u = random_update(shape, 0, 1);
    EXPECT_EQ(aggregate({u}, AggregationMode::uniform), u.delta);
    EXPECT_EQ(aggregate({u}, AggregationMode::weighted), u.delta);
    EXPECT_THROW(aggregate({}, AggregationMode::uniform), ProtocolError);
}

TEST(Aggregate, OppositeUpdatesCancel) {
    const AdaptedModel shape{fx().w0, {}, {}};
    RoundUpdate a = random_update(shape, 0, 1);
    RoundUpdate b = a;
    b.client_id = 1;
    for_each_tensor(b.delta, [](std::span<double> t) {
        for (double& v : t) v = -v;
    });
    EXPECT_EQ(aggregate({a, b}, AggregationMode::uniform), zeros_like(shape));
}

TEST(Aggregate, MatchesScalarReferenceMean) {
    const ModelParams m = fx().w0;
    const AdaptedModel shape{m, lora_init_plan(m, default_rank_plan(m, 2, 2), 2.0, 1), {}};
    std::vector<RoundUpdate> ups;
    for (std::size_t i = 0; i < 5; ++i) ups.push_back(random_update(shape, 4 - i, 10 + i, 3 + i));
    std::vector<std::vector<double>> flat;
    for (const auto& u : ups) flat.push_back(oracle::flatten(u.delta));
    for (auto mode : {AggregationMode::uniform, AggregationMode::weighted}) {
        const auto got = oracle::flatten(aggregate(ups, mode));
        for (std::size_t k = 0; k < got.size(); ++k) {
            long double s = 0.0L, w = 0.0L;
            for (std::size_t i = 0; i < ups.size(); ++i) {
                const long double wi = mode == AggregationMode::uniform ? 1.0L : ups[i].sample_count;
                s += wi * flat[i][k];
                w += wi;
            }
            EXPECT_NEAR(got[k], static_cast<double>(s / w), 1e-15);
        }
    }
}

TEST(Aggregate, LinearInScale) {
    const AdaptedModel shape{fx().w0, {}, {}};
    std::vector<RoundUpdate> ups, scaled_ups;
    for (std::size_t i = 0; i < 4; ++i) ups.push_back(random_update(shape, i, 50 + i));
    for (const double c : {0.5, 4.0, -2.0}) {
        scaled_ups = ups;
        for (auto& u : scaled_ups)
            for_each_tensor(u.delta, [c](std::span<double> t) {
                for (double& v : t) v *= c;
            });
        const auto lhs = oracle::flatten(aggregate(scaled_ups, AggregationMode::uniform));
        const auto rhs = oracle::flatten(aggregate(ups, AggregationMode::uniform));
        for (std::size_t k = 0; k < lhs.size(); ++k) EXPECT_EQ(lhs[k], c * rhs[k]);
    }
}

TEST(Aggregate, OrderIndependent) {
    const AdaptedModel shape{fx().w0, {}, {}};
    std::vector<RoundUpdate> ups;
    for (std::size_t i = 0; i < 4; ++i) ups.push_back(random_update(shape, i, 70 + i));
    std::vector<RoundUpdate> rev(ups.rbegin(), ups.rend());
    EXPECT_EQ(aggregate(ups, AggregationMode::uniform), aggregate(rev, AggregationMode::uniform));
}

TEST(Stage1, ZeroRoundsKeepsW0) {
    FedConfig c = fx().cfg(Algorithm::slora);
    c.rounds_stage1 = 0;
    const FedContext ctx(fx().split.train, fx().split.test, fx().part);
    const auto s1 = run_stage1(c, fx().w0, ctx);
    EXPECT_EQ(s1.weights, fx().w0);
    EXPECT_TRUE(s1.records.empty());
}

TEST(Stage1, SloraOffMaskBitIdentical) {
    FedConfig c = fx().cfg(Algorithm::slora);
    c.rounds_stage1 = 8;
    c.density = 0.10;
    const FedContext ctx(fx().split.train, fx().split.test, fx().part);
    const auto s1 = run_stage1(c, fx().w0, ctx);
    std::size_t changed = 0;
    for (std::size_t li = 0; li < fx().w0.layers.size(); ++li) {
        const auto& a = s1.weights.layers[li];
        const auto& b = fx().w0.layers[li];
        for (std::size_t i = 0; i < a.weight.size(); ++i) {
            if (!s1.mask.weight_bits()[li][i]) { EXPECT_EQ(a.weight.data()[i], b.weight.data()[i]); }
            else changed += a.weight.data()[i] != b.weight.data()[i];
        }
        for (std::size_t i = 0; i < a.bias.size(); ++i)
            if (!s1.mask.bias_bits()[li][i]) { EXPECT_EQ(a.bias[i], b.bias[i]); }
    }
    EXPECT_GT(changed, 0u);
}

TEST(Stage1, FloraUsesFullMask) {
    const FedContext ctx(fx().split.train, fx().split.test, fx().part);
    const auto s1 = run_stage1(fx().cfg(Algorithm::flora), fx().w0, ctx);
    EXPECT_EQ(s1.mask.popcount(), fx().w0.total_params());
    EXPECT_EQ(s1.ledger.rounds().front().client_bits_up, fx().w0.total_params() * 32);
}

TEST(Stage2, BaseFrozenAndFullRankPrimingExact) {
    FedConfig c = fx().cfg(Algorithm::flora);
    c.hidden_rank = 12;
    c.pre_cls_rank = 10;
    const FedContext ctx(fx().split.train, fx().split.test, fx().part);
    const auto s1 = run_stage1(c, fx().w0, ctx);
    const auto s2 = run_stage2(c, fx().w0, s1.weights, ctx);
    EXPECT_EQ(s2.model.base, s2.frozen_base);
    EXPECT_EQ(s2.primed.base, s2.frozen_base);
    EXPECT_NE(s2.model.lora, s2.primed.lora);
    const Matrix primed = adapted_logits(s2.primed, fx().split.test.features);
    const Matrix target = forward(s1.weights, fx().split.test.features).logits;
    EXPECT_LT(linalg::max_abs_diff(primed, target), 1e-9);
    EXPECT_NEAR(s2.primed_accuracy, accuracy(s1.weights, fx().split.test), 1e-9);
}

TEST(Stage2, ZeroDeltaPrimingIsW0) {
    const FedConfig c = fx().cfg(Algorithm::slora);
    const AdaptedModel m = prime_model(c, fx().w0, fx().w0);
    EXPECT_EQ(m.base, fx().w0);
    EXPECT_EQ(adapted_logits(m, fx().split.test.features), forward(fx().w0, fx().split.test.features).logits);
}

TEST(Stage2, PrimingErrorShrinksWithRank) {
    FedConfig c = fx().cfg(Algorithm::flora);
    const FedContext ctx(fx().split.train, fx().split.test, fx().part);
    const auto s1 = run_stage1(c, fx().w0, ctx);
    const Matrix target = forward(s1.weights, fx().split.test.features).logits;
    double prev = INFINITY;
    for (std::size_t r = 1; r <= 10; ++r) {
        c.hidden_rank = r;
        c.pre_cls_rank = r;
        const Matrix got = adapted_logits(prime_model(c, fx().w0, s1.weights), fx().split.test.features);
        const double err = linalg::frobenius_norm(linalg::sub(got, target));
        EXPECT_LE(err, prev * (1 + 1e-9) + 1e-12);
        prev = err;
    }
}

TEST(Experiment, DegeneratePrimingEqualsPlainLora) {
    FedConfig s = fx().cfg(Algorithm::slora);
    s.rounds_stage1 = 0;
    s.stage2_init = Stage2Init::random;
    FedConfig l = fx().cfg(Algorithm::lora);
    const auto a = fx().run(s);
    const auto b = fx().run(l);
    EXPECT_EQ(rounds_csv(a.records), rounds_csv(b.records));
    EXPECT_EQ(a.final_model, b.final_model);
}

TEST(Experiment, SloraTotalRoundsAndStages) {
    const auto rep = fx().run(fx().cfg(Algorithm::slora));
    ASSERT_EQ(rep.records.size(), 1u + 3 + 3);
    EXPECT_EQ(rep.stage1_rounds + rep.stage2_rounds, 6u);
    for (std::size_t i = 0; i < rep.records.size(); ++i) {
        EXPECT_EQ(rep.records[i].round, i);
        EXPECT_EQ(rep.records[i].stage, i == 0 ? 0 : (i <= 3 ? 1 : 2));
    }
    EXPECT_EQ(rep.records.back().cum_bits, rep.ledger.bits_total());
    EXPECT_TRUE(rep.primed_accuracy.has_value());
}

TEST(Experiment, EveryAlgorithmRuns) {
    for (auto a : {Algorithm::fft, Algorithm::lora, Algorithm::sft, Algorithm::bitfit, Algorithm::houlsby,
                   Algorithm::pfeiffer, Algorithm::flora, Algorithm::slora}) {
        const auto rep = fx().run(fx().cfg(a));
        EXPECT_GT(rep.final_accuracy, 0.0) << to_string(a);
        EXPECT_GT(rep.ledger.bits_total(), 0u) << to_string(a);
        EXPECT_EQ(parse_algorithm(to_string(a)), a);
    }
}

TEST(Experiment, DeterministicAcrossThreadCounts) {
    FedConfig c = fx().cfg(Algorithm::slora);
    const auto one = rounds_csv(fx().run(c).records);
    c.threads = 8;
    EXPECT_EQ(rounds_csv(fx().run(c).records), one);
    EXPECT_EQ(rounds_csv(fx().run(c).records), one);
}

TEST(Experiment, BudgetPaddingAddsRounds) {
    FedConfig c = fx().cfg(Algorithm::lora);
    const auto base = fx().run(c);
    c.budget_bits = 3 * base.ledger.bits_total();
    const auto padded = fx().run(c);
    EXPECT_EQ(padded.stage2_rounds, 9u);
    EXPECT_GE(padded.ledger.bits_total(), c.budget_bits);
}

TEST(Experiment, EvalStrideSkipsButKeepsLast) {
    FedConfig c = fx().cfg(Algorithm::fft);
    c.rounds_stage1 = 5;
    c.eval_stride = 2;
    const auto rep = fx().run(c);
    EXPECT_TRUE(rep.records[0].accuracy);
    EXPECT_FALSE(rep.records[1].accuracy);
    EXPECT_TRUE(rep.records[2].accuracy);
    EXPECT_TRUE(rep.records[5].accuracy);
}

TEST(Experiment, PartitionClientCountMustMatch) {
    FedConfig c = fx().cfg(Algorithm::fft);
    c.clients = 12;
    EXPECT_THROW(fx().run(c), ConfigError);
}
