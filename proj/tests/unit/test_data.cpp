#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"
#include "plora/data.hpp"
#include "plora/errors.hpp"
#include "plora/model.hpp"

using namespace plora;
namespace fs = std::filesystem;

namespace {

void expect_exact_partition(const Partition& p, std::size_t universe) {
    EXPECT_NO_THROW(p.validate(universe));
    std::size_t total = 0;
    for (const auto& c : p.clients) {
        EXPECT_FALSE(c.empty());
        EXPECT_TRUE(std::is_sorted(c.begin(), c.end()));
        total += c.size();
    }
    EXPECT_EQ(total, universe);
}

std::size_t distinct_labels(const Dataset& ds, const std::vector<std::size_t>& idx) {
    std::set<std::size_t> s;
    for (std::size_t i : idx) s.insert(ds.labels[i]);
    return s.size();
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("plora_test_" + name); }

}  // namespace

TEST(Synth, SameSeedIdentical) {
    const Dataset a = synth_generate(5, 4, 100, 3);
    const Dataset b = synth_generate(5, 4, 100, 3);
    EXPECT_EQ(a.features, b.features);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_EQ(a.content_hash(), b.content_hash());
    EXPECT_NE(a.content_hash(), synth_generate(5, 4, 100, 4).content_hash());
}

TEST(Synth, DefaultsTwentyClasses) {
    const SynthOptions o;
    EXPECT_EQ(o.num_classes, 20u);
    const Dataset d = synth_generate(o);
    EXPECT_EQ(d.num_classes, 20u);
    const auto h = label_histogram(d, [&] {
        std::vector<std::size_t> idx(d.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        return idx;
    }());
    for (std::size_t c : h) EXPECT_EQ(c, o.samples / 20);
}

TEST(Synth, TwoWellSeparatedClassesAreLinearlySeparable) {
    SynthOptions o;
    o.num_classes = 2;
    o.dims = 8;
    o.samples = 400;
    o.separation = 4.0;
    o.seed = 5;
    const Dataset d = synth_generate(o);
    ModelParams lin;
    lin.input_dim = 8;
    lin.num_classes = 2;
    Matrix w(2, 8, 0.0);
    lin.layers.push_back({w, {0, 0}, LayerRole::classification, Activation::none});
    for (int epoch = 0; epoch < 50; ++epoch) {
        const auto fr = forward(lin, d.features);
        lin = apply(lin, backward(lin, fr.cache, d.labels).grads, -0.5);
    }
    EXPECT_GT(accuracy(lin, d), 0.95);
}

TEST(Synth, MeanSeedSharesGeometry) {
    SynthOptions a;
    a.num_classes = 3;
    a.dims = 2;
    a.samples = 30;
    a.noise = 0.0;
    a.mean_seed = 9;
    a.seed = 1;
    SynthOptions b = a;
    b.seed = 2;
    EXPECT_EQ(synth_generate(a).features, synth_generate(b).features);
    b.mean_shift = 0.5;
    EXPECT_NE(synth_generate(a).features, synth_generate(b).features);
}

TEST(Csv, RoundTripAndErrors) {
    const Dataset d = synth_generate(3, 4, 30, 8);
    const fs::path p = temp_path("rt.csv");
    save_csv(d, p);
    const Dataset back = load_csv(p);
    EXPECT_EQ(back.features, d.features);
    EXPECT_EQ(back.labels, d.labels);
    EXPECT_EQ(back.num_classes, d.num_classes);

    std::ofstream(temp_path("bad.csv")) << "f0,f1,label\n1,2,0\n1,x,1\n";
    EXPECT_THROW(load_csv(temp_path("bad.csv")), DataError);
    std::ofstream(temp_path("ragged.csv")) << "f0,f1,label\n1,2,0\n1,1\n";
    EXPECT_THROW(load_csv(temp_path("ragged.csv")), DataError);
    EXPECT_THROW(load_csv(temp_path("missing.csv")), DataError);
    fs::remove(p);
}

TEST(Split, SixtyForty) {
    const Dataset d = synth_generate(5, 3, 100, 1);
    const TrainTest tt = split_train_test(d, 0.6, 2);
    EXPECT_EQ(tt.train.size(), 60u);
    EXPECT_EQ(tt.test.size(), 40u);
    std::vector<std::size_t> all = tt.train_indices;
    all.insert(all.end(), tt.test_indices.begin(), tt.test_indices.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(all[i], i);
}

TEST(Split, MinimalTwoSamples) {
    Dataset d;
    d.features = Matrix::from_rows({{0.0}, {1.0}});
    d.labels = {0, 0};
    d.num_classes = 1;
    const TrainTest tt = split_train_test(d, 0.5, 1);
    EXPECT_EQ(tt.train.size(), 1u);
    EXPECT_EQ(tt.test.size(), 1u);
}

TEST(Split, EveryClassOnBothSides) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const Dataset d = synth_generate(20, 2, 200, seed);
        const TrainTest tt = split_train_test(d, 0.8, seed);
        EXPECT_EQ(distinct_labels(tt.train, [&] {
                      std::vector<std::size_t> v(tt.train.size());
                      for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
                      return v;
                  }()),
                  20u);
        EXPECT_EQ(distinct_labels(tt.test, [&] {
                      std::vector<std::size_t> v(tt.test.size());
                      for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
                      return v;
                  }()),
                  20u);
    }
}

TEST(Split, BadFraction) {
    const Dataset d = synth_generate(2, 2, 10, 1);
    EXPECT_THROW(split_train_test(d, 1.0, 1), ConfigError);
    EXPECT_THROW(split_train_test(d, 0.01, 1), ConfigError);
}

TEST(Dirichlet, SingleClientGetsEverything) {
    const Dataset d = synth_generate(4, 2, 80, 1);
    const Partition p = partition_dirichlet(d, 1, 0.1, 3);
    ASSERT_EQ(p.clients.size(), 1u);
    EXPECT_EQ(p.clients[0].size(), 80u);
}

TEST(Dirichlet, HugeAlphaMatchesGlobalHistogram) {
    const Dataset d = synth_generate(20, 2, 4000, 1);
    const double global = 1.0 / 20.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const Partition p = partition_dirichlet(d, 5, 1e6, seed);
        expect_exact_partition(p, d.size());
        for (const auto& c : p.clients) {
            const auto h = label_histogram(d, c);
            double tv = 0.0;
            for (std::size_t k : h) tv += std::abs(static_cast<double>(k) / static_cast<double>(c.size()) - global);
            EXPECT_LE(0.5 * tv, 0.05);
        }
    }
}

TEST(Dirichlet, SmallAlphaLowersEntropy) {
    const Dataset d = synth_generate(20, 2, 2400, 1);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const double e01 = mean_label_entropy(d, partition_dirichlet(d, 50, 0.1, seed));
        const double e100 = mean_label_entropy(d, partition_dirichlet(d, 50, 100.0, seed));
        EXPECT_LT(e01, e100);
    }
}

TEST(Dirichlet, RepairsEmptyClientsAndIsDeterministic) {
    const Dataset d = synth_generate(20, 2, 400, 1);
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const Partition p = partition_dirichlet(d, 100, 0.01, seed);
        expect_exact_partition(p, d.size());
        EXPECT_EQ(p.clients, partition_dirichlet(d, 100, 0.01, seed).clients);
    }
    EXPECT_THROW(partition_dirichlet(d, 10, 0.0, 1), ConfigError);
    EXPECT_THROW(partition_dirichlet(d, 401, 1.0, 1), ConfigError);
}

TEST(Pathological, TwoShardsAtMostThreeLabels) {
    const Dataset d = synth_generate(20, 2, 2400, 1);
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const Partition p = partition_pathological(d, 100, 2, seed);
        expect_exact_partition(p, d.size());
        for (const auto& c : p.clients) EXPECT_LE(distinct_labels(d, c), 3u);
    }
}

TEST(Pathological, ManyShardsApproachIid) {
    const Dataset d = synth_generate(20, 2, 2000, 1);
    const double iid = mean_label_entropy(d, partition_iid(d, 10, 1));
    const double many = mean_label_entropy(d, partition_pathological(d, 10, 100, 1));
    const double two = mean_label_entropy(d, partition_pathological(d, 10, 2, 1));
    EXPECT_GT(many, two);
    EXPECT_NEAR(many, iid, 0.1);
}

TEST(Pathological, TooManyShards) {
    const Dataset d = synth_generate(2, 2, 10, 1);
    EXPECT_THROW(partition_pathological(d, 5, 3, 1), ConfigError);
}

TEST(Heterogeneity, EntropyMonotoneAcrossSettings) {
    const Dataset d = synth_generate(20, 2, 2400, 3);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const double a1000 = mean_label_entropy(d, partition_dirichlet(d, 50, 1000.0, seed));
        const double a1 = mean_label_entropy(d, partition_dirichlet(d, 50, 1.0, seed));
        const double a01 = mean_label_entropy(d, partition_dirichlet(d, 50, 0.1, seed));
        const double path = mean_label_entropy(d, partition_pathological(d, 50, 2, seed));
        EXPECT_GE(a1000, a1);
        EXPECT_GE(a1, a01);
        EXPECT_LT(path, a01);
    }
}

TEST(Iid, ExactPartition) {
    const Dataset d = synth_generate(3, 2, 101, 1);
    const Partition p = partition_iid(d, 7, 2);
    expect_exact_partition(p, 101);
    for (const auto& c : p.clients) EXPECT_GE(c.size(), 14u);
}

TEST(PartitionJson, ListsEveryClient) {
    const Dataset d = synth_generate(3, 2, 30, 1);
    const Partition p = partition_dirichlet(d, 4, 0.5, 2);
    const auto j = nlohmann::json::parse(p.to_json());
    EXPECT_EQ(j.at("heterogeneity").at("kind"), "dirichlet");
    EXPECT_EQ(j.at("clients").size(), 4u);
}

TEST(PartitionValidate, DetectsOverlapAndEmpty) {
    Partition p;
    p.clients = {{0, 1}, {1, 2}};
    EXPECT_THROW(p.validate(3), PartitionError);
    p.clients = {{0, 1}, {}};
    EXPECT_THROW(p.validate(3), PartitionError);
    p.clients = {{0, 5}};
    EXPECT_THROW(p.validate(3), PartitionError);
}
