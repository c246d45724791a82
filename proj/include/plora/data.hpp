#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "plora/linalg.hpp"

namespace plora {

struct Dataset {
    Matrix features;  // samples × dims
    std::vector<std::size_t> labels;
    std::size_t num_classes = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t dims() const { return features.cols(); }
    /// Throws DataError on label/feature count mismatch or out-of-range labels.
    void validate() const;
    Dataset subset(const std::vector<std::size_t>& indices) const;
    /// FNV-1a over the raw feature bytes, labels and class count.
    std::uint64_t content_hash() const;
};

/// Gaussian class clusters. Class means are drawn from `mean_seed` (or `seed`
/// when mean_seed is 0) and optionally perturbed by `mean_shift` using
/// `seed`, so two tasks can share structure while differing in geometry.
struct SynthOptions {
    std::size_t num_classes = 20;
    std::size_t dims = 32;
    std::size_t samples = 4000;
    double separation = 1.0;  // stddev of class-mean coordinates
    double noise = 1.0;       // stddev of within-class noise
    std::uint64_t seed = 1;
    std::uint64_t mean_seed = 0;
    double mean_shift = 0.0;
    bool operator==(const SynthOptions&) const = default;
};

Dataset synth_generate(const SynthOptions& opts);
Dataset synth_generate(std::size_t num_classes, std::size_t dims, std::size_t samples,
                       std::uint64_t seed);

/// CSV with header `f0,...,fD,label`.
Dataset load_csv(const std::filesystem::path& path);
void save_csv(const Dataset& ds, const std::filesystem::path& path);

struct TrainTest {
    Dataset train;
    Dataset test;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> test_indices;
};

/// Seeded shuffle, then the first round(fraction·n) samples train. Any class
/// with ≥ 2 samples that lands entirely on one side is repaired by swapping
/// one sample across, so totals stay exact.
TrainTest split_train_test(const Dataset& ds, double train_fraction, std::uint64_t seed);

enum class HeterogeneityKind { iid, dirichlet, pathological };

struct Heterogeneity {
    HeterogeneityKind kind = HeterogeneityKind::iid;
    double alpha = 0.0;
    std::size_t shards_per_client = 0;
};

struct Partition {
    std::vector<std::vector<std::size_t>> clients;  // sorted indices per client
    Heterogeneity heterogeneity;

    std::size_t num_clients() const { return clients.size(); }
    /// Disjoint, nonempty per client, union ⊆ [0, universe).
    void validate(std::size_t universe) const;
    std::string to_json() const;
};

Partition partition_iid(const Dataset& train, std::size_t n_clients, std::uint64_t seed);
Partition partition_dirichlet(const Dataset& train, std::size_t n_clients, double alpha,
                              std::uint64_t seed);
Partition partition_pathological(const Dataset& train, std::size_t n_clients,
                                 std::size_t shards_per_client, std::uint64_t seed);

std::vector<std::size_t> label_histogram(const Dataset& ds, const std::vector<std::size_t>& idx);
/// Mean over clients of the Shannon entropy (nats) of each client's labels.
double mean_label_entropy(const Dataset& ds, const Partition& p);

}  // namespace plora
