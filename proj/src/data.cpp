#include "plora/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "plora/errors.hpp"
#include "plora/rng.hpp"

namespace plora {

void Dataset::validate() const {
    if (features.rows() != labels.size()) {
        throw DataError("dataset has " + std::to_string(features.rows()) + " feature rows but " +
                        std::to_string(labels.size()) + " labels");
    }
    for (std::size_t y : labels) {
        if (y >= num_classes) throw DataError("label " + std::to_string(y) + " out of range");
    }
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
    Dataset out;
    out.num_classes = num_classes;
    out.features = Matrix(indices.size(), dims());
    out.labels.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::size_t src = indices[i];
        if (src >= size()) throw DataError("subset index out of range");
        std::copy_n(features.row(src).begin(), dims(), out.features.row(i).begin());
        out.labels.push_back(labels[src]);
    }
    return out;
}

std::uint64_t Dataset::content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ull;
        }
    };
    const std::uint64_t dims_v = dims(), n = size(), c = num_classes;
    mix(&dims_v, sizeof dims_v);
    mix(&n, sizeof n);
    mix(&c, sizeof c);
    mix(features.data().data(), features.size() * sizeof(double));
    for (std::size_t y : labels) {
        const std::uint64_t v = y;
        mix(&v, sizeof v);
    }
    return h;
}

Dataset synth_generate(const SynthOptions& opts) {
    if (opts.num_classes < 1 || opts.dims < 1) {
        throw ConfigError("synthetic dataset needs >= 1 class and >= 1 dim", "data.classes");
    }
    if (opts.samples < opts.num_classes) {
        throw ConfigError("samples must be >= num_classes", "data.samples");
    }
    if (!(opts.noise >= 0.0) || !(opts.separation >= 0.0)) {
        throw ConfigError("noise and separation must be nonnegative", "data.noise");
    }
    std::normal_distribution<double> gauss(0.0, 1.0);

    Rng mean_rng(derive_seed(opts.mean_seed != 0 ? opts.mean_seed : opts.seed, {stream::kData, 0}));
    Matrix means(opts.num_classes, opts.dims);
    for (double& v : means.data()) v = opts.separation * gauss(mean_rng);

    Rng rng(derive_seed(opts.seed, {stream::kData, 1}));
    if (opts.mean_shift != 0.0) {
        for (double& v : means.data()) v += opts.mean_shift * gauss(rng);
    }

    Dataset ds;
    ds.num_classes = opts.num_classes;
    ds.features = Matrix(opts.samples, opts.dims);
    ds.labels.resize(opts.samples);
    for (std::size_t i = 0; i < opts.samples; ++i) {
        // Round-robin labels guarantee every class is present.
        const std::size_t y = i % opts.num_classes;
        ds.labels[i] = y;
        auto row = ds.features.row(i);
        for (std::size_t j = 0; j < opts.dims; ++j) row[j] = means(y, j) + opts.noise * gauss(rng);
    }
    return ds;
}

Dataset synth_generate(std::size_t num_classes, std::size_t dims, std::size_t samples,
                       std::uint64_t seed) {
    SynthOptions o;
    o.num_classes = num_classes;
    o.dims = dims;
    o.samples = samples;
    o.seed = seed;
    return synth_generate(o);
}

Dataset load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty dataset file " + path.string());
    std::size_t columns = std::count(line.begin(), line.end(), ',') + 1;
    if (columns < 2) throw DataError("dataset header needs at least one feature and a label");
    const std::size_t dims = columns - 1;
    std::vector<double> values;
    std::vector<std::size_t> labels;
    std::size_t max_label = 0;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t col = 0;
        while (std::getline(ss, cell, ',')) {
            try {
                if (col < dims) {
                    values.push_back(std::stod(cell));
                } else if (col == dims) {
                    const long long y = std::stoll(cell);
                    if (y < 0) throw DataError("negative label");
                    labels.push_back(static_cast<std::size_t>(y));
                    max_label = std::max(max_label, labels.back());
                }
            } catch (const std::logic_error&) {
                throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad value '" +
                                cell + "'");
            }
            ++col;
        }
        if (col != columns) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(columns) + " columns");
        }
    }
    if (labels.empty()) throw DataError("dataset " + path.string() + " has no rows");
    Dataset ds;
    ds.features = Matrix(labels.size(), dims, std::move(values));
    ds.labels = std::move(labels);
    ds.num_classes = max_label + 1;
    if (!linalg::all_finite(ds.features.data())) throw DataError("non-finite feature value");
    return ds;
}

void save_csv(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    for (std::size_t j = 0; j < ds.dims(); ++j) out << 'f' << j << ',';
    out << "label\n";
    char buf[32];
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (double v : ds.features.row(i)) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << buf << ',';
        }
        out << ds.labels[i] << '\n';
    }
}

TrainTest split_train_test(const Dataset& ds, double train_fraction, std::uint64_t seed) {
    ds.validate();
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("train fraction must lie in (0, 1)", "data.train_fraction");
    }
    const std::size_t n = ds.size();
    const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * n + 0.5));
    if (n_train == 0 || n_train == n) {
        throw ConfigError("train fraction leaves one split empty", "data.train_fraction");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, {stream::kSplit}));
    std::shuffle(order.begin(), order.end(), rng);

    // Keep every class with >= 2 samples present on both sides.
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
        std::vector<std::size_t> train_pos, test_pos;
        for (std::size_t i = 0; i < n; ++i) {
            if (ds.labels[order[i]] != c) continue;
            (i < n_train ? train_pos : test_pos).push_back(i);
        }
        if (train_pos.size() + test_pos.size() < 2) continue;
        auto donor_for = [&](bool want_train) -> std::size_t {
            // A position on the opposite side whose class can spare a sample.
            const std::size_t lo = want_train ? 0 : n_train;
            const std::size_t hi = want_train ? n_train : n;
            for (std::size_t i = lo; i < hi; ++i) {
                const std::size_t y = ds.labels[order[i]];
                if (y == c) continue;
                std::size_t same_side = 0;
                for (std::size_t k = lo; k < hi; ++k) same_side += ds.labels[order[k]] == y;
                if (same_side >= 2) return i;
            }
            throw DataError("cannot keep class " + std::to_string(c) + " on both splits");
        };
        if (train_pos.empty()) std::swap(order[test_pos.front()], order[donor_for(true)]);
        else if (test_pos.empty()) std::swap(order[train_pos.front()], order[donor_for(false)]);
    }

    TrainTest tt;
    tt.train_indices.assign(order.begin(), order.begin() + n_train);
    tt.test_indices.assign(order.begin() + n_train, order.end());
    tt.train = ds.subset(tt.train_indices);
    tt.test = ds.subset(tt.test_indices);
    return tt;
}

void Partition::validate(std::size_t universe) const {
    std::vector<char> seen(universe, 0);
    for (std::size_t c = 0; c < clients.size(); ++c) {
        if (clients[c].empty()) throw PartitionError("client " + std::to_string(c) + " is empty");
        for (std::size_t i : clients[c]) {
            if (i >= universe) throw PartitionError("index out of range in client " + std::to_string(c));
            if (seen[i]) throw PartitionError("index " + std::to_string(i) + " assigned twice");
            seen[i] = 1;
        }
    }
}

std::string Partition::to_json() const {
    nlohmann::ordered_json j;
    switch (heterogeneity.kind) {
        case HeterogeneityKind::iid: j["heterogeneity"] = {{"kind", "iid"}}; break;
        case HeterogeneityKind::dirichlet:
            j["heterogeneity"] = {{"kind", "dirichlet"}, {"alpha", heterogeneity.alpha}};
            break;
        case HeterogeneityKind::pathological:
            j["heterogeneity"] = {{"kind", "pathological"},
                                  {"shards_per_client", heterogeneity.shards_per_client}};
            break;
    }
    nlohmann::ordered_json cl = nlohmann::ordered_json::object();
    for (std::size_t c = 0; c < clients.size(); ++c) cl[std::to_string(c)] = clients[c];
    j["clients"] = std::move(cl);
    return j.dump(1);
}

namespace {

void require_clients(std::size_t n_clients, std::size_t n_samples) {
    if (n_clients < 1) throw ConfigError("need at least one client", "federation.clients");
    if (n_samples < n_clients) {
        throw ConfigError("fewer training samples than clients", "federation.clients");
    }
}

void finalize(Partition& p) {
    for (auto& c : p.clients) std::sort(c.begin(), c.end());
}

// Moves one sample from the currently largest client into each empty one.
void repair_empty(Partition& p) {
    for (auto& c : p.clients) {
        if (!c.empty()) continue;
        auto largest = std::max_element(
            p.clients.begin(), p.clients.end(),
            [](const auto& a, const auto& b) { return a.size() < b.size(); });
        c.push_back(largest->back());
        largest->pop_back();
    }
}

}  // namespace

Partition partition_iid(const Dataset& train, std::size_t n_clients, std::uint64_t seed) {
    require_clients(n_clients, train.size());
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, {stream::kPartition}));
    std::shuffle(order.begin(), order.end(), rng);
    Partition p;
    p.heterogeneity = {HeterogeneityKind::iid, 0.0, 0};
    p.clients.resize(n_clients);
    for (std::size_t i = 0; i < order.size(); ++i) p.clients[i % n_clients].push_back(order[i]);
    finalize(p);
    return p;
}

Partition partition_dirichlet(const Dataset& train, std::size_t n_clients, double alpha,
                              std::uint64_t seed) {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
        throw ConfigError("dirichlet alpha must be > 0", "partition.alpha");
    }
    require_clients(n_clients, train.size());
    Rng rng(derive_seed(seed, {stream::kPartition}));
    std::gamma_distribution<double> gamma(alpha, 1.0);

    Partition p;
    p.heterogeneity = {HeterogeneityKind::dirichlet, alpha, 0};
    p.clients.resize(n_clients);
    for (std::size_t c = 0; c < train.num_classes; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < train.size(); ++i)
            if (train.labels[i] == c) members.push_back(i);
        std::shuffle(members.begin(), members.end(), rng);

        std::vector<double> props(n_clients);
        double total = 0.0;
        for (double& v : props) total += (v = gamma(rng));
        if (total <= 0.0) {
            // Every draw underflowed; the limit of tiny alpha is a single owner.
            std::fill(props.begin(), props.end(), 0.0);
            props[std::uniform_int_distribution<std::size_t>(0, n_clients - 1)(rng)] = 1.0;
            total = 1.0;
        }

        // Largest-remainder apportionment of the class across clients.
        const std::size_t n_c = members.size();
        std::vector<std::size_t> counts(n_clients);
        std::vector<std::pair<double, std::size_t>> remainders;
        std::size_t assigned = 0;
        for (std::size_t k = 0; k < n_clients; ++k) {
            const double share = props[k] / total * static_cast<double>(n_c);
            counts[k] = static_cast<std::size_t>(std::floor(share));
            assigned += counts[k];
            remainders.emplace_back(share - std::floor(share), k);
        }
        std::stable_sort(remainders.begin(), remainders.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        for (std::size_t k = 0; assigned < n_c; ++k, ++assigned) ++counts[remainders[k].second];

        std::size_t pos = 0;
        for (std::size_t k = 0; k < n_clients; ++k)
            for (std::size_t t = 0; t < counts[k]; ++t) p.clients[k].push_back(members[pos++]);
    }
    for (auto& c : p.clients) std::sort(c.begin(), c.end());
    repair_empty(p);
    finalize(p);
    return p;
}

Partition partition_pathological(const Dataset& train, std::size_t n_clients,
                                 std::size_t shards_per_client, std::uint64_t seed) {
    if (shards_per_client < 1) {
        throw ConfigError("shards_per_client must be >= 1", "partition.shards_per_client");
    }
    require_clients(n_clients, train.size());
    const std::size_t n_shards = n_clients * shards_per_client;
    if (train.size() < n_shards) {
        throw ConfigError("too few samples for " + std::to_string(n_shards) + " shards",
                          "partition.shards_per_client");
    }
    Rng rng(derive_seed(seed, {stream::kPartition}));
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return train.labels[a] < train.labels[b]; });

    std::vector<std::size_t> shard_ids(n_shards);
    std::iota(shard_ids.begin(), shard_ids.end(), 0);
    std::shuffle(shard_ids.begin(), shard_ids.end(), rng);

    const std::size_t n = train.size();
    Partition p;
    p.heterogeneity = {HeterogeneityKind::pathological, 0.0, shards_per_client};
    p.clients.resize(n_clients);
    for (std::size_t k = 0; k < n_clients; ++k) {
        for (std::size_t s = 0; s < shards_per_client; ++s) {
            const std::size_t shard = shard_ids[k * shards_per_client + s];
            const std::size_t lo = shard * n / n_shards;
            const std::size_t hi = (shard + 1) * n / n_shards;
            p.clients[k].insert(p.clients[k].end(), order.begin() + lo, order.begin() + hi);
        }
    }
    finalize(p);
    return p;
}

std::vector<std::size_t> label_histogram(const Dataset& ds, const std::vector<std::size_t>& idx) {
    std::vector<std::size_t> h(ds.num_classes, 0);
    for (std::size_t i : idx) ++h[ds.labels[i]];
    return h;
}

double mean_label_entropy(const Dataset& ds, const Partition& p) {
    if (p.clients.empty()) return 0.0;
    double total = 0.0;
    for (const auto& c : p.clients) {
        const auto h = label_histogram(ds, c);
        double e = 0.0;
        for (std::size_t v : h) {
            if (v == 0) continue;
            const double q = static_cast<double>(v) / static_cast<double>(c.size());
            e -= q * std::log(q);
        }
        total += e;
    }
    return total / static_cast<double>(p.clients.size());
}

}  // namespace plora
