#include "plora/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "plora/data.hpp"
#include "plora/errors.hpp"
#include "plora/rng.hpp"

namespace plora {

std::string to_string(LayerRole role) {
    switch (role) {
        case LayerRole::embedding: return "embedding";
        case LayerRole::hidden: return "hidden";
        case LayerRole::pre_classification: return "pre_classification";
        case LayerRole::classification: return "classification";
    }
    return "?";
}

std::string to_string(Activation act) { return act == Activation::relu ? "relu" : "none"; }

LayerRole parse_layer_role(const std::string& s) {
    if (s == "embedding") return LayerRole::embedding;
    if (s == "hidden") return LayerRole::hidden;
    if (s == "pre_classification") return LayerRole::pre_classification;
    if (s == "classification") return LayerRole::classification;
    throw ConfigError("unknown layer role '" + s + "'");
}

Activation parse_activation(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "none") return Activation::none;
    throw ConfigError("unknown activation '" + s + "'");
}

void ModelParams::validate() const {
    if (layers.empty()) throw ShapeError("model has no layers");
    std::size_t in = input_dim;
    std::size_t pre = 0, cls = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.weight.cols() != in) {
            throw ShapeError("layer " + std::to_string(i) + " expects input " +
                             std::to_string(l.weight.cols()) + ", got " + std::to_string(in));
        }
        if (l.bias.size() != l.weight.rows()) {
            throw ShapeError("layer " + std::to_string(i) + " bias length mismatch");
        }
        pre += l.role == LayerRole::pre_classification;
        cls += l.role == LayerRole::classification;
        in = l.weight.rows();
    }
    if (pre != 1 || cls != 1) {
        throw ShapeError("model needs exactly one pre_classification and one classification layer");
    }
    if (layers.back().role != LayerRole::classification) {
        throw ShapeError("classification layer must be last");
    }
    if (layers.back().weight.rows() != num_classes) {
        throw ShapeError("classification layer rows != num_classes");
    }
}

std::size_t ModelParams::total_params() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.param_count();
    return n;
}

ParamDelta ParamDelta::zeros_like(const ModelParams& model) {
    ParamDelta d;
    for (const auto& l : model.layers) {
        d.weights.emplace_back(l.weight.rows(), l.weight.cols());
        d.biases.emplace_back(l.bias.size(), 0.0);
    }
    return d;
}

ModelConfig ModelConfig::toy(std::size_t input_dim, std::size_t width, std::size_t pre_cls_width,
                             std::size_t num_classes) {
    ModelConfig c;
    c.input_dim = input_dim;
    c.layers = {
        {width, LayerRole::embedding, Activation::relu},
        {width, LayerRole::hidden, Activation::relu},
        {width, LayerRole::hidden, Activation::relu},
        {pre_cls_width, LayerRole::pre_classification, Activation::relu},
        {num_classes, LayerRole::classification, Activation::none},
    };
    return c;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
    ModelParams m;
    m.input_dim = config.input_dim;
    m.num_classes = config.num_classes();
    Rng rng(derive_seed(seed, {stream::kInit}));
    std::size_t in = config.input_dim;
    for (const auto& spec : config.layers) {
        DenseLayer l;
        l.weight = Matrix(spec.out_dim, in);
        l.bias.assign(spec.out_dim, 0.0);
        l.role = spec.role;
        l.activation = spec.activation;
        const double limit = std::sqrt(6.0 / static_cast<double>(in + spec.out_dim));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (double& w : l.weight.data()) w = dist(rng);
        m.layers.push_back(std::move(l));
        in = spec.out_dim;
    }
    m.validate();
    return m;
}

namespace nn {

Matrix affine(const Matrix& x, const Matrix& weight, const std::vector<double>& bias) {
    Matrix z = linalg::matmul_nt(x, weight);
    for (std::size_t i = 0; i < z.rows(); ++i) {
        auto row = z.row(i);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[j];
    }
    return z;
}

Matrix activate(const Matrix& z, Activation act) {
    if (act == Activation::none) return z;
    Matrix h = z;
    for (double& v : h.data()) v = v > 0.0 ? v : 0.0;
    return h;
}

void activation_backward(Matrix& grad, const Matrix& z, Activation act) {
    if (act == Activation::none) return;
    auto g = grad.data();
    auto zv = z.data();
    for (std::size_t i = 0; i < g.size(); ++i)
        if (!(zv[i] > 0.0)) g[i] = 0.0;
}

std::vector<double> column_sums(const Matrix& m) {
    std::vector<double> s(m.cols(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        auto row = m.row(i);
        for (std::size_t j = 0; j < row.size(); ++j) s[j] += row[j];
    }
    return s;
}

SoftmaxLoss softmax_cross_entropy(const Matrix& logits, const std::vector<std::size_t>& labels) {
    if (labels.size() != logits.rows()) throw ShapeError("label count != batch rows");
    const std::size_t n = logits.rows(), c = logits.cols();
    SoftmaxLoss out;
    out.dlogits = Matrix(n, c);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] >= c) {
            throw DataError("label " + std::to_string(labels[i]) + " out of range [0, " +
                            std::to_string(c) + ")");
        }
        auto row = logits.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double v : row) z += std::exp(v - mx);
        const double log_z = std::log(z) + mx;
        out.loss += (log_z - row[labels[i]]) * inv_n;
        auto g = out.dlogits.row(i);
        for (std::size_t j = 0; j < c; ++j) g[j] = std::exp(row[j] - log_z) * inv_n;
        g[labels[i]] -= inv_n;
    }
    return out;
}

}  // namespace nn

ForwardResult forward(const ModelParams& model, const Matrix& batch) {
    if (batch.cols() != model.input_dim) {
        throw ShapeError("batch has " + std::to_string(batch.cols()) + " features, model expects " +
                         std::to_string(model.input_dim));
    }
    ForwardResult r;
    Matrix x = batch;
    for (const auto& layer : model.layers) {
        Matrix z = nn::affine(x, layer.weight, layer.bias);
        Matrix h = nn::activate(z, layer.activation);
        r.cache.inputs.push_back(std::move(x));
        r.cache.preact.push_back(std::move(z));
        x = std::move(h);
    }
    r.logits = std::move(x);
    return r;
}

LossAndGrads backward(const ModelParams& model, const ForwardCache& cache,
                      const std::vector<std::size_t>& labels) {
    const std::size_t depth = model.layers.size();
    if (cache.inputs.size() != depth || cache.preact.size() != depth) {
        throw ShapeError("forward cache does not match model depth");
    }
    const Matrix logits = nn::activate(cache.preact.back(), model.layers.back().activation);
    nn::SoftmaxLoss sl = nn::softmax_cross_entropy(logits, labels);

    LossAndGrads out;
    out.loss = sl.loss;
    out.grads = ParamDelta::zeros_like(model);
    Matrix grad = std::move(sl.dlogits);
    for (std::size_t li = depth; li-- > 0;) {
        const auto& layer = model.layers[li];
        nn::activation_backward(grad, cache.preact[li], layer.activation);
        out.grads.weights[li] = linalg::matmul_tn(grad, cache.inputs[li]);
        out.grads.biases[li] = nn::column_sums(grad);
        if (li > 0) grad = linalg::matmul(grad, layer.weight);
    }
    return out;
}

ParamDelta delta(const ModelParams& current, const ModelParams& origin) {
    if (current.layers.size() != origin.layers.size()) throw ShapeError("delta: depth mismatch");
    ParamDelta d;
    for (std::size_t i = 0; i < current.layers.size(); ++i) {
        const auto& c = current.layers[i];
        const auto& o = origin.layers[i];
        if (c.bias.size() != o.bias.size()) throw ShapeError("delta: bias mismatch");
        d.weights.push_back(linalg::sub(c.weight, o.weight));
        std::vector<double> b(c.bias.size());
        for (std::size_t j = 0; j < b.size(); ++j) b[j] = c.bias[j] - o.bias[j];
        d.biases.push_back(std::move(b));
    }
    return d;
}

ModelParams apply(const ModelParams& model, const ParamDelta& d, double scale) {
    if (d.weights.size() != model.layers.size() || d.biases.size() != model.layers.size()) {
        throw ShapeError("apply: depth mismatch");
    }
    ModelParams out = model;
    for (std::size_t i = 0; i < out.layers.size(); ++i) {
        auto& l = out.layers[i];
        if (d.biases[i].size() != l.bias.size()) throw ShapeError("apply: bias mismatch");
        linalg::axpy(l.weight, d.weights[i], scale);
        for (std::size_t j = 0; j < l.bias.size(); ++j) l.bias[j] += scale * d.biases[i][j];
    }
    return out;
}

double accuracy(const Matrix& logits, const std::vector<std::size_t>& labels) {
    if (labels.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto row = logits.row(i);
        const auto best = static_cast<std::size_t>(
            std::distance(row.begin(), std::max_element(row.begin(), row.end())));
        hits += best == labels[i];
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double accuracy(const ModelParams& model, const Dataset& data) {
    return accuracy(forward(model, data.features).logits, data.labels);
}

ModelParams pretrain(const ModelConfig& config, const Dataset& source, std::size_t epochs,
                     double lr, std::uint64_t seed, std::size_t batch_size) {
    ModelParams model = init_params(config, seed);
    if (epochs == 0) return model;
    source.validate();
    if (batch_size == 0) throw ConfigError("batch size must be >= 1", "batch_size");
    Rng rng(derive_seed(seed, {stream::kShuffle}));
    std::vector<std::size_t> order(source.size());
    for (std::size_t e = 0; e < epochs; ++e) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t end = std::min(order.size(), start + batch_size);
            std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
            const Dataset batch = source.subset(idx);
            ForwardResult fr = forward(model, batch.features);
            LossAndGrads lg = backward(model, fr.cache, batch.labels);
            model = apply(model, lg.grads, -lr);
        }
    }
    return model;
}

}  // namespace plora
