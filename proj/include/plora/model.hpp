#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "plora/linalg.hpp"

namespace plora {

struct Dataset;

enum class LayerRole { embedding, hidden, pre_classification, classification };
enum class Activation { relu, none };

std::string to_string(LayerRole role);
std::string to_string(Activation act);
LayerRole parse_layer_role(const std::string& s);
Activation parse_activation(const std::string& s);

struct DenseLayer {
    Matrix weight;  // out × in
    std::vector<double> bias;
    LayerRole role = LayerRole::hidden;
    Activation activation = Activation::relu;

    std::size_t in_dim() const { return weight.cols(); }
    std::size_t out_dim() const { return weight.rows(); }
    std::size_t param_count() const { return weight.size() + bias.size(); }
    bool operator==(const DenseLayer&) const = default;
};

/// The frozen-or-trainable base network: an ordered stack of dense layers.
struct ModelParams {
    std::vector<DenseLayer> layers;
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;

    /// Throws ShapeError if dimensions do not compose or the role layout is
    /// not exactly one pre_classification followed by one classification head.
    void validate() const;
    std::size_t total_params() const;
    bool operator==(const ModelParams&) const = default;
};

/// Per-layer differences (or gradients), shape-congruent with a ModelParams.
struct ParamDelta {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;

    static ParamDelta zeros_like(const ModelParams& model);
    bool operator==(const ParamDelta&) const = default;
};

struct LayerSpec {
    std::size_t out_dim = 0;
    LayerRole role = LayerRole::hidden;
    Activation activation = Activation::relu;
};

struct ModelConfig {
    std::size_t input_dim = 0;
    std::vector<LayerSpec> layers;

    /// embedding → 2 hidden relu → pre_classification → classification head.
    static ModelConfig toy(std::size_t input_dim, std::size_t width, std::size_t pre_cls_width,
                           std::size_t num_classes);
    std::size_t num_classes() const { return layers.empty() ? 0 : layers.back().out_dim; }
};

/// Activations recorded by forward() for use by backward().
struct ForwardCache {
    std::vector<Matrix> inputs;  // input to each layer
    std::vector<Matrix> preact;  // pre-activation output of each layer
};

struct ForwardResult {
    Matrix logits;
    ForwardCache cache;
};

struct LossAndGrads {
    double loss = 0.0;
    ParamDelta grads;
};

/// Uniform ±sqrt(6 / (fan_in + fan_out)) weights, zero biases.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

ForwardResult forward(const ModelParams& model, const Matrix& batch);
LossAndGrads backward(const ModelParams& model, const ForwardCache& cache,
                      const std::vector<std::size_t>& labels);

ParamDelta delta(const ModelParams& current, const ModelParams& origin);
ModelParams apply(const ModelParams& model, const ParamDelta& d, double scale);

/// Seeded centralized SGD on a source task; epochs = 0 returns the seeded init.
ModelParams pretrain(const ModelConfig& config, const Dataset& source, std::size_t epochs,
                     double lr, std::uint64_t seed, std::size_t batch_size = 32);

/// Fraction of rows whose argmax logit matches the label.
double accuracy(const Matrix& logits, const std::vector<std::size_t>& labels);
double accuracy(const ModelParams& model, const Dataset& data);

namespace nn {

/// x · Wᵀ + b for a batch x (rows = samples).
Matrix affine(const Matrix& x, const Matrix& weight, const std::vector<double>& bias);
Matrix activate(const Matrix& z, Activation act);
/// grad ⊙ act'(z), in place.
void activation_backward(Matrix& grad, const Matrix& z, Activation act);
std::vector<double> column_sums(const Matrix& m);

struct SoftmaxLoss {
    double loss = 0.0;
    Matrix dlogits;  // gradient of the mean loss
};
SoftmaxLoss softmax_cross_entropy(const Matrix& logits, const std::vector<std::size_t>& labels);

}  // namespace nn

}  // namespace plora
