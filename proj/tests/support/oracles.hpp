#pragma once

#include <cstdint>
#include <vector>

#include "plora/data.hpp"
#include "plora/linalg.hpp"
#include "plora/model.hpp"
#include "plora/peft.hpp"

namespace oracle {

using plora::Matrix;

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0);
/// Random matrix of the given rank (product of two Gaussian factors).
Matrix random_rank_matrix(std::size_t rows, std::size_t cols, std::size_t rank, std::uint64_t seed);

Matrix naive_matmul(const Matrix& a, const Matrix& b);

/// Singular values from a self-adjoint eigendecomposition of mᵀm (or m·mᵀ), descending.
std::vector<double> singular_values_eig(const Matrix& m);
/// Singular values from a two-sided Jacobi SVD, descending.
std::vector<double> singular_values_jacobi(const Matrix& m);
/// sqrt of the sum of squared singular values beyond the first r.
double tail_norm(const std::vector<double>& sigma, std::size_t r);

/// Forward pass with scalar loops only.
Matrix scalar_forward(const plora::ModelParams& model, const Matrix& x);
/// Dense reference for an adapted model: LoRA folded as W + (β/r)·B·A, adapters by loops.
Matrix scalar_adapted_forward(const plora::AdaptedModel& model, const Matrix& x);
/// Mean softmax cross-entropy evaluated with log-sum-exp in scalar code.
double scalar_loss(const Matrix& logits, const std::vector<std::size_t>& labels);

/// Central finite-difference gradient of the mean loss for every tensor
/// entry of `model`, flattened in for_each_tensor order.
std::vector<double> fd_gradient(const plora::AdaptedModel& model, const Matrix& x,
                                const std::vector<std::size_t>& labels, double eps);
std::vector<double> flatten(const plora::AdaptedModel& model);

/// Random dense model with the given layer widths (last = classes).
plora::ModelParams random_model(std::size_t input_dim, const std::vector<std::size_t>& widths,
                                std::uint64_t seed, double scale = 0.5);
std::vector<std::size_t> random_labels(std::size_t n, std::size_t classes, std::uint64_t seed);

}  // namespace oracle
