#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace plora {

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

namespace linalg {

/// a · b
Matrix matmul(const Matrix& a, const Matrix& b);
/// a · bᵀ
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// aᵀ · b
Matrix matmul_tn(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scaled(const Matrix& m, double s);
/// dst += s · src
void axpy(Matrix& dst, const Matrix& src, double s);

double frobenius_norm(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);
bool all_finite(std::span<const double> values);

/// Multiply-add FLOPs (2·m·n·k per product) executed by the matmul kernels on
/// the calling thread since the last reset.
std::uint64_t flop_count();
void reset_flop_count();

struct SvdResult {
    Matrix u;                   // m × m
    std::vector<double> sigma;  // min(m, n) values, descending
    Matrix v;                   // n × n
};

/// Full SVD by one-sided Jacobi with a fixed cyclic sweep order.
///
/// Columns are sorted by descending singular value (ties keep their original
/// column order) and each left singular vector is signed so that its
/// largest-magnitude entry is nonnegative. Left vectors belonging to
/// numerically zero singular values, and the m − n trailing columns of U,
/// are completed deterministically from the standard basis.
SvdResult svd(const Matrix& m);

struct LowRankFactors {
    Matrix b;  // rows × r
    Matrix a;  // r × cols
};

/// Rank-r truncation: b = U[:, :r]·diag(σ[:r]), a = V[:, :r]ᵀ.
LowRankFactors truncated_factors(const Matrix& m, std::size_t r);

}  // namespace linalg
}  // namespace plora
