#include "plora/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "plora/errors.hpp"

namespace plora {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) + " != " +
                         std::to_string(rows_) + "x" + std::to_string(cols_));
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
}

namespace linalg {

namespace {

thread_local std::uint64_t g_flops = 0;

std::string dims(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_finite(const Matrix& m, const char* what) {
    if (!all_finite(m.data())) throw NumericError(std::string(what) + ": non-finite result");
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(what) + ": " + dims(a) + " vs " + dims(b));
    }
}

}  // namespace

std::uint64_t flop_count() { return g_flops; }
void reset_flop_count() { g_flops = 0; }

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul: " + dims(a) + " * " + dims(b));
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    Matrix out(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        double* o = out.row(i).data();
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a(i, p);
            const double* br = b.row(p).data();
            for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
        }
    }
    g_flops += 2ull * n * k * m;
    require_finite(out, "matmul");
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw ShapeError("matmul_nt: " + dims(a) + " * " + dims(b) + "^T");
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    Matrix out(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        const double* ar = a.row(i).data();
        for (std::size_t j = 0; j < m; ++j) {
            const double* br = b.row(j).data();
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
            out(i, j) = s;
        }
    }
    g_flops += 2ull * n * k * m;
    require_finite(out, "matmul_nt");
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) throw ShapeError("matmul_tn: " + dims(a) + "^T * " + dims(b));
    const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
    Matrix out(n, m);
    for (std::size_t p = 0; p < k; ++p) {
        const double* ar = a.row(p).data();
        const double* br = b.row(p).data();
        for (std::size_t i = 0; i < n; ++i) {
            const double av = ar[i];
            double* o = out.row(i).data();
            for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
        }
    }
    g_flops += 2ull * n * k * m;
    require_finite(out, "matmul_tn");
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
    return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix out = a;
    axpy(out, b, 1.0);
    return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "sub");
    Matrix out = a;
    auto o = out.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
    return out;
}

Matrix scaled(const Matrix& m, double s) {
    Matrix out = m;
    for (double& x : out.data()) x *= s;
    require_finite(out, "scaled");
    return out;
}

void axpy(Matrix& dst, const Matrix& src, double s) {
    require_same_shape(dst, src, "axpy");
    auto d = dst.data();
    auto v = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * v[i];
}

double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (double x : m.data()) s += x * x;
    return std::sqrt(s);
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "max_abs_diff");
    double worst = 0.0;
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < av.size(); ++i) worst = std::max(worst, std::abs(av[i] - bv[i]));
    return worst;
}

bool all_finite(std::span<const double> values) {
    return std::all_of(values.begin(), values.end(), [](double x) { return std::isfinite(x); });
}

namespace {

using Column = std::vector<double>;

double dot(const Column& x, const Column& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

double norm(const Column& x) { return std::sqrt(dot(x, x)); }

Column residual(const std::vector<Column>& basis, std::size_t e, std::size_t dim) {
    Column v(dim, 0.0);
    v[e] = 1.0;
    for (int pass = 0; pass < 2; ++pass) {
        for (const auto& b : basis) {
            const double proj = dot(b, v);
            for (std::size_t i = 0; i < dim; ++i) v[i] -= proj * b[i];
        }
    }
    return v;
}

// Deterministic orthonormal completion: repeatedly add the standard basis
// vector with the largest residual against the current basis (twice-applied
// modified Gram-Schmidt), lowest index on ties.
void complete_basis(std::vector<Column>& basis, std::size_t dim) {
    while (basis.size() < dim) {
        Column best;
        double best_norm = -1.0;
        for (std::size_t e = 0; e < dim; ++e) {
            Column v = residual(basis, e, dim);
            const double nv = norm(v);
            if (nv > best_norm) {
                best_norm = nv;
                best = std::move(v);
            }
        }
        for (double& x : best) x /= best_norm;
        basis.push_back(std::move(best));
    }
}

// Jacobi on the columns of a tall (rows >= cols) matrix.
linalg::SvdResult jacobi_tall(const Matrix& m) {
    constexpr double kTolerance = 1e-12;
    constexpr int kMaxSweeps = 60;

    const std::size_t rows = m.rows(), cols = m.cols();
    std::vector<Column> g(cols, Column(rows));
    std::vector<Column> v(cols, Column(cols, 0.0));
    for (std::size_t j = 0; j < cols; ++j) {
        for (std::size_t i = 0; i < rows; ++i) g[j][i] = m(i, j);
        v[j][j] = 1.0;
    }

    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        double worst = 0.0;
        for (std::size_t p = 0; p + 1 < cols; ++p) {
            for (std::size_t q = p + 1; q < cols; ++q) {
                const double alpha = dot(g[p], g[p]);
                const double beta = dot(g[q], g[q]);
                const double gamma = dot(g[p], g[q]);
                if (alpha == 0.0 || beta == 0.0 || gamma == 0.0) continue;
                const double ratio = std::abs(gamma) / std::sqrt(alpha * beta);
                worst = std::max(worst, ratio);
                if (ratio < kTolerance) continue;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < rows; ++i) {
                    const double gp = g[p][i], gq = g[q][i];
                    g[p][i] = c * gp - s * gq;
                    g[q][i] = s * gp + c * gq;
                }
                for (std::size_t i = 0; i < cols; ++i) {
                    const double vp = v[p][i], vq = v[q][i];
                    v[p][i] = c * vp - s * vq;
                    v[q][i] = s * vp + c * vq;
                }
            }
        }
        if (worst < kTolerance) break;
    }

    std::vector<double> norms(cols);
    for (std::size_t j = 0; j < cols; ++j) norms[j] = norm(g[j]);
    std::vector<std::size_t> order(cols);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });

    const double top = cols == 0 ? 0.0 : norms[order[0]];
    const double negligible = top * static_cast<double>(std::max(rows, cols)) *
                              std::numeric_limits<double>::epsilon();

    linalg::SvdResult out;
    out.sigma.resize(cols);
    std::vector<Column> ucols;
    std::vector<Column> vcols;
    std::size_t resolved = 0;
    for (std::size_t k = 0; k < cols; ++k) {
        const std::size_t j = order[k];
        out.sigma[k] = norms[j];
        vcols.push_back(v[j]);
        if (norms[j] > negligible && norms[j] > 0.0) {
            Column u = g[j];
            for (double& x : u) x /= norms[j];
            ucols.push_back(std::move(u));
            ++resolved;
        }
    }
    // Singular vectors for (numerically) zero sigma and the trailing columns.
    complete_basis(ucols, rows);

    // Sign convention on U, mirrored onto the matching V column.
    for (std::size_t k = 0; k < rows; ++k) {
        std::size_t arg = 0;
        for (std::size_t i = 1; i < rows; ++i)
            if (std::abs(ucols[k][i]) > std::abs(ucols[k][arg])) arg = i;
        if (ucols[k][arg] < 0.0) {
            for (double& x : ucols[k]) x = -x;
            if (k < cols) {
                if (k < resolved) {
                    for (double& x : vcols[k]) x = -x;
                }
            }
        }
    }

    out.u = Matrix(rows, rows);
    for (std::size_t k = 0; k < rows; ++k)
        for (std::size_t i = 0; i < rows; ++i) out.u(i, k) = ucols[k][i];
    out.v = Matrix(cols, cols);
    for (std::size_t k = 0; k < cols; ++k)
        for (std::size_t i = 0; i < cols; ++i) out.v(i, k) = vcols[k][i];
    return out;
}

}  // namespace

SvdResult svd(const Matrix& m) {
    if (m.empty()) throw ShapeError("svd: empty matrix");
    if (!all_finite(m.data())) throw NumericError("svd: non-finite input");
    if (m.rows() >= m.cols()) return jacobi_tall(m);

    // Wide input: decompose the transpose and swap the roles of U and V.
    SvdResult t = jacobi_tall(transpose(m));
    SvdResult out;
    out.sigma = std::move(t.sigma);
    out.u = std::move(t.v);
    out.v = std::move(t.u);
    const std::size_t rows = m.rows();
    for (std::size_t k = 0; k < rows; ++k) {
        std::size_t arg = 0;
        for (std::size_t i = 1; i < rows; ++i)
            if (std::abs(out.u(i, k)) > std::abs(out.u(arg, k))) arg = i;
        if (out.u(arg, k) < 0.0) {
            for (std::size_t i = 0; i < rows; ++i) out.u(i, k) = -out.u(i, k);
            for (std::size_t i = 0; i < out.v.rows(); ++i) out.v(i, k) = -out.v(i, k);
        }
    }
    return out;
}

LowRankFactors truncated_factors(const Matrix& m, std::size_t r) {
    const std::size_t limit = std::min(m.rows(), m.cols());
    if (r < 1 || r > limit) {
        throw RankError("rank " + std::to_string(r) + " outside [1, " + std::to_string(limit) +
                        "] for " + dims(m));
    }
    const SvdResult s = svd(m);
    LowRankFactors f{Matrix(m.rows(), r), Matrix(r, m.cols())};
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t k = 0; k < r; ++k) f.b(i, k) = s.u(i, k) * s.sigma[k];
    for (std::size_t k = 0; k < r; ++k)
        for (std::size_t j = 0; j < m.cols(); ++j) f.a(k, j) = s.v(j, k);
    return f;
}

}  // namespace linalg
}  // namespace plora
