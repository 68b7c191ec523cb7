#ifndef BOUNDBENCH_LINALG_HPP
#define BOUNDBENCH_LINALG_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace boundbench {

using Vector = std::vector<double>;

class ShapeError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major matrix of doubles.
/// Dot product with four interleaved partial sums, combined in a fixed order.
inline double unrolled_dot(const double* a, const double* b, std::size_t n) {
    double s0 = 0.0;
    double s1 = 0.0;
    double s2 = 0.0;
    double s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) {
        s0 += a[i] * b[i];
    }
    return (s0 + s1) + (s2 + s3);
}

class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw ShapeError("Matrix: data size does not match rows*cols");
        }
    }

    static Matrix diagonal(std::span<const double> diag) {
        Matrix m(diag.size(), diag.size());
        for (std::size_t i = 0; i < diag.size(); ++i) {
            m(i, i) = diag[i];
        }
        return m;
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            m(i, i) = 1.0;
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    std::span<const double> row(std::size_t r) const {
        return std::span<const double>(data_).subspan(r * cols_, cols_);
    }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
        return true;
    }

    /// y = A x
    Vector multiply(std::span<const double> x) const {
        if (x.size() != cols_) {
            throw ShapeError("Matrix::multiply: dimension mismatch");
        }
        Vector y(rows_, 0.0);
        for (std::size_t r = 0; r < rows_; ++r) {
            y[r] = unrolled_dot(data_.data() + r * cols_, x.data(), cols_);
        }
        return y;
    }

    /// y = A^T x
    Vector multiply_transposed(std::span<const double> x) const {
        if (x.size() != rows_) {
            throw ShapeError("Matrix::multiply_transposed: dimension mismatch");
        }
        Vector y(cols_, 0.0);
        for (std::size_t r = 0; r < rows_; ++r) {
            const double* a = data_.data() + r * cols_;
            const double xr = x[r];
            for (std::size_t c = 0; c < cols_; ++c) {
                y[c] += a[c] * xr;
            }
        }
        return y;
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("dot: length mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double frobenius_norm(const Matrix& m) { return norm2(m.data()); }

/// Full parameter tuple: L hidden p x p matrices followed by the 1 x p outer layer.
class WeightStack {
  public:
    WeightStack() = default;

    WeightStack(std::vector<Matrix> hidden, Matrix outer) {
        if (hidden.empty()) {
            throw ShapeError("WeightStack: depth L must be at least 1");
        }
        const std::size_t p = hidden.front().rows();
        if (p == 0) {
            throw ShapeError("WeightStack: width p must be at least 1");
        }
        for (const auto& m : hidden) {
            if (m.rows() != p || m.cols() != p) {
                throw ShapeError("WeightStack: hidden layers must all be p x p");
            }
        }
        if (outer.rows() != 1 || outer.cols() != p) {
            throw ShapeError("WeightStack: outer layer must be 1 x p");
        }
        layers_ = std::move(hidden);
        layers_.push_back(std::move(outer));
    }

    static WeightStack zeros(std::size_t p, std::size_t depth) {
        std::vector<Matrix> hidden(depth, Matrix(p, p));
        return WeightStack(std::move(hidden), Matrix(1, p));
    }

    std::size_t width() const { return layers_.back().cols(); }
    std::size_t depth() const { return layers_.size() - 1; }
    std::size_t num_layers() const { return layers_.size(); }

    /// Layer k in [0, L]; index L is the outer layer.
    const Matrix& layer(std::size_t k) const { return layers_.at(k); }
    Matrix& layer(std::size_t k) { return layers_.at(k); }
    const Matrix& hidden(std::size_t k) const { return layers_.at(k); }
    const Matrix& outer() const { return layers_.back(); }
    Matrix& outer() { return layers_.back(); }

    std::size_t num_parameters() const {
        std::size_t n = 0;
        for (const auto& m : layers_) {
            n += m.size();
        }
        return n;
    }

    bool same_shape(const WeightStack& o) const {
        if (layers_.size() != o.layers_.size()) {
            return false;
        }
        for (std::size_t k = 0; k < layers_.size(); ++k) {
            if (!layers_[k].same_shape(o.layers_[k])) {
                return false;
            }
        }
        return true;
    }

    bool all_finite() const {
        for (const auto& m : layers_) {
            if (!m.all_finite()) {
                return false;
            }
        }
        return true;
    }

    friend bool operator==(const WeightStack&, const WeightStack&) = default;

  private:
    std::vector<Matrix> layers_;
};

inline void require_same_shape(const WeightStack& a, const WeightStack& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": weight stacks have different shapes");
    }
}

/// Collective Frobenius norm over all L+1 matrices.
inline double frobenius_norm(const WeightStack& stack) {
    double acc = 0.0;
    for (std::size_t k = 0; k < stack.num_layers(); ++k) {
        for (double v : stack.layer(k).data()) {
            acc += v * v;
        }
    }
    return std::sqrt(acc);
}

inline double stack_dot(const WeightStack& a, const WeightStack& b) {
    require_same_shape(a, b, "stack_dot");
    double acc = 0.0;
    for (std::size_t k = 0; k < a.num_layers(); ++k) {
        auto x = a.layer(k).data();
        auto y = b.layer(k).data();
        for (std::size_t i = 0; i < x.size(); ++i) {
            acc += x[i] * y[i];
        }
    }
    return acc;
}

/// Returns y + alpha * x.
inline WeightStack stack_axpy(const WeightStack& y, double alpha, const WeightStack& x) {
    require_same_shape(y, x, "stack_axpy");
    WeightStack out = y;
    for (std::size_t k = 0; k < out.num_layers(); ++k) {
        auto o = out.layer(k).data();
        auto xs = x.layer(k).data();
        for (std::size_t i = 0; i < o.size(); ++i) {
            o[i] += alpha * xs[i];
        }
    }
    return out;
}

inline WeightStack stack_scale(const WeightStack& x, double alpha) {
    WeightStack out = x;
    for (std::size_t k = 0; k < out.num_layers(); ++k) {
        for (double& v : out.layer(k).data()) {
            v *= alpha;
        }
    }
    return out;
}

struct OperatorNorm {
    double value = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
};

struct PowerIterationOptions {
    double rel_tol = 1e-10;
    std::size_t max_iters = 10'000;
    std::uint64_t seed = 0x5eed;
};

/// Largest singular value by power iteration on A^T A.
///
/// The start vector is all-ones plus a small seeded perturbation so the run is
/// reproducible and does not sit exactly in a structured null space. The
/// estimate at each step is ||A v|| for unit v, which approaches sigma_max
/// from below. `converged` is false when max_iters ran out first.
inline OperatorNorm operator_norm(const Matrix& m, const PowerIterationOptions& opt = {}) {
    if (m.rows() == 0 || m.cols() == 0) {
        throw ShapeError("operator_norm: matrix has a zero dimension");
    }
    if (!(opt.rel_tol > 0.0)) {
        throw std::invalid_argument("operator_norm: rel_tol must be positive");
    }
    std::mt19937_64 rng(opt.seed);
    std::uniform_real_distribution<double> jitter(-1e-3, 1e-3);
    Vector v(m.cols(), 1.0);
    for (double& x : v) {
        x += jitter(rng);
    }

    OperatorNorm out;
    double nv = norm2(v);
    for (double& x : v) {
        x /= nv;
    }
    double prev = -1.0;
    const std::size_t rows = m.rows();
    const std::size_t cols = m.cols();
    const double* a = m.data().data();
    Vector z(cols);
    for (std::size_t it = 1; it <= opt.max_iters; ++it) {
        // One sweep over the rows yields both w = A v and z = A^T w.
        std::fill(z.begin(), z.end(), 0.0);
        double ww = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* row = a + r * cols;
            const double wr = unrolled_dot(row, v.data(), cols);
            ww += wr * wr;
            for (std::size_t c = 0; c < cols; ++c) {
                z[c] += row[c] * wr;
            }
        }
        const double sigma = std::sqrt(ww);
        out.value = sigma;
        out.iterations = it;
        if (sigma == 0.0) {
            // v landed in the null space; zero matrix is the only exact-zero case
            // we can certify cheaply.
            out.converged = frobenius_norm(m) == 0.0;
            if (!out.converged) {
                for (double& x : v) {
                    x = jitter(rng);
                }
                nv = norm2(v);
                for (double& x : v) {
                    x /= nv;
                }
                continue;
            }
            return out;
        }
        if (prev >= 0.0 && std::abs(sigma - prev) <= opt.rel_tol * sigma) {
            out.converged = true;
            return out;
        }
        prev = sigma;
        const double nz = norm2(z);
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = z[i] / nz;
        }
    }
    return out;
}

struct StackNorms {
    double frobenius = 0.0;
    std::vector<double> per_layer_frobenius;
    std::vector<double> per_layer_operator;
};

inline StackNorms stack_norms(const WeightStack& stack, const PowerIterationOptions& opt = {}) {
    StackNorms out;
    double acc = 0.0;
    for (std::size_t k = 0; k < stack.num_layers(); ++k) {
        const double f = frobenius_norm(stack.layer(k));
        out.per_layer_frobenius.push_back(f);
        out.per_layer_operator.push_back(operator_norm(stack.layer(k), opt).value);
        acc += f * f;
    }
    out.frobenius = std::sqrt(acc);
    return out;
}

}  // namespace boundbench

#endif  // BOUNDBENCH_LINALG_HPP
