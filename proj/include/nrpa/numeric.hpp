#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace nrpa {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n);
    static Matrix from_rows(const std::vector<std::vector<double>>& rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    std::string shape() const;

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Vector matvec(const Matrix& m, std::span<const double> v);

/// y = mᵀ v
Vector matvec_transposed(const Matrix& m, std::span<const double> v);

double dot(std::span<const double> a, std::span<const double> b);

/// Numerically stable softmax (max-subtracted). Throws on empty input.
Vector softmax(std::span<const double> logits);

/// Softmax restricted to positions where mask is true; masked positions get
/// exactly 0. An all-false mask yields an all-zero vector.
Vector masked_softmax(std::span<const double> logits, const std::vector<bool>& mask);

/// Uniform weights 1/m over the m unmasked positions.
Vector uniform_weights(const std::vector<bool>& mask);

Vector relu(std::span<const double> v);

/// Vector-Jacobian product of softmax: given weights p and upstream dL/dp,
/// returns dL/dlogits = p ⊙ (g − ⟨p, g⟩). Masked entries (p == 0) get 0.
Vector softmax_backward(std::span<const double> weights, std::span<const double> upstream);

bool all_finite(std::span<const double> v);

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Compares an analytic gradient with central differences. Returns the max
/// over coordinates of |analytic − numeric| / max(1, |analytic|, |numeric|).
double grad_check(const ScalarFunction& f, std::span<const double> point,
                  std::span<const double> analytic_grad, double eps);

}  // namespace nrpa
