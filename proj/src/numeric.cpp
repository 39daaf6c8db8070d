#include "nrpa/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace nrpa {

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return {};
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != m.cols()) throw std::invalid_argument("Matrix::from_rows: ragged rows");
        std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
    }
    return m;
}

std::string Matrix::shape() const {
    std::ostringstream out;
    out << rows_ << "x" << cols_;
    return out.str();
}

Vector matvec(const Matrix& m, std::span<const double> v) {
    if (m.cols() != v.size()) {
        std::ostringstream msg;
        msg << "matvec: matrix " << m.shape() << " incompatible with vector of length " << v.size();
        throw std::invalid_argument(msg.str());
    }
    Vector out(m.rows(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) out[r] = dot(m.row(r), v);
    return out;
}

Vector matvec_transposed(const Matrix& m, std::span<const double> v) {
    if (m.rows() != v.size()) {
        std::ostringstream msg;
        msg << "matvec_transposed: matrix " << m.shape() << " incompatible with vector of length "
            << v.size();
        throw std::invalid_argument(msg.str());
    }
    Vector out(m.cols(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double s = v[r];
        if (s == 0.0) continue;
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) out[c] += s * row[c];
    }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

Vector softmax(std::span<const double> logits) {
    if (logits.empty()) throw std::invalid_argument("softmax: empty input");
    const double peak = *std::max_element(logits.begin(), logits.end());
    Vector out(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - peak);
        total += out[i];
    }
    for (double& x : out) x /= total;
    return out;
}

Vector masked_softmax(std::span<const double> logits, const std::vector<bool>& mask) {
    if (logits.size() != mask.size()) throw std::invalid_argument("masked_softmax: mask length mismatch");
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < logits.size(); ++i)
        if (mask[i]) peak = std::max(peak, logits[i]);
    Vector out(logits.size(), 0.0);
    if (peak == -std::numeric_limits<double>::infinity()) return out;
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (!mask[i]) continue;
        out[i] = std::exp(logits[i] - peak);
        total += out[i];
    }
    for (double& x : out) x /= total;
    return out;
}

Vector uniform_weights(const std::vector<bool>& mask) {
    const auto m = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
    Vector out(mask.size(), 0.0);
    if (m == 0) return out;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) out[i] = 1.0 / static_cast<double>(m);
    return out;
}

Vector relu(std::span<const double> v) {
    Vector out(v.begin(), v.end());
    for (double& x : out) x = x > 0.0 ? x : 0.0;
    return out;
}

Vector softmax_backward(std::span<const double> weights, std::span<const double> upstream) {
    const double mean = dot(weights, upstream);
    Vector out(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) out[i] = weights[i] * (upstream[i] - mean);
    return out;
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double grad_check(const ScalarFunction& f, std::span<const double> point,
                  std::span<const double> analytic_grad, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
    if (point.size() != analytic_grad.size()) throw std::invalid_argument("grad_check: gradient length mismatch");
    Vector x(point.begin(), point.end());
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + eps;
        const double up = f(x);
        x[i] = saved - eps;
        const double down = f(x);
        x[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            std::ostringstream msg;
            msg << "grad_check: non-finite function value at coordinate " << i;
            throw std::runtime_error(msg.str());
        }
        const double numeric = (up - down) / (2.0 * eps);
        const double analytic = analytic_grad[i];
        const double scale = std::max({1.0, std::abs(analytic), std::abs(numeric)});
        worst = std::max(worst, std::abs(analytic - numeric) / scale);
    }
    return worst;
}

}  // namespace nrpa
