#ifndef LPROBE_TENSOR_HPP
#define LPROBE_TENSOR_HPP

// Dense row-major f32 tensors and the forward primitives shared by the
// encoder and the decoding heads. Every reduction accumulates in double.

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numbers>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lprobe/errors.hpp"

namespace lprobe {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, float fill = 0.0f) : shape_(std::move(shape)) {
        check_shape();
        data_.assign(shape_numel(shape_), fill);
    }

    Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape();
        if (data_.size() != shape_numel(shape_)) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_str(shape_));
        }
    }

    /// Builds a rank-2 tensor from nested rows; all rows must have equal length.
    static Tensor matrix(std::initializer_list<std::initializer_list<float>> rows) {
        const std::size_t m = rows.size();
        const std::size_t n = m ? rows.begin()->size() : 0;
        std::vector<float> data;
        data.reserve(m * n);
        for (const auto& r : rows) {
            if (r.size() != n) throw DimensionError("ragged matrix literal");
            data.insert(data.end(), r.begin(), r.end());
        }
        return Tensor({m, n}, std::move(data));
    }

    static Tensor vector(std::vector<float> values) {
        const std::size_t n = values.size();
        return Tensor({n}, std::move(values));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    /// Size of the last axis.
    std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }
    /// Product of all axes but the last.
    std::size_t rows() const noexcept {
        const std::size_t c = cols();
        return c ? data_.size() / c : 0;
    }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    std::vector<float>& storage() noexcept { return data_; }
    const std::vector<float>& storage() const noexcept { return data_; }

    std::span<float> row(std::size_t i) { return {data_.data() + i * cols(), cols()}; }
    std::span<const float> row(std::size_t i) const { return {data_.data() + i * cols(), cols()}; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }
    float& operator()(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
    float operator()(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }

    bool all_finite() const noexcept {
        for (float v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    void check_shape() const {
        for (std::size_t d : shape_) {
            if (d == 0) throw DimensionError("tensor shape " + shape_str(shape_) + " has a zero dimension");
        }
    }

    Shape shape_;
    std::vector<float> data_;
};

inline void ensure_finite(const Tensor& t, const std::string& what) {
    if (!t.all_finite()) throw NumericError("non-finite value in " + what);
}

enum class GeluVariant { tanh, erf };

namespace detail {

// Four independent double accumulators; the fixed order keeps results
// reproducible regardless of thread schedule.
inline double dot(const float* a, const float* b, std::size_t n) noexcept {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::size_t t = 0;
    for (; t + 4 <= n; t += 4) {
        s0 += double(a[t]) * double(b[t]);
        s1 += double(a[t + 1]) * double(b[t + 1]);
        s2 += double(a[t + 2]) * double(b[t + 2]);
        s3 += double(a[t + 3]) * double(b[t + 3]);
    }
    for (; t < n; ++t) s0 += double(a[t]) * double(b[t]);
    return (s0 + s1) + (s2 + s3);
}

inline void require_rank2(const Tensor& t, const char* what) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(what) + " must be rank 2, got " + shape_str(t.shape()));
    }
}

}  // namespace detail

/// c = a·b with a:[m,k], b:[k,n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_rank2(a, "matmul lhs");
    detail::require_rank2(b, "matmul rhs");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    std::vector<float> bt(k * n);
    for (std::size_t t = 0; t < k; ++t)
        for (std::size_t j = 0; j < n; ++j) bt[j * k + t] = b(t, j);
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            c(i, j) = static_cast<float>(detail::dot(a.row(i).data(), bt.data() + j * k, k));
    ensure_finite(c, "matmul");
    return c;
}

/// y = x·wᵀ + bias with x:[m,in], w:[out,in], bias:[out] (bias may be null).
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr) {
    detail::require_rank2(x, "linear input");
    detail::require_rank2(w, "linear weight");
    const std::size_t m = x.dim(0), in = x.dim(1), out = w.dim(0);
    if (w.dim(1) != in) {
        throw DimensionError("linear input " + shape_str(x.shape()) + " incompatible with weight " +
                             shape_str(w.shape()));
    }
    if (bias && (bias->rank() != 1 || bias->dim(0) != out)) {
        throw DimensionError("linear bias " + shape_str(bias->shape()) + " does not match " +
                             std::to_string(out) + " outputs");
    }
    Tensor y({m, out});
    for (std::size_t i = 0; i < m; ++i) {
        const float* xi = x.row(i).data();
        for (std::size_t j = 0; j < out; ++j) {
            double s = detail::dot(xi, w.row(j).data(), in);
            if (bias) s += double((*bias)[j]);
            y(i, j) = static_cast<float>(s);
        }
    }
    ensure_finite(y, "linear");
    return y;
}

inline constexpr double kDefaultLayerNormEps = 1e-12;

/// Normalizes each row over the last axis, then applies gamma/beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = kDefaultLayerNormEps) {
    const std::size_t d = x.cols();
    if (gamma.numel() != d || beta.numel() != d) {
        throw DimensionError("layer_norm affine params " + shape_str(gamma.shape()) + "/" +
                             shape_str(beta.shape()) + " do not match last dimension " + std::to_string(d));
    }
    if (!(eps > 0)) throw DimensionError("layer_norm eps must be positive");
    Tensor y(x.shape());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        auto out = y.row(r);
        double mean = 0;
        for (float v : in) mean += v;
        mean /= double(d);
        double var = 0;
        for (float v : in) var += (v - mean) * (v - mean);
        var /= double(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j)
            out[j] = static_cast<float>((in[j] - mean) * inv * gamma[j] + beta[j]);
    }
    ensure_finite(y, "layer_norm");
    return y;
}

inline constexpr double kGeluTanhCoeff = 0.044715;

inline double gelu_scalar(double x, GeluVariant variant = GeluVariant::tanh) noexcept {
    if (variant == GeluVariant::erf) return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double c = std::sqrt(2.0 / std::numbers::pi);
    return 0.5 * x * (1.0 + std::tanh(c * (x + kGeluTanhCoeff * x * x * x)));
}

/// d gelu / dx.
inline double gelu_grad_scalar(double x, GeluVariant variant = GeluVariant::tanh) noexcept {
    if (variant == GeluVariant::erf) {
        const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + x * pdf;
    }
    const double c = std::sqrt(2.0 / std::numbers::pi);
    const double u = c * (x + kGeluTanhCoeff * x * x * x);
    const double t = std::tanh(u);
    const double du = c * (1.0 + 3.0 * kGeluTanhCoeff * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

inline Tensor gelu(const Tensor& x, GeluVariant variant = GeluVariant::tanh) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = static_cast<float>(gelu_scalar(x[i], variant));
    ensure_finite(y, "gelu");
    return y;
}

/// Row-wise softmax over the last axis with max subtraction.
inline Tensor softmax(const Tensor& x) {
    Tensor y(x.shape());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        auto out = y.row(r);
        double mx = in[0];
        for (float v : in) mx = std::max(mx, double(v));
        double z = 0;
        for (float v : in) z += std::exp(double(v) - mx);
        for (std::size_t j = 0; j < in.size(); ++j) out[j] = static_cast<float>(std::exp(double(in[j]) - mx) / z);
    }
    ensure_finite(y, "softmax");
    return y;
}

/// Numerically stable log-sum-exp of a row, in double.
inline double log_sum_exp(std::span<const float> row) noexcept {
    double mx = row[0];
    for (float v : row) mx = std::max(mx, double(v));
    double z = 0;
    for (float v : row) z += std::exp(double(v) - mx);
    return mx + std::log(z);
}

/// Mean over rows of -log softmax(logits)[gold].
inline double cross_entropy(const Tensor& logits, std::span<const int> gold) {
    detail::require_rank2(logits, "cross_entropy logits");
    const std::size_t m = logits.dim(0), vocab = logits.dim(1);
    if (gold.size() != m) {
        throw DimensionError("cross_entropy: " + std::to_string(gold.size()) + " gold ids for " +
                             std::to_string(m) + " rows");
    }
    double total = 0;
    for (std::size_t i = 0; i < m; ++i) {
        if (gold[i] < 0 || std::size_t(gold[i]) >= vocab) {
            throw IndexError("gold id " + std::to_string(gold[i]) + " outside vocabulary of " +
                             std::to_string(vocab));
        }
        auto row = logits.row(i);
        total += log_sum_exp(row) - double(row[gold[i]]);
    }
    return total / double(m);
}

/// Elementwise a + b for equal shapes.
inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor c(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) c[i] = a[i] + b[i];
    return c;
}

}  // namespace lprobe

#endif
