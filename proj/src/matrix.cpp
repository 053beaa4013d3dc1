#include "splitllm/matrix.hpp"

#include "splitllm/rng.hpp"

#include <algorithm>
#include <cmath>

namespace splitllm {

template <typename T>
BasicMatrix<T>::BasicMatrix(std::size_t rows, std::size_t cols, T fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

template <typename T>
BasicMatrix<T>::BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows * cols, ErrorKind::Shape,
            "matrix payload has " + std::to_string(data_.size()) + " values, expected " +
                std::to_string(rows * cols));
}

template <typename T>
BasicMatrix<T> BasicMatrix<T>::identity(std::size_t n) {
    BasicMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
    return m;
}

template <typename T>
BasicMatrix<T> BasicMatrix<T>::from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        require(row.size() == c, ErrorKind::Shape, "ragged row list");
        data.insert(data.end(), row.begin(), row.end());
    }
    return BasicMatrix(r, c, std::move(data));
}

template <typename T>
std::string BasicMatrix<T>::shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

namespace {

template <typename T>
void check_same_shape(const BasicMatrix<T>& a, const BasicMatrix<T>& b, const char* op) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::Shape,
            std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
}

} // namespace

template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
    require(a.cols() == b.rows(), ErrorKind::Shape,
            "matmul: cannot multiply " + a.shape_string() + " by " + b.shape_string());
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    BasicMatrix<T> c(n, m);
    // i-p-j order: every c(i, j) still accumulates p = 0, 1, ... in sequence.
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = a(i, p);
            for (std::size_t j = 0; j < m; ++j) c(i, j) += aip * b(p, j);
        }
    }
    return c;
}

template <typename T>
BasicMatrix<T> matmul_tn(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
    require(a.rows() == b.rows(), ErrorKind::Shape,
            "matmul_tn: cannot multiply transpose of " + a.shape_string() + " by " + b.shape_string());
    const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
    BasicMatrix<T> c(n, m);
    for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t i = 0; i < n; ++i) {
            const T api = a(p, i);
            for (std::size_t j = 0; j < m; ++j) c(i, j) += api * b(p, j);
        }
    }
    return c;
}

template <typename T>
BasicMatrix<T> matmul_nt(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
    require(a.cols() == b.cols(), ErrorKind::Shape,
            "matmul_nt: cannot multiply " + a.shape_string() + " by transpose of " + b.shape_string());
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    BasicMatrix<T> c(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            T acc = T(0);
            for (std::size_t p = 0; p < k; ++p) acc += a(i, p) * b(j, p);
            c(i, j) = acc;
        }
    }
    return c;
}

template <typename T>
BasicMatrix<T> transpose(const BasicMatrix<T>& a) {
    BasicMatrix<T> t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

template <typename T>
BasicMatrix<T> add(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
    check_same_shape(a, b, "add");
    BasicMatrix<T> out = a;
    auto dst = out.values();
    auto src = b.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    return out;
}

template <typename T>
BasicMatrix<T> hadamard(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
    check_same_shape(a, b, "hadamard");
    BasicMatrix<T> out = a;
    auto dst = out.values();
    auto src = b.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] *= src[i];
    return out;
}

template <typename T>
BasicMatrix<T> scaled(const BasicMatrix<T>& a, T factor) {
    BasicMatrix<T> out = a;
    for (T& v : out.values()) v *= factor;
    return out;
}

template <typename T>
bool all_finite(const BasicMatrix<T>& a) noexcept {
    return std::all_of(a.values().begin(), a.values().end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
double max_abs_diff(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
    check_same_shape(a, b, "max_abs_diff");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(a.values()[i]) - static_cast<double>(b.values()[i])));
    return worst;
}

template <typename T>
double max_rel_diff(const BasicMatrix<T>& a, const BasicMatrix<T>& b, double floor) {
    check_same_shape(a, b, "max_rel_diff");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a.values()[i], y = b.values()[i];
        const double denom = std::max({std::abs(x), std::abs(y), floor});
        worst = std::max(worst, std::abs(x - y) / denom);
    }
    return worst;
}

template <typename T>
double frobenius_norm(const BasicMatrix<T>& a) {
    double s = 0.0;
    for (T v : a.values()) s += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(s);
}

template <typename T>
BasicMatrix<T> gaussian_matrix(std::size_t rows, std::size_t cols, double mean, double stddev, Rng& rng) {
    require(stddev >= 0.0, ErrorKind::Parameter, "gaussian_matrix: negative std " + std::to_string(stddev));
    BasicMatrix<T> m(rows, cols);
    for (T& v : m.values()) v = static_cast<T>(mean + stddev * rng.normal());
    return m;
}

template <typename T>
LossAndGrad<T> softmax_cross_entropy(const BasicMatrix<T>& logits, std::span<const std::uint32_t> labels) {
    const std::size_t batch = logits.rows(), classes = logits.cols();
    require(labels.size() == batch, ErrorKind::Shape,
            "softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(batch) +
                " rows");
    require(batch > 0, ErrorKind::Shape, "softmax_cross_entropy: empty batch");
    for (std::uint32_t y : labels)
        require(y < classes, ErrorKind::Input,
                "label " + std::to_string(y) + " out of range for " + std::to_string(classes) + " classes");

    LossAndGrad<T> out;
    out.dlogits = BasicMatrix<T>(batch, classes);
    const T inv_batch = T(1) / static_cast<T>(batch);
    T total = T(0);
    for (std::size_t i = 0; i < batch; ++i) {
        const auto row = logits.row(i);
        const T peak = *std::max_element(row.begin(), row.end());
        T denom = T(0);
        for (std::size_t c = 0; c < classes; ++c) denom += std::exp(row[c] - peak);
        const T log_denom = std::log(denom);
        total += log_denom - (row[labels[i]] - peak);
        for (std::size_t c = 0; c < classes; ++c) {
            const T p = std::exp(row[c] - peak - log_denom);
            out.dlogits(i, c) = (p - (c == labels[i] ? T(1) : T(0))) * inv_batch;
        }
    }
    out.loss = static_cast<double>(total / static_cast<T>(batch));
    return out;
}

Activation parse_activation(const std::string& name) {
    if (name == "identity") return Activation::Identity;
    if (name == "relu") return Activation::Relu;
    if (name == "tanh") return Activation::Tanh;
    fail(ErrorKind::Config, "unknown activation '" + name + "' (expected identity, relu or tanh)");
}

const char* to_string(Activation kind) noexcept {
    switch (kind) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    }
    return "unknown";
}

template <typename T>
BasicMatrix<T> activation_forward(Activation kind, const BasicMatrix<T>& x) {
    BasicMatrix<T> y = x;
    switch (kind) {
    case Activation::Identity: break;
    case Activation::Relu:
        for (T& v : y.values()) v = v > T(0) ? v : T(0);
        break;
    case Activation::Tanh:
        for (T& v : y.values()) v = std::tanh(v);
        break;
    }
    return y;
}

template <typename T>
BasicMatrix<T> activation_backward(Activation kind, const BasicMatrix<T>& z, const BasicMatrix<T>& dy) {
    check_same_shape(z, dy, "activation_backward");
    BasicMatrix<T> dz = dy;
    auto g = dz.values();
    auto pre = z.values();
    switch (kind) {
    case Activation::Identity: break;
    case Activation::Relu:
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!(pre[i] > T(0))) g[i] = T(0);
        break;
    case Activation::Tanh:
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T t = std::tanh(pre[i]);
            g[i] *= T(1) - t * t;
        }
        break;
    }
    return dz;
}

#define SPLITLLM_INSTANTIATE(T)                                                                                   \
    template class BasicMatrix<T>;                                                                                \
    template BasicMatrix<T> matmul(const BasicMatrix<T>&, const BasicMatrix<T>&);                                 \
    template BasicMatrix<T> matmul_tn(const BasicMatrix<T>&, const BasicMatrix<T>&);                              \
    template BasicMatrix<T> matmul_nt(const BasicMatrix<T>&, const BasicMatrix<T>&);                              \
    template BasicMatrix<T> transpose(const BasicMatrix<T>&);                                                     \
    template BasicMatrix<T> add(const BasicMatrix<T>&, const BasicMatrix<T>&);                                    \
    template BasicMatrix<T> hadamard(const BasicMatrix<T>&, const BasicMatrix<T>&);                               \
    template BasicMatrix<T> scaled(const BasicMatrix<T>&, T);                                                     \
    template bool all_finite(const BasicMatrix<T>&) noexcept;                                                     \
    template double max_abs_diff(const BasicMatrix<T>&, const BasicMatrix<T>&);                                   \
    template double max_rel_diff(const BasicMatrix<T>&, const BasicMatrix<T>&, double);                           \
    template double frobenius_norm(const BasicMatrix<T>&);                                                        \
    template BasicMatrix<T> gaussian_matrix<T>(std::size_t, std::size_t, double, double, Rng&);                   \
    template LossAndGrad<T> softmax_cross_entropy(const BasicMatrix<T>&, std::span<const std::uint32_t>);         \
    template BasicMatrix<T> activation_forward(Activation, const BasicMatrix<T>&);                                \
    template BasicMatrix<T> activation_backward(Activation, const BasicMatrix<T>&, const BasicMatrix<T>&);

SPLITLLM_INSTANTIATE(float)
SPLITLLM_INSTANTIATE(double)

#undef SPLITLLM_INSTANTIATE

} // namespace splitllm
