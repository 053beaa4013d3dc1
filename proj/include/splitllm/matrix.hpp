#pragma once

#include "splitllm/error.hpp"

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace splitllm {

class Rng;

/// Dense row-major matrix. `Matrix` is the 32-bit compute type; `Matrix64` is
/// the 64-bit mirror used by the oracle paths and `--precision f64`.
template <typename T>
class BasicMatrix {
public:
    using value_type = T;

    BasicMatrix() = default;
    BasicMatrix(std::size_t rows, std::size_t cols, T fill = T(0));
    BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data);

    static BasicMatrix identity(std::size_t n);
    static BasicMatrix from_rows(std::initializer_list<std::initializer_list<T>> rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    T operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::string shape_string() const;

    template <typename U>
    BasicMatrix<U> cast() const {
        BasicMatrix<U> out(rows_, cols_);
        auto dst = out.values();
        for (std::size_t i = 0; i < data_.size(); ++i) dst[i] = static_cast<U>(data_[i]);
        return out;
    }

    friend bool operator==(const BasicMatrix&, const BasicMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

using Matrix = BasicMatrix<float>;
using Matrix64 = BasicMatrix<double>;

/// Standard product. Each output entry accumulates left to right over the
/// inner dimension in T; no parallel reduction.
template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b);

/// aᵀ·b without materializing the transpose (same accumulation order).
template <typename T>
BasicMatrix<T> matmul_tn(const BasicMatrix<T>& a, const BasicMatrix<T>& b);

/// a·bᵀ without materializing the transpose (same accumulation order).
template <typename T>
BasicMatrix<T> matmul_nt(const BasicMatrix<T>& a, const BasicMatrix<T>& b);

template <typename T>
BasicMatrix<T> transpose(const BasicMatrix<T>& a);

template <typename T>
BasicMatrix<T> add(const BasicMatrix<T>& a, const BasicMatrix<T>& b);

template <typename T>
BasicMatrix<T> hadamard(const BasicMatrix<T>& a, const BasicMatrix<T>& b);

template <typename T>
BasicMatrix<T> scaled(const BasicMatrix<T>& a, T factor);

template <typename T>
bool all_finite(const BasicMatrix<T>& a) noexcept;

/// Largest |a - b| over all entries; shapes must match.
template <typename T>
double max_abs_diff(const BasicMatrix<T>& a, const BasicMatrix<T>& b);

/// Largest |a - b| / max(|a|, |b|, floor) over all entries.
template <typename T>
double max_rel_diff(const BasicMatrix<T>& a, const BasicMatrix<T>& b, double floor = 1e-30);

template <typename T>
double frobenius_norm(const BasicMatrix<T>& a);

/// i.i.d. Gaussian entries, row-major fill order. Consumes exactly
/// 2 * rows * cols rng draws (one Box-Muller pair per entry, sine branch
/// discarded), including when std == 0.
template <typename T>
BasicMatrix<T> gaussian_matrix(std::size_t rows, std::size_t cols, double mean, double stddev, Rng& rng);

template <typename T>
struct LossAndGrad {
    double loss = 0.0;
    BasicMatrix<T> dlogits;
};

/// Mean softmax cross-entropy over the batch, max-subtracted. The gradient is
/// (softmax - onehot) / batch.
template <typename T>
LossAndGrad<T> softmax_cross_entropy(const BasicMatrix<T>& logits, std::span<const std::uint32_t> labels);

enum class Activation { Identity, Relu, Tanh };

Activation parse_activation(const std::string& name);
const char* to_string(Activation kind) noexcept;

template <typename T>
BasicMatrix<T> activation_forward(Activation kind, const BasicMatrix<T>& x);

/// dy ⊙ act'(z) where z is the pre-activation seen by the forward pass.
template <typename T>
BasicMatrix<T> activation_backward(Activation kind, const BasicMatrix<T>& z, const BasicMatrix<T>& dy);

} // namespace splitllm
