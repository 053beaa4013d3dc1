#pragma once

// Independent reference implementations for the test suites: plain nested
// loops in 64-bit or extended precision, no calls into the library's math.

#include "splitllm/lora.hpp"
#include "splitllm/protocol.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;

template <typename T>
Mat to_mat(const splitllm::BasicMatrix<T>& m) {
    Mat out(m.rows(), std::vector<double>(m.cols()));
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out[i][j] = static_cast<double>(m(i, j));
    return out;
}

inline Mat mul(const Mat& a, const Mat& b) {
    const std::size_t n = a.size(), k = b.size(), p = b.empty() ? 0 : b[0].size();
    Mat out(n, std::vector<double>(p, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j) {
            long double s = 0.0L;
            for (std::size_t q = 0; q < k; ++q) s += static_cast<long double>(a[i][q]) * b[q][j];
            out[i][j] = static_cast<double>(s);
        }
    return out;
}

inline Mat plus(const Mat& a, const Mat& b) {
    Mat out = a;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j) out[i][j] += b[i][j];
    return out;
}

inline double act(splitllm::Activation kind, double z) {
    switch (kind) {
    case splitllm::Activation::Identity: return z;
    case splitllm::Activation::Relu: return z > 0.0 ? z : 0.0;
    case splitllm::Activation::Tanh: return std::tanh(z);
    }
    return z;
}

/// y = act(x·W + (x·A)·B), expanded by hand.
template <typename T>
Mat layer(const Mat& x, const splitllm::FrozenLayer<T>& frozen, const splitllm::LoraAdapter<T>& adapter) {
    Mat z = plus(mul(x, to_mat(frozen.weight)), mul(mul(x, to_mat(adapter.a)), to_mat(adapter.b)));
    for (auto& row : z)
        for (auto& v : row) v = act(frozen.activation, v);
    return z;
}

template <typename T>
Mat forward(const splitllm::FrozenModel<T>& model, const splitllm::AdapterSet<T>& adapters, const Mat& x) {
    Mat h = x;
    for (std::size_t l = 0; l < model.layers.size(); ++l) h = layer(h, model.layers[l], adapters[l]);
    return h;
}

/// Mean softmax cross-entropy with extended-precision log-sum-exp.
inline double mean_ce(const Mat& logits, const std::vector<std::uint32_t>& labels) {
    long double total = 0.0L;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        long double mx = logits[i][0];
        for (double v : logits[i]) mx = std::max<long double>(mx, v);
        long double s = 0.0L;
        for (double v : logits[i]) s += std::exp(static_cast<long double>(v) - mx);
        total += std::log(s) + mx - logits[i][labels[i]];
    }
    return static_cast<double>(total / static_cast<long double>(logits.size()));
}

/// Central difference of f at x in direction of one coordinate.
inline double central_difference(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double rel_err(double a, double b, double floor = 1e-8) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Brute-force Σ w_i M_i in extended precision.
template <typename T>
Mat weighted_mean(const std::vector<splitllm::BasicMatrix<T>>& ms, const std::vector<double>& w) {
    Mat out(ms[0].rows(), std::vector<double>(ms[0].cols(), 0.0));
    for (std::size_t r = 0; r < out.size(); ++r)
        for (std::size_t c = 0; c < out[r].size(); ++c) {
            long double s = 0.0L;
            for (std::size_t i = 0; i < ms.size(); ++i) s += static_cast<long double>(w[i]) * ms[i](r, c);
            out[r][c] = static_cast<double>(s);
        }
    return out;
}

// Wire sizes, written out from the byte layout rather than taken from the encoder.
constexpr std::uint64_t kHeader = 1 + 4 * 4;          // tag + t,k,m,n
constexpr std::uint64_t kMatrixHeader = 4 + 4 + 4 + 4; // "SLMX", rows, cols, dtype

inline std::uint64_t matrix_bytes(std::uint64_t rows, std::uint64_t cols, std::uint64_t elem = 4) {
    return kMatrixHeader + rows * cols * elem;
}

inline std::uint64_t activation_bytes(std::uint64_t rows, std::uint64_t cols, std::uint64_t elem = 4) {
    return kHeader + matrix_bytes(rows, cols, elem) + 4 + 4 * rows;
}

inline std::uint64_t gradient_bytes(std::uint64_t rows, std::uint64_t cols, std::uint64_t elem = 4) {
    return kHeader + matrix_bytes(rows, cols, elem);
}

/// One "SLAD" block: tag, layer index, rank, then A (d x r) and B (r x h).
inline std::uint64_t adapter_bytes(std::uint64_t d, std::uint64_t h, std::uint64_t r, std::uint64_t elem = 4) {
    return 4 + 4 + 4 + matrix_bytes(d, r, elem) + matrix_bytes(r, h, elem);
}

struct Dims {
    std::uint64_t d, h, r;
};

/// Upload or broadcast: header, tier, data_size, count, adapter blocks.
inline std::uint64_t adapter_message_bytes(const std::vector<Dims>& layers, std::uint64_t elem = 4) {
    std::uint64_t total = kHeader + 4 + 4 + 4;
    for (const auto& l : layers) total += adapter_bytes(l.d, l.h, l.r, elem);
    return total;
}

/// Model distribution: header, tier, first_layer, count, per layer activation code + matrix.
inline std::uint64_t distribution_bytes(const std::vector<Dims>& layers, std::uint64_t elem = 4) {
    std::uint64_t total = kHeader + 4 + 4 + 4;
    for (const auto& l : layers) total += 4 + matrix_bytes(l.d, l.h, elem);
    return total;
}

/// Hand count for the default model (16 -> 128 -> 64 -> 64 -> 32 -> 3, rank 8,
/// cut 3) with one edge, `users` users, batch 32, K = 1, T = 1.
struct MicroBytes {
    std::uint64_t total;
    std::uint64_t user_endpoint;  // every message with a user endpoint
    std::uint64_t user_training;  // the same without model distribution
    std::uint64_t message_count;
};

inline MicroBytes splitllm_micro_bytes(std::uint64_t users, std::uint64_t batch = 32) {
    const std::uint64_t user_adapter = adapter_message_bytes({{16, 128, 8}});
    const std::uint64_t edge_adapters = adapter_message_bytes({{128, 64, 8}, {64, 64, 8}});
    const std::uint64_t user_frozen = distribution_bytes({{16, 128, 0}});
    const std::uint64_t edge_frozen = distribution_bytes({{128, 64, 0}, {64, 64, 0}});
    const std::uint64_t ru = activation_bytes(batch, 128), re = activation_bytes(batch, 64);
    const std::uint64_t ge = gradient_bytes(batch, 64), gu = gradient_bytes(batch, 128);

    MicroBytes out{};
    // distribution: edge segment and relayed user segment to the edge, then one copy per user
    out.total += edge_frozen + user_frozen + users * user_frozen;
    // broadcasts: edge adapters and user adapters to the edge, then one copy per user
    out.total += edge_adapters + user_adapter + users * user_adapter;
    // one pipelined step per user
    out.total += users * (ru + re + ge + gu);
    // uploads: user -> edge, relayed edge -> cloud, then the edge's own adapters
    out.total += users * 2 * user_adapter + edge_adapters;
    out.user_training = users * (user_adapter + ru + gu + user_adapter);
    out.user_endpoint = out.user_training + users * user_frozen;
    out.message_count = 2 + users + 2 + users + 4 * users + 2 * users + 1;
    return out;
}

/// Philox4x32-10 written from the published round function.
inline std::array<std::uint32_t, 4> philox(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
    constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u, W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = static_cast<std::uint64_t>(M0) * ctr[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(M1) * ctr[2];
        ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
               static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
        key = {key[0] + W0, key[1] + W1};
    }
    return ctr;
}

} // namespace oracle
