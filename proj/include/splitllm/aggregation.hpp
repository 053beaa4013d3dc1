#pragma once

#include "splitllm/lora.hpp"

#include <compare>
#include <cstdint>
#include <span>
#include <vector>

namespace splitllm {

/// Identifies a contributor by (edge m, user n); edge-level replicas use n = 0.
struct ContributorKey {
    std::uint32_t m = 0;
    std::uint32_t n = 0;

    friend auto operator<=>(const ContributorKey&, const ContributorKey&) = default;
};

/// w_i = size_i / sum(sizes), computed in 64-bit from exact integer sizes.
std::vector<double> compute_weights(std::span<const std::size_t> data_sizes);

/// Sum of the weights of each group, where groups[i] names the group of entry i.
std::vector<double> group_weights(std::span<const double> weights, std::span<const std::size_t> groups,
                                  std::size_t group_count);

template <typename T>
struct WeightedAdapter {
    ContributorKey key;
    LoraAdapter<T> adapter;
    double weight = 0.0;
};

template <typename T>
struct WeightedAdapterSet {
    std::uint32_t layer_index = 0;
    std::vector<WeightedAdapter<T>> entries;

    /// Shapes and layer indices agree and the weights sum to 1 within 1e-12.
    void validate() const;
};

/// FedAvg: A = sum w_i A_i, B = sum w_i B_i, accumulated at higher precision
/// (64-bit for f32 replicas, extended for f64) in ascending (m, n) order.
template <typename T>
LoraAdapter<T> fedavg_adapters(const WeightedAdapterSet<T>& set);

/// ||sum w_i A_i B_i - (sum w_i A_i)(sum w_i B_i)||_F in 64-bit: how far
/// parameter-space averaging is from averaging the low-rank updates.
template <typename T>
double product_discrepancy(const WeightedAdapterSet<T>& set);

} // namespace splitllm
