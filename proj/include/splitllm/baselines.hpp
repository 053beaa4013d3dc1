#pragma once

#include "splitllm/metrics.hpp"
#include "splitllm/training.hpp"

#include <string>
#include <vector>

namespace splitllm {

/// Monolithic oracle: one model, all shards concatenated in (m, n) order and
/// sampled with the stream of user (0, 0). Same update rules, per-layer
/// learning rates and momentum resets as the split pipeline, so with M = N = 1
/// it replays the split run step for step.
template <typename T>
TrainingHistory<T> train_centralized(const RunConfig& cfg, const Experiment& experiment);

/// Every user trains all L adapters locally; the cloud runs FedAvg over users.
template <typename T>
TrainingHistory<T> train_fl_baseline(const RunConfig& cfg, const Experiment& experiment);

/// Two-tier split at layer 1: per-user layer-1 replicas, one server adapter
/// set for layers 2..L trained sequentially across all users.
template <typename T>
TrainingHistory<T> train_sl_baseline(const RunConfig& cfg, const Experiment& experiment);

template <typename T>
TrainingHistory<T> train_scheme(Scheme scheme, const RunConfig& cfg, const Experiment& experiment);

struct ComparisonRow {
    std::string scheme;
    double acc_iid = 0.0;
    double acc_noniid = 0.0;
    std::uint64_t user_comm_bytes = 0;
    std::uint64_t user_activation_bytes = 0;
    MemoryEstimate memory;
};

struct Comparison {
    std::vector<ComparisonRow> rows;
    /// (FL user memory - largest SplitLLM tier) / FL user memory, when both
    /// schemes are present.
    std::optional<double> peak_memory_reduction;

    const ComparisonRow* find(const std::string& scheme) const noexcept;
    /// scheme,acc_iid,acc_noniid,user_comm_bytes,mem_user,mem_edge,mem_cloud
    std::string to_csv() const;
    std::string to_json() const;
};

/// Runs each scheme on the IID and the Dirichlet(beta) partition of the same
/// data, seed and hyperparameters. user_comm_bytes comes from the IID run.
Comparison compare(const RunConfig& cfg, const std::vector<std::string>& schemes);

} // namespace splitllm
