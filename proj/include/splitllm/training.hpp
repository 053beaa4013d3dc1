#pragma once

#include "splitllm/config.hpp"
#include "splitllm/data.hpp"
#include "splitllm/lora.hpp"
#include "splitllm/protocol.hpp"
#include "splitllm/topology.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace splitllm {

struct RoundMetrics {
    std::uint32_t round = 0;
    double train_loss = 0.0;     // empirical loss of the aggregated model over all training data
    double test_loss = 0.0;
    double test_accuracy = 0.0;
    double mean_step_loss = 0.0; // mean of the mini-batch losses seen during the round
    std::uint64_t user_bytes = 0;  // cumulative, links with a user endpoint
    std::uint64_t edge_bytes = 0;  // cumulative, links with an edge endpoint
    std::uint64_t cloud_bytes = 0; // cumulative, links with a cloud endpoint
    double wall_clock_seconds = 0.0;
    double aggregation_discrepancy = 0.0;
};

struct StepRecord {
    std::uint32_t t = 0;
    std::uint32_t k = 0;
    std::uint32_t m = 0;
    std::uint32_t n = 0;
    double loss = 0.0;
};

template <typename T>
struct TrainingHistory {
    std::string scheme;
    std::vector<RoundMetrics> rounds;
    std::vector<StepRecord> steps;
    AdapterSet<T> initial_adapters;
    AdapterSet<T> final_adapters;
    std::shared_ptr<const FrozenModel<T>> frozen;
    MessageLog log;
    std::uint64_t distribution_bytes = 0;
    std::vector<std::string> warnings;

    double best_accuracy() const noexcept;
    /// Training traffic with a user endpoint (model distribution excluded).
    std::uint64_t user_comm_bytes() const noexcept;
    /// Activation and gradient bytes with a user endpoint.
    std::uint64_t user_activation_bytes() const noexcept;
};

/// Data, topology, partition and model shape shared by every scheme of a run.
struct Experiment {
    DataSplit data;
    Topology topology;
    PartitionPlan plan;
    ModelShape shape;
};

Experiment prepare_experiment(const RunConfig& cfg);
Experiment prepare_experiment(const RunConfig& cfg, PartitionKind partition);

/// min(batch, |shard|) distinct indices by partial Fisher-Yates.
std::vector<std::size_t> sample_minibatch(std::span<const std::size_t> shard, std::size_t batch, Rng& rng);

/// Mini-batch stream of user (m, n) at round t, epoch k.
Rng minibatch_stream(std::uint64_t seed, std::uint32_t m, std::uint32_t n, std::uint32_t t, std::uint32_t k);

/// Learning rate of 1-based layer l under the tier mapping of the cut.
double layer_learning_rate(const RunConfig& cfg, std::size_t layer, std::size_t round);

/// Hierarchical split training: T rounds of broadcast, K pipelined epochs per
/// user, upload and FedAvg. Every message crosses a Channel and is logged.
template <typename T>
TrainingHistory<T> run_training(const RunConfig& cfg, const Experiment& experiment);

template <typename T>
TrainingHistory<T> run_training(const RunConfig& cfg);

} // namespace splitllm
