#pragma once

#include "splitllm/data.hpp"
#include "splitllm/lora.hpp"
#include "splitllm/protocol.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace splitllm {

/// Holds layer 1 and a per-user replica of its adapter. Sends R^u for one
/// mini-batch, then waits for the matching gradient before the next epoch.
template <typename T>
class UserNode {
public:
    UserNode(std::uint32_t m, std::uint32_t n, Segment<T> segment, const Dataset& train,
             std::vector<std::size_t> shard, std::uint64_t seed);

    std::uint32_t edge() const noexcept { return m_; }
    std::uint32_t id() const noexcept { return n_; }
    std::size_t data_size() const noexcept { return shard_.size(); }
    bool awaiting_gradient() const noexcept { return pending_.has_value(); }

    /// Replica <- broadcast adapters, momentum <- 0.
    void begin_round(std::uint32_t t, AdapterSet<T> adapters, const SgdParams& sgd);
    ActivationMsg<T> step(std::uint32_t k, std::size_t batch);
    void apply_gradient(const GradientMsg<T>& msg);
    AdapterUploadMsg<T> upload() const;

    const AdapterSet<T>& adapters() const noexcept { return adapters_; }
    const std::vector<std::size_t>& last_batch() const noexcept { return last_batch_; }

private:
    struct Pending {
        MessageHeader header;
        SegmentCache<T> cache;
        std::size_t rows = 0;
        std::size_t cols = 0;
    };

    std::uint32_t m_;
    std::uint32_t n_;
    Segment<T> segment_;
    const Dataset* train_;
    std::vector<std::size_t> shard_;
    std::uint64_t seed_;
    std::uint32_t t_ = 0;
    AdapterSet<T> adapters_;
    std::vector<MomentumBuffers<T>> momentum_;
    SgdParams sgd_;
    std::optional<Pending> pending_;
    std::vector<std::size_t> last_batch_;
};

/// Holds layers 2..L_e and one adapter replica that persists across the
/// edge's users within a round.
template <typename T>
class EdgeNode {
public:
    EdgeNode(std::uint32_t m, Segment<T> segment);

    std::uint32_t id() const noexcept { return m_; }

    void begin_round(std::uint32_t t, AdapterSet<T> adapters, const SgdParams& sgd);
    ActivationMsg<T> forward(const ActivationMsg<T>& from_user);
    GradientMsg<T> backward(const GradientMsg<T>& from_cloud);
    AdapterUploadMsg<T> upload(std::uint32_t data_size) const;

    const AdapterSet<T>& adapters() const noexcept { return adapters_; }

private:
    struct Pending {
        MessageHeader header;
        SegmentCache<T> cache;
        std::size_t rows = 0;
        std::size_t cols = 0;
    };

    std::uint32_t m_;
    Segment<T> segment_;
    std::uint32_t t_ = 0;
    AdapterSet<T> adapters_;
    std::vector<MomentumBuffers<T>> momentum_;
    SgdParams sgd_;
    std::optional<Pending> pending_;
};

/// Holds layers L_e+1..L. Keeps one adapter replica per edge (or a single
/// shared one); replica m is touched only by messages from edge m.
template <typename T>
class CloudNode {
public:
    CloudNode(Segment<T> segment, std::size_t edges, bool shared_replica);

    struct StepResult {
        double loss = 0.0;
        GradientMsg<T> gradient;
    };

    void begin_round(std::uint32_t t, const AdapterSet<T>& adapters, const SgdParams& sgd);
    /// Forward, loss, backward, adapter update for the sender's replica;
    /// returns the gradient w.r.t. R^e.
    StepResult step(const ActivationMsg<T>& from_edge);

    std::size_t replica_count() const noexcept { return replicas_.size(); }
    const AdapterSet<T>& replica(std::size_t m) const { return replicas_.at(m).adapters; }
    std::size_t replica_of(std::uint32_t m) const noexcept { return shared_ ? 0 : m; }
    bool shared() const noexcept { return shared_; }

private:
    struct Replica {
        AdapterSet<T> adapters;
        std::vector<MomentumBuffers<T>> momentum;
    };

    Segment<T> segment_;
    bool shared_;
    std::uint32_t t_ = 0;
    SgdParams sgd_;
    std::vector<Replica> replicas_;
};

} // namespace splitllm
