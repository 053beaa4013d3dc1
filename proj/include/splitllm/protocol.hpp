#pragma once

#include "splitllm/lora.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace splitllm {

enum class Tier : std::uint8_t { User = 0, Edge = 1, Cloud = 2 };

const char* to_string(Tier tier) noexcept;

enum class MessageTag : std::uint8_t {
    Activation = 1,
    Gradient = 2,
    AdapterUpload = 3,
    Broadcast = 4,
    ModelDistribution = 5,
};

const char* to_string(MessageTag tag) noexcept;

struct MessageHeader {
    std::uint32_t t = 0;
    std::uint32_t k = 0;
    std::uint32_t m = 0;
    std::uint32_t n = 0;

    friend bool operator==(const MessageHeader&, const MessageHeader&) = default;
};

/// Cut-layer activation R^u or R^e, with the batch labels riding along for
/// the cloud's loss.
template <typename T>
struct ActivationMsg {
    static constexpr MessageTag tag = MessageTag::Activation;
    MessageHeader header;
    BasicMatrix<T> tensor;
    std::vector<std::uint32_t> labels;
};

/// Gradient of the loss w.r.t. a previously sent activation.
template <typename T>
struct GradientMsg {
    static constexpr MessageTag tag = MessageTag::Gradient;
    MessageHeader header;
    BasicMatrix<T> tensor;
};

template <typename T>
struct AdapterUploadMsg {
    static constexpr MessageTag tag = MessageTag::AdapterUpload;
    MessageHeader header;
    Tier tier = Tier::User;
    std::uint32_t data_size = 0;
    AdapterSet<T> adapters;
};

template <typename T>
struct BroadcastMsg {
    static constexpr MessageTag tag = MessageTag::Broadcast;
    MessageHeader header;
    Tier tier = Tier::User;
    std::uint32_t data_size = 0;
    AdapterSet<T> adapters;
};

/// One-shot transfer of frozen layers to the tier that will execute them.
template <typename T>
struct ModelDistributionMsg {
    static constexpr MessageTag tag = MessageTag::ModelDistribution;
    MessageHeader header;
    Tier tier = Tier::User;
    std::uint32_t first_layer = 1;
    std::vector<FrozenLayer<T>> layers;
};

template <typename T>
using ProtocolMessage =
    std::variant<ActivationMsg<T>, GradientMsg<T>, AdapterUploadMsg<T>, BroadcastMsg<T>, ModelDistributionMsg<T>>;

/// Tag byte plus u32 t, k, m, n.
constexpr std::size_t kWireHeaderBytes = 17;

/// Wire format: u8 tag, u32 t, u32 k, u32 m, u32 n, then
///   Activation:        matrix block, u32 label count, u32 labels...
///   Gradient:          matrix block
///   AdapterUpload,
///   Broadcast:         u32 tier, u32 data_size, u32 count, adapter blocks
///   ModelDistribution: u32 tier, u32 first_layer, u32 count,
///                      per layer u32 activation + matrix block
template <typename T>
std::vector<std::uint8_t> encode(const ProtocolMessage<T>& msg);

template <typename T>
ProtocolMessage<T> decode(std::span<const std::uint8_t> bytes);

struct MessageRecord {
    MessageTag tag = MessageTag::Activation;
    MessageHeader header;
    std::uint64_t bytes = 0;
    Tier src = Tier::User;
    Tier dst = Tier::User;
};

/// Ordered trace of transmitted messages. One per edge pipeline during a
/// round; merged in ascending edge order at the aggregation barrier.
class MessageLog {
public:
    void append(const MessageRecord& record) { records_.push_back(record); }
    void append(const MessageLog& other) { records_.insert(records_.end(), other.records_.begin(), other.records_.end()); }
    const std::vector<MessageRecord>& records() const noexcept { return records_; }
    std::uint64_t total_bytes() const noexcept;
    std::size_t count(MessageTag tag, Tier src, Tier dst) const noexcept;
    std::string to_jsonl() const;

private:
    std::vector<MessageRecord> records_;
};

/// Optional link timing used only for reported wall-clock estimates.
struct LinkModel {
    double bits_per_second = 100e6;
    double delay_seconds = 0.0;

    double seconds_for(std::uint64_t bytes) const noexcept {
        return delay_seconds + 8.0 * static_cast<double>(bytes) / bits_per_second;
    }
};

struct LinkModels {
    LinkModel user_edge{100e6, 0.005};
    LinkModel edge_cloud{1e9, 0.010};
    LinkModel user_cloud{50e6, 0.020};

    const LinkModel& between(Tier a, Tier b) const noexcept;
};

/// Lossless ordered transport. Every message is serialized to the wire
/// format, counted, and decoded again on the receiving side.
template <typename T>
class Channel {
public:
    explicit Channel(MessageLog& log) noexcept : log_(&log) {}

    template <typename Msg>
    Msg transmit(Tier src, Tier dst, const Msg& msg) {
        const auto bytes = encode<T>(ProtocolMessage<T>{msg});
        log_->append(MessageRecord{Msg::tag, msg.header, bytes.size(), src, dst});
        return std::get<Msg>(decode<T>(bytes));
    }

private:
    MessageLog* log_;
};

/// Byte counters per directed tier pair, fed from committed logs.
class SimNetwork {
public:
    explicit SimNetwork(LinkModels links = {}) : links_(links) {}

    /// Appends a log and returns its estimated serial transfer time.
    double commit(const MessageLog& log);

    std::uint64_t bytes(Tier src, Tier dst) const noexcept { return bytes_[idx(src)][idx(dst)]; }
    /// Bytes on every link with `tier` as one endpoint.
    std::uint64_t tier_bytes(Tier tier) const noexcept;
    std::uint64_t total_bytes() const noexcept;
    const MessageLog& log() const noexcept { return log_; }
    const LinkModels& links() const noexcept { return links_; }
    double estimate_seconds(const MessageLog& log) const noexcept;

private:
    static std::size_t idx(Tier t) noexcept { return static_cast<std::size_t>(t); }

    LinkModels links_;
    std::array<std::array<std::uint64_t, 3>, 3> bytes_{};
    MessageLog log_;
};

} // namespace splitllm
