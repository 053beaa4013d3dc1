#include "splitllm/protocol.hpp"

#include <json.hpp>

namespace splitllm {

const char* to_string(Tier tier) noexcept {
    switch (tier) {
    case Tier::User: return "user";
    case Tier::Edge: return "edge";
    case Tier::Cloud: return "cloud";
    }
    return "unknown";
}

const char* to_string(MessageTag tag) noexcept {
    switch (tag) {
    case MessageTag::Activation: return "activation";
    case MessageTag::Gradient: return "gradient";
    case MessageTag::AdapterUpload: return "adapter_upload";
    case MessageTag::Broadcast: return "broadcast";
    case MessageTag::ModelDistribution: return "model_distribution";
    }
    return "unknown";
}

namespace {

Tier read_tier(ByteReader& in) {
    const std::uint32_t v = in.u32();
    require(v <= 2, ErrorKind::Parse, "invalid tier code " + std::to_string(v));
    return static_cast<Tier>(v);
}

template <typename T>
void write_adapters(ByteWriter& out, Tier tier, std::uint32_t data_size, const AdapterSet<T>& adapters) {
    out.u32(static_cast<std::uint32_t>(tier));
    out.u32(data_size);
    out.u32(static_cast<std::uint32_t>(adapters.size()));
    for (const auto& a : adapters) write_adapter(out, a);
}

template <typename T, typename Msg>
Msg read_adapters(ByteReader& in, const MessageHeader& h) {
    Msg msg;
    msg.header = h;
    msg.tier = read_tier(in);
    msg.data_size = in.u32();
    const std::uint32_t count = in.u32();
    for (std::uint32_t i = 0; i < count; ++i) msg.adapters.push_back(read_adapter<T>(in));
    return msg;
}

} // namespace

template <typename T>
std::vector<std::uint8_t> encode(const ProtocolMessage<T>& msg) {
    ByteWriter out;
    std::visit(
        [&](const auto& m) {
            using M = std::decay_t<decltype(m)>;
            out.u8(static_cast<std::uint8_t>(M::tag));
            out.u32(m.header.t);
            out.u32(m.header.k);
            out.u32(m.header.m);
            out.u32(m.header.n);
            if constexpr (std::is_same_v<M, ActivationMsg<T>>) {
                write_matrix(out, m.tensor);
                out.u32(static_cast<std::uint32_t>(m.labels.size()));
                for (std::uint32_t y : m.labels) out.u32(y);
            } else if constexpr (std::is_same_v<M, GradientMsg<T>>) {
                write_matrix(out, m.tensor);
            } else if constexpr (std::is_same_v<M, ModelDistributionMsg<T>>) {
                out.u32(static_cast<std::uint32_t>(m.tier));
                out.u32(m.first_layer);
                out.u32(static_cast<std::uint32_t>(m.layers.size()));
                for (const auto& layer : m.layers) {
                    out.u32(static_cast<std::uint32_t>(layer.activation));
                    write_matrix(out, layer.weight);
                }
            } else {
                write_adapters(out, m.tier, m.data_size, m.adapters);
            }
        },
        msg);
    return out.take();
}

template <typename T>
ProtocolMessage<T> decode(std::span<const std::uint8_t> bytes) {
    ByteReader in(bytes);
    const std::uint8_t tag = in.u8();
    MessageHeader h;
    h.t = in.u32();
    h.k = in.u32();
    h.m = in.u32();
    h.n = in.u32();
    ProtocolMessage<T> out;
    switch (static_cast<MessageTag>(tag)) {
    case MessageTag::Activation: {
        ActivationMsg<T> m;
        m.header = h;
        m.tensor = read_matrix<T>(in);
        const std::uint32_t count = in.u32();
        m.labels.reserve(count);
        for (std::uint32_t i = 0; i < count; ++i) m.labels.push_back(in.u32());
        out = std::move(m);
        break;
    }
    case MessageTag::Gradient: {
        GradientMsg<T> m;
        m.header = h;
        m.tensor = read_matrix<T>(in);
        out = std::move(m);
        break;
    }
    case MessageTag::AdapterUpload: out = read_adapters<T, AdapterUploadMsg<T>>(in, h); break;
    case MessageTag::Broadcast: out = read_adapters<T, BroadcastMsg<T>>(in, h); break;
    case MessageTag::ModelDistribution: {
        ModelDistributionMsg<T> m;
        m.header = h;
        m.tier = read_tier(in);
        m.first_layer = in.u32();
        const std::uint32_t count = in.u32();
        for (std::uint32_t i = 0; i < count; ++i) {
            FrozenLayer<T> layer;
            const std::uint32_t act = in.u32();
            require(act <= 2, ErrorKind::Parse, "invalid activation code " + std::to_string(act));
            layer.activation = static_cast<Activation>(act);
            layer.weight = read_matrix<T>(in);
            m.layers.push_back(std::move(layer));
        }
        out = std::move(m);
        break;
    }
    default: fail(ErrorKind::Parse, "unknown message tag " + std::to_string(tag));
    }
    require(in.at_end(), ErrorKind::Parse, std::to_string(in.remaining()) + " trailing bytes after message");
    return out;
}

template std::vector<std::uint8_t> encode<float>(const ProtocolMessage<float>&);
template std::vector<std::uint8_t> encode<double>(const ProtocolMessage<double>&);
template ProtocolMessage<float> decode<float>(std::span<const std::uint8_t>);
template ProtocolMessage<double> decode<double>(std::span<const std::uint8_t>);

std::uint64_t MessageLog::total_bytes() const noexcept {
    std::uint64_t total = 0;
    for (const auto& r : records_) total += r.bytes;
    return total;
}

std::size_t MessageLog::count(MessageTag tag, Tier src, Tier dst) const noexcept {
    std::size_t c = 0;
    for (const auto& r : records_)
        if (r.tag == tag && r.src == src && r.dst == dst) ++c;
    return c;
}

std::string MessageLog::to_jsonl() const {
    std::string out;
    for (const auto& r : records_) {
        nlohmann::ordered_json j;
        j["tag"] = to_string(r.tag);
        j["t"] = r.header.t;
        j["k"] = r.header.k;
        j["m"] = r.header.m;
        j["n"] = r.header.n;
        j["bytes"] = r.bytes;
        j["src"] = to_string(r.src);
        j["dst"] = to_string(r.dst);
        out += j.dump();
        out += '\n';
    }
    return out;
}

const LinkModel& LinkModels::between(Tier a, Tier b) const noexcept {
    const bool has_user = a == Tier::User || b == Tier::User;
    const bool has_edge = a == Tier::Edge || b == Tier::Edge;
    if (has_user && has_edge) return user_edge;
    if (has_user) return user_cloud;
    return edge_cloud;
}

double SimNetwork::estimate_seconds(const MessageLog& log) const noexcept {
    double seconds = 0.0;
    for (const auto& r : log.records()) seconds += links_.between(r.src, r.dst).seconds_for(r.bytes);
    return seconds;
}

double SimNetwork::commit(const MessageLog& log) {
    for (const auto& r : log.records()) bytes_[idx(r.src)][idx(r.dst)] += r.bytes;
    log_.append(log);
    return estimate_seconds(log);
}

std::uint64_t SimNetwork::tier_bytes(Tier tier) const noexcept {
    std::uint64_t total = 0;
    for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = 0; b < 3; ++b)
            if (a == idx(tier) || b == idx(tier)) total += bytes_[a][b];
    return total;
}

std::uint64_t SimNetwork::total_bytes() const noexcept {
    std::uint64_t total = 0;
    for (const auto& row : bytes_)
        for (auto v : row) total += v;
    return total;
}

} // namespace splitllm
