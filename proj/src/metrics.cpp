#include "splitllm/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace splitllm {

namespace {

template <typename T>
EvalResult score(const BasicMatrix<T>& logits, const Dataset& data) {
    const auto ce = softmax_cross_entropy(logits, std::span<const std::uint32_t>(data.labels));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const auto row = logits.row(i);
        const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        if (best == data.labels[i]) ++correct;
    }
    return {ce.loss, static_cast<double>(correct) / static_cast<double>(logits.rows())};
}

template <typename T>
BasicMatrix<T> all_features(const Dataset& data) {
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return data.gather_features<T>(idx);
}

} // namespace

template <typename T>
EvalResult evaluate(const Segment<T>& model, const AdapterSet<T>& adapters, const Dataset& data) {
    require(data.size() > 0, ErrorKind::Config, "evaluation set is empty");
    require(data.dim() == model.in_dim(), ErrorKind::Shape, "evaluation features do not match the model input");
    const auto fwd = segment_forward(model, std::span<const LoraAdapter<T>>(slice_adapters(adapters, model)),
                                     all_features<T>(data));
    return score(fwd.output, data);
}

template <typename T>
EvalResult evaluate_split(const ModelPartition<T>& parts, const AdapterSet<T>& adapters, const Dataset& data) {
    require(data.size() > 0, ErrorKind::Config, "evaluation set is empty");
    BasicMatrix<T> h = all_features<T>(data);
    for (const Segment<T>* seg : {&parts.user, &parts.edge, &parts.cloud}) {
        const auto local = slice_adapters(adapters, *seg);
        h = segment_forward(*seg, std::span<const LoraAdapter<T>>(local), h).output;
    }
    return score(h, data);
}

template EvalResult evaluate(const Segment<float>&, const AdapterSet<float>&, const Dataset&);
template EvalResult evaluate(const Segment<double>&, const AdapterSet<double>&, const Dataset&);
template EvalResult evaluate_split(const ModelPartition<float>&, const AdapterSet<float>&, const Dataset&);
template EvalResult evaluate_split(const ModelPartition<double>&, const AdapterSet<double>&, const Dataset&);

Scheme parse_scheme(const std::string& name) {
    if (name == "splitllm") return Scheme::SplitLlm;
    if (name == "fl") return Scheme::Fl;
    if (name == "sl") return Scheme::Sl;
    fail(ErrorKind::Config, "unknown scheme '" + name + "' (expected splitllm, fl or sl)");
}

const char* to_string(Scheme scheme) noexcept {
    switch (scheme) {
    case Scheme::SplitLlm: return "splitllm";
    case Scheme::Fl: return "fl";
    case Scheme::Sl: return "sl";
    }
    return "unknown";
}

namespace {

/// Layers [first, last] (1-based, inclusive) held by one device.
TierMemory tier_memory(const ModelShape& shape, std::size_t first, std::size_t last, std::size_t batch,
                       std::size_t adapter_replicas, std::size_t contexts, std::uint64_t elem) {
    TierMemory mem;
    std::size_t widest = 0;
    for (std::size_t l = first; l <= last; ++l) {
        const auto [d, h] = shape.layer_dims(l);
        mem.frozen += d * h * elem;
        mem.adapters += shape.layer_rank(l) * (d + h) * elem * adapter_replicas;
        widest = std::max({widest, d, h});
    }
    mem.optimizer = mem.adapters;
    mem.activations = static_cast<std::uint64_t>(batch) * widest * elem * contexts;
    return mem;
}

} // namespace

MemoryEstimate memory_estimate(const RunConfig& cfg, const ModelShape& shape, Scheme scheme) {
    const std::size_t L = shape.layer_count();
    require(cfg.cut > 1 && cfg.cut < L, ErrorKind::Config, "cut: L_e must satisfy 1 < L_e < L");
    const std::uint64_t elem = cfg.precision == Precision::F32 ? 4 : 8;
    MemoryEstimate est;
    switch (scheme) {
    case Scheme::SplitLlm: {
        const std::size_t replicas = cfg.cloud_replicas == CloudReplicaPolicy::PerEdge ? cfg.edges : 1;
        est.user = tier_memory(shape, 1, 1, cfg.batch, 1, 1, elem);
        est.edge = tier_memory(shape, 2, cfg.cut, cfg.batch, 1, 1, elem);
        est.cloud = tier_memory(shape, cfg.cut + 1, L, cfg.batch, replicas, replicas, elem);
        break;
    }
    case Scheme::Fl: est.user = tier_memory(shape, 1, L, cfg.batch, 1, 1, elem); break;
    case Scheme::Sl:
        est.user = tier_memory(shape, 1, 1, cfg.batch, 1, 1, elem);
        est.cloud = tier_memory(shape, 2, L, cfg.batch, 1, cfg.sl_parallel_contexts, elem);
        break;
    }
    return est;
}

} // namespace splitllm
