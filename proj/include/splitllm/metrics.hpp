#pragma once

#include "splitllm/config.hpp"
#include "splitllm/data.hpp"
#include "splitllm/lora.hpp"

#include <string>

namespace splitllm {

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

/// Forward-only pass over the whole set; accuracy by argmax (ties go to the
/// lowest class index).
template <typename T>
EvalResult evaluate(const Segment<T>& model, const AdapterSet<T>& adapters, const Dataset& data);

/// Same as evaluate, run as user -> edge -> cloud segments.
template <typename T>
EvalResult evaluate_split(const ModelPartition<T>& parts, const AdapterSet<T>& adapters, const Dataset& data);

enum class Scheme { SplitLlm, Fl, Sl };

Scheme parse_scheme(const std::string& name);
const char* to_string(Scheme scheme) noexcept;

/// Additive per-device memory model, in bytes:
///   frozen weights + adapters + momentum buffers + resident activations,
/// where resident activations = batch x widest layer width in the tier x
/// number of contexts resident at once.
struct TierMemory {
    std::uint64_t frozen = 0;
    std::uint64_t adapters = 0;
    std::uint64_t optimizer = 0;
    std::uint64_t activations = 0;

    std::uint64_t total() const noexcept { return frozen + adapters + optimizer + activations; }
};

struct MemoryEstimate {
    TierMemory user;
    TierMemory edge;  // zero when the scheme has no edge tier
    TierMemory cloud; // zero when the scheme trains nothing at the cloud
};

/// splitllm: user {1}, edge {2..L_e} (one replica per edge server), cloud
///   {L_e+1..L} with one adapter replica and one activation context per edge
///   (one of each under the shared cloud policy).
/// fl: the user holds all L layers; edge and cloud report zero.
/// sl: user {1}; cloud {2..L} with one adapter and sl_parallel_contexts
///   activation contexts.
MemoryEstimate memory_estimate(const RunConfig& cfg, const ModelShape& shape, Scheme scheme);

} // namespace splitllm
