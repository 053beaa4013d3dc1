#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>

namespace splitllm {

/// Counter-based generator: Philox4x32-10 (Salmon et al., SC'11) keyed by the
/// 64-bit seed. The 128-bit counter is (draw index lo, draw index hi, stream
/// lo, stream hi), so independent streams need no shared state and replay the
/// same on every platform. One call to next_u64() consumes one Philox block.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept : seed_(seed), stream_(stream) {}

    /// Stable stream id for a tuple such as (purpose, node, round, epoch).
    static std::uint64_t derive_stream(std::initializer_list<std::uint64_t> parts) noexcept;

    static std::array<std::uint32_t, 4> philox_block(std::uint64_t seed, std::uint64_t stream,
                                                     std::uint64_t counter) noexcept;

    std::uint64_t next_u64() noexcept;

    /// Uniform in [0, 1) with 53 random bits. One draw.
    double uniform() noexcept;

    /// Uniform integer in [0, n) by rejection; n > 0.
    std::uint64_t below(std::uint64_t n) noexcept;

    /// Standard normal via Box-Muller (cosine branch). Two draws.
    double normal() noexcept;

    /// Gamma(shape, 1) via Marsaglia-Tsang; shape < 1 uses the
    /// Gamma(shape + 1) * U^(1/shape) boost. Variable draw count.
    double gamma(double shape) noexcept;

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }
    std::uint64_t draws() const noexcept { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
};

/// Purposes for derived streams; values are part of the replay contract.
enum class StreamPurpose : std::uint64_t {
    FrozenWeights = 1,
    AdapterInit = 2,
    BlobCenters = 3,
    BlobTrain = 4,
    BlobTest = 5,
    Partition = 6,
    MiniBatch = 7,
    GradCheck = 8,
};

inline Rng make_stream(std::uint64_t seed, StreamPurpose purpose, std::uint64_t a = 0, std::uint64_t b = 0,
                       std::uint64_t c = 0, std::uint64_t d = 0) {
    return Rng(seed, Rng::derive_stream({static_cast<std::uint64_t>(purpose), a, b, c, d}));
}

} // namespace splitllm
