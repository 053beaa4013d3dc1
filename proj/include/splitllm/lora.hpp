#pragma once

#include "splitllm/matrix.hpp"
#include "splitllm/rng.hpp"
#include "splitllm/snapshot.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace splitllm {

/// Trainable low-rank pair attached to one frozen layer. The effective weight
/// of the layer is W + A·B with no scaling factor.
template <typename T>
struct LoraAdapter {
    std::uint32_t layer_index = 0; // 1-based
    BasicMatrix<T> a;              // d x r
    BasicMatrix<T> b;              // r x h
    double init_std = 0.0;

    std::size_t rank() const noexcept { return a.cols(); }
    std::size_t in_dim() const noexcept { return a.rows(); }
    std::size_t out_dim() const noexcept { return b.cols(); }
    std::size_t parameter_count() const noexcept { return a.size() + b.size(); }

    friend bool operator==(const LoraAdapter& x, const LoraAdapter& y) {
        return x.layer_index == y.layer_index && x.a == y.a && x.b == y.b;
    }
};

template <typename T>
using AdapterSet = std::vector<LoraAdapter<T>>;

/// A ~ N(0, sigma^2) entrywise, B = 0. Requires 1 <= r < min(d, h).
template <typename T>
LoraAdapter<T> init_adapter(std::uint32_t layer_index, std::size_t d, std::size_t h, std::size_t r, double sigma,
                            Rng& rng);

template <typename T>
struct FrozenLayer {
    BasicMatrix<T> weight; // d x h, never updated
    Activation activation = Activation::Identity;

    std::size_t in_dim() const noexcept { return weight.rows(); }
    std::size_t out_dim() const noexcept { return weight.cols(); }
};

/// Immutable pre-trained layers, shared read-only by every tier and replica.
template <typename T>
struct FrozenModel {
    std::vector<FrozenLayer<T>> layers;

    std::size_t layer_count() const noexcept { return layers.size(); }
    std::size_t parameter_count() const noexcept;
};

/// Architecture of the desk-scale model: input -> widths... -> classes.
/// Hidden layers use `hidden_activation`; the head layer is linear.
struct ModelShape {
    std::size_t input_dim = 16;
    std::vector<std::size_t> widths{128, 64, 64, 32};
    std::size_t classes = 3;
    Activation hidden_activation = Activation::Tanh;
    std::size_t rank = 8;
    double init_std = 0.02;

    std::size_t layer_count() const noexcept { return widths.size() + 1; }
    /// (d, h) of layer l, 1-based.
    std::pair<std::size_t, std::size_t> layer_dims(std::size_t l) const;
    /// Configured rank, clamped to min(d, h) - 1 where a layer is too narrow
    /// (in practice only the classification head).
    std::size_t layer_rank(std::size_t l) const;
    std::size_t trainable_parameter_count() const;
    std::size_t frozen_parameter_count() const;
    void validate() const;
};

template <typename T>
struct LayeredModel {
    std::shared_ptr<const FrozenModel<T>> frozen;
    AdapterSet<T> adapters;

    std::size_t layer_count() const noexcept { return frozen ? frozen->layer_count() : 0; }
};

/// Frozen weights W_l ~ N(0, 1/d_l) and fresh adapters, each from its own
/// derived stream of `seed`.
template <typename T>
LayeredModel<T> build_model(const ModelShape& shape, std::uint64_t seed);

/// Contiguous run of layers [first, last) (0-based positions) of a frozen model.
template <typename T>
struct Segment {
    std::shared_ptr<const FrozenModel<T>> frozen;
    std::size_t first = 0;
    std::size_t last = 0;

    std::size_t size() const noexcept { return last - first; }
    const FrozenLayer<T>& layer(std::size_t i) const { return frozen->layers[first + i]; }
    std::size_t in_dim() const { return layer(0).in_dim(); }
    std::size_t out_dim() const { return layer(size() - 1).out_dim(); }
    /// 1-based index of the first layer.
    std::uint32_t first_index() const noexcept { return static_cast<std::uint32_t>(first + 1); }
};

template <typename T>
Segment<T> whole_model(const std::shared_ptr<const FrozenModel<T>>& frozen);

/// Three-way cut: user = {1}, edge = {2..cut_edge}, cloud = {cut_edge+1..L}.
template <typename T>
struct ModelPartition {
    Segment<T> user;
    Segment<T> edge;
    Segment<T> cloud;
    std::size_t cut_edge = 0;
};

template <typename T>
ModelPartition<T> partition_model(const std::shared_ptr<const FrozenModel<T>>& frozen, std::size_t cut_edge);

/// The adapters of `all` that belong to `segment`, in layer order.
template <typename T>
AdapterSet<T> slice_adapters(const AdapterSet<T>& all, const Segment<T>& segment);

/// Values captured by layer_forward for the matching backward pass.
template <typename T>
struct LayerCache {
    BasicMatrix<T> x;
    BasicMatrix<T> xa;
    BasicMatrix<T> z;
    BasicMatrix<T> effective_weight;
    BasicMatrix<T> b;
    Activation activation = Activation::Identity;
    bool consumed = false;
};

template <typename T>
struct LayerForward {
    BasicMatrix<T> output;
    LayerCache<T> cache;
};

template <typename T>
struct LayerGrads {
    BasicMatrix<T> dx;
    BasicMatrix<T> ga;
    BasicMatrix<T> gb;
};

/// y = act(x·(W + A·B)).
template <typename T>
LayerForward<T> layer_forward(const BasicMatrix<T>& x, const FrozenLayer<T>& layer, const LoraAdapter<T>& adapter);

/// With dz = dy ⊙ act'(z): gA = xᵀ·dz·Bᵀ, gB = (x·A)ᵀ·dz, dx = dz·(W + A·B)ᵀ.
/// Uses the adapter values captured at forward time. One-shot.
template <typename T>
LayerGrads<T> layer_backward(LayerCache<T>& cache, const BasicMatrix<T>& dy);

template <typename T>
struct SegmentCache {
    std::vector<LayerCache<T>> layers;
    std::uint32_t first_index = 0;
};

template <typename T>
struct SegmentForward {
    BasicMatrix<T> output;
    SegmentCache<T> cache;
};

template <typename T>
SegmentForward<T> segment_forward(const Segment<T>& segment, std::span<const LoraAdapter<T>> adapters,
                                  const BasicMatrix<T>& input);

template <typename T>
struct AdapterGrad {
    std::uint32_t layer_index = 0;
    BasicMatrix<T> ga;
    BasicMatrix<T> gb;
};

template <typename T>
struct SegmentBackward {
    BasicMatrix<T> downstream;           // gradient w.r.t. the segment input
    std::vector<AdapterGrad<T>> grads;   // ascending layer order
};

template <typename T>
SegmentBackward<T> segment_backward(SegmentCache<T>& cache, const BasicMatrix<T>& upstream);

/// Frozen-only forward (no adapters at all), used for the init-neutrality check.
template <typename T>
BasicMatrix<T> frozen_forward(const Segment<T>& segment, const BasicMatrix<T>& input);

template <typename T>
struct MomentumBuffers {
    BasicMatrix<T> va;
    BasicMatrix<T> vb;

    static MomentumBuffers zeros_like(const LoraAdapter<T>& adapter) {
        return {BasicMatrix<T>(adapter.a.rows(), adapter.a.cols()), BasicMatrix<T>(adapter.b.rows(), adapter.b.cols())};
    }
};

struct SgdParams {
    double learning_rate = 0.0;
    double momentum = 0.0;
};

/// v <- mu·v + g; p <- p - lr·v, for A and B independently.
template <typename T>
void sgd_step(LoraAdapter<T>& adapter, const BasicMatrix<T>& ga, const BasicMatrix<T>& gb, MomentumBuffers<T>& state,
              const SgdParams& params);

/// Learning rate for 1-based round t under a per-round multiplicative decay.
double decayed_learning_rate(double base, double decay, std::size_t round);

/// Adapter file: "SLAD", u32 layer_index, u32 r, then the A and B matrix blocks.
template <typename T>
void write_adapter(ByteWriter& out, const LoraAdapter<T>& adapter);

template <typename T>
LoraAdapter<T> read_adapter(ByteReader& in);

template <typename T>
std::size_t adapter_block_size(const LoraAdapter<T>& adapter) {
    return 12 + matrix_block_size<T>(adapter.a.rows(), adapter.a.cols()) +
           matrix_block_size<T>(adapter.b.rows(), adapter.b.cols());
}

template <typename T>
void save_adapter(const std::filesystem::path& path, const LoraAdapter<T>& adapter);

template <typename T>
LoraAdapter<T> load_adapter(const std::filesystem::path& path);

namespace testing {

/// Scales every gB produced by layer_backward on this thread while alive.
/// Negative control for the gradient checker.
class ScopedBackwardFault {
public:
    explicit ScopedBackwardFault(double gb_scale);
    ~ScopedBackwardFault();
    ScopedBackwardFault(const ScopedBackwardFault&) = delete;
    ScopedBackwardFault& operator=(const ScopedBackwardFault&) = delete;

private:
    double previous_;
};

} // namespace testing

} // namespace splitllm
