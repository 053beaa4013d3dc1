#include "splitllm/lora.hpp"

#include <cmath>

namespace splitllm {

namespace {

thread_local double g_backward_fault_scale = 1.0;

} // namespace

namespace testing {

ScopedBackwardFault::ScopedBackwardFault(double gb_scale) : previous_(g_backward_fault_scale) {
    g_backward_fault_scale = gb_scale;
}

ScopedBackwardFault::~ScopedBackwardFault() { g_backward_fault_scale = previous_; }

} // namespace testing

template <typename T>
LoraAdapter<T> init_adapter(std::uint32_t layer_index, std::size_t d, std::size_t h, std::size_t r, double sigma,
                            Rng& rng) {
    require(r >= 1 && r < std::min(d, h), ErrorKind::Config,
            "layer " + std::to_string(layer_index) + ": rank " + std::to_string(r) + " violates 1 <= r < min(" +
                std::to_string(d) + ", " + std::to_string(h) + ")");
    require(sigma >= 0.0, ErrorKind::Config, "adapter init std must be >= 0");
    LoraAdapter<T> adapter;
    adapter.layer_index = layer_index;
    adapter.a = gaussian_matrix<T>(d, r, 0.0, sigma, rng);
    adapter.b = BasicMatrix<T>(r, h);
    adapter.init_std = sigma;
    return adapter;
}

template <typename T>
std::size_t FrozenModel<T>::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& layer : layers) n += layer.weight.size();
    return n;
}

std::pair<std::size_t, std::size_t> ModelShape::layer_dims(std::size_t l) const {
    require(l >= 1 && l <= layer_count(), ErrorKind::Config, "layer index " + std::to_string(l) + " out of range");
    const std::size_t d = l == 1 ? input_dim : widths[l - 2];
    const std::size_t h = l == layer_count() ? classes : widths[l - 1];
    return {d, h};
}

std::size_t ModelShape::layer_rank(std::size_t l) const {
    const auto [d, h] = layer_dims(l);
    const std::size_t narrow = std::min(d, h);
    return narrow > rank ? rank : narrow - 1;
}

std::size_t ModelShape::trainable_parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 1; l <= layer_count(); ++l) {
        const auto [d, h] = layer_dims(l);
        n += layer_rank(l) * (d + h);
    }
    return n;
}

std::size_t ModelShape::frozen_parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 1; l <= layer_count(); ++l) {
        const auto [d, h] = layer_dims(l);
        n += d * h;
    }
    return n;
}

void ModelShape::validate() const {
    require(input_dim >= 1, ErrorKind::Config, "input_dim must be >= 1");
    require(classes >= 2, ErrorKind::Config, "classes must be >= 2");
    require(rank >= 1, ErrorKind::Config, "rank must be >= 1");
    require(init_std >= 0.0, ErrorKind::Config, "init_std must be >= 0");
    require(input_dim > rank, ErrorKind::Config,
            "rank " + std::to_string(rank) + " must be below the input dimension " + std::to_string(input_dim));
    for (std::size_t w : widths)
        require(w > rank, ErrorKind::Config,
                "rank " + std::to_string(rank) + " must be below every hidden width (got " + std::to_string(w) + ")");
}

template <typename T>
LayeredModel<T> build_model(const ModelShape& shape, std::uint64_t seed) {
    shape.validate();
    auto frozen = std::make_shared<FrozenModel<T>>();
    LayeredModel<T> model;
    for (std::size_t l = 1; l <= shape.layer_count(); ++l) {
        const auto [d, h] = shape.layer_dims(l);
        Rng w_rng = make_stream(seed, StreamPurpose::FrozenWeights, l);
        FrozenLayer<T> layer;
        layer.weight = gaussian_matrix<T>(d, h, 0.0, 1.0 / std::sqrt(static_cast<double>(d)), w_rng);
        layer.activation = l == shape.layer_count() ? Activation::Identity : shape.hidden_activation;
        frozen->layers.push_back(std::move(layer));

        Rng a_rng = make_stream(seed, StreamPurpose::AdapterInit, l);
        model.adapters.push_back(
            init_adapter<T>(static_cast<std::uint32_t>(l), d, h, shape.layer_rank(l), shape.init_std, a_rng));
    }
    model.frozen = std::move(frozen);
    return model;
}

template <typename T>
Segment<T> whole_model(const std::shared_ptr<const FrozenModel<T>>& frozen) {
    return Segment<T>{frozen, 0, frozen->layer_count()};
}

template <typename T>
ModelPartition<T> partition_model(const std::shared_ptr<const FrozenModel<T>>& frozen, std::size_t cut_edge) {
    const std::size_t L = frozen->layer_count();
    require(cut_edge > 1 && cut_edge < L, ErrorKind::Config,
            "cut layer L_e = " + std::to_string(cut_edge) + " must satisfy 1 < L_e < L = " + std::to_string(L) +
                (cut_edge >= L ? " (cloud segment empty)" : " (edge segment empty)"));
    return ModelPartition<T>{Segment<T>{frozen, 0, 1}, Segment<T>{frozen, 1, cut_edge}, Segment<T>{frozen, cut_edge, L},
                             cut_edge};
}

template <typename T>
AdapterSet<T> slice_adapters(const AdapterSet<T>& all, const Segment<T>& segment) {
    require(all.size() >= segment.last, ErrorKind::Shape, "adapter set shorter than segment");
    AdapterSet<T> out(all.begin() + static_cast<std::ptrdiff_t>(segment.first),
                      all.begin() + static_cast<std::ptrdiff_t>(segment.last));
    return out;
}

template <typename T>
LayerForward<T> layer_forward(const BasicMatrix<T>& x, const FrozenLayer<T>& layer, const LoraAdapter<T>& adapter) {
    require(x.cols() == layer.in_dim(), ErrorKind::Shape,
            "layer " + std::to_string(adapter.layer_index) + ": input " + x.shape_string() + " does not match d = " +
                std::to_string(layer.in_dim()));
    require(adapter.a.rows() == layer.in_dim() && adapter.b.cols() == layer.out_dim() &&
                adapter.a.cols() == adapter.b.rows(),
            ErrorKind::Shape, "layer " + std::to_string(adapter.layer_index) + ": adapter shape mismatch");
    BasicMatrix<T> w_eff = add(layer.weight, matmul(adapter.a, adapter.b));
    BasicMatrix<T> z = matmul(x, w_eff);
    BasicMatrix<T> y = activation_forward(layer.activation, z);
    BasicMatrix<T> xa = matmul(x, adapter.a);
    return LayerForward<T>{std::move(y),
                           LayerCache<T>{x, std::move(xa), std::move(z), std::move(w_eff), adapter.b, layer.activation}};
}

template <typename T>
LayerGrads<T> layer_backward(LayerCache<T>& cache, const BasicMatrix<T>& dy) {
    require(!cache.consumed, ErrorKind::Usage, "layer cache already consumed by a previous backward pass");
    require(dy.rows() == cache.z.rows() && dy.cols() == cache.z.cols(), ErrorKind::Shape,
            "upstream gradient " + dy.shape_string() + " does not match forward output " + cache.z.shape_string());
    cache.consumed = true;
    const BasicMatrix<T> dz = activation_backward(cache.activation, cache.z, dy);
    LayerGrads<T> g;
    g.ga = matmul_nt(matmul_tn(cache.x, dz), cache.b);
    g.gb = matmul_tn(cache.xa, dz);
    g.dx = matmul_nt(dz, cache.effective_weight);
    if (g_backward_fault_scale != 1.0) {
        for (T& v : g.gb.values()) v *= static_cast<T>(g_backward_fault_scale);
    }
    return g;
}

template <typename T>
SegmentForward<T> segment_forward(const Segment<T>& segment, std::span<const LoraAdapter<T>> adapters,
                                  const BasicMatrix<T>& input) {
    require(segment.size() > 0, ErrorKind::Config, "empty segment");
    require(adapters.size() == segment.size(), ErrorKind::Config,
            "segment has " + std::to_string(segment.size()) + " layers but " + std::to_string(adapters.size()) +
                " adapters; every layer must own an adapter");
    SegmentForward<T> out;
    out.cache.first_index = segment.first_index();
    out.cache.layers.reserve(segment.size());
    BasicMatrix<T> h = input;
    for (std::size_t i = 0; i < segment.size(); ++i) {
        require(adapters[i].layer_index == segment.first_index() + i, ErrorKind::Config,
                "adapter for layer " + std::to_string(adapters[i].layer_index) + " supplied at layer " +
                    std::to_string(segment.first_index() + i));
        auto step = layer_forward(h, segment.layer(i), adapters[i]);
        h = std::move(step.output);
        out.cache.layers.push_back(std::move(step.cache));
    }
    out.output = std::move(h);
    return out;
}

template <typename T>
SegmentBackward<T> segment_backward(SegmentCache<T>& cache, const BasicMatrix<T>& upstream) {
    require(!cache.layers.empty(), ErrorKind::Usage, "segment cache is empty");
    SegmentBackward<T> out;
    out.grads.resize(cache.layers.size());
    BasicMatrix<T> g = upstream;
    for (std::size_t i = cache.layers.size(); i-- > 0;) {
        auto lg = layer_backward(cache.layers[i], g);
        out.grads[i] = AdapterGrad<T>{static_cast<std::uint32_t>(cache.first_index + i), std::move(lg.ga),
                                      std::move(lg.gb)};
        g = std::move(lg.dx);
    }
    out.downstream = std::move(g);
    return out;
}

template <typename T>
BasicMatrix<T> frozen_forward(const Segment<T>& segment, const BasicMatrix<T>& input) {
    BasicMatrix<T> h = input;
    for (std::size_t i = 0; i < segment.size(); ++i) {
        const auto& layer = segment.layer(i);
        h = activation_forward(layer.activation, matmul(h, layer.weight));
    }
    return h;
}

template <typename T>
void sgd_step(LoraAdapter<T>& adapter, const BasicMatrix<T>& ga, const BasicMatrix<T>& gb, MomentumBuffers<T>& state,
              const SgdParams& params) {
    require(ga.rows() == adapter.a.rows() && ga.cols() == adapter.a.cols() && gb.rows() == adapter.b.rows() &&
                gb.cols() == adapter.b.cols(),
            ErrorKind::Shape, "sgd_step: gradient shape does not match adapter " + std::to_string(adapter.layer_index));
    require(state.va.rows() == ga.rows() && state.va.cols() == ga.cols() && state.vb.rows() == gb.rows() &&
                state.vb.cols() == gb.cols(),
            ErrorKind::Shape, "sgd_step: momentum buffer shape does not match adapter");
    const T lr = static_cast<T>(params.learning_rate);
    const T mu = static_cast<T>(params.momentum);
    auto update = [&](BasicMatrix<T>& p, const BasicMatrix<T>& g, BasicMatrix<T>& v) {
        auto pv = p.values();
        auto gv = g.values();
        auto vv = v.values();
        for (std::size_t i = 0; i < pv.size(); ++i) {
            vv[i] = mu * vv[i] + gv[i];
            pv[i] -= lr * vv[i];
        }
    };
    update(adapter.a, ga, state.va);
    update(adapter.b, gb, state.vb);
}

double decayed_learning_rate(double base, double decay, std::size_t round) {
    double lr = base;
    for (std::size_t t = 1; t < round; ++t) lr *= decay;
    return lr;
}

template <typename T>
void write_adapter(ByteWriter& out, const LoraAdapter<T>& adapter) {
    out.tag("SLAD");
    out.u32(adapter.layer_index);
    out.u32(static_cast<std::uint32_t>(adapter.rank()));
    write_matrix(out, adapter.a);
    write_matrix(out, adapter.b);
}

template <typename T>
LoraAdapter<T> read_adapter(ByteReader& in) {
    in.expect_tag("SLAD");
    LoraAdapter<T> adapter;
    adapter.layer_index = in.u32();
    const std::uint32_t r = in.u32();
    adapter.a = read_matrix<T>(in);
    adapter.b = read_matrix<T>(in);
    require(adapter.a.cols() == r && adapter.b.rows() == r, ErrorKind::Parse,
            "adapter snapshot rank " + std::to_string(r) + " disagrees with its matrices");
    return adapter;
}

template <typename T>
void save_adapter(const std::filesystem::path& path, const LoraAdapter<T>& adapter) {
    ByteWriter w;
    write_adapter(w, adapter);
    write_file(path, w.bytes());
}

template <typename T>
LoraAdapter<T> load_adapter(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    ByteReader r(bytes);
    auto adapter = read_adapter<T>(r);
    require(r.at_end(), ErrorKind::Parse, "trailing bytes in adapter snapshot '" + path.string() + "'");
    return adapter;
}

#define SPLITLLM_INSTANTIATE(T)                                                                                   \
    template struct FrozenModel<T>;                                                                               \
    template LoraAdapter<T> init_adapter<T>(std::uint32_t, std::size_t, std::size_t, std::size_t, double, Rng&);  \
    template LayeredModel<T> build_model<T>(const ModelShape&, std::uint64_t);                                    \
    template Segment<T> whole_model(const std::shared_ptr<const FrozenModel<T>>&);                                \
    template ModelPartition<T> partition_model(const std::shared_ptr<const FrozenModel<T>>&, std::size_t);        \
    template AdapterSet<T> slice_adapters(const AdapterSet<T>&, const Segment<T>&);                               \
    template LayerForward<T> layer_forward(const BasicMatrix<T>&, const FrozenLayer<T>&, const LoraAdapter<T>&);  \
    template LayerGrads<T> layer_backward(LayerCache<T>&, const BasicMatrix<T>&);                                 \
    template SegmentForward<T> segment_forward(const Segment<T>&, std::span<const LoraAdapter<T>>,                \
                                               const BasicMatrix<T>&);                                            \
    template SegmentBackward<T> segment_backward(SegmentCache<T>&, const BasicMatrix<T>&);                        \
    template BasicMatrix<T> frozen_forward(const Segment<T>&, const BasicMatrix<T>&);                             \
    template void sgd_step(LoraAdapter<T>&, const BasicMatrix<T>&, const BasicMatrix<T>&, MomentumBuffers<T>&,    \
                           const SgdParams&);                                                                     \
    template void write_adapter(ByteWriter&, const LoraAdapter<T>&);                                              \
    template LoraAdapter<T> read_adapter<T>(ByteReader&);                                                         \
    template void save_adapter(const std::filesystem::path&, const LoraAdapter<T>&);                              \
    template LoraAdapter<T> load_adapter<T>(const std::filesystem::path&);

SPLITLLM_INSTANTIATE(float)
SPLITLLM_INSTANTIATE(double)

#undef SPLITLLM_INSTANTIATE

} // namespace splitllm
