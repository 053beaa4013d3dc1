#include "oracles.hpp"

#include "splitllm/lora.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace splitllm;

namespace {

Matrix64 rand64(std::size_t r, std::size_t c, Rng& rng, double sd = 1.0) {
    return gaussian_matrix<double>(r, c, 0.0, sd, rng);
}

LoraAdapter<double> random_adapter(std::uint32_t l, std::size_t d, std::size_t h, std::size_t r, Rng& rng) {
    return {l, rand64(d, r, rng, 0.5), rand64(r, h, rng, 0.5), 0.5};
}

double sum_weighted(const Matrix64& y, const Matrix64& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y.values()[i] * w.values()[i];
    return s;
}

std::shared_ptr<FrozenModel<double>> small_model(Rng& rng, Activation hidden = Activation::Tanh) {
    auto model = std::make_shared<FrozenModel<double>>();
    const std::size_t dims[] = {5, 7, 6, 4, 3};
    for (std::size_t l = 0; l + 1 < std::size(dims); ++l)
        model->layers.push_back({rand64(dims[l], dims[l + 1], rng, 0.6),
                                 l + 2 == std::size(dims) ? Activation::Identity : hidden});
    return model;
}

AdapterSet<double> random_adapters(const FrozenModel<double>& model, std::size_t r, Rng& rng) {
    AdapterSet<double> out;
    for (std::size_t l = 0; l < model.layers.size(); ++l)
        out.push_back(random_adapter(static_cast<std::uint32_t>(l + 1), model.layers[l].in_dim(),
                                     model.layers[l].out_dim(), r, rng));
    return out;
}

} // namespace

TEST(InitAdapter, BIsZeroAndProductIsZero) {
    Rng rng(1);
    for (auto [d, h, r] : {std::tuple{16, 128, 8}, {64, 64, 8}, {7, 3, 2}}) {
        const auto ad = init_adapter<float>(1, d, h, r, 0.02, rng);
        EXPECT_EQ(ad.a.rows(), static_cast<std::size_t>(d));
        EXPECT_EQ(ad.a.cols(), static_cast<std::size_t>(r));
        EXPECT_EQ(ad.b, Matrix(r, h));
        EXPECT_EQ(matmul(ad.a, ad.b), Matrix(d, h));
    }
}

TEST(InitAdapter, ZeroSigmaGivesZeroA) {
    Rng rng(1);
    const auto ad = init_adapter<float>(1, 8, 8, 2, 0.0, rng);
    EXPECT_EQ(ad.a, Matrix(8, 2));
}

TEST(InitAdapter, ParameterCount) {
    Rng rng(1);
    EXPECT_EQ(init_adapter<float>(1, 64, 64, 8, 0.02, rng).parameter_count(), 1024u);
}

TEST(InitAdapter, RankMustBeBelowBothDims) {
    Rng rng(1);
    for (std::size_t r : {0, 4, 9}) {
        try {
            init_adapter<float>(1, 4, 16, r, 0.02, rng);
            FAIL() << "rank " << r;
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::Config);
        }
    }
}

TEST(ModelShape, TrainableCountIsSumOfRankTimesDims) {
    ModelShape shape;
    std::size_t want = 0;
    for (std::size_t l = 1; l <= shape.layer_count(); ++l) {
        const auto [d, h] = shape.layer_dims(l);
        want += shape.layer_rank(l) * (d + h);
    }
    EXPECT_EQ(shape.trainable_parameter_count(), want);
    // 16->128->64->64->32->3, rank 8 except the 3-wide head (rank 2)
    EXPECT_EQ(want, 8u * 144 + 8u * 192 + 8u * 128 + 8u * 96 + 2u * 35);
    const auto model = build_model<float>(shape, 1);
    std::size_t counted = 0;
    for (const auto& a : model.adapters) counted += a.parameter_count();
    EXPECT_EQ(counted, want);
}

TEST(ModelShape, FrozenWeightsAreDeterministicAndChained) {
    ModelShape shape;
    const auto a = build_model<float>(shape, 5);
    const auto b = build_model<float>(shape, 5);
    for (std::size_t l = 0; l < a.layer_count(); ++l) {
        EXPECT_EQ(a.frozen->layers[l].weight, b.frozen->layers[l].weight);
        if (l + 1 < a.layer_count()) {
            EXPECT_EQ(a.frozen->layers[l].out_dim(), a.frozen->layers[l + 1].in_dim());
        }
    }
    EXPECT_EQ(a.frozen->layers.back().activation, Activation::Identity);
}

TEST(LayerForward, ZeroAdapterMatchesFrozenOnly) {
    Rng rng(2);
    FrozenLayer<double> layer{rand64(3, 4, rng), Activation::Tanh};
    LoraAdapter<double> ad{1, rand64(3, 2, rng), Matrix64(2, 4), 0.0};
    const auto x = rand64(5, 3, rng);
    const auto y = layer_forward(x, layer, ad).output;
    EXPECT_EQ(y, activation_forward(Activation::Tanh, matmul(x, layer.weight)));
}

TEST(LayerForward, IdentityWeightIsPassThrough) {
    Rng rng(2);
    FrozenLayer<double> layer{Matrix64::identity(3), Activation::Identity};
    LoraAdapter<double> ad{1, rand64(3, 1, rng), Matrix64(1, 3), 0.0};
    const auto x = rand64(4, 3, rng);
    EXPECT_EQ(layer_forward(x, layer, ad).output, x);
}

TEST(LayerForward, MatchesHandExpandedOracle) {
    Rng rng(3);
    FrozenLayer<double> layer{rand64(2, 3, rng), Activation::Relu};
    const auto ad = random_adapter(1, 2, 3, 1, rng);
    const auto x = rand64(4, 2, rng);
    const auto got = layer_forward(x, layer, ad).output;
    const auto want = oracle::layer(oracle::to_mat(x), layer, ad);
    for (std::size_t i = 0; i < got.rows(); ++i)
        for (std::size_t j = 0; j < got.cols(); ++j) EXPECT_LT(std::abs(got(i, j) - want[i][j]), 1e-5);
}

TEST(LayerForward, ShapeMismatchIsShapeError) {
    Rng rng(3);
    FrozenLayer<double> layer{rand64(3, 4, rng), Activation::Tanh};
    const auto ad = random_adapter(1, 3, 4, 2, rng);
    try {
        layer_forward(rand64(2, 5, rng), layer, ad);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Shape);
    }
}

TEST(LayerBackward, MatchesFiniteDifferences) {
    Rng rng(4);
    FrozenLayer<double> layer{rand64(4, 4, rng), Activation::Tanh};
    auto ad = random_adapter(1, 4, 4, 2, rng);
    auto x = rand64(3, 4, rng);
    const auto probe = rand64(3, 4, rng); // scalar objective: sum(probe ⊙ y)
    auto fwd = layer_forward(x, layer, ad);
    const auto g = layer_backward(fwd.cache, probe);

    auto check = [&](Matrix64& param, const Matrix64& analytic) {
        for (std::size_t i = 0; i < param.size(); ++i) {
            double& v = param.values()[i];
            const double saved = v;
            v = saved + 1e-6;
            const double up = sum_weighted(layer_forward(x, layer, ad).output, probe);
            v = saved - 1e-6;
            const double down = sum_weighted(layer_forward(x, layer, ad).output, probe);
            v = saved;
            EXPECT_LT(oracle::rel_err(analytic.values()[i], (up - down) / 2e-6, 1e-6), 1e-4);
        }
    };
    check(ad.a, g.ga);
    check(ad.b, g.gb);
    check(x, g.dx);
}

TEST(LayerBackward, ZeroUpstreamGivesZeroGradients) {
    Rng rng(5);
    FrozenLayer<double> layer{rand64(3, 4, rng), Activation::Tanh};
    const auto ad = random_adapter(1, 3, 4, 2, rng);
    auto fwd = layer_forward(rand64(2, 3, rng), layer, ad);
    const auto g = layer_backward(fwd.cache, Matrix64(2, 4));
    EXPECT_EQ(g.ga, Matrix64(3, 2));
    EXPECT_EQ(g.gb, Matrix64(2, 4));
    EXPECT_EQ(g.dx, Matrix64(2, 3));
}

TEST(LayerBackward, FreshAdapterHasZeroGradAAndNonzeroGradB) {
    Rng rng(6);
    FrozenLayer<double> layer{rand64(3, 4, rng), Activation::Tanh};
    const auto ad = init_adapter<double>(1, 3, 4, 2, 0.5, rng);
    auto fwd = layer_forward(rand64(5, 3, rng), layer, ad);
    const auto g = layer_backward(fwd.cache, rand64(5, 4, rng));
    EXPECT_EQ(g.ga, Matrix64(3, 2));
    EXPECT_GT(frobenius_norm(g.gb), 0.0);
}

TEST(LayerBackward, CacheIsOneShot) {
    Rng rng(7);
    FrozenLayer<double> layer{rand64(3, 4, rng), Activation::Tanh};
    const auto ad = random_adapter(1, 3, 4, 2, rng);
    auto fwd = layer_forward(rand64(2, 3, rng), layer, ad);
    layer_backward(fwd.cache, Matrix64(2, 4));
    try {
        layer_backward(fwd.cache, Matrix64(2, 4));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Usage);
    }
}

TEST(Segment, SingleLayerSegmentIsLayerForward) {
    Rng rng(8);
    auto model = small_model(rng);
    const auto adapters = random_adapters(*model, 2, rng);
    const Segment<double> seg{model, 1, 2};
    const auto x = rand64(3, 7, rng);
    const auto local = slice_adapters(adapters, seg);
    EXPECT_EQ(segment_forward(seg, std::span<const LoraAdapter<double>>(local), x).output,
              layer_forward(x, model->layers[1], adapters[1]).output);
}

TEST(Segment, SplitChainEqualsMonolithicForwardAndBackward) {
    Rng rng(9);
    auto model = small_model(rng);
    const auto adapters = random_adapters(*model, 2, rng);
    const auto x = rand64(6, 5, rng);
    const auto dy = rand64(6, 3, rng);

    const auto whole = whole_model<double>(model);
    auto mono = segment_forward(whole, std::span<const LoraAdapter<double>>(adapters), x);
    const auto mono_back = segment_backward(mono.cache, dy);

    const auto parts = partition_model<double>(model, 2);
    std::vector<SegmentCache<double>> caches;
    Matrix64 h = x;
    for (const Segment<double>* seg : {&parts.user, &parts.edge, &parts.cloud}) {
        const auto local = slice_adapters(adapters, *seg);
        auto f = segment_forward(*seg, std::span<const LoraAdapter<double>>(local), h);
        h = f.output;
        caches.push_back(std::move(f.cache));
    }
    EXPECT_EQ(h, mono.output);

    Matrix64 g = dy;
    std::vector<AdapterGrad<double>> split_grads;
    for (std::size_t s = caches.size(); s-- > 0;) {
        auto b = segment_backward(caches[s], g);
        g = b.downstream;
        split_grads.insert(split_grads.begin(), b.grads.begin(), b.grads.end());
    }
    EXPECT_EQ(g, mono_back.downstream);
    ASSERT_EQ(split_grads.size(), mono_back.grads.size());
    for (std::size_t l = 0; l < split_grads.size(); ++l) {
        EXPECT_EQ(split_grads[l].layer_index, mono_back.grads[l].layer_index);
        EXPECT_EQ(split_grads[l].ga, mono_back.grads[l].ga);
        EXPECT_EQ(split_grads[l].gb, mono_back.grads[l].gb);
    }
}

TEST(Segment, ForwardMatchesOracleAndGradientsMatchFiniteDifferences) {
    Rng rng(10);
    auto model = small_model(rng);
    auto adapters = random_adapters(*model, 2, rng);
    const auto x = rand64(4, 5, rng);
    const std::vector<std::uint32_t> labels{0, 2, 1, 2};
    const auto whole = whole_model<double>(model);

    auto fwd = segment_forward(whole, std::span<const LoraAdapter<double>>(adapters), x);
    const auto want = oracle::forward(*model, adapters, oracle::to_mat(x));
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_LT(std::abs(fwd.output(i, j) - want[i][j]), 1e-12);

    const auto ce = softmax_cross_entropy(fwd.output, std::span<const std::uint32_t>(labels));
    const auto grads = segment_backward(fwd.cache, ce.dlogits).grads;
    auto loss = [&] { return oracle::mean_ce(oracle::forward(*model, adapters, oracle::to_mat(x)), labels); };
    for (std::size_t l = 0; l < adapters.size(); ++l) {
        for (auto [param, analytic] : {std::pair{&adapters[l].a, &grads[l].ga}, std::pair{&adapters[l].b, &grads[l].gb}}) {
            for (std::size_t i = 0; i < param->size(); ++i) {
                double& v = param->values()[i];
                const double saved = v;
                v = saved + 1e-6;
                const double up = loss();
                v = saved - 1e-6;
                const double down = loss();
                v = saved;
                EXPECT_LT(oracle::rel_err(analytic->values()[i], (up - down) / 2e-6, 1e-6), 1e-4)
                    << "layer " << l + 1 << " entry " << i;
            }
        }
    }
}

TEST(Segment, IdentityModelPassesInputAndGradientThrough) {
    auto model = std::make_shared<FrozenModel<double>>();
    AdapterSet<double> adapters;
    for (std::uint32_t l = 1; l <= 3; ++l) {
        model->layers.push_back({Matrix64::identity(4), Activation::Identity});
        adapters.push_back({l, Matrix64(4, 1), Matrix64(1, 4), 0.0});
    }
    Rng rng(11);
    const auto x = rand64(2, 4, rng);
    auto fwd = segment_forward(whole_model<double>(model), std::span<const LoraAdapter<double>>(adapters), x);
    EXPECT_EQ(fwd.output, x);
    const auto up = rand64(2, 4, rng);
    EXPECT_EQ(segment_backward(fwd.cache, up).downstream, up);
}

TEST(Segment, EmptySegmentAndMissingAdapterAreConfigErrors) {
    Rng rng(12);
    auto model = small_model(rng);
    const auto adapters = random_adapters(*model, 2, rng);
    const Segment<double> empty{model, 1, 1};
    EXPECT_THROW(segment_forward(empty, std::span<const LoraAdapter<double>>(), rand64(1, 7, rng)), Error);
    const Segment<double> two{model, 0, 2};
    try {
        segment_forward(two, std::span<const LoraAdapter<double>>(adapters.data(), 1), rand64(1, 5, rng));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Config);
    }
}

TEST(InitNeutrality, FreshModelLossEqualsFrozenLossBitwise) {
    ModelShape shape;
    const auto model = build_model<float>(shape, 3);
    Rng rng(4);
    const auto x = gaussian_matrix<float>(32, shape.input_dim, 0.0, 1.0, rng);
    std::vector<std::uint32_t> labels(32);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint32_t>(i % 3);
    const auto whole = whole_model(model.frozen);
    const auto with = segment_forward(whole, std::span<const LoraAdapter<float>>(model.adapters), x).output;
    const auto without = frozen_forward(whole, x);
    EXPECT_EQ(with, without);
    EXPECT_EQ(softmax_cross_entropy(with, std::span<const std::uint32_t>(labels)).loss,
              softmax_cross_entropy(without, std::span<const std::uint32_t>(labels)).loss);
}

TEST(PartitionModel, SegmentSizes) {
    Rng rng(13);
    auto six = std::make_shared<FrozenModel<double>>();
    for (int l = 0; l < 6; ++l) six->layers.push_back({rand64(4, 4, rng), Activation::Tanh});
    const auto p = partition_model<double>(six, 3);
    EXPECT_EQ(p.user.size(), 1u);
    EXPECT_EQ(p.edge.size(), 2u);
    EXPECT_EQ(p.cloud.size(), 3u);
    EXPECT_EQ(p.user.last, p.edge.first);
    EXPECT_EQ(p.edge.last, p.cloud.first);
    EXPECT_EQ(p.cloud.last, 6u);

    auto three = std::make_shared<FrozenModel<double>>();
    for (int l = 0; l < 3; ++l) three->layers.push_back({rand64(4, 4, rng), Activation::Tanh});
    const auto q = partition_model<double>(three, 2);
    EXPECT_EQ(q.user.size() + q.edge.size() + q.cloud.size(), 3u);
    EXPECT_EQ(q.cloud.size(), 1u);
}

TEST(PartitionModel, CutOutOfRangeIsConfigError) {
    Rng rng(14);
    auto model = small_model(rng);
    for (std::size_t cut : {0, 1, 4, 5}) {
        try {
            partition_model<double>(model, cut);
            FAIL() << "cut " << cut;
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::Config);
        }
    }
}

TEST(Sgd, OneStepWithoutMomentum) {
    LoraAdapter<double> ad{1, Matrix64::from_rows({{1.0}}), Matrix64::from_rows({{0.0}}), 0.0};
    auto state = MomentumBuffers<double>::zeros_like(ad);
    sgd_step(ad, Matrix64::from_rows({{2.0}}), Matrix64::from_rows({{0.0}}), state, SgdParams{0.1, 0.0});
    EXPECT_NEAR(ad.a(0, 0), 0.8, 1e-15);
}

TEST(Sgd, ZeroGradientLeavesParametersUnchanged) {
    Rng rng(15);
    auto ad = random_adapter(1, 3, 4, 2, rng);
    const auto before = ad;
    auto state = MomentumBuffers<double>::zeros_like(ad);
    sgd_step(ad, Matrix64(3, 2), Matrix64(2, 4), state, SgdParams{0.5, 0.9});
    EXPECT_EQ(ad, before);
}

TEST(Sgd, TwoMomentumStepsMatchHandRecurrence) {
    LoraAdapter<double> ad{1, Matrix64::from_rows({{1.0}}), Matrix64::from_rows({{-2.0}}), 0.0};
    auto state = MomentumBuffers<double>::zeros_like(ad);
    const SgdParams p{0.1, 0.9};
    sgd_step(ad, Matrix64::from_rows({{2.0}}), Matrix64::from_rows({{1.0}}), state, p);
    sgd_step(ad, Matrix64::from_rows({{-1.0}}), Matrix64::from_rows({{3.0}}), state, p);
    // A: v1 = 2, a1 = 0.8; v2 = 0.9*2 - 1 = 0.8, a2 = 0.8 - 0.08 = 0.72
    // B: v1 = 1, b1 = -2.1; v2 = 0.9 + 3 = 3.9, b2 = -2.1 - 0.39 = -2.49
    EXPECT_NEAR(ad.a(0, 0), 0.72, 1e-14);
    EXPECT_NEAR(ad.b(0, 0), -2.49, 1e-14);
}

TEST(Sgd, DecayIsPerRoundMultiplicative) {
    EXPECT_EQ(decayed_learning_rate(0.3, 0.998, 1), 0.3);
    EXPECT_NEAR(decayed_learning_rate(0.3, 0.998, 11), 0.3 * std::pow(0.998, 10), 1e-15);
}

TEST(AdapterSnapshot, RoundTripIsLossless) {
    Rng rng(16);
    const auto ad = init_adapter<float>(3, 12, 9, 4, 0.3, rng);
    const auto path = std::filesystem::temp_directory_path() / "splitllm_test_adapter.slad";
    save_adapter(path, ad);
    EXPECT_EQ(std::filesystem::file_size(path), adapter_block_size(ad));
    EXPECT_EQ(std::filesystem::file_size(path), oracle::adapter_bytes(12, 9, 4));
    EXPECT_EQ(load_adapter<float>(path), ad);
    std::filesystem::remove(path);
}

TEST(AdapterSnapshot, PrecisionMismatchIsParseError) {
    Rng rng(17);
    const auto ad = init_adapter<float>(1, 4, 4, 2, 0.3, rng);
    ByteWriter w;
    write_adapter(w, ad);
    ByteReader r(w.bytes());
    try {
        read_adapter<double>(r);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Parse);
    }
}
