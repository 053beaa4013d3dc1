#include "oracles.hpp"

#include "splitllm/baselines.hpp"
#include "splitllm/metrics.hpp"

#include <gtest/gtest.h>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

using namespace splitllm;

namespace {

RunConfig tiny_run(std::size_t rounds) {
    RunConfig cfg;
    cfg.edges = 1;
    cfg.users = 1;
    cfg.rounds = rounds;
    return cfg;
}

template <typename T>
void expect_same_trajectory(const TrainingHistory<T>& a, const TrainingHistory<T>& b, double tol) {
    ASSERT_EQ(a.steps.size(), b.steps.size());
    for (std::size_t i = 0; i < a.steps.size(); ++i)
        ASSERT_LE(oracle::rel_err(a.steps[i].loss, b.steps[i].loss, 1e-12), tol) << "step " << i;
    ASSERT_EQ(a.final_adapters.size(), b.final_adapters.size());
    for (std::size_t l = 0; l < a.final_adapters.size(); ++l) {
        const auto& x = a.final_adapters[l];
        const auto& y = b.final_adapters[l];
        for (std::size_t i = 0; i < x.a.size(); ++i)
            ASSERT_LE(oracle::rel_err(x.a.values()[i], y.a.values()[i], 1e-6), tol) << "layer " << l + 1;
        for (std::size_t i = 0; i < x.b.size(); ++i)
            ASSERT_LE(oracle::rel_err(x.b.values()[i], y.b.values()[i], 1e-6), tol) << "layer " << l + 1;
    }
}

std::vector<oracle::Dims> default_layers() {
    return {{16, 128, 8}, {128, 64, 8}, {64, 64, 8}, {64, 32, 8}, {32, 3, 2}};
}

} // namespace

TEST(Memory, HandComputedSmallModel) {
    RunConfig cfg;
    cfg.edges = 1;
    cfg.users = 1;
    cfg.widths = {32, 32, 32};
    cfg.cut = 2;
    cfg.rank = 4;
    cfg.batch = 8;
    ModelShape shape;
    shape.input_dim = 32;
    shape.widths = {32, 32, 32};
    shape.classes = 32;
    shape.rank = 4;

    const std::uint64_t frozen = 32 * 32 * 4, adapter = 4 * (32 + 32) * 4, acts = 8 * 32 * 4;
    const auto split = memory_estimate(cfg, shape, Scheme::SplitLlm);
    EXPECT_EQ(split.user.total(), frozen + 2 * adapter + acts);
    EXPECT_EQ(split.edge.total(), frozen + 2 * adapter + acts);
    EXPECT_EQ(split.cloud.total(), 2 * frozen + 4 * adapter + acts);

    const auto fl = memory_estimate(cfg, shape, Scheme::Fl);
    EXPECT_EQ(fl.user.total(), 4 * frozen + 8 * adapter + acts);
    EXPECT_EQ(fl.edge.total(), 0u);
    EXPECT_EQ(fl.cloud.total(), 0u);

    const auto sl = memory_estimate(cfg, shape, Scheme::Sl);
    EXPECT_EQ(sl.user.total(), split.user.total());
    EXPECT_EQ(sl.cloud.total(), 3 * frozen + 6 * adapter + acts);
}

TEST(Memory, AdapterBytesAreRankTimesFanInPlusFanOut) {
    RunConfig cfg;
    ModelShape shape;
    const auto fl = memory_estimate(cfg, shape, Scheme::Fl);
    std::uint64_t want = 0;
    for (const auto& l : default_layers()) want += l.r * (l.d + l.h) * 4;
    EXPECT_EQ(fl.user.adapters, want);
    EXPECT_EQ(shape.trainable_parameter_count() * 4, want);
}

TEST(Memory, DefaultConfigOrderings) {
    RunConfig cfg;
    ModelShape shape;
    const auto split = memory_estimate(cfg, shape, Scheme::SplitLlm);
    const auto fl = memory_estimate(cfg, shape, Scheme::Fl);
    const auto sl = memory_estimate(cfg, shape, Scheme::Sl);
    EXPECT_LE(split.user.total(), sl.user.total());
    EXPECT_LT(sl.user.total(), fl.user.total());
    EXPECT_LT(split.cloud.total(), sl.cloud.total());
}

// The cloud ordering depends on the number of edges: every edge adds an
// adapter replica and an activation context at the cloud.
TEST(Memory, CloudOrderingFlipsForManyEdges) {
    ModelShape shape;
    std::size_t flip = 0;
    for (std::size_t m = 1; m <= 64 && flip == 0; ++m) {
        RunConfig cfg;
        cfg.edges = m;
        cfg.users = std::max<std::size_t>(m, 20);
        const auto split = memory_estimate(cfg, shape, Scheme::SplitLlm);
        const auto sl = memory_estimate(cfg, shape, Scheme::Sl);
        if (split.cloud.total() >= sl.cloud.total()) flip = m;
    }
    EXPECT_GT(flip, 5u);
    RunConfig shared;
    shared.edges = 64;
    shared.users = 64;
    shared.cloud_replicas = CloudReplicaPolicy::Shared;
    EXPECT_LT(memory_estimate(shared, shape, Scheme::SplitLlm).cloud.total(),
              memory_estimate(shared, shape, Scheme::Sl).cloud.total());
}

TEST(Evaluate, RandomLabelsScoreNearChance) {
    ModelShape shape;
    shape.classes = 4;
    const auto model = build_model<float>(shape, 3);
    Rng rng(3);
    Dataset data;
    data.classes = 4;
    data.features = gaussian_matrix<float>(4000, 16, 0.0, 1.0, rng);
    for (std::size_t i = 0; i < 4000; ++i) data.labels.push_back(static_cast<std::uint32_t>(rng.below(4)));
    const auto r = evaluate(whole_model(model.frozen), model.adapters, data);
    // sd of the accuracy is sqrt(0.25 * 0.75 / 4000) ~ 0.0068
    EXPECT_NEAR(r.accuracy, 0.25, 0.035);
    EXPECT_GT(r.loss, 0.0);
}

TEST(Evaluate, SplitEqualsWholeModel) {
    const auto split = make_blob_fixture(BlobSpec{}, 4);
    auto model = build_model<float>(ModelShape{}, 4);
    Rng rng(4);
    for (auto& a : model.adapters) a.b = gaussian_matrix<float>(a.b.rows(), a.b.cols(), 0.0, 0.1, rng);
    const auto whole = evaluate(whole_model(model.frozen), model.adapters, split.test);
    const auto parts = evaluate_split(partition_model(model.frozen, 3), model.adapters, split.test);
    EXPECT_EQ(whole.loss, parts.loss);
    EXPECT_EQ(whole.accuracy, parts.accuracy);
}

TEST(Baselines, SplitLlmWithOneUserReplaysCentralizedTraining) {
    auto cfg = tiny_run(4);
    cfg.precision = Precision::F64;
    const auto exp = prepare_experiment(cfg);
    expect_same_trajectory(run_training<double>(cfg, exp), train_centralized<double>(cfg, exp), 1e-10);
    cfg.precision = Precision::F32;
    expect_same_trajectory(run_training<float>(cfg, exp), train_centralized<float>(cfg, exp), 1e-5);
}

TEST(Baselines, FlWithOneUserReplaysCentralizedTraining) {
    const auto cfg = tiny_run(4);
    const auto exp = prepare_experiment(cfg);
    expect_same_trajectory(train_fl_baseline<double>(cfg, exp), train_centralized<double>(cfg, exp), 1e-10);
}

TEST(Baselines, SlWithOneUserReplaysCentralizedTraining) {
    const auto cfg = tiny_run(4);
    const auto exp = prepare_experiment(cfg);
    expect_same_trajectory(train_sl_baseline<double>(cfg, exp), train_centralized<double>(cfg, exp), 1e-10);
}

TEST(Baselines, SplitActivationTrafficEqualsSl) {
    RunConfig cfg;
    cfg.rounds = 2;
    const auto exp = prepare_experiment(cfg);
    const auto split = run_training<float>(cfg, exp);
    const auto sl = train_sl_baseline<float>(cfg, exp);
    EXPECT_EQ(split.user_activation_bytes(), sl.user_activation_bytes());
    // 600 samples over 20 users leaves 30 per shard, below the batch of 32
    EXPECT_EQ(split.user_activation_bytes(),
              2ull * 20 * (oracle::activation_bytes(30, 128) + oracle::gradient_bytes(30, 128)));
}

TEST(Baselines, FlTrafficIsTwoFullAdapterSetsPerUserPerRound) {
    RunConfig cfg;
    cfg.rounds = 3;
    const auto exp = prepare_experiment(cfg);
    const auto fl = train_fl_baseline<float>(cfg, exp);
    EXPECT_EQ(fl.user_comm_bytes(), 3ull * 20 * 2 * oracle::adapter_message_bytes(default_layers()));
    EXPECT_EQ(fl.user_activation_bytes(), 0u);
}

TEST(Baselines, SchemesLearnTheBlobs) {
    RunConfig cfg;
    cfg.rounds = 20;
    const auto exp = prepare_experiment(cfg);
    for (auto s : {Scheme::SplitLlm, Scheme::Fl, Scheme::Sl})
        EXPECT_GE(train_scheme<float>(s, cfg, exp).best_accuracy(), 0.9) << to_string(s);
}

TEST(Compare, CsvShapeAndRestriction) {
    RunConfig cfg;
    cfg.rounds = 2;
    const auto all = compare(cfg, cfg.schemes);
    std::istringstream csv(all.to_csv());
    std::string header;
    std::getline(csv, header);
    EXPECT_EQ(header, "scheme,acc_iid,acc_noniid,user_comm_bytes,mem_user,mem_edge,mem_cloud");
    std::size_t lines = 0;
    for (std::string line; std::getline(csv, line);) {
        ++lines;
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 6);
    }
    EXPECT_EQ(lines, 3u);
    ASSERT_TRUE(all.peak_memory_reduction.has_value());
    EXPECT_GT(*all.peak_memory_reduction, 0.0);
    EXPECT_LT(all.find("fl")->user_comm_bytes, all.find("splitllm")->user_comm_bytes);
    EXPECT_EQ(all.find("splitllm")->user_activation_bytes, all.find("sl")->user_activation_bytes);
    const auto j = nlohmann::json::parse(all.to_json());
    EXPECT_EQ(j["rows"].size(), 3u);

    const auto only_fl = compare(cfg, {"fl"});
    ASSERT_EQ(only_fl.rows.size(), 1u);
    EXPECT_EQ(only_fl.rows[0].scheme, "fl");
    EXPECT_FALSE(only_fl.peak_memory_reduction.has_value());
}

TEST(Compare, UnknownSchemeIsConfigError) {
    RunConfig cfg;
    cfg.rounds = 1;
    try {
        compare(cfg, {"splitllm", "gossip"});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Config);
    }
}
