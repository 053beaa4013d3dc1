#include "splitllm/aggregation.hpp"
#include "splitllm/data.hpp"

#include <gtest/gtest.h>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <filesystem>
#include <fstream>

using namespace splitllm;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& body) {
    const auto path = fs::temp_directory_path() / name;
    std::ofstream(path) << body;
    return path;
}

std::vector<double> class_fractions(const Dataset& data, const std::vector<std::size_t>& idx) {
    std::vector<double> f(data.classes, 0.0);
    for (auto i : idx) f[data.labels[i]] += 1.0;
    for (auto& v : f) v /= static_cast<double>(idx.size());
    return f;
}

Dataset blob_train(std::uint64_t seed) { return make_blob_fixture(BlobSpec{}, seed).train; }

} // namespace

TEST(Blobs, SizesAndBalancedLabels) {
    Rng rng(1);
    const auto d = synth_blobs(3, 8, 200, 1.0, rng);
    EXPECT_EQ(d.size(), 600u);
    EXPECT_EQ(d.dim(), 8u);
    std::vector<int> counts(3, 0);
    for (auto l : d.labels) ++counts[l];
    EXPECT_EQ(counts, (std::vector<int>{200, 200, 200}));
}

TEST(Blobs, ZeroSpreadCollapsesOntoCenters) {
    Rng rng(2);
    const auto centers = blob_centers(3, 4, rng);
    const auto d = sample_blobs(centers, 5, 0.0, rng);
    for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(d.features(i, j), centers(d.labels[i], j));
}

TEST(Blobs, NegativeSpreadIsConfigError) {
    Rng rng(3);
    try {
        synth_blobs(3, 4, 5, -0.5, rng);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Config);
    }
}

TEST(Blobs, DefaultFixtureShape) {
    const auto split = make_blob_fixture(BlobSpec{}, 1);
    EXPECT_EQ(split.train.size(), 600u);
    EXPECT_EQ(split.test.size(), 300u);
    EXPECT_EQ(split.train.dim(), 16u);
    EXPECT_EQ(split.train.classes, 3u);
    EXPECT_EQ(make_blob_fixture(BlobSpec{}, 1).train.features, split.train.features);
}

TEST(Table, RoundTripIsLossless) {
    Rng rng(4);
    const auto d = synth_blobs(4, 5, 25, 1.0, rng);
    const auto path = fs::temp_directory_path() / "splitllm_table_roundtrip.csv";
    write_table(path, d);
    const auto back = load_table(path);
    EXPECT_EQ(back.features, d.features);
    EXPECT_EQ(back.labels, d.labels);
    EXPECT_EQ(back.classes, 4u);
    EXPECT_EQ(back.size(), 100u);
    fs::remove(path);
}

TEST(Table, MalformedLineReportsLineNumber) {
    const auto path = temp_file("splitllm_table_bad.csv", "# header\n1.0,2.0,0\n1.0,oops,1\n");
    try {
        load_table(path);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Parse);
        EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
    }
    fs::remove(path);
}

TEST(Table, LabelBeyondClassCountIsDataError) {
    const auto path = temp_file("splitllm_table_label.csv", "1.0,2.0,0\n1.0,2.0,3\n");
    try {
        load_table(path, 3);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Data);
    }
    fs::remove(path);
}

TEST(Table, EmptyFileIsDataError) {
    const auto path = temp_file("splitllm_table_empty.csv", "");
    try {
        load_table(path);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Data);
    }
    fs::remove(path);
}

TEST(PartitionIid, TwentyUsersGetThirtyEach) {
    const auto d = blob_train(1);
    const Topology topo(5, 20);
    Rng rng(1);
    const auto plan = partition_iid(d, topo, rng);
    ASSERT_EQ(plan.shards.size(), 20u);
    for (const auto& s : plan.shards) EXPECT_EQ(s.size(), 30u);
    EXPECT_TRUE(plan.is_disjoint_cover(600));
    const auto w = compute_weights(plan.sizes());
    for (double x : w) EXPECT_EQ(x, 0.05);
}

TEST(PartitionIid, SingleUserHoldsEverything) {
    const auto d = blob_train(2);
    Rng rng(2);
    const auto plan = partition_iid(d, Topology(1, 1), rng);
    ASSERT_EQ(plan.shards.size(), 1u);
    EXPECT_EQ(plan.shards[0].size(), 600u);
    EXPECT_TRUE(plan.is_disjoint_cover(600));
}

TEST(PartitionIid, UnevenSizesDifferByAtMostOne) {
    Rng data_rng(3);
    const auto d = synth_blobs(3, 4, 101, 1.0, data_rng);
    Rng rng(3);
    const auto plan = partition_iid(d, Topology(3, 7), rng);
    const auto sizes = plan.sizes();
    EXPECT_LE(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()), 1u);
    EXPECT_TRUE(plan.is_disjoint_cover(d.size()));
}

TEST(PartitionIid, FewerSamplesThanUsersIsConfigError) {
    Rng data_rng(4);
    const auto d = synth_blobs(2, 2, 2, 1.0, data_rng);
    Rng rng(4);
    try {
        partition_iid(d, Topology(1, 5), rng);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Config);
    }
}

// 600 shard/class checks: a handful may cross 3 sigma by chance (about 0.27%
// each), so bound the count of crossings and forbid anything past 4.5 sigma.
TEST(PartitionIid, ShardClassFrequenciesWithinThreeSigma) {
    const Topology topo(5, 20);
    std::size_t checks = 0, beyond3 = 0;
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto d = blob_train(seed);
        Rng rng = make_stream(seed, StreamPurpose::Partition);
        const auto plan = partition_iid(d, topo, rng);
        std::vector<std::size_t> all(d.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        const auto global = class_fractions(d, all);
        for (const auto& shard : plan.shards) {
            const auto f = class_fractions(d, shard);
            for (std::size_t c = 0; c < d.classes; ++c) {
                const double sigma = std::sqrt(global[c] * (1.0 - global[c]) / static_cast<double>(shard.size()));
                const double z = std::abs(f[c] - global[c]) / sigma;
                worst = std::max(worst, z);
                beyond3 += z > 3.0;
                ++checks;
            }
        }
    }
    EXPECT_EQ(checks, 600u);
    EXPECT_LE(beyond3, checks / 100) << "crossings of 3 sigma";
    EXPECT_LE(worst, 4.5);
}

TEST(PartitionIid, SameSeedSamePlan) {
    const auto d = blob_train(5);
    Rng a(9), b(9);
    EXPECT_EQ(partition_iid(d, Topology(5, 20), a).shards, partition_iid(d, Topology(5, 20), b).shards);
}

TEST(PartitionDirichlet, HugeBetaApproachesIid) {
    const auto d = blob_train(6);
    Rng rng(6);
    const auto plan = partition_dirichlet(d, Topology(5, 20), 1e6, rng);
    EXPECT_TRUE(plan.is_disjoint_cover(600));
    for (const auto& shard : plan.shards) {
        ASSERT_FALSE(shard.empty());
        const auto f = class_fractions(d, shard);
        for (double x : f) EXPECT_LE(std::abs(x - 1.0 / 3.0), 0.05);
    }
}

TEST(PartitionDirichlet, SmallBetaSkewsSomeUser) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto d = blob_train(seed);
        Rng rng = make_stream(seed, StreamPurpose::Partition);
        const auto plan = partition_dirichlet(d, Topology(5, 20), 0.5, rng);
        bool skewed = false;
        for (const auto& shard : plan.shards) {
            if (shard.empty()) continue;
            for (double x : class_fractions(d, shard)) skewed |= x >= 2.0 / 3.0;
        }
        EXPECT_TRUE(skewed) << "seed " << seed;
    }
}

TEST(PartitionDirichlet, NonPositiveBetaIsConfigError) {
    const auto d = blob_train(7);
    for (double beta : {0.0, -1.0}) {
        Rng rng(7);
        try {
            partition_dirichlet(d, Topology(5, 20), beta, rng);
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::Config);
        }
    }
}

TEST(Partition, DisjointCoverOverManySeeds) {
    const auto d = blob_train(8);
    const Topology topo(5, 20);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng a(seed, 1), b(seed, 2);
        EXPECT_TRUE(partition_iid(d, topo, a).is_disjoint_cover(600));
        EXPECT_TRUE(partition_dirichlet(d, topo, 0.5, b).is_disjoint_cover(600));
    }
}

TEST(Partition, JsonListsEveryUserWithItsEdge) {
    const auto d = blob_train(9);
    const Topology topo(2, 4);
    Rng rng(9);
    const auto j = nlohmann::json::parse(partition_iid(d, topo, rng).to_json(topo));
    EXPECT_EQ(j.size(), 4u);
    EXPECT_TRUE(j.contains("0:0"));
    EXPECT_TRUE(j.contains("1:3"));
    EXPECT_EQ(j["1:3"].size(), 150u);
}

TEST(Topology, BlockAssignmentAndOrder) {
    const Topology topo(5, 20);
    for (std::size_t n = 0; n < 20; ++n) EXPECT_EQ(topo.edge_of(n), n / 4);
    for (std::size_t m = 0; m < 5; ++m) EXPECT_EQ(topo.users_of(m).size(), 4u);
    const auto order = topo.users_in_order();
    for (std::size_t i = 1; i < order.size(); ++i)
        EXPECT_LE(topo.edge_of(order[i - 1]), topo.edge_of(order[i]));
    const Topology rr(3, 7, AssignmentPolicy::RoundRobin);
    EXPECT_EQ(rr.edge_of(4), 1u);
}

TEST(Topology, MoreEdgesThanUsersIsConfigError) { EXPECT_THROW(Topology(5, 4), Error); }
