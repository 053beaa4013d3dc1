#pragma once

#include "splitllm/matrix.hpp"
#include "splitllm/rng.hpp"
#include "splitllm/topology.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace splitllm {

struct Dataset {
    Matrix features; // num_samples x feature_dim
    std::vector<std::uint32_t> labels;
    std::size_t classes = 0;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dim() const noexcept { return features.cols(); }
    void validate() const;

    /// Rows and labels of the given sample indices, in that order.
    template <typename T>
    BasicMatrix<T> gather_features(std::span<const std::size_t> indices) const;
    std::vector<std::uint32_t> gather_labels(std::span<const std::size_t> indices) const;
};

/// C centers with i.i.d. N(0, 1) coordinates.
Matrix blob_centers(std::size_t classes, std::size_t dim, Rng& rng);

/// per_class samples around each center, class-major order, spread = per-coordinate std.
Dataset sample_blobs(const Matrix& centers, std::size_t per_class, double spread, Rng& rng);

/// Centers and samples from one stream.
Dataset synth_blobs(std::size_t classes, std::size_t dim, std::size_t per_class, double spread, Rng& rng);

struct BlobSpec {
    std::size_t classes = 3;
    std::size_t dim = 16;
    std::size_t train_per_class = 200;
    std::size_t test_per_class = 100;
    double spread = 1.0;
};

struct DataSplit {
    Dataset train;
    Dataset test;
};

/// Train and test sets that share centers; each part has its own derived stream.
DataSplit make_blob_fixture(const BlobSpec& spec, std::uint64_t seed);

/// Comma-separated text: one sample per line, features then an integer label.
/// Blank lines and lines starting with '#' are ignored. classes == 0 infers
/// the class count as max label + 1.
Dataset load_table(const std::filesystem::path& path, std::size_t classes = 0);
void write_table(const std::filesystem::path& path, const Dataset& data);

/// Sample indices held by every user, indexed by global user id.
struct PartitionPlan {
    std::vector<std::vector<std::size_t>> shards;

    std::vector<std::size_t> sizes() const;
    /// Disjoint shards whose union is {0, ..., total - 1}.
    bool is_disjoint_cover(std::size_t total) const;
    std::string to_json(const Topology& topology) const;
};

enum class PartitionKind { Iid, Dirichlet };

PartitionKind parse_partition(const std::string& name);
const char* to_string(PartitionKind kind) noexcept;

/// Random permutation cut into N shards whose sizes differ by at most one,
/// dealt to users in (m, n) order.
PartitionPlan partition_iid(const Dataset& data, const Topology& topology, Rng& rng);

/// For each class: shuffle its samples, draw p ~ Dirichlet(beta · 1_N) by
/// Gamma(beta, 1) normalization, and cut the class at floor(cumsum(p) · count).
PartitionPlan partition_dirichlet(const Dataset& data, const Topology& topology, double beta, Rng& rng);

} // namespace splitllm
