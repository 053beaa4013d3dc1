#pragma once

#include "splitllm/data.hpp"
#include "splitllm/lora.hpp"
#include "splitllm/protocol.hpp"
#include "splitllm/topology.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace splitllm {

enum class Precision { F32, F64 };
enum class Executor { Sequential, Concurrent };

/// Who holds the cloud-side adapters during a round: one replica per edge
/// (merged at the barrier) or a single adapter updated by all edges in turn.
enum class CloudReplicaPolicy { PerEdge, Shared };

enum class DataSource { Blobs, Table };

/// Everything an experiment needs. Defaults follow the desk-scale fixture
/// with rank 8, batch 32 and one local epoch.
struct RunConfig {
    // topology
    std::size_t edges = 5;
    std::size_t users = 20;
    AssignmentPolicy assignment = AssignmentPolicy::Block;

    // model
    std::vector<std::size_t> widths{128, 64, 64, 32};
    std::size_t cut = 3;
    std::size_t rank = 8;
    double init_std = 0.02;
    Activation activation = Activation::Tanh;

    // optimizer
    double lr_user = 0.3;
    double lr_edge = 0.3;
    double lr_cloud = 0.3;
    double momentum = 0.9;
    double lr_decay = 0.998;

    // schedule
    std::size_t rounds = 50;
    std::size_t local_epochs = 1;
    std::size_t batch = 32;

    // data
    DataSource data = DataSource::Blobs;
    std::string train_path;
    std::string test_path;
    std::size_t classes = 3;
    std::size_t blob_dim = 16;
    std::size_t blob_train_per_class = 200;
    std::size_t blob_test_per_class = 100;
    double blob_spread = 1.0;
    PartitionKind partition = PartitionKind::Iid;
    double beta = 0.5;

    // execution and output
    std::uint64_t seed = 1;
    Precision precision = Precision::F32;
    Executor executor = Executor::Sequential;
    CloudReplicaPolicy cloud_replicas = CloudReplicaPolicy::PerEdge;
    std::size_t sl_parallel_contexts = 1;
    std::vector<std::string> schemes{"splitllm", "fl", "sl"};
    std::string out;
    bool event_log = true;
    LinkModels links;

    std::size_t layer_count() const noexcept { return widths.size() + 1; }
};

/// Settings file: one `key = value` per line, '#' starts a comment.
/// Unknown keys are rejected. Later settings override earlier ones.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_setting(const RunConfig& cfg, const std::string& key);
const std::vector<std::string>& setting_keys();

void load_config_file(RunConfig& cfg, const std::filesystem::path& path);
void parse_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "<text>");

/// Cross-field checks. Throws a config error naming the offending field.
void validate(const RunConfig& cfg);

/// Canonical `key = value` text in a fixed key order; parse_config_text of
/// the result reproduces the config.
std::string to_text(const RunConfig& cfg);

/// 16 hex digits of FNV-1a over the canonical text without seed, out and
/// executor (edge scheduling does not change results).
std::string config_hash(const RunConfig& cfg);

/// Model architecture implied by the config for the given data dimensions.
ModelShape model_shape(const RunConfig& cfg, std::size_t input_dim, std::size_t classes);

const char* to_string(Precision p) noexcept;
const char* to_string(Executor e) noexcept;
const char* to_string(CloudReplicaPolicy p) noexcept;

} // namespace splitllm
