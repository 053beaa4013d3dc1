#pragma once

#include "splitllm/config.hpp"
#include "splitllm/gradcheck.hpp"
#include "splitllm/training.hpp"

#include <filesystem>
#include <ostream>

namespace splitllm {

/// `<out>/<confighash>-<seed>`.
std::filesystem::path run_directory(const RunConfig& cfg);

/// SplitLLM training. Writes config.txt, metrics.csv, events.jsonl (when
/// event_log is on), partition.json, adapters/layer_<l>.slad and
/// summary.json into the run directory; prints the final accuracy.
std::filesystem::path cmd_run(const RunConfig& cfg, std::ostream& out);

/// Writes config.txt, comparison.csv and comparison.json; prints the table.
std::filesystem::path cmd_compare(const RunConfig& cfg, std::ostream& out);

/// Prints both gradcheck figures. Returns true iff both are within tolerance.
bool cmd_gradcheck(const RunConfig& cfg, const GradcheckOptions& options, std::ostream& out);

/// metrics.csv body for one history: round,scheme,loss,acc,user_bytes,edge_bytes,cloud_bytes
template <typename T>
std::string metrics_csv(const TrainingHistory<T>& history);

} // namespace splitllm
