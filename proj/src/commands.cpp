#include "splitllm/commands.hpp"

#include "splitllm/baselines.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>

namespace splitllm {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write '" + path.string() + "'");
    out << text;
    out.flush();
    require(static_cast<bool>(out), ErrorKind::Io, "write failed for '" + path.string() + "'");
}

fs::path prepare_directory(const RunConfig& cfg) {
    const fs::path dir = run_directory(cfg);
    std::error_code ec;
    fs::create_directories(dir, ec);
    require(!ec, ErrorKind::Io, "cannot create run directory '" + dir.string() + "': " + ec.message());
    return dir;
}

nlohmann::ordered_json memory_json(const MemoryEstimate& mem) {
    auto tier = [](const TierMemory& t) {
        nlohmann::ordered_json j;
        j["frozen"] = t.frozen;
        j["adapters"] = t.adapters;
        j["optimizer"] = t.optimizer;
        j["activations"] = t.activations;
        j["total"] = t.total();
        return j;
    };
    nlohmann::ordered_json j;
    j["user"] = tier(mem.user);
    j["edge"] = tier(mem.edge);
    j["cloud"] = tier(mem.cloud);
    return j;
}

template <typename T>
fs::path run_impl(const RunConfig& cfg, std::ostream& out) {
    const Experiment exp = prepare_experiment(cfg);
    const auto history = run_training<T>(cfg, exp);
    const fs::path dir = prepare_directory(cfg);

    write_text(dir / "config.txt", to_text(cfg));
    write_text(dir / "metrics.csv", metrics_csv(history));
    if (cfg.event_log) write_text(dir / "events.jsonl", history.log.to_jsonl());
    write_text(dir / "partition.json", exp.plan.to_json(exp.topology));
    fs::create_directories(dir / "adapters");
    for (const auto& a : history.final_adapters)
        save_adapter(dir / "adapters" / ("layer_" + std::to_string(a.layer_index) + ".slad"), a);

    const RoundMetrics last = history.rounds.empty() ? RoundMetrics{} : history.rounds.back();
    nlohmann::ordered_json summary;
    summary["scheme"] = history.scheme;
    summary["config_hash"] = config_hash(cfg);
    summary["seed"] = cfg.seed;
    summary["rounds"] = history.rounds.size();
    summary["steps"] = history.steps.size();
    summary["final_test_accuracy"] = last.test_accuracy;
    summary["best_test_accuracy"] = history.best_accuracy();
    summary["final_train_loss"] = last.train_loss;
    summary["user_bytes"] = last.user_bytes;
    summary["edge_bytes"] = last.edge_bytes;
    summary["cloud_bytes"] = last.cloud_bytes;
    summary["user_comm_bytes"] = history.user_comm_bytes();
    summary["distribution_bytes"] = history.distribution_bytes;
    summary["total_bytes"] = history.log.total_bytes();
    summary["memory"] = memory_json(memory_estimate(cfg, exp.shape, Scheme::SplitLlm));
    summary["warnings"] = history.warnings;
    write_text(dir / "summary.json", summary.dump(2) + "\n");

    for (const auto& w : history.warnings) out << "warning: " << w << "\n";
    char line[128];
    std::snprintf(line, sizeof line, "final test accuracy: %.4f (best %.4f) after %zu rounds\n", last.test_accuracy,
                  history.best_accuracy(), history.rounds.size());
    out << line << "run directory: " << dir.string() << "\n";
    return dir;
}

} // namespace

fs::path run_directory(const RunConfig& cfg) {
    const fs::path base = cfg.out.empty() ? fs::path("runs") : fs::path(cfg.out);
    return base / (config_hash(cfg) + "-" + std::to_string(cfg.seed));
}

template <typename T>
std::string metrics_csv(const TrainingHistory<T>& history) {
    std::string csv = "round,scheme,loss,acc,user_bytes,edge_bytes,cloud_bytes\n";
    char line[256];
    for (const auto& r : history.rounds) {
        std::snprintf(line, sizeof line, "%u,%s,%.9g,%.6f,%llu,%llu,%llu\n", r.round, history.scheme.c_str(),
                      r.train_loss, r.test_accuracy, static_cast<unsigned long long>(r.user_bytes),
                      static_cast<unsigned long long>(r.edge_bytes), static_cast<unsigned long long>(r.cloud_bytes));
        csv += line;
    }
    return csv;
}

template std::string metrics_csv(const TrainingHistory<float>&);
template std::string metrics_csv(const TrainingHistory<double>&);

fs::path cmd_run(const RunConfig& cfg, std::ostream& out) {
    validate(cfg);
    return cfg.precision == Precision::F32 ? run_impl<float>(cfg, out) : run_impl<double>(cfg, out);
}

fs::path cmd_compare(const RunConfig& cfg, std::ostream& out) {
    validate(cfg);
    const auto table = compare(cfg, cfg.schemes);
    const fs::path dir = prepare_directory(cfg);
    write_text(dir / "config.txt", to_text(cfg));
    write_text(dir / "comparison.csv", table.to_csv());
    write_text(dir / "comparison.json", table.to_json());
    out << table.to_csv();
    if (table.peak_memory_reduction) {
        char line[128];
        std::snprintf(line, sizeof line, "peak memory reduction vs fl: %.1f%%\n", 100.0 * *table.peak_memory_reduction);
        out << line;
    }
    out << "run directory: " << dir.string() << "\n";
    return dir;
}

bool cmd_gradcheck(const RunConfig& cfg, const GradcheckOptions& options, std::ostream& out) {
    const auto report = run_gradcheck(cfg, options);
    char line[256];
    std::snprintf(line, sizeof line, "max relative gradient error: %.3e (tolerance %.1e, %zu entries, %zu params) %s\n",
                  report.max_grad_error, report.grad_tolerance, report.checked_entries, report.parameter_count,
                  report.grad_ok() ? "ok" : "FAILED");
    out << line;
    std::snprintf(line, sizeof line, "max split-vs-centralized divergence: %.3e (tolerance %.1e, %zu steps) %s\n",
                  report.max_split_divergence, report.split_tolerance, report.split_steps,
                  report.split_ok() ? "ok" : "FAILED");
    out << line << std::flush;
    return report.passed();
}

} // namespace splitllm
