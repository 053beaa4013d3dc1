#include "splitllm.h"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace {

struct Flags {
    std::string config;
    std::optional<std::string> seed, rounds, users, edges, cut, partition, beta, schemes, precision, out;
    bool concurrent = false;
    bool corrupt_backward = false;
};

using ConfigPtr = std::unique_ptr<slm_config, decltype(&slm_config_destroy)>;

int report(slm_status status) {
    if (status != SLM_OK) std::fprintf(stderr, "splitllm: %s\n", slm_last_error());
    return static_cast<int>(status);
}

/// Preset, then config file, then flags; --out falls back to SPLITLLM_OUT
/// only when neither the flag nor the file set it.
int build_config(const Flags& flags, const char* preset, ConfigPtr& cfg) {
    slm_config* raw = nullptr;
    if (auto s = slm_config_create_preset(preset, &raw); s != SLM_OK) return report(s);
    cfg.reset(raw);
    if (!flags.config.empty())
        if (auto s = slm_config_load_file(cfg.get(), flags.config.c_str()); s != SLM_OK) return report(s);

    std::vector<std::pair<const char*, const std::optional<std::string>*>> overrides{
        {"seed", &flags.seed},           {"rounds", &flags.rounds},   {"users", &flags.users},
        {"edges", &flags.edges},         {"cut", &flags.cut},         {"partition", &flags.partition},
        {"beta", &flags.beta},           {"schemes", &flags.schemes}, {"precision", &flags.precision},
        {"out", &flags.out}};
    for (const auto& [key, value] : overrides)
        if (*value)
            if (auto s = slm_config_set(cfg.get(), key, (*value)->c_str()); s != SLM_OK) return report(s);
    if (flags.concurrent)
        if (auto s = slm_config_set(cfg.get(), "executor", "concurrent"); s != SLM_OK) return report(s);

    char current[4096];
    if (auto s = slm_config_get(cfg.get(), "out", current, sizeof current, nullptr); s != SLM_OK) return report(s);
    if (current[0] == '\0') {
        const char* env = std::getenv("SPLITLLM_OUT");
        const char* dir = env && *env ? env : "runs";
        if (auto s = slm_config_set(cfg.get(), "out", dir); s != SLM_OK) return report(s);
    }
    return report(slm_config_validate(cfg.get()));
}

void add_common(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "Settings file (key = value per line)");
    cmd->add_option("--seed", f.seed, "Master seed (u64)");
    cmd->add_option("--rounds", f.rounds, "Training rounds T");
    cmd->add_option("--users", f.users, "Number of users N");
    cmd->add_option("--edges", f.edges, "Number of edge servers M");
    cmd->add_option("--cut", f.cut, "Last edge layer L_e");
    cmd->add_option("--partition", f.partition, "iid or dirichlet");
    cmd->add_option("--beta", f.beta, "Dirichlet concentration");
    cmd->add_option("--schemes", f.schemes, "Comma-separated subset of splitllm,fl,sl");
    cmd->add_option("--precision", f.precision, "f32 or f64");
    cmd->add_option("--out", f.out, "Output directory (default $SPLITLLM_OUT, then ./runs)");
    cmd->add_flag("--concurrent", f.concurrent, "Run edge pipelines on separate threads");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical split fine-tuning simulator"};
    app.require_subcommand(1);
    Flags flags;
    auto* run = app.add_subcommand("run", "Train with the three-tier split pipeline");
    auto* cmp = app.add_subcommand("compare", "Compare splitllm, fl and sl on IID and Dirichlet partitions");
    auto* grad = app.add_subcommand("gradcheck", "Finite-difference and split-exactness checks on a tiny model");
    for (auto* cmd : {run, cmp, grad}) add_common(cmd, flags);
    grad->add_flag("--corrupt-backward", flags.corrupt_backward)->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : SLM_ERR_CONFIG;
    }

    ConfigPtr cfg(nullptr, &slm_config_destroy);
    const char* preset = grad->parsed() ? "gradcheck" : "default";
    if (int code = build_config(flags, preset, cfg); code != 0) return code;

    if (run->parsed()) return report(slm_run(cfg.get(), nullptr, 0));
    if (cmp->parsed()) return report(slm_compare(cfg.get(), nullptr, 0));
    int passed = 0;
    if (int code = report(slm_gradcheck(cfg.get(), flags.corrupt_backward ? 1 : 0, &passed)); code != 0) return code;
    if (!passed) std::fprintf(stderr, "splitllm: gradcheck failed\n");
    return passed ? 0 : SLM_ERR_RUNTIME;
}
