#pragma once

#include "splitllm/config.hpp"

#include <cstdint>

namespace splitllm {

/// Built-in tiny preset: 6 -> 8 -> 6 -> 5 -> 3, rank 2, cut 2, one user on one
/// edge, 50 rounds of 2 local epochs (100 pipelined steps).
RunConfig gradcheck_config();

struct GradcheckOptions {
    double step = 1e-6;             // central-difference h, applied in 64-bit
    double grad_tolerance = 1e-4;   // max relative error per adapter entry
    double grad_floor = 1e-4;       // denominator floor for near-zero gradients
    double split_tolerance = 0.0;   // 0 picks 1e-5 (f32) or 1e-10 (f64)
    std::size_t batch = 16;
    bool corrupt_backward = false;  // negative control: scales every gB by 1.5
};

struct GradcheckReport {
    std::size_t parameter_count = 0; // frozen + adapter entries of the checked model
    std::size_t checked_entries = 0;
    double max_grad_error = 0.0;
    std::size_t split_steps = 0;
    double max_split_divergence = 0.0; // worst relative gap over step losses and final adapters
    double grad_tolerance = 0.0;
    double split_tolerance = 0.0;

    bool grad_ok() const noexcept { return max_grad_error <= grad_tolerance; }
    bool split_ok() const noexcept { return max_split_divergence <= split_tolerance; }
    bool passed() const noexcept { return grad_ok() && split_ok(); }
};

/// Finite differences on every adapter entry of the config's model (with
/// randomized B so no gradient is trivially zero), then a split run against
/// the centralized oracle with M = N = 1.
GradcheckReport run_gradcheck(const RunConfig& cfg, const GradcheckOptions& options = {});

} // namespace splitllm
