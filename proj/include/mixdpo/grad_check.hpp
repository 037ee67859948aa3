#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mixdpo/losses.hpp"
#include "mixdpo/model.hpp"

namespace mixdpo::grad_check {

struct ArchitectureDefaults {
    // Miniature config used by the grad-check command.
    static model::ArchitectureConfig miniature(std::uint64_t seed) {
        model::ArchitectureConfig cfg;
        cfg.d_model = 8;
        cfg.n_layers = 1;
        cfg.n_heads = 2;
        cfg.context_length = 32;
        cfg.seed = seed;
        return cfg;
    }
};

struct PerLossResult {
    losses::Variant variant;
    double max_rel_error = 0.0;
    std::string worst_tensor;
};

struct GradCheckResult {
    std::vector<PerLossResult> per_loss;
    std::int64_t parameter_count = 0;

    bool passed(double tolerance) const {
        for (const auto& r : per_loss) {
            if (!(r.max_rel_error <= tolerance)) return false;
        }
        return true;
    }
};

// Compares analytic gradients of every loss variant against central finite
// differences on a two-pair batch (one easy, one difficult pair, so both
// hybrid branches are exercised). corrupt_tensor, when non-empty, perturbs
// the named analytic gradient block to force a failure (negative control).
GradCheckResult run_grad_check(const model::ArchitectureConfig& arch,
                               const losses::LossConfig& loss_cfg, double fd_step = 1e-5,
                               const std::string& corrupt_tensor = "");

}  // namespace mixdpo::grad_check
