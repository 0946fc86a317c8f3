#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pacgrid {

/// Largest relative error seen for one gradient of one operator.
struct GradcheckLine {
    std::string op;        // "pac", "pact" or "network"
    std::string gradient;  // "dV", "dW", "dB" or "dF"
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    std::size_t coords = 0;

    bool passed() const { return max_rel_error <= tolerance; }
};

struct GradcheckReport {
    std::vector<GradcheckLine> lines;
    std::size_t cases = 0;
    double seconds = 0.0;

    bool passed() const;
    /// One line per entry: op, gradient, error, tolerance, PASS/FAIL.
    std::string text() const;
};

struct GradcheckOptions {
    std::uint64_t seed = 0;
    /// Random PAC / PacT configurations. Zero runs nothing at all.
    std::size_t cases = 24;
    /// Also check a small upsampling network end to end.
    bool network = true;
    double step = 1e-5;
};

/// One sampled configuration of the window/feature grid.
struct GradcheckConfig {
    std::size_t size = 1;
    std::size_t stride = 1;
    std::size_t dilation = 1;
    std::size_t feature_channels = 1;
    int kernel = 0;  // 0 Gaussian, 1 normalized Gaussian, 2 detail-preserving
};

/// Case k of a run. Each field cycles with its own period and a seeded
/// phase, so any 18 consecutive cases cover every size, stride, dilation,
/// feature depth and kernel.
GradcheckConfig gradcheck_config(std::uint64_t seed, std::size_t k);

/// Central differences against pac_backward / pact_backward on random
/// configurations (tolerance 1e-6), plus the network gradients (1e-5).
/// Relative error is max |analytic - numeric| over max |gradient|.
GradcheckReport run_gradcheck(const GradcheckOptions& opt);

/// Hot-swap of a random three-layer conv/ReLU stack.
struct SwapCheckResult {
    double scale = 0.0;
    double deviation = 0.0;  // max |swapped - conv| over the stack output
    double bound = 0.0;      // propagated per-layer bound
    double output_norm = 0.0;
};

/// The per-layer bound from hot_swap_deviation_bound is carried through the
/// later layers with their inf-norm Lipschitz constants max_o |W_o|_1.
SwapCheckResult swap_check(std::uint64_t seed, double scale);

}  // namespace pacgrid
