#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pacgrid/kernels.hpp"
#include "pacgrid/nn.hpp"

namespace pacgrid::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitVerification = 1;
inline constexpr int kExitUsage = 2;

/// Bad or unknown configuration; reported with exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BranchConfig {
    std::size_t size = 5;
    std::size_t dilation = 1;
};

/// Settings read from `--config file.json`. Every field is optional; flags
/// given on the command line win over the file. Unknown keys are errors.
///
///   {
///     "seed": 7,
///     "gradcheck": {"cases": 24},
///     "swap":      {"scale": 0.0001},
///     "bilateral": {"spatial_sigma": 2, "feature_sigma": 20, "window": 9},
///     "crf":   {"branches": [{"size": 5, "dilation": 16}, {"size": 5, "dilation": 64}],
///               "steps": 5, "weight": 0.5, "feature_scale": 12.5,
///               "kernel": {"kind": "gaussian"}},
///     "train": {"mode": "depth", "factor": 4, "variant": "lite", "scenes": 200,
///               "holdout": 50, "size": 64, "batch": 4, "crop": 32,
///               "schedule": [[1e-4, 700], [1e-5, 200], [1e-6, 100]]},
///     "paths": {"unary": "...", "guide": "...", "out": "...", "compat": "...",
///               "ckpt": "...", "report": "..."}
///   }
struct RunConfig {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> cases;
    std::optional<double> scale;

    std::optional<double> spatial_sigma;
    std::optional<double> feature_sigma;
    std::optional<std::size_t> window;

    std::optional<std::vector<BranchConfig>> branches;
    std::optional<std::size_t> steps;
    std::optional<double> crf_weight;
    std::optional<double> crf_feature_scale;
    std::optional<KernelSpec> kernel;

    std::optional<std::string> mode;
    std::optional<std::size_t> factor;
    std::optional<std::string> variant;
    std::optional<std::size_t> scenes;
    std::optional<std::size_t> holdout;
    std::optional<std::size_t> size;
    std::optional<std::size_t> batch;
    std::optional<std::size_t> crop;
    std::optional<Schedule> schedule;

    std::optional<std::string> unary_path;
    std::optional<std::string> guide_path;
    std::optional<std::string> out_path;
    std::optional<std::string> compat_path;
    std::optional<std::string> ckpt_path;
    std::optional<std::string> report_path;
};

RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::string& path);

/// "16,64" -> {16, 64}.
std::vector<std::size_t> parse_dilations(const std::string& text);

/// Runs one command line (without the program name). Output goes to `out`,
/// diagnostics to `err`. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pacgrid::cli
