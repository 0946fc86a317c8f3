#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "pacgrid/data.hpp"
#include "pacgrid/pac.hpp"
#include "pacgrid/tensor.hpp"

namespace pacgrid {

enum class LayerKind { Conv, PacT, ReLU };
enum class Branch { Encoder, Guidance, Decoder };

/// A learnable tensor and its gradient buffer.
struct Param {
    std::string name;
    Tensor4 value;
    Tensor4 grad;
};

/// One stage of a branch. Conv and PacT layers own a weight (c_out, c_in, 5, 5)
/// and a bias stored as a (1, 1, 1, c_out) tensor; ReLU layers own nothing.
struct Layer {
    LayerKind kind = LayerKind::Conv;
    Branch branch = Branch::Encoder;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    WindowSpec win;
    std::size_t weight = 0;  // index into Network::params()
    std::size_t bias = 0;
    std::size_t split = 0;   // PacT: which slice of the guidance output adapts it

    // Forward cache.
    Tensor4 input;
    Tensor4 features;
};

enum class UpsamplerVariant { Lite, Standard, Custom };

struct UpsamplerSpec {
    std::size_t factor = 4;
    UpsamplerVariant variant = UpsamplerVariant::Lite;
    std::size_t signal_channels = 1;  // 1 for depth, 2 for flow
    std::size_t guide_channels = 3;
    std::vector<std::size_t> encoder;   // output channels of each encoder conv
    std::vector<std::size_t> guidance;  // output channels of each guidance conv
    std::vector<std::size_t> decoder;   // log2(factor) PacT widths, then conv widths
    /// Add bilinear_upsample(low_res) to the decoder output.
    bool residual = false;

    /// Channel counts of the published lite / standard networks. The last
    /// decoder conv always emits `signal_channels`.
    static UpsamplerSpec lite(std::size_t factor, std::size_t signal_channels = 1);
    static UpsamplerSpec standard(std::size_t factor, std::size_t signal_channels = 1);
    /// The same width everywhere except the final conv and the guidance
    /// output, which gets `width` channels per PacT layer.
    static UpsamplerSpec custom(std::size_t factor, std::size_t width, std::size_t signal_channels = 1);
};

void validate_spec(const UpsamplerSpec& spec);
std::size_t pact_layer_count(std::size_t factor);

/// Three-branch joint upsampling network. Encoder convs run on the
/// low-resolution signal, guidance convs on the full-resolution guide, and
/// the decoder is a chain of x2 PacT layers followed by convs. The guidance
/// output is split equally over the PacT layers; each slice is box-averaged
/// down to the output grid of the PacT layer it adapts. All filters are 5x5
/// and every layer but the final conv is followed by ReLU.
class Network {
public:
    explicit Network(const UpsamplerSpec& spec, std::uint64_t seed = 0);

    const UpsamplerSpec& spec() const { return spec_; }
    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }
    const std::vector<Layer>& layers() const { return layers_; }
    std::size_t parameter_count() const;

    /// low_res (n, c, h/m, w/m), guide (n, c_g, h, w) -> (n, c, h, w).
    Tensor4 forward(const Tensor4& low_res, const Tensor4& guide);

    struct InputGrads {
        Tensor4 low_res;
        Tensor4 guide;
    };
    /// Writes parameter gradients into Param::grad (overwriting) and returns
    /// gradients for both inputs. Needs a preceding forward().
    InputGrads backward(const Tensor4& upstream);

    /// Hash of the ReLU on/off pattern of the last forward pass.
    std::uint64_t activation_signature() const;

    void zero_grad();

    /// Text description, one layer per line: kind, in-ch, out-ch, s, stride, dilation.
    std::string manifest() const;

private:
    Tensor4 run_branch(Branch b, Tensor4 x);
    Tensor4 back_branch(Branch b, Tensor4 g);

    UpsamplerSpec spec_;
    std::vector<Param> params_;
    std::vector<Layer> layers_;
    std::size_t splits_ = 0;
    bool cached_ = false;
    std::vector<Tensor4> guide_slices_;
    Tensor4 low_res_cache_;
};

struct LossResult {
    double value = 0.0;
    Tensor4 grad;
};

LossResult loss_mse(const Tensor4& pred, const Tensor4& target);
LossResult loss_rmse(const Tensor4& pred, const Tensor4& target);
/// Mean over pixels of |(u, v)_pred - (u, v)_gt|. The gradient uses
/// sqrt(|d|^2 + eps^2) so it stays finite where prediction equals target.
LossResult loss_epe(const Tensor4& pred, const Tensor4& gt, double eps = 1e-8);

/// Half-pixel bilinear interpolation by an integer factor, edges clamped.
Tensor4 bilinear_upsample(const Tensor4& t, std::size_t m);

/// Mean of each m x m block, and its adjoint.
Tensor4 box_downsample(const Tensor4& t, std::size_t m);
Tensor4 box_downsample_backward(const Tensor4& upstream, std::size_t m);

struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<Tensor4> m;
    std::vector<Tensor4> v;
};

/// One bias-corrected Adam update over all parameters, using Param::grad.
void adam_step(AdamState& state, std::vector<Param>& params);

/// Piecewise-constant learning rate: `lrs[k]` for `steps[k]` iterations.
struct Schedule {
    std::vector<double> lrs;
    std::vector<std::size_t> steps;

    std::size_t total() const;
    double lr_at(std::size_t step) const;
    /// [1e-4 x 700, 1e-5 x 200, 1e-6 x 100].
    static Schedule desk();
};

/// Paired training data: full-resolution guides and targets plus the
/// matching low-resolution inputs.
struct UpsampleSet {
    std::vector<Tensor4> guides;
    std::vector<Tensor4> targets;
    std::vector<Tensor4> low_res;
};

/// Depth inputs are nearest-downsampled, flow inputs bilinear-downsampled.
UpsampleSet make_upsample_set(const std::vector<SyntheticScene>& scenes, SynthMode mode, std::size_t factor);

enum class TrainLoss { Mse, Epe };

struct TrainOptions {
    Schedule schedule = Schedule::desk();
    TrainLoss loss = TrainLoss::Mse;
    std::size_t batch = 4;
    std::size_t crop = 32;
    std::uint64_t seed = 7;
    /// Called after every step with (step, loss).
    std::function<void(std::size_t, double)> on_step;
};

/// Adam on random crops aligned to the factor grid. Returns the per-step
/// training loss.
std::vector<double> train(Network& net, const UpsampleSet& data, const TrainOptions& opt);

struct EvalMetrics {
    double rmse = 0.0;
    double epe = 0.0;           // flow only
    double baseline_rmse = 0.0;  // bilinear upsampling of the same input
    double baseline_epe = 0.0;
};

/// RMSE pooled over every pixel and channel of the set, and the same for
/// the bilinear baseline. EPE is filled in for two-channel targets.
EvalMetrics evaluate(Network& net, const UpsampleSet& data);

/// Parameters go to a tensor container at `path`, the manifest to
/// `path` + ".manifest".
void save_checkpoint(const Network& net, const std::filesystem::path& path, const std::string& header);
/// Rebuilds `net`'s parameters from a checkpoint whose manifest must match
/// net.manifest() line for line (after the header comment).
void load_checkpoint(Network& net, const std::filesystem::path& path);
std::filesystem::path manifest_path(const std::filesystem::path& checkpoint);

}  // namespace pacgrid
