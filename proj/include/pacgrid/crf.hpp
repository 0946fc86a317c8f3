#pragma once

#include <cstdint>
#include <vector>

#include "pacgrid/kernels.hpp"
#include "pacgrid/nn.hpp"
#include "pacgrid/tensor.hpp"

namespace pacgrid {

/// One windowed pairwise term. `compat` has dims (L, L, s, s) and is indexed
/// [l'][l][ky][kx]: the energy added to label l at pixel i per unit of
/// Q_j(l') at tap offset (ky, kx). The window is stride 1 with "same" padding.
struct PairwiseBranch {
    WindowSpec win = WindowSpec::same(5);
    Tensor4 compat;
    KernelSpec kernel = KernelSpec::gaussian();
    /// Multiplies the guide before the kernel: one entry for all channels,
    /// or one per guide channel.
    std::vector<double> feature_scale{1.0};
};

struct CrfSpec {
    std::vector<PairwiseBranch> branches;
    std::size_t steps = 5;
    std::size_t labels = 2;
};

void validate_crf(const CrfSpec& spec, std::size_t guide_channels);

/// Per-pixel softmax over the channel axis of `-energy`, shifted by the
/// per-pixel maximum. Shifted exponents below -60 are clamped to -60.
Tensor4 softmax_neg(const Tensor4& energy);

/// psi = -log softmax(logits), the unary convention of this module.
Tensor4 unary_from_logits(const Tensor4& logits);

/// One mean-field update. `q` (n, L, h, w) must be normalized per pixel to
/// within 1e-9; unaries are positive energies, lower meaning more likely.
Tensor4 mf_step(const Tensor4& q, const Tensor4& unary, const Tensor4& guide, const CrfSpec& spec);

struct MfResult {
    Tensor4 q;
    std::vector<std::uint32_t> labels;  // n*h*w, row-major per sample
};

/// T steps from Q0 = softmax(-unary).
MfResult mf_infer(const Tensor4& unary, const Tensor4& guide, const CrfSpec& spec);

/// Per-pixel argmax over labels; ties go to the lowest label index.
std::vector<std::uint32_t> argmax_labels(const Tensor4& q);

/// Pixels whose 4-neighbors (inside the image) all carry a different label.
std::size_t isolated_pixels(const std::vector<std::uint32_t>& labels, std::size_t h, std::size_t w);

/// compat[l'][l][ky][kx] = mu[l'][l] * spatial[ky][kx]; `mu` is (1, 1, L, L)
/// and `spatial` (1, 1, s, s).
Tensor4 factor_compat(const Tensor4& mu, const Tensor4& spatial);

/// mu[l'][l] = [l != l'].
Tensor4 potts(std::size_t labels);

/// Potts compatibility with weight `w` on every tap but the center.
PairwiseBranch potts_branch(std::size_t labels, std::size_t size, std::size_t dilation, double w,
                            std::vector<double> feature_scale);

/// Two 5x5 Potts branches at dilations `dilations` (16 and 64 by default).
CrfSpec default_crf(std::size_t labels, const std::vector<std::size_t>& dilations = {16, 64},
                    std::size_t steps = 5, double weight = 0.5, double feature_scale = 12.5);

/// Appearance and smoothness kernels of the fully connected model:
/// k(i, j) = w1 exp(-|dp|^2 / 2 ta^2 - |dI|^2 / 2 tb^2) + w2 exp(-|dp|^2 / 2 tg^2).
struct FullCrfParams {
    double w1 = 1.0;
    double w2 = 1.0;
    double theta_alpha = 3.0;
    double theta_beta = 0.2;
    double theta_gamma = 1.0;
};

/// Exact dense mean field with Potts compatibility, summing over all j != i.
/// O(pixels^2); images are limited to 48x48.
Tensor4 dense_fullcrf_mf(const Tensor4& unary, const Tensor4& image, const FullCrfParams& p,
                         std::size_t steps);

/// The windowed model that reproduces dense_fullcrf_mf on an h x w image:
/// both spatial Gaussians are folded into (2 max(h, w) - 1)-wide compat
/// tensors with a zero center; the appearance branch uses image / theta_beta
/// as features and the smoothness branch a constant kernel.
CrfSpec fullcrf_as_windowed(const FullCrfParams& p, std::size_t labels, std::size_t h, std::size_t w,
                            std::size_t guide_channels, std::size_t steps);

/// Mean field unrolled for back-propagation.
class UnrolledCrf {
public:
    explicit UnrolledCrf(CrfSpec spec);

    const CrfSpec& spec() const { return spec_; }
    CrfSpec& spec() { return spec_; }

    /// Runs spec().steps updates from softmax(-unary), caching every step.
    Tensor4 forward(const Tensor4& unary, const Tensor4& guide);

    struct Grads {
        std::vector<Tensor4> compat;
        std::vector<std::vector<double>> feature_scale;
        Tensor4 unary;
    };
    /// Gradients of a loss with d loss / d Q_T = `upstream`.
    Grads backward(const Tensor4& upstream) const;

private:
    CrfSpec spec_;
    Tensor4 unary_;
    Tensor4 guide_;
    std::vector<Tensor4> qs_;  // Q_0 .. Q_T
    bool cached_ = false;
};

/// -mean log Q(label) and its gradient with respect to Q.
LossResult cross_entropy(const Tensor4& q, const std::vector<std::uint32_t>& labels);

/// Guide, ground-truth labels and noisy unaries for a synthetic refinement task.
struct SegmentationTask {
    Tensor4 guide;
    std::vector<std::uint32_t> truth;
    Tensor4 unary;
};

/// Region partition from synth_generate with label = region % labels; the
/// unary logits are `confidence` on the true label plus uniform noise of
/// amplitude `noise` on every label.
SegmentationTask synth_segmentation(std::uint64_t seed, std::size_t size, std::size_t labels,
                                    double confidence = 1.0, double noise = 2.0);

/// Adam over the compat tensors and feature scales of `crf` on one task.
/// Returns the cross-entropy before each step and after the last.
std::vector<double> train_crf(UnrolledCrf& crf, const SegmentationTask& task, std::size_t steps, double lr);

}  // namespace pacgrid
