#pragma once

#include <vector>

#include "pacgrid/kernels.hpp"
#include "pacgrid/tensor.hpp"

namespace pacgrid {

/// Learnable state of one pixel-adaptive convolution.
///
/// `weight` has dims (c_out, c_in, s, s) and is applied with correlation
/// indexing: tap (ky, kx) multiplies the input at offset tap_offset(win, tap).
/// An empty `bias` means no bias. With `normalize` set, each output is divided
/// by the sum of K * W over the in-bounds taps (bilateral-style filtering).
struct PacParams {
    Tensor4 weight;
    std::vector<double> bias;
    WindowSpec win;
    KernelSpec kernel;
    bool normalize = false;

    std::size_t out_channels() const { return weight.dims().n; }
    std::size_t in_channels() const { return weight.dims().c; }
};

struct PacGradients {
    Tensor4 dv;
    Tensor4 dweight;
    std::vector<double> dbias;
    Tensor4 dfeatures;
};

void validate_params(const PacParams& p);

/// v'_i = sum_{j in window(i)} K(f_i, f_j) W[tap] v_j + b.
/// `features` must share the batch and grid of `v`.
Tensor4 pac_forward(const Tensor4& v, const Tensor4& features, const PacParams& p);
PacGradients pac_backward(const Tensor4& v, const Tensor4& features, const PacParams& p,
                          const Tensor4& upstream);

/// Fractionally strided geometry of the transposed variant.
struct TransposedGeometry {
    std::size_t factor = 2;
    std::size_t output_padding = 0;
};

/// (in - 1) * m - 2 * padding + dilation * (s - 1) + output_padding + 1.
std::size_t pact_out_extent(std::size_t in, const WindowSpec& win, const TransposedGeometry& g);

/// Transposed PAC. `p.win.padding` is the transposed-convolution padding and
/// must not exceed dilation * (s - 1); `p.win.stride` must be 1 or the factor.
/// Adapting features live on the fine (output) grid. Equivalent to running
/// pac_forward at stride 1 over the zero-inserted input, padded so that the
/// fine grid comes out; with padding = dilation*(s-1)/2 and
/// output_padding = factor - 1 that is a plain "same" PAC over
/// zero_insert(v, factor) extended by factor - 1 zero rows and columns.
Tensor4 pact_forward(const Tensor4& v, const Tensor4& fine_features, const PacParams& p,
                     const TransposedGeometry& g);
PacGradients pact_backward(const Tensor4& v, const Tensor4& fine_features, const PacParams& p,
                           const TransposedGeometry& g, const Tensor4& upstream);

/// Standard spatial convolution, correlation convention.
Tensor4 conv_forward(const Tensor4& v, const Tensor4& weight, std::span<const double> bias,
                     const WindowSpec& win);

struct ConvGradients {
    Tensor4 dv;
    Tensor4 dweight;
    std::vector<double> dbias;
};
ConvGradients conv_backward(const Tensor4& v, const Tensor4& weight, const WindowSpec& win,
                            const Tensor4& upstream);

struct BilateralOptions {
    /// Range sigma on the image values; +inf turns the filter into a blur.
    double feature_sigma = 1.0;
    /// Window size; 0 picks 2 * ceil(2 * spatial_sigma) + 1.
    std::size_t window = 0;
    bool normalize = true;
};

/// Image-guided bilateral filter: W is a 2D Gaussian of the tap offset and
/// the adapting features are the image values divided by feature_sigma.
Tensor4 bilateral_filter(const Tensor4& img, double spatial_sigma, const BilateralOptions& opt);

/// Depthwise diagonal weights: W[o, o, tap] = taps[tap], zero off-diagonal.
Tensor4 diagonal_weights(std::size_t channels, std::size_t size, std::span<const double> taps);

/// Spatial Gaussian exp(-0.5 |dp|^2 / sigma^2) over a size x size window.
std::vector<double> gaussian_taps(const WindowSpec& win, double sigma);

Tensor4 avg_pool_via_pac(const Tensor4& v, std::size_t size, std::size_t stride);

/// Detail-preserving pooling: weighted mean with K = alpha + (|df|^2 + eps^2)^lambda.
Tensor4 dpp_pool_via_pac(const Tensor4& v, const Tensor4& features, std::size_t size,
                         std::size_t stride, double alpha, double epsilon, double lambda);

/// A convolution turned into a Gaussian PAC layer. Adapting features are to
/// be multiplied by `feature_scale` before use.
struct HotSwappedLayer {
    PacParams params;
    double feature_scale = 1e-4;
};

HotSwappedLayer hot_swap_init(const Tensor4& conv_weight, std::span<const double> conv_bias,
                              const WindowSpec& win, double feature_scale = 1e-4);

/// Forward pass of a hot-swapped layer on raw (unscaled) adapting features.
Tensor4 hot_swap_forward(const HotSwappedLayer& layer, const Tensor4& v, const Tensor4& features);

/// Upper bound on max |pac - conv| for one hot-swapped layer given
/// |f_i| <= max_feature_norm everywhere: (1 - exp(-0.5 (2 s |f|)^2)) * |W_o|_1 * |v|_inf,
/// with |W_o|_1 the largest per-output-channel L1 norm.
double hot_swap_deviation_bound(const Tensor4& weight, double v_inf_norm, double feature_scale,
                                double max_feature_norm);

}  // namespace pacgrid
