#pragma once

#include "pacgrid/tensor.hpp"

namespace pacgrid {

enum class KernelKind { Gaussian, DetailPreserving, Constant };

/// Fixed-form adapting kernel K(f_i, f_j), one scalar per pixel pair.
///
///   Gaussian          exp(-0.5 * |f_i - f_j|^2)
///   DetailPreserving  alpha + (|f_i - f_j|^2 + epsilon^2)^lambda
///   Constant          1
struct KernelSpec {
    KernelKind kind = KernelKind::Gaussian;
    double alpha = 0.0;
    double epsilon = 1.0;
    double lambda = 1.0;

    static KernelSpec gaussian() { return {}; }
    static KernelSpec constant() { return {KernelKind::Constant}; }
    static KernelSpec detail_preserving(double alpha, double epsilon, double lambda) {
        return {KernelKind::DetailPreserving, alpha, epsilon, lambda};
    }
};

void validate_kernel(const KernelSpec& spec);

/// Scalar kernel value for a squared feature distance.
double kernel_value(const KernelSpec& spec, double dist2);

/// Kernel field over the window: dims (n, s*s, h', w'). Taps that fall in
/// the padding compare against a zero feature vector; when the window center
/// itself lies in the padding, f_i is the zero vector too.
Tensor4 kernel_eval(const KernelSpec& spec, const Tensor4& features, const WindowSpec& win);

/// Gradient of sum(upstream * kernel_eval(spec, features, win)) with respect
/// to the features. Both ends of every pair receive their share.
Tensor4 kernel_grad(const KernelSpec& spec, const Tensor4& features, const WindowSpec& win,
                    const Tensor4& upstream);

/// Per-channel multiplicative scaling of adapting features. `scale` has one
/// entry per channel, or a single entry applied to all.
Tensor4 scale_features(const Tensor4& features, std::span<const double> scale);

}  // namespace pacgrid
