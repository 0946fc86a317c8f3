#include "pacgrid/kernels.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "pacgrid/parallel.hpp"

namespace pacgrid {

void validate_kernel(const KernelSpec& spec) {
    if (spec.kind != KernelKind::DetailPreserving) {
        return;
    }
    if (!(spec.epsilon > 0.0)) {
        throw std::invalid_argument("detail-preserving kernel needs epsilon > 0");
    }
    if (!(spec.alpha >= 0.0)) {
        throw std::invalid_argument("detail-preserving kernel needs alpha >= 0");
    }
    if (!std::isfinite(spec.lambda)) {
        throw std::invalid_argument("detail-preserving kernel needs a finite lambda");
    }
}

double kernel_value(const KernelSpec& spec, double dist2) {
    switch (spec.kind) {
        case KernelKind::Gaussian:
            return std::exp(-0.5 * dist2);
        case KernelKind::DetailPreserving:
            return spec.alpha + std::pow(dist2 + spec.epsilon * spec.epsilon, spec.lambda);
        case KernelKind::Constant:
            break;
    }
    return 1.0;
}

namespace {

// dK/d(delta) = factor * delta, delta = f_i - f_j.
double slope_factor(const KernelSpec& spec, double dist2, double k) {
    switch (spec.kind) {
        case KernelKind::Gaussian:
            return -k;
        case KernelKind::DetailPreserving:
            return 2.0 * spec.lambda *
                   std::pow(dist2 + spec.epsilon * spec.epsilon, spec.lambda - 1.0);
        case KernelKind::Constant:
            break;
    }
    return 0.0;
}

// Unfolded features plus the squared distance of every tap to the center.
struct PairGeometry {
    std::vector<double> cols;   // d*s*s x P
    std::vector<double> dist2;  // s*s x P
};

PairGeometry pair_geometry(const double* f, const Dims& fd, const WindowSpec& win,
                           std::size_t pixels) {
    const std::size_t taps = win.taps();
    const std::size_t center = taps / 2;
    PairGeometry g;
    g.cols.resize(fd.c * taps * pixels);
    g.dist2.assign(taps * pixels, 0.0);
    detail::unfold_sample(f, fd.c, fd.h, fd.w, win, g.cols.data());
    for (std::size_t ch = 0; ch < fd.c; ++ch) {
        const double* base = g.cols.data() + ch * taps * pixels;
        const double* fc = base + center * pixels;
        for (std::size_t t = 0; t < taps; ++t) {
            const double* fj = base + t * pixels;
            double* d2 = g.dist2.data() + t * pixels;
            for (std::size_t p = 0; p < pixels; ++p) {
                double diff = fc[p] - fj[p];
                d2[p] += diff * diff;
            }
        }
    }
    return g;
}

}  // namespace

Tensor4 kernel_eval(const KernelSpec& spec, const Tensor4& features, const WindowSpec& win) {
    validate_kernel(spec);
    const Dims& fd = features.dims();
    validate_window(win, fd.h, fd.w);
    const std::size_t oh = win.out_extent(fd.h);
    const std::size_t ow = win.out_extent(fd.w);
    Tensor4 field({fd.n, win.taps(), oh, ow}, 1.0);
    if (spec.kind == KernelKind::Constant) {
        return field;
    }
    parallel_for(fd.n, [&](std::size_t n) {
        PairGeometry g = pair_geometry(features.sample(n).data(), fd, win, oh * ow);
        auto out = field.sample(n);
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = kernel_value(spec, g.dist2[i]);
        }
    });
    return field;
}

Tensor4 kernel_grad(const KernelSpec& spec, const Tensor4& features, const WindowSpec& win,
                    const Tensor4& upstream) {
    validate_kernel(spec);
    const Dims& fd = features.dims();
    validate_window(win, fd.h, fd.w);
    const std::size_t oh = win.out_extent(fd.h);
    const std::size_t ow = win.out_extent(fd.w);
    const Dims expect{fd.n, win.taps(), oh, ow};
    if (upstream.dims() != expect) {
        throw std::invalid_argument("kernel_grad: upstream dims " + to_string(upstream.dims()) +
                                    ", expected " + to_string(expect));
    }
    Tensor4 grad(fd);
    if (spec.kind == KernelKind::Constant) {
        return grad;
    }
    const std::size_t taps = win.taps();
    const std::size_t center = taps / 2;
    const std::size_t pixels = oh * ow;
    parallel_for(fd.n, [&](std::size_t n) {
        PairGeometry g = pair_geometry(features.sample(n).data(), fd, win, pixels);
        auto up = upstream.sample(n);
        std::vector<double> coef(taps * pixels);
        for (std::size_t i = 0; i < coef.size(); ++i) {
            double k = kernel_value(spec, g.dist2[i]);
            coef[i] = up[i] * slope_factor(spec, g.dist2[i], k);
        }
        std::vector<double> dcols(g.cols.size(), 0.0);
        for (std::size_t ch = 0; ch < fd.c; ++ch) {
            const double* base = g.cols.data() + ch * taps * pixels;
            const double* fc = base + center * pixels;
            double* dbase = dcols.data() + ch * taps * pixels;
            double* dcenter = dbase + center * pixels;
            for (std::size_t t = 0; t < taps; ++t) {
                const double* fj = base + t * pixels;
                const double* ct = coef.data() + t * pixels;
                double* dj = dbase + t * pixels;
                for (std::size_t p = 0; p < pixels; ++p) {
                    double term = ct[p] * (fc[p] - fj[p]);
                    dj[p] -= term;
                    dcenter[p] += term;
                }
            }
        }
        detail::fold_sample(dcols.data(), fd.c, fd.h, fd.w, win, grad.sample(n).data());
    });
    return grad;
}

Tensor4 scale_features(const Tensor4& features, std::span<const double> scale) {
    const Dims& d = features.dims();
    if (scale.size() != 1 && scale.size() != d.c) {
        throw std::invalid_argument("feature scale needs 1 or " + std::to_string(d.c) +
                                    " entries, got " + std::to_string(scale.size()));
    }
    Tensor4 out = features;
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t c = 0; c < d.c; ++c) {
            double s = scale.size() == 1 ? scale[0] : scale[c];
            for (double& v : out.plane(n, c)) {
                v *= s;
            }
        }
    }
    return out;
}

}  // namespace pacgrid
