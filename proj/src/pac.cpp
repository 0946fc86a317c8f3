#include "pacgrid/pac.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "pacgrid/parallel.hpp"

namespace pacgrid {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void check_bias(std::span<const double> bias, std::size_t out_channels) {
    if (!bias.empty() && bias.size() != out_channels) {
        throw std::invalid_argument("bias has " + std::to_string(bias.size()) +
                                    " entries for " + std::to_string(out_channels) +
                                    " output channels");
    }
}

void check_weight(const Tensor4& weight, const WindowSpec& win, std::size_t in_channels) {
    const Dims& wd = weight.dims();
    if (wd.h != win.size || wd.w != win.size) {
        throw std::invalid_argument("weight spatial dims " + to_string(wd) +
                                    " do not match window size " + std::to_string(win.size));
    }
    if (wd.c != in_channels) {
        throw std::invalid_argument("weight expects " + std::to_string(wd.c) +
                                    " input channels, got " + std::to_string(in_channels));
    }
}

// In-bounds indicator per (tap, output pixel).
std::vector<double> inbounds_mask(std::size_t h, std::size_t w, const WindowSpec& win) {
    std::vector<double> ones(h * w, 1.0);
    std::vector<double> mask(win.taps() * win.out_extent(h) * win.out_extent(w));
    detail::unfold_sample(ones.data(), 1, h, w, win, mask.data());
    return mask;
}

// Per-output-channel tap sums, co x taps.
RowMat weight_tap_sums(const Tensor4& weight) {
    const Dims& wd = weight.dims();
    const std::size_t taps = wd.h * wd.w;
    RowMat sums = RowMat::Zero(static_cast<Eigen::Index>(wd.n), static_cast<Eigen::Index>(taps));
    for (std::size_t o = 0; o < wd.n; ++o) {
        for (std::size_t c = 0; c < wd.c; ++c) {
            for (std::size_t t = 0; t < taps; ++t) {
                sums(o, t) += weight[(o * wd.c + c) * taps + t];
            }
        }
    }
    return sums;
}

// Shared engine of conv, PAC and transposed PAC. `kernel` is null for a
// constant adapting kernel.
struct Engine {
    const Tensor4& v;
    const Tensor4* kernel;
    const Tensor4& weight;
    const WindowSpec& win;
    bool normalize;

    std::size_t ci() const { return v.dims().c; }
    std::size_t co() const { return weight.dims().n; }
    std::size_t oh() const { return win.out_extent(v.dims().h); }
    std::size_t ow() const { return win.out_extent(v.dims().w); }
    std::size_t pixels() const { return oh() * ow(); }

    // cols (ci*taps x P) and, when a kernel is present, cols * K.
    void columns(std::size_t n, std::vector<double>& cols, std::vector<double>& weighted) const {
        const Dims& d = v.dims();
        const std::size_t taps = win.taps();
        const std::size_t P = pixels();
        cols.resize(d.c * taps * P);
        detail::unfold_sample(v.sample(n).data(), d.c, d.h, d.w, win, cols.data());
        if (kernel == nullptr) {
            return;
        }
        weighted.resize(cols.size());
        auto k = kernel->sample(n);
        for (std::size_t ch = 0; ch < d.c; ++ch) {
            for (std::size_t t = 0; t < taps; ++t) {
                const double* src = cols.data() + (ch * taps + t) * P;
                const double* kt = k.data() + t * P;
                double* dst = weighted.data() + (ch * taps + t) * P;
                for (std::size_t p = 0; p < P; ++p) {
                    dst[p] = src[p] * kt[p];
                }
            }
        }
    }

    // K restricted to in-bounds taps, taps x P.
    RowMat masked_kernel(std::size_t n, const std::vector<double>& mask) const {
        const auto taps = static_cast<Eigen::Index>(win.taps());
        const auto P = static_cast<Eigen::Index>(pixels());
        RowMat kin = ConstMatMap(mask.data(), taps, P);
        if (kernel != nullptr) {
            kin.array() *= ConstMatMap(kernel->sample(n).data(), taps, P).array();
        }
        return kin;
    }

    Tensor4 forward(std::span<const double> bias) const {
        const Dims& d = v.dims();
        const std::size_t P = pixels();
        const auto rows = static_cast<Eigen::Index>(co());
        const auto inner = static_cast<Eigen::Index>(ci() * win.taps());
        Tensor4 out({d.n, co(), oh(), ow()});
        ConstMatMap w(weight.values().data(), rows, inner);
        std::vector<double> mask;
        RowMat wsum;
        if (normalize) {
            mask = inbounds_mask(d.h, d.w, win);
            wsum = weight_tap_sums(weight);
        }
        parallel_for(d.n, [&](std::size_t n) {
            std::vector<double> cols;
            std::vector<double> weighted;
            columns(n, cols, weighted);
            const std::vector<double>& src = kernel != nullptr ? weighted : cols;
            MatMap o(out.sample(n).data(), rows, static_cast<Eigen::Index>(P));
            o.noalias() = w * ConstMatMap(src.data(), inner, static_cast<Eigen::Index>(P));
            if (normalize) {
                RowMat den = wsum * masked_kernel(n, mask);
                o.array() = (den.array() != 0.0).select(o.array() / den.array(), 0.0);
            }
            if (!bias.empty()) {
                for (Eigen::Index r = 0; r < rows; ++r) {
                    o.row(r).array() += bias[static_cast<std::size_t>(r)];
                }
            }
        });
        return out;
    }

    struct Grads {
        Tensor4 dv;
        Tensor4 dweight;
        std::vector<double> dbias;
        Tensor4 dkernel;
    };

    Grads backward(const Tensor4& upstream) const {
        const Dims& d = v.dims();
        const std::size_t taps = win.taps();
        const std::size_t P = pixels();
        const auto rows = static_cast<Eigen::Index>(co());
        const auto inner = static_cast<Eigen::Index>(ci() * taps);
        const auto cols_p = static_cast<Eigen::Index>(P);
        const Dims expect{d.n, co(), oh(), ow()};
        if (upstream.dims() != expect) {
            throw std::invalid_argument("upstream dims " + to_string(upstream.dims()) +
                                        ", expected " + to_string(expect));
        }
        ConstMatMap w(weight.values().data(), rows, inner);
        std::vector<double> mask;
        RowMat wsum;
        if (normalize) {
            mask = inbounds_mask(d.h, d.w, win);
            wsum = weight_tap_sums(weight);
        }
        const bool want_dk = kernel != nullptr;

        Grads g{Tensor4(d), Tensor4(weight.dims()), std::vector<double>(co(), 0.0),
                want_dk ? Tensor4({d.n, taps, oh(), ow()}) : Tensor4()};
        std::vector<RowMat> dw_parts(d.n);
        std::vector<std::vector<double>> db_parts(d.n);

        parallel_for(d.n, [&](std::size_t n) {
            std::vector<double> cols;
            std::vector<double> weighted;
            columns(n, cols, weighted);
            const std::vector<double>& src = kernel != nullptr ? weighted : cols;
            ConstMatMap colsk(src.data(), inner, cols_p);
            ConstMatMap up(upstream.sample(n).data(), rows, cols_p);

            RowMat dnum;
            RowMat dden;
            RowMat kin;
            if (normalize) {
                kin = masked_kernel(n, mask);
                RowMat den = wsum * kin;
                RowMat num = w * colsk;
                auto nz = den.array() != 0.0;
                dnum = nz.select(up.array() / den.array(), 0.0);
                dden = nz.select(-up.array() * num.array() / (den.array() * den.array()), 0.0);
            } else {
                dnum = up;
            }

            RowMat dw = dnum * colsk.transpose();
            RowMat dcolsk = w.transpose() * dnum;

            if (want_dk) {
                double* dk = g.dkernel.sample(n).data();
                for (std::size_t ch = 0; ch < ci(); ++ch) {
                    for (std::size_t t = 0; t < taps; ++t) {
                        const double* a = dcolsk.data() + (ch * taps + t) * P;
                        const double* b = cols.data() + (ch * taps + t) * P;
                        double* out = dk + t * P;
                        for (std::size_t p = 0; p < P; ++p) {
                            out[p] += a[p] * b[p];
                        }
                    }
                }
                auto k = kernel->sample(n);
                for (std::size_t ch = 0; ch < ci(); ++ch) {
                    for (std::size_t t = 0; t < taps; ++t) {
                        double* a = dcolsk.data() + (ch * taps + t) * P;
                        const double* kt = k.data() + t * P;
                        for (std::size_t p = 0; p < P; ++p) {
                            a[p] *= kt[p];
                        }
                    }
                }
            }
            detail::fold_sample(dcolsk.data(), d.c, d.h, d.w, win, g.dv.sample(n).data());

            if (normalize) {
                RowMat dwsum = dden * kin.transpose();
                for (Eigen::Index o = 0; o < rows; ++o) {
                    for (std::size_t ch = 0; ch < ci(); ++ch) {
                        for (std::size_t t = 0; t < taps; ++t) {
                            dw(o, static_cast<Eigen::Index>(ch * taps + t)) +=
                                dwsum(o, static_cast<Eigen::Index>(t));
                        }
                    }
                }
                if (want_dk) {
                    RowMat dkin = wsum.transpose() * dden;
                    double* dk = g.dkernel.sample(n).data();
                    for (std::size_t i = 0; i < taps * P; ++i) {
                        dk[i] += dkin.data()[i] * mask[i];
                    }
                }
            }
            dw_parts[n] = std::move(dw);
            db_parts[n].assign(co(), 0.0);
            for (Eigen::Index o = 0; o < rows; ++o) {
                db_parts[n][static_cast<std::size_t>(o)] = up.row(o).sum();
            }
        });

        MatMap dw_total(g.dweight.values().data(), rows, inner);
        for (std::size_t n = 0; n < d.n; ++n) {
            dw_total += dw_parts[n];
            for (std::size_t o = 0; o < co(); ++o) {
                g.dbias[o] += db_parts[n][o];
            }
        }
        return g;
    }
};

void check_grid(const Tensor4& v, const Tensor4& f) {
    const Dims& vd = v.dims();
    const Dims& fd = f.dims();
    if (vd.n != fd.n || vd.h != fd.h || vd.w != fd.w) {
        throw std::invalid_argument("adapting features " + to_string(fd) +
                                    " do not share the grid of input " + to_string(vd));
    }
}

// Stride-1 PAC problem equivalent to a transposed PAC.
struct TransposedLayout {
    Tensor4 zp;
    Tensor4 fp;
    PacParams inner;
    std::size_t lead = 0;  // offset of v[0, 0] inside zp
    std::size_t half = 0;  // feature padding
};

TransposedLayout transposed_layout(const Tensor4& v, const Tensor4& fine, const PacParams& p,
                                   const TransposedGeometry& g) {
    validate_params(p);
    const WindowSpec& win = p.win;
    const std::size_t m = g.factor;
    if (m == 0) {
        throw std::invalid_argument("transposed PAC factor must be >= 1");
    }
    if (win.stride != 1 && win.stride != m) {
        throw std::invalid_argument("transposed PAC window stride must be 1 or the factor");
    }
    const std::size_t span = win.dilation * (win.size - 1);
    if (win.padding > span) {
        throw std::invalid_argument("transposed PAC padding exceeds dilation * (size - 1)");
    }
    if (g.output_padding >= std::max(m, win.dilation)) {
        throw std::invalid_argument("output_padding must be smaller than the factor or dilation");
    }
    const Dims& vd = v.dims();
    check_weight(p.weight, win, vd.c);
    const std::size_t out_h = pact_out_extent(vd.h, win, g);
    const std::size_t out_w = pact_out_extent(vd.w, win, g);
    const Dims& fd = fine.dims();
    if (fd.n != vd.n || fd.h != out_h || fd.w != out_w) {
        throw std::invalid_argument("fine-grid features " + to_string(fd) +
                                    " do not match transposed output grid " +
                                    std::to_string(out_h) + "x" + std::to_string(out_w));
    }

    TransposedLayout lay;
    lay.lead = span - win.padding;
    lay.half = span / 2;
    const std::size_t zh = (vd.h - 1) * m + 1 + 2 * lay.lead + g.output_padding;
    const std::size_t zw = (vd.w - 1) * m + 1 + 2 * lay.lead + g.output_padding;
    lay.zp = Tensor4({vd.n, vd.c, zh, zw});
    for (std::size_t n = 0; n < vd.n; ++n) {
        for (std::size_t c = 0; c < vd.c; ++c) {
            for (std::size_t y = 0; y < vd.h; ++y) {
                for (std::size_t x = 0; x < vd.w; ++x) {
                    lay.zp(n, c, lay.lead + y * m, lay.lead + x * m) = v(n, c, y, x);
                }
            }
        }
    }
    lay.fp = pad_zero(fine, lay.half);
    lay.inner = p;
    lay.inner.win = WindowSpec{win.size, 1, 0, win.dilation};
    return lay;
}

}  // namespace

void validate_params(const PacParams& p) {
    const Dims& wd = p.weight.dims();
    validate_kernel(p.kernel);
    if (p.win.size == 0 || p.win.size % 2 == 0) {
        throw std::invalid_argument("PAC filter size must be odd");
    }
    if (wd.h != p.win.size || wd.w != p.win.size) {
        throw std::invalid_argument("weight dims " + to_string(wd) + " do not match filter size " +
                                    std::to_string(p.win.size));
    }
    check_bias(p.bias, wd.n);
    if (!p.weight.all_finite()) {
        throw std::invalid_argument("PAC weights must be finite");
    }
}

Tensor4 pac_forward(const Tensor4& v, const Tensor4& features, const PacParams& p) {
    validate_params(p);
    check_grid(v, features);
    validate_window(p.win, v.dims().h, v.dims().w);
    check_weight(p.weight, p.win, v.dims().c);
    if (p.kernel.kind == KernelKind::Constant) {
        return Engine{v, nullptr, p.weight, p.win, p.normalize}.forward(p.bias);
    }
    Tensor4 k = kernel_eval(p.kernel, features, p.win);
    return Engine{v, &k, p.weight, p.win, p.normalize}.forward(p.bias);
}

PacGradients pac_backward(const Tensor4& v, const Tensor4& features, const PacParams& p,
                          const Tensor4& upstream) {
    validate_params(p);
    check_grid(v, features);
    validate_window(p.win, v.dims().h, v.dims().w);
    check_weight(p.weight, p.win, v.dims().c);
    if (p.kernel.kind == KernelKind::Constant) {
        auto g = Engine{v, nullptr, p.weight, p.win, p.normalize}.backward(upstream);
        return {std::move(g.dv), std::move(g.dweight), std::move(g.dbias), Tensor4(features.dims())};
    }
    Tensor4 k = kernel_eval(p.kernel, features, p.win);
    auto g = Engine{v, &k, p.weight, p.win, p.normalize}.backward(upstream);
    Tensor4 df = kernel_grad(p.kernel, features, p.win, g.dkernel);
    return {std::move(g.dv), std::move(g.dweight), std::move(g.dbias), std::move(df)};
}

std::size_t pact_out_extent(std::size_t in, const WindowSpec& win, const TransposedGeometry& g) {
    return (in - 1) * g.factor + win.dilation * (win.size - 1) + g.output_padding + 1 -
           2 * win.padding;
}

Tensor4 pact_forward(const Tensor4& v, const Tensor4& fine_features, const PacParams& p,
                     const TransposedGeometry& g) {
    TransposedLayout lay = transposed_layout(v, fine_features, p, g);
    return pac_forward(lay.zp, lay.fp, lay.inner);
}

PacGradients pact_backward(const Tensor4& v, const Tensor4& fine_features, const PacParams& p,
                           const TransposedGeometry& g, const Tensor4& upstream) {
    TransposedLayout lay = transposed_layout(v, fine_features, p, g);
    PacGradients inner = pac_backward(lay.zp, lay.fp, lay.inner, upstream);
    const Dims& vd = v.dims();
    Tensor4 dv(vd);
    for (std::size_t n = 0; n < vd.n; ++n) {
        for (std::size_t c = 0; c < vd.c; ++c) {
            for (std::size_t y = 0; y < vd.h; ++y) {
                for (std::size_t x = 0; x < vd.w; ++x) {
                    dv(n, c, y, x) =
                        inner.dv(n, c, lay.lead + y * g.factor, lay.lead + x * g.factor);
                }
            }
        }
    }
    Tensor4 df = lay.half == 0 ? std::move(inner.dfeatures) : crop(inner.dfeatures, lay.half);
    return {std::move(dv), std::move(inner.dweight), std::move(inner.dbias), std::move(df)};
}

Tensor4 conv_forward(const Tensor4& v, const Tensor4& weight, std::span<const double> bias,
                     const WindowSpec& win) {
    validate_window(win, v.dims().h, v.dims().w);
    check_weight(weight, win, v.dims().c);
    check_bias(bias, weight.dims().n);
    return Engine{v, nullptr, weight, win, false}.forward(bias);
}

ConvGradients conv_backward(const Tensor4& v, const Tensor4& weight, const WindowSpec& win,
                            const Tensor4& upstream) {
    validate_window(win, v.dims().h, v.dims().w);
    check_weight(weight, win, v.dims().c);
    auto g = Engine{v, nullptr, weight, win, false}.backward(upstream);
    return {std::move(g.dv), std::move(g.dweight), std::move(g.dbias)};
}

Tensor4 diagonal_weights(std::size_t channels, std::size_t size, std::span<const double> taps) {
    if (taps.size() != size * size) {
        throw std::invalid_argument("diagonal_weights: tap count mismatch");
    }
    Tensor4 w({channels, channels, size, size});
    for (std::size_t c = 0; c < channels; ++c) {
        std::copy(taps.begin(), taps.end(), &w(c, c, 0, 0));
    }
    return w;
}

std::vector<double> gaussian_taps(const WindowSpec& win, double sigma) {
    std::vector<double> taps(win.taps());
    for (std::size_t t = 0; t < taps.size(); ++t) {
        GridOffset o = tap_offset(win, t);
        double r2 = static_cast<double>(o.dy * o.dy + o.dx * o.dx);
        taps[t] = std::exp(-0.5 * r2 / (sigma * sigma));
    }
    return taps;
}

Tensor4 bilateral_filter(const Tensor4& img, double spatial_sigma, const BilateralOptions& opt) {
    if (!(spatial_sigma > 0.0)) {
        throw std::invalid_argument("bilateral spatial sigma must be > 0");
    }
    if (!(opt.feature_sigma > 0.0)) {
        throw std::invalid_argument("bilateral feature sigma must be > 0");
    }
    std::size_t size = opt.window;
    if (size == 0) {
        if (!std::isfinite(spatial_sigma)) {
            throw std::invalid_argument("an infinite spatial sigma needs an explicit window");
        }
        size = 2 * static_cast<std::size_t>(std::ceil(2.0 * spatial_sigma)) + 1;
    }
    PacParams p;
    p.win = WindowSpec::same(size);
    p.weight = diagonal_weights(img.dims().c, size, gaussian_taps(p.win, spatial_sigma));
    p.kernel = KernelSpec::gaussian();
    p.normalize = opt.normalize;
    const double inv = std::isinf(opt.feature_sigma) ? 0.0 : 1.0 / opt.feature_sigma;
    const double scale[] = {inv};
    return pac_forward(img, scale_features(img, scale), p);
}

Tensor4 avg_pool_via_pac(const Tensor4& v, std::size_t size, std::size_t stride) {
    PacParams p;
    p.win = WindowSpec{size, stride, 0, 1};
    std::vector<double> taps(size * size, 1.0 / static_cast<double>(size * size));
    p.weight = diagonal_weights(v.dims().c, size, taps);
    p.kernel = KernelSpec::constant();
    return pac_forward(v, v, p);
}

Tensor4 dpp_pool_via_pac(const Tensor4& v, const Tensor4& features, std::size_t size,
                         std::size_t stride, double alpha, double epsilon, double lambda) {
    PacParams p;
    p.win = WindowSpec{size, stride, 0, 1};
    std::vector<double> taps(size * size, 1.0 / static_cast<double>(size * size));
    p.weight = diagonal_weights(v.dims().c, size, taps);
    p.kernel = KernelSpec::detail_preserving(alpha, epsilon, lambda);
    p.normalize = true;
    return pac_forward(v, features, p);
}

HotSwappedLayer hot_swap_init(const Tensor4& conv_weight, std::span<const double> conv_bias,
                              const WindowSpec& win, double feature_scale) {
    HotSwappedLayer layer;
    layer.params.weight = conv_weight;
    layer.params.bias.assign(conv_bias.begin(), conv_bias.end());
    layer.params.win = win;
    layer.params.kernel = KernelSpec::gaussian();
    layer.feature_scale = feature_scale;
    validate_params(layer.params);
    return layer;
}

Tensor4 hot_swap_forward(const HotSwappedLayer& layer, const Tensor4& v, const Tensor4& features) {
    const double scale[] = {layer.feature_scale};
    return pac_forward(v, scale_features(features, scale), layer.params);
}

double hot_swap_deviation_bound(const Tensor4& weight, double v_inf_norm, double feature_scale,
                                double max_feature_norm) {
    const Dims& wd = weight.dims();
    const std::size_t row = wd.c * wd.h * wd.w;
    double worst_row = 0.0;
    for (std::size_t o = 0; o < wd.n; ++o) {
        double acc = 0.0;
        for (std::size_t i = 0; i < row; ++i) {
            acc += std::abs(weight[o * row + i]);
        }
        worst_row = std::max(worst_row, acc);
    }
    const double span = 2.0 * feature_scale * max_feature_norm;
    return -std::expm1(-0.5 * span * span) * worst_row * v_inf_norm;
}

}  // namespace pacgrid
