#include "pacgrid/crf.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "pacgrid/data.hpp"
#include "pacgrid/pac.hpp"

namespace pacgrid {

namespace {

constexpr double kExpFloor = -60.0;

// PAC weights of a branch: W[l][l'][t] = compat[l'][l][t].
Tensor4 pac_weight(const Tensor4& compat) {
    const Dims& d = compat.dims();
    Tensor4 w(d);
    for (std::size_t lp = 0; lp < d.n; ++lp) {
        for (std::size_t l = 0; l < d.c; ++l) {
            for (std::size_t t = 0; t < d.plane(); ++t) {
                w[(l * d.n + lp) * d.plane() + t] = compat[(lp * d.c + l) * d.plane() + t];
            }
        }
    }
    return w;
}

PacParams branch_params(const PairwiseBranch& b) {
    PacParams p;
    p.weight = pac_weight(b.compat);
    p.win = b.win;
    p.kernel = b.kernel;
    return p;
}

Tensor4 branch_features(const PairwiseBranch& b, const Tensor4& guide) {
    return scale_features(guide, b.feature_scale);
}

void check_inputs(const Tensor4& unary, const Tensor4& guide, const CrfSpec& spec) {
    validate_crf(spec, guide.dims().c);
    const Dims& u = unary.dims();
    const Dims& g = guide.dims();
    if (u.c != spec.labels || u.n != g.n || u.h != g.h || u.w != g.w) {
        throw std::invalid_argument("unary " + to_string(u) + " and guide " + to_string(g) +
                                    " do not match a " + std::to_string(spec.labels) + "-label model");
    }
}

void check_normalized(const Tensor4& q) {
    const Dims& d = q.dims();
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t i = 0; i < d.plane(); ++i) {
            double sum = 0.0;
            for (std::size_t l = 0; l < d.c; ++l) {
                const double v = q[(n * d.c + l) * d.plane() + i];
                if (!(v >= 0.0)) {
                    throw std::invalid_argument("marginals must be non-negative");
                }
                sum += v;
            }
            if (std::abs(sum - 1.0) > 1e-9) {
                throw std::invalid_argument("marginals at pixel " + std::to_string(i) + " sum to " +
                                            std::to_string(sum));
            }
        }
    }
}

// Total pairwise energy sum_k PAC_k(q) given per-branch features.
Tensor4 pairwise_energy(const Tensor4& q, const std::vector<Tensor4>& features, const CrfSpec& spec) {
    Tensor4 total(q.dims());
    for (std::size_t k = 0; k < spec.branches.size(); ++k) {
        total += pac_forward(q, features[k], branch_params(spec.branches[k]));
    }
    return total;
}

std::vector<Tensor4> all_features(const Tensor4& guide, const CrfSpec& spec) {
    std::vector<Tensor4> f;
    for (const PairwiseBranch& b : spec.branches) {
        f.push_back(branch_features(b, guide));
    }
    return f;
}

// dE for Q = softmax(-E), given dQ. Clamped entries get no gradient.
Tensor4 softmax_neg_backward(const Tensor4& q, const Tensor4& energy, const Tensor4& dq) {
    const Dims& d = q.dims();
    Tensor4 de(d);
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t i = 0; i < d.plane(); ++i) {
            double lo = energy[(n * d.c) * d.plane() + i];
            double inner = 0.0;
            for (std::size_t l = 0; l < d.c; ++l) {
                const std::size_t at = (n * d.c + l) * d.plane() + i;
                lo = std::min(lo, energy[at]);
                inner += q[at] * dq[at];
            }
            for (std::size_t l = 0; l < d.c; ++l) {
                const std::size_t at = (n * d.c + l) * d.plane() + i;
                if (lo - energy[at] < kExpFloor) {
                    continue;
                }
                de[at] = -q[at] * (dq[at] - inner);
            }
        }
    }
    return de;
}

}  // namespace

void validate_crf(const CrfSpec& spec, std::size_t guide_channels) {
    if (spec.labels < 2) {
        throw std::invalid_argument("a CRF needs at least two labels");
    }
    if (spec.steps < 1) {
        throw std::invalid_argument("mean field needs at least one step");
    }
    for (const PairwiseBranch& b : spec.branches) {
        const WindowSpec same = WindowSpec::same(b.win.size, b.win.dilation);
        if (b.win.size % 2 == 0 || !(b.win == same)) {
            throw std::invalid_argument("pairwise windows must be odd, stride 1 and 'same' padded");
        }
        if (!(b.compat.dims() == Dims{spec.labels, spec.labels, b.win.size, b.win.size})) {
            throw std::invalid_argument("compat tensor " + to_string(b.compat.dims()) + " does not match " +
                                        std::to_string(spec.labels) + " labels and a " +
                                        std::to_string(b.win.size) + "-tap window");
        }
        if (!b.compat.all_finite()) {
            throw std::invalid_argument("compat tensor has non-finite entries");
        }
        if (b.feature_scale.size() != 1 && b.feature_scale.size() != guide_channels) {
            throw std::invalid_argument("feature_scale needs 1 or " + std::to_string(guide_channels) + " entries");
        }
        for (double s : b.feature_scale) {
            if (!(s > 0.0) || !std::isfinite(s)) {
                throw std::invalid_argument("feature scales must be positive and finite");
            }
        }
        validate_kernel(b.kernel);
    }
}

Tensor4 softmax_neg(const Tensor4& energy) {
    const Dims& d = energy.dims();
    Tensor4 q(d);
    std::vector<double> e(d.c);
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t i = 0; i < d.plane(); ++i) {
            double lo = energy[(n * d.c) * d.plane() + i];
            for (std::size_t l = 1; l < d.c; ++l) {
                lo = std::min(lo, energy[(n * d.c + l) * d.plane() + i]);
            }
            double z = 0.0;
            for (std::size_t l = 0; l < d.c; ++l) {
                e[l] = std::exp(std::max(lo - energy[(n * d.c + l) * d.plane() + i], kExpFloor));
                z += e[l];
            }
            for (std::size_t l = 0; l < d.c; ++l) {
                q[(n * d.c + l) * d.plane() + i] = e[l] / z;
            }
        }
    }
    return q;
}

Tensor4 unary_from_logits(const Tensor4& logits) {
    const Dims& d = logits.dims();
    Tensor4 psi(d);
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t i = 0; i < d.plane(); ++i) {
            double hi = logits[(n * d.c) * d.plane() + i];
            for (std::size_t l = 1; l < d.c; ++l) {
                hi = std::max(hi, logits[(n * d.c + l) * d.plane() + i]);
            }
            double z = 0.0;
            for (std::size_t l = 0; l < d.c; ++l) {
                z += std::exp(logits[(n * d.c + l) * d.plane() + i] - hi);
            }
            const double lse = hi + std::log(z);
            for (std::size_t l = 0; l < d.c; ++l) {
                psi[(n * d.c + l) * d.plane() + i] = lse - logits[(n * d.c + l) * d.plane() + i];
            }
        }
    }
    return psi;
}

Tensor4 mf_step(const Tensor4& q, const Tensor4& unary, const Tensor4& guide, const CrfSpec& spec) {
    check_inputs(unary, guide, spec);
    if (!(q.dims() == unary.dims())) {
        throw std::invalid_argument("marginals and unaries differ in shape");
    }
    check_normalized(q);
    return softmax_neg(unary + pairwise_energy(q, all_features(guide, spec), spec));
}

MfResult mf_infer(const Tensor4& unary, const Tensor4& guide, const CrfSpec& spec) {
    check_inputs(unary, guide, spec);
    const auto features = all_features(guide, spec);
    Tensor4 q = softmax_neg(unary);
    for (std::size_t t = 0; t < spec.steps; ++t) {
        q = softmax_neg(unary + pairwise_energy(q, features, spec));
    }
    MfResult r{q, argmax_labels(q)};
    return r;
}

std::vector<std::uint32_t> argmax_labels(const Tensor4& q) {
    const Dims& d = q.dims();
    std::vector<std::uint32_t> labels(d.n * d.plane());
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t i = 0; i < d.plane(); ++i) {
            std::uint32_t best = 0;
            for (std::size_t l = 1; l < d.c; ++l) {
                if (q[(n * d.c + l) * d.plane() + i] > q[(n * d.c + best) * d.plane() + i]) {
                    best = static_cast<std::uint32_t>(l);
                }
            }
            labels[n * d.plane() + i] = best;
        }
    }
    return labels;
}

std::size_t isolated_pixels(const std::vector<std::uint32_t>& labels, std::size_t h, std::size_t w) {
    if (labels.size() % (h * w) != 0) {
        throw std::invalid_argument("label map size is not a multiple of h*w");
    }
    std::size_t count = 0;
    for (std::size_t base = 0; base < labels.size(); base += h * w) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const std::uint32_t me = labels[base + y * w + x];
                bool alone = true;
                bool any = false;
                auto see = [&](std::size_t yy, std::size_t xx) {
                    any = true;
                    alone = alone && labels[base + yy * w + xx] != me;
                };
                if (y > 0) see(y - 1, x);
                if (y + 1 < h) see(y + 1, x);
                if (x > 0) see(y, x - 1);
                if (x + 1 < w) see(y, x + 1);
                count += any && alone;
            }
        }
    }
    return count;
}

Tensor4 factor_compat(const Tensor4& mu, const Tensor4& spatial) {
    const Dims& md = mu.dims();
    const Dims& sd = spatial.dims();
    if (md.n != 1 || md.c != 1 || md.h != md.w || sd.n != 1 || sd.c != 1 || sd.h != sd.w) {
        throw std::invalid_argument("factor_compat needs a (1, 1, L, L) mu and a (1, 1, s, s) spatial filter");
    }
    const std::size_t labels = md.h, taps = sd.plane();
    Tensor4 out({labels, labels, sd.h, sd.w});
    for (std::size_t lp = 0; lp < labels; ++lp) {
        for (std::size_t l = 0; l < labels; ++l) {
            for (std::size_t t = 0; t < taps; ++t) {
                out[(lp * labels + l) * taps + t] = mu[lp * labels + l] * spatial[t];
            }
        }
    }
    return out;
}

Tensor4 potts(std::size_t labels) {
    Tensor4 mu({1, 1, labels, labels}, 1.0);
    for (std::size_t l = 0; l < labels; ++l) {
        mu(0, 0, l, l) = 0.0;
    }
    return mu;
}

PairwiseBranch potts_branch(std::size_t labels, std::size_t size, std::size_t dilation, double w,
                            std::vector<double> feature_scale) {
    Tensor4 spatial({1, 1, size, size}, w);
    spatial(0, 0, size / 2, size / 2) = 0.0;
    PairwiseBranch b;
    b.win = WindowSpec::same(size, dilation);
    b.compat = factor_compat(potts(labels), spatial);
    b.feature_scale = std::move(feature_scale);
    return b;
}

CrfSpec default_crf(std::size_t labels, const std::vector<std::size_t>& dilations, std::size_t steps,
                    double weight, double feature_scale) {
    CrfSpec spec;
    spec.labels = labels;
    spec.steps = steps;
    for (std::size_t d : dilations) {
        spec.branches.push_back(potts_branch(labels, 5, d, weight, {feature_scale}));
    }
    return spec;
}

Tensor4 dense_fullcrf_mf(const Tensor4& unary, const Tensor4& image, const FullCrfParams& p,
                         std::size_t steps) {
    const Dims& u = unary.dims();
    const Dims& g = image.dims();
    if (u.h > 48 || u.w > 48) {
        throw std::invalid_argument("dense mean field is brute force; images are limited to 48x48");
    }
    if (u.n != g.n || u.h != g.h || u.w != g.w) {
        throw std::invalid_argument("unary and image grids differ");
    }
    if (!(p.theta_alpha > 0.0 && p.theta_beta > 0.0 && p.theta_gamma > 0.0)) {
        throw std::invalid_argument("kernel bandwidths must be positive");
    }
    const std::size_t pixels = u.plane();
    // Pairwise kernel between every pair of pixels of one sample.
    std::vector<double> k(pixels * pixels);
    Tensor4 q = softmax_neg(unary);
    for (std::size_t n = 0; n < u.n; ++n) {
        for (std::size_t i = 0; i < pixels; ++i) {
            for (std::size_t j = 0; j < pixels; ++j) {
                if (i == j) {
                    k[i * pixels + j] = 0.0;
                    continue;
                }
                const double dy = static_cast<double>(i / u.w) - static_cast<double>(j / u.w);
                const double dx = static_cast<double>(i % u.w) - static_cast<double>(j % u.w);
                const double dp = dy * dy + dx * dx;
                double di = 0.0;
                for (std::size_t c = 0; c < g.c; ++c) {
                    const double diff = image[(n * g.c + c) * pixels + i] - image[(n * g.c + c) * pixels + j];
                    di += diff * diff;
                }
                k[i * pixels + j] =
                    p.w1 * std::exp(-dp / (2 * p.theta_alpha * p.theta_alpha) - di / (2 * p.theta_beta * p.theta_beta)) +
                    p.w2 * std::exp(-dp / (2 * p.theta_gamma * p.theta_gamma));
            }
        }
        for (std::size_t t = 0; t < steps; ++t) {
            Tensor4 energy({1, u.c, u.h, u.w});
            for (std::size_t i = 0; i < pixels; ++i) {
                for (std::size_t l = 0; l < u.c; ++l) {
                    // Potts: sum over l' != l of Q_j(l').
                    double msg = 0.0;
                    for (std::size_t j = 0; j < pixels; ++j) {
                        msg += k[i * pixels + j] * (1.0 - q[(n * u.c + l) * pixels + j]);
                    }
                    energy[l * pixels + i] = unary[(n * u.c + l) * pixels + i] + msg;
                }
            }
            Tensor4 qn = softmax_neg(energy);
            std::copy(qn.values().begin(), qn.values().end(), q.values().begin() + static_cast<std::ptrdiff_t>(n * u.c * pixels));
        }
    }
    return q;
}

CrfSpec fullcrf_as_windowed(const FullCrfParams& p, std::size_t labels, std::size_t h, std::size_t w,
                            std::size_t guide_channels, std::size_t steps) {
    const std::size_t size = 2 * std::max(h, w) - 1;
    const WindowSpec win = WindowSpec::same(size);
    auto folded = [&](double weight, double theta) {
        Tensor4 spatial({1, 1, size, size});
        for (std::size_t t = 0; t < win.taps(); ++t) {
            const GridOffset o = tap_offset(win, t);
            const double d2 = static_cast<double>(o.dy * o.dy + o.dx * o.dx);
            spatial[t] = d2 == 0.0 ? 0.0 : weight * std::exp(-d2 / (2 * theta * theta));
        }
        return factor_compat(potts(labels), spatial);
    };
    CrfSpec spec;
    spec.labels = labels;
    spec.steps = steps;
    PairwiseBranch appearance;
    appearance.win = win;
    appearance.compat = folded(p.w1, p.theta_alpha);
    appearance.feature_scale.assign(guide_channels, 1.0 / p.theta_beta);
    PairwiseBranch smoothness;
    smoothness.win = win;
    smoothness.compat = folded(p.w2, p.theta_gamma);
    smoothness.kernel = KernelSpec::constant();
    spec.branches = {appearance, smoothness};
    return spec;
}

UnrolledCrf::UnrolledCrf(CrfSpec spec) : spec_(std::move(spec)) {}

Tensor4 UnrolledCrf::forward(const Tensor4& unary, const Tensor4& guide) {
    check_inputs(unary, guide, spec_);
    unary_ = unary;
    guide_ = guide;
    const auto features = all_features(guide, spec_);
    qs_.clear();
    qs_.push_back(softmax_neg(unary));
    for (std::size_t t = 0; t < spec_.steps; ++t) {
        qs_.push_back(softmax_neg(unary + pairwise_energy(qs_.back(), features, spec_)));
    }
    cached_ = true;
    return qs_.back();
}

UnrolledCrf::Grads UnrolledCrf::backward(const Tensor4& upstream) const {
    if (!cached_) {
        throw std::logic_error("UnrolledCrf::backward called before forward");
    }
    if (!(upstream.dims() == unary_.dims())) {
        throw std::invalid_argument("upstream gradient does not match the marginals");
    }
    const std::size_t nb = spec_.branches.size();
    const auto features = all_features(guide_, spec_);
    std::vector<PacParams> params;
    for (const PairwiseBranch& b : spec_.branches) {
        params.push_back(branch_params(b));
    }
    Grads g;
    g.unary = Tensor4(unary_.dims());
    std::vector<Tensor4> dweight(nb);
    std::vector<Tensor4> dfeat(nb);
    for (std::size_t k = 0; k < nb; ++k) {
        dweight[k] = Tensor4(params[k].weight.dims());
        dfeat[k] = Tensor4(guide_.dims());
    }

    Tensor4 dq = upstream;
    for (std::size_t t = spec_.steps; t >= 1; --t) {
        // Q_t = softmax(-(unary + sum_k PAC_k(Q_{t-1}))).
        const Tensor4& prev = qs_[t - 1];
        Tensor4 energy = unary_ + pairwise_energy(prev, features, spec_);
        Tensor4 de = softmax_neg_backward(qs_[t], energy, dq);
        g.unary += de;
        Tensor4 dprev(prev.dims());
        for (std::size_t k = 0; k < nb; ++k) {
            PacGradients pg = pac_backward(prev, features[k], params[k], de);
            dprev += pg.dv;
            dweight[k] += pg.dweight;
            dfeat[k] += pg.dfeatures;
        }
        dq = std::move(dprev);
    }
    g.unary += softmax_neg_backward(qs_[0], unary_, dq);

    const Dims& gd = guide_.dims();
    for (std::size_t k = 0; k < nb; ++k) {
        // Back to [l'][l] order.
        g.compat.push_back(pac_weight(dweight[k]));
        const auto& scale = spec_.branches[k].feature_scale;
        std::vector<double> ds(scale.size(), 0.0);
        for (std::size_t n = 0; n < gd.n; ++n) {
            for (std::size_t c = 0; c < gd.c; ++c) {
                double acc = 0.0;
                for (std::size_t i = 0; i < gd.plane(); ++i) {
                    const std::size_t at = (n * gd.c + c) * gd.plane() + i;
                    acc += dfeat[k][at] * guide_[at];
                }
                ds[scale.size() == 1 ? 0 : c] += acc;
            }
        }
        g.feature_scale.push_back(std::move(ds));
    }
    return g;
}

LossResult cross_entropy(const Tensor4& q, const std::vector<std::uint32_t>& labels) {
    const Dims& d = q.dims();
    if (labels.size() != d.n * d.plane()) {
        throw std::invalid_argument("label map does not match the marginals");
    }
    LossResult r{0.0, Tensor4(d)};
    const double inv = 1.0 / static_cast<double>(labels.size());
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t i = 0; i < d.plane(); ++i) {
            const std::uint32_t l = labels[n * d.plane() + i];
            if (l >= d.c) {
                throw std::invalid_argument("label index out of range");
            }
            const std::size_t at = (n * d.c + l) * d.plane() + i;
            r.value -= std::log(q[at]) * inv;
            r.grad[at] = -inv / q[at];
        }
    }
    return r;
}

SegmentationTask synth_segmentation(std::uint64_t seed, std::size_t size, std::size_t labels, double confidence,
                                    double noise) {
    if (labels < 2) {
        throw std::invalid_argument("segmentation needs at least two labels");
    }
    SyntheticScene scene = synth_generate(seed, 1, size, SynthMode::Depth).front();
    SegmentationTask task;
    task.guide = scene.guide;
    task.truth.resize(size * size);
    for (std::size_t i = 0; i < task.truth.size(); ++i) {
        task.truth[i] = scene.regions[i] % labels;
    }
    std::mt19937_64 rng(seed ^ 0x5eedULL);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Tensor4 logits({1, labels, size, size});
    for (std::size_t l = 0; l < labels; ++l) {
        for (std::size_t i = 0; i < size * size; ++i) {
            logits[l * size * size + i] = (task.truth[i] == l ? confidence : 0.0) + noise * unit(rng);
        }
    }
    task.unary = unary_from_logits(logits);
    return task;
}

std::vector<double> train_crf(UnrolledCrf& crf, const SegmentationTask& task, std::size_t steps, double lr) {
    CrfSpec& spec = crf.spec();
    std::vector<Param> params;
    for (const PairwiseBranch& b : spec.branches) {
        params.push_back({"compat", b.compat, Tensor4(b.compat.dims())});
        Tensor4 s({1, 1, 1, b.feature_scale.size()}, b.feature_scale);
        params.push_back({"scale", s, Tensor4(s.dims())});
    }
    auto sync = [&] {
        for (std::size_t k = 0; k < spec.branches.size(); ++k) {
            spec.branches[k].compat = params[2 * k].value;
            auto s = params[2 * k + 1].value.values();
            for (std::size_t c = 0; c < s.size(); ++c) {
                // Keep the scales in the valid (positive) range.
                s[c] = std::max(s[c], 1e-6);
                spec.branches[k].feature_scale[c] = s[c];
            }
        }
    };
    AdamState adam;
    adam.lr = lr;
    std::vector<double> curve;
    for (std::size_t step = 0; step <= steps; ++step) {
        LossResult loss = cross_entropy(crf.forward(task.unary, task.guide), task.truth);
        curve.push_back(loss.value);
        if (step == steps) {
            break;
        }
        UnrolledCrf::Grads g = crf.backward(loss.grad);
        for (std::size_t k = 0; k < spec.branches.size(); ++k) {
            params[2 * k].grad = g.compat[k];
            params[2 * k + 1].grad = Tensor4(params[2 * k + 1].value.dims(), g.feature_scale[k]);
        }
        adam_step(adam, params);
        sync();
    }
    return curve;
}

}  // namespace pacgrid
