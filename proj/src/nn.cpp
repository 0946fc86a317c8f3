#include "pacgrid/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace pacgrid {

namespace {

constexpr std::size_t kFilter = 5;
const TransposedGeometry kDoubling{2, 1};

std::vector<std::size_t> with_signal(std::vector<std::size_t> decoder, std::size_t signal) {
    decoder.back() = signal;
    return decoder;
}

PacParams pact_params(const Layer& l, const std::vector<Param>& params) {
    PacParams p;
    p.weight = params[l.weight].value;
    p.bias.assign(params[l.bias].value.values().begin(), params[l.bias].value.values().end());
    p.win = l.win;
    p.kernel = KernelSpec::gaussian();
    return p;
}

const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv:
            return "conv";
        case LayerKind::PacT:
            return "pact";
        case LayerKind::ReLU:
            break;
    }
    return "relu";
}

const char* branch_name(Branch b) {
    switch (b) {
        case Branch::Encoder:
            return "encoder";
        case Branch::Guidance:
            return "guidance";
        case Branch::Decoder:
            break;
    }
    return "decoder";
}

}  // namespace

std::size_t pact_layer_count(std::size_t factor) {
    switch (factor) {
        case 4:
            return 2;
        case 8:
            return 3;
        case 16:
            return 4;
        default:
            throw std::invalid_argument("upsampling factor must be 4, 8 or 16, got " + std::to_string(factor));
    }
}

UpsamplerSpec UpsamplerSpec::lite(std::size_t factor, std::size_t signal_channels) {
    UpsamplerSpec s;
    s.factor = factor;
    s.variant = UpsamplerVariant::Lite;
    s.signal_channels = signal_channels;
    switch (pact_layer_count(factor)) {
        case 2:
            s.encoder = {12, 16, 22};
            s.guidance = {12, 22, 24};
            s.decoder = {12, 16, 22, 1};
            break;
        case 3:
            s.encoder = {12, 16, 16};
            s.guidance = {12, 16, 36};
            s.decoder = {12, 16, 16, 20, 1};
            break;
        default:
            s.encoder = {8, 16, 16};
            s.guidance = {8, 16, 40};
            s.decoder = {8, 16, 16, 16, 16, 1};
            break;
    }
    s.decoder = with_signal(s.decoder, signal_channels);
    return s;
}

UpsamplerSpec UpsamplerSpec::standard(std::size_t factor, std::size_t signal_channels) {
    UpsamplerSpec s;
    s.factor = factor;
    s.variant = UpsamplerVariant::Standard;
    s.signal_channels = signal_channels;
    const std::size_t pacts = pact_layer_count(factor);
    s.encoder = {32, 32, 32};
    s.guidance = {32, 32, 16 * pacts};
    s.decoder.assign(pacts + 1, 32);
    s.decoder.push_back(signal_channels);
    return s;
}

UpsamplerSpec UpsamplerSpec::custom(std::size_t factor, std::size_t width, std::size_t signal_channels) {
    UpsamplerSpec s;
    s.factor = factor;
    s.variant = UpsamplerVariant::Custom;
    s.signal_channels = signal_channels;
    const std::size_t pacts = pact_layer_count(factor);
    s.encoder = {width, width, width};
    s.guidance = {width, width, width * pacts};
    s.decoder.assign(pacts + 1, width);
    s.decoder.push_back(signal_channels);
    return s;
}

void validate_spec(const UpsamplerSpec& spec) {
    const std::size_t pacts = pact_layer_count(spec.factor);
    auto positive = [](const std::vector<std::size_t>& v) {
        return !v.empty() && std::all_of(v.begin(), v.end(), [](std::size_t c) { return c > 0; });
    };
    if (!positive(spec.encoder) || !positive(spec.guidance) || !positive(spec.decoder)) {
        throw std::invalid_argument("every branch needs at least one layer with positive width");
    }
    if (spec.signal_channels == 0 || spec.guide_channels == 0) {
        throw std::invalid_argument("signal and guide need at least one channel");
    }
    if (spec.decoder.size() < pacts + 1) {
        throw std::invalid_argument("decoder needs " + std::to_string(pacts) + " PacT layers and a conv");
    }
    if (spec.decoder.back() != spec.signal_channels) {
        throw std::invalid_argument("final decoder conv must emit the signal channels");
    }
    if (spec.guidance.back() % pacts != 0) {
        throw std::invalid_argument("guidance output (" + std::to_string(spec.guidance.back()) +
                                    " channels) does not split over " + std::to_string(pacts) + " PacT layers");
    }
}

Network::Network(const UpsamplerSpec& spec, std::uint64_t seed) : spec_(spec) {
    validate_spec(spec_);
    splits_ = pact_layer_count(spec_.factor);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);

    // He-uniform on the fan-in. A x2 PacT layer only sees a quarter of its
    // taps on real (non-inserted) samples, so its fan-in is divided by 4.
    auto add_layer = [&](LayerKind kind, Branch branch, std::size_t in, std::size_t out) {
        Layer l;
        l.kind = kind;
        l.branch = branch;
        l.in_channels = in;
        l.out_channels = out;
        l.win = kind == LayerKind::PacT ? WindowSpec{kFilter, 2, 2, 1} : WindowSpec::same(kFilter);
        const std::string base = std::string(branch_name(branch)) + "." + std::to_string(layers_.size());
        double fan_in = static_cast<double>(in * kFilter * kFilter);
        if (kind == LayerKind::PacT) {
            fan_in /= 4.0;
        }
        const double bound = std::sqrt(6.0 / fan_in);
        Tensor4 w({out, in, kFilter, kFilter});
        for (double& x : w.values()) {
            x = bound * unit(rng);
        }
        l.weight = params_.size();
        params_.push_back({base + ".weight", w, Tensor4(w.dims())});
        l.bias = params_.size();
        params_.push_back({base + ".bias", Tensor4({1, 1, 1, out}), Tensor4({1, 1, 1, out})});
        layers_.push_back(std::move(l));
    };
    auto add_relu = [&](Branch branch, std::size_t c) {
        Layer l;
        l.kind = LayerKind::ReLU;
        l.branch = branch;
        l.in_channels = l.out_channels = c;
        layers_.push_back(std::move(l));
    };

    std::size_t c = spec_.signal_channels;
    for (std::size_t out : spec_.encoder) {
        add_layer(LayerKind::Conv, Branch::Encoder, c, out);
        add_relu(Branch::Encoder, out);
        c = out;
    }
    std::size_t g = spec_.guide_channels;
    for (std::size_t out : spec_.guidance) {
        add_layer(LayerKind::Conv, Branch::Guidance, g, out);
        add_relu(Branch::Guidance, out);
        g = out;
    }
    for (std::size_t k = 0; k < spec_.decoder.size(); ++k) {
        const std::size_t out = spec_.decoder[k];
        const bool pact = k < splits_;
        add_layer(pact ? LayerKind::PacT : LayerKind::Conv, Branch::Decoder, c, out);
        if (pact) {
            layers_.back().split = k;
        }
        if (k + 1 < spec_.decoder.size()) {
            add_relu(Branch::Decoder, out);
        }
        c = out;
    }
    if (spec_.residual) {
        // Start from the bilinear prediction.
        params_[layers_.back().weight].value.fill(0.0);
    }
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const Param& p : params_) {
        n += p.value.size();
    }
    return n;
}

Tensor4 Network::run_branch(Branch b, Tensor4 x) {
    for (Layer& l : layers_) {
        if (l.branch != b) {
            continue;
        }
        l.input = x;
        switch (l.kind) {
            case LayerKind::ReLU:
                for (double& v : x.values()) {
                    v = v > 0.0 ? v : 0.0;
                }
                break;
            case LayerKind::Conv:
                x = conv_forward(x, params_[l.weight].value, params_[l.bias].value.values(), l.win);
                break;
            case LayerKind::PacT:
                l.features = guide_slices_.at(l.split);
                x = pact_forward(x, l.features, pact_params(l, params_), kDoubling);
                break;
        }
    }
    return x;
}

Tensor4 Network::back_branch(Branch b, Tensor4 g) {
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
        Layer& l = *it;
        if (l.branch != b) {
            continue;
        }
        switch (l.kind) {
            case LayerKind::ReLU: {
                // Zero pre-activation passes no gradient.
                auto in = l.input.values();
                auto gv = g.values();
                for (std::size_t i = 0; i < gv.size(); ++i) {
                    if (!(in[i] > 0.0)) {
                        gv[i] = 0.0;
                    }
                }
                break;
            }
            case LayerKind::Conv: {
                ConvGradients cg = conv_backward(l.input, params_[l.weight].value, l.win, g);
                params_[l.weight].grad += cg.dweight;
                params_[l.bias].grad += Tensor4({1, 1, 1, cg.dbias.size()}, cg.dbias);
                g = std::move(cg.dv);
                break;
            }
            case LayerKind::PacT: {
                PacGradients pg = pact_backward(l.input, l.features, pact_params(l, params_), kDoubling, g);
                params_[l.weight].grad += pg.dweight;
                params_[l.bias].grad += Tensor4({1, 1, 1, pg.dbias.size()}, pg.dbias);
                guide_slices_[l.split] += pg.dfeatures;
                g = std::move(pg.dv);
                break;
            }
        }
    }
    return g;
}

Tensor4 Network::forward(const Tensor4& low_res, const Tensor4& guide) {
    const Dims& ld = low_res.dims();
    const Dims& gd = guide.dims();
    if (ld.c != spec_.signal_channels || gd.c != spec_.guide_channels || ld.n != gd.n ||
        gd.h != ld.h * spec_.factor || gd.w != ld.w * spec_.factor) {
        throw std::invalid_argument("inputs " + to_string(ld) + " and " + to_string(gd) +
                                    " do not fit a x" + std::to_string(spec_.factor) + " upsampler");
    }
    low_res_cache_ = low_res;
    Tensor4 encoded = run_branch(Branch::Encoder, low_res);
    Tensor4 g = run_branch(Branch::Guidance, guide);

    const std::size_t per = spec_.guidance.back() / splits_;
    guide_slices_.clear();
    for (std::size_t k = 0; k < splits_; ++k) {
        // Slice k adapts the PacT layer whose output is 2^(splits-1-k) times coarser.
        guide_slices_.push_back(box_downsample(slice_channels(g, k * per, per), std::size_t{1} << (splits_ - 1 - k)));
    }
    Tensor4 out = run_branch(Branch::Decoder, encoded);
    if (spec_.residual) {
        out += bilinear_upsample(low_res, spec_.factor);
    }
    cached_ = true;
    return out;
}

namespace {
Tensor4 bilinear_upsample_adjoint(const Tensor4& upstream, std::size_t m, const Dims& coarse);
}

Network::InputGrads Network::backward(const Tensor4& upstream) {
    if (!cached_) {
        throw std::logic_error("Network::backward called before forward");
    }
    zero_grad();
    // guide_slices_ is reused as the accumulator for the feature gradients.
    std::vector<Tensor4> saved = guide_slices_;
    for (Tensor4& s : guide_slices_) {
        s.fill(0.0);
    }
    // PacT layers read their features from the cache taken in forward().
    Tensor4 g = back_branch(Branch::Decoder, upstream);
    std::vector<Tensor4> dslices;
    for (std::size_t k = 0; k < splits_; ++k) {
        dslices.push_back(box_downsample_backward(guide_slices_[k], std::size_t{1} << (splits_ - 1 - k)));
    }
    guide_slices_ = std::move(saved);

    InputGrads out;
    out.low_res = back_branch(Branch::Encoder, std::move(g));
    if (spec_.residual) {
        out.low_res += bilinear_upsample_adjoint(upstream, spec_.factor, low_res_cache_.dims());
    }
    out.guide = back_branch(Branch::Guidance, concat_channels(dslices));
    return out;
}

std::uint64_t Network::activation_signature() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const Layer& l : layers_) {
        if (l.kind != LayerKind::ReLU) {
            continue;
        }
        for (double v : l.input.values()) {
            h = (h ^ (v > 0.0 ? 1u : 0u)) * 1099511628211ull;
        }
    }
    return h;
}

void Network::zero_grad() {
    for (Param& p : params_) {
        p.grad.fill(0.0);
    }
}

std::string Network::manifest() const {
    std::ostringstream os;
    for (const Layer& l : layers_) {
        os << branch_name(l.branch) << '.' << kind_name(l.kind) << ' ' << l.in_channels << ' ' << l.out_channels;
        if (l.kind == LayerKind::ReLU) {
            os << " 1 1 1\n";
        } else {
            os << ' ' << l.win.size << ' ' << l.win.stride << ' ' << l.win.dilation << '\n';
        }
    }
    os << "residual " << (spec_.residual ? 1 : 0) << '\n';
    return os.str();
}

LossResult loss_mse(const Tensor4& pred, const Tensor4& target) {
    if (!(pred.dims() == target.dims())) {
        throw std::invalid_argument("loss shapes differ: " + to_string(pred.dims()) + " vs " + to_string(target.dims()));
    }
    LossResult r{0.0, Tensor4(pred.dims())};
    const double inv = 1.0 / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        r.value += d * d;
        r.grad[i] = 2.0 * d * inv;
    }
    r.value *= inv;
    return r;
}

LossResult loss_rmse(const Tensor4& pred, const Tensor4& target) {
    LossResult r = loss_mse(pred, target);
    const double root = std::sqrt(r.value);
    r.grad *= root > 0.0 ? 0.5 / root : 0.0;
    r.value = root;
    return r;
}

LossResult loss_epe(const Tensor4& pred, const Tensor4& gt, double eps) {
    if (!(pred.dims() == gt.dims()) || pred.dims().c != 2) {
        throw std::invalid_argument("end-point error needs matching (n, 2, h, w) tensors");
    }
    const Dims& d = pred.dims();
    LossResult r{0.0, Tensor4(d)};
    const double inv = 1.0 / static_cast<double>(d.n * d.plane());
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t y = 0; y < d.h; ++y) {
            for (std::size_t x = 0; x < d.w; ++x) {
                const double du = pred(n, 0, y, x) - gt(n, 0, y, x);
                const double dv = pred(n, 1, y, x) - gt(n, 1, y, x);
                const double norm2 = du * du + dv * dv;
                r.value += std::sqrt(norm2);
                const double smooth = std::sqrt(norm2 + eps * eps);
                r.grad(n, 0, y, x) = du / smooth * inv;
                r.grad(n, 1, y, x) = dv / smooth * inv;
            }
        }
    }
    r.value *= inv;
    return r;
}

namespace {

// Source rows/cols and weights of one output coordinate.
struct Lerp {
    std::size_t lo, hi;
    double t;
};

std::vector<Lerp> lerp_table(std::size_t in, std::size_t m) {
    std::vector<Lerp> table(in * m);
    for (std::size_t o = 0; o < in * m; ++o) {
        double src = (static_cast<double>(o) + 0.5) / static_cast<double>(m) - 0.5;
        src = std::max(src, 0.0);
        auto lo = static_cast<std::size_t>(src);
        lo = std::min(lo, in - 1);
        table[o] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
    }
    return table;
}

Tensor4 bilinear_upsample_adjoint(const Tensor4& upstream, std::size_t m, const Dims& coarse) {
    const auto ty = lerp_table(coarse.h, m);
    const auto tx = lerp_table(coarse.w, m);
    Tensor4 out(coarse);
    for (std::size_t n = 0; n < coarse.n; ++n) {
        for (std::size_t c = 0; c < coarse.c; ++c) {
            for (std::size_t y = 0; y < coarse.h * m; ++y) {
                for (std::size_t x = 0; x < coarse.w * m; ++x) {
                    const double g = upstream(n, c, y, x);
                    const Lerp& a = ty[y];
                    const Lerp& b = tx[x];
                    out(n, c, a.lo, b.lo) += (1 - a.t) * (1 - b.t) * g;
                    out(n, c, a.lo, b.hi) += (1 - a.t) * b.t * g;
                    out(n, c, a.hi, b.lo) += a.t * (1 - b.t) * g;
                    out(n, c, a.hi, b.hi) += a.t * b.t * g;
                }
            }
        }
    }
    return out;
}

}  // namespace

Tensor4 bilinear_upsample(const Tensor4& t, std::size_t m) {
    if (m == 0) {
        throw std::invalid_argument("upsampling factor must be positive");
    }
    const Dims& d = t.dims();
    const auto ty = lerp_table(d.h, m);
    const auto tx = lerp_table(d.w, m);
    Tensor4 out({d.n, d.c, d.h * m, d.w * m});
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t c = 0; c < d.c; ++c) {
            for (std::size_t y = 0; y < d.h * m; ++y) {
                const Lerp& a = ty[y];
                for (std::size_t x = 0; x < d.w * m; ++x) {
                    const Lerp& b = tx[x];
                    const double top = (1 - b.t) * t(n, c, a.lo, b.lo) + b.t * t(n, c, a.lo, b.hi);
                    const double bot = (1 - b.t) * t(n, c, a.hi, b.lo) + b.t * t(n, c, a.hi, b.hi);
                    out(n, c, y, x) = (1 - a.t) * top + a.t * bot;
                }
            }
        }
    }
    return out;
}

Tensor4 box_downsample(const Tensor4& t, std::size_t m) {
    if (m == 1) {
        return t;
    }
    const Dims& d = t.dims();
    if (m == 0 || d.h % m != 0 || d.w % m != 0) {
        throw std::invalid_argument("grid " + to_string(d) + " is not divisible by " + std::to_string(m));
    }
    Tensor4 out({d.n, d.c, d.h / m, d.w / m});
    const double inv = 1.0 / static_cast<double>(m * m);
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t c = 0; c < d.c; ++c) {
            for (std::size_t y = 0; y < d.h; ++y) {
                for (std::size_t x = 0; x < d.w; ++x) {
                    out(n, c, y / m, x / m) += t(n, c, y, x) * inv;
                }
            }
        }
    }
    return out;
}

Tensor4 box_downsample_backward(const Tensor4& upstream, std::size_t m) {
    if (m == 1) {
        return upstream;
    }
    const Dims& d = upstream.dims();
    Tensor4 out({d.n, d.c, d.h * m, d.w * m});
    const double inv = 1.0 / static_cast<double>(m * m);
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t c = 0; c < d.c; ++c) {
            for (std::size_t y = 0; y < d.h * m; ++y) {
                for (std::size_t x = 0; x < d.w * m; ++x) {
                    out(n, c, y, x) = upstream(n, c, y / m, x / m) * inv;
                }
            }
        }
    }
    return out;
}

void adam_step(AdamState& s, std::vector<Param>& params) {
    if (s.m.size() != params.size()) {
        s.m.clear();
        s.v.clear();
        for (const Param& p : params) {
            s.m.emplace_back(p.value.dims());
            s.v.emplace_back(p.value.dims());
        }
    }
    ++s.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto w = params[k].value.values();
        auto g = params[k].grad.values();
        auto m = s.m[k].values();
        auto v = s.v[k].values();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
            v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
            w[i] -= s.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + s.eps);
        }
    }
}

std::size_t Schedule::total() const {
    std::size_t n = 0;
    for (std::size_t s : steps) {
        n += s;
    }
    return n;
}

double Schedule::lr_at(std::size_t step) const {
    for (std::size_t k = 0; k < steps.size(); ++k) {
        if (step < steps[k]) {
            return lrs[k];
        }
        step -= steps[k];
    }
    throw std::out_of_range("step beyond the schedule");
}

Schedule Schedule::desk() { return {{1e-4, 1e-5, 1e-6}, {700, 200, 100}}; }

UpsampleSet make_upsample_set(const std::vector<SyntheticScene>& scenes, SynthMode mode, std::size_t factor) {
    UpsampleSet set;
    for (const SyntheticScene& s : scenes) {
        set.guides.push_back(s.guide);
        set.targets.push_back(s.target);
        set.low_res.push_back(mode == SynthMode::Depth ? downsample_nearest(s.target, factor)
                                                       : downsample_bilinear(s.target, factor));
    }
    return set;
}

namespace {

// Copies the window [y0, y0 + h) x [x0, x0 + w) of sample 0 of `src` into batch slot n of `dst`.
void copy_crop(const Tensor4& src, std::size_t y0, std::size_t x0, Tensor4& dst, std::size_t n) {
    const Dims& d = dst.dims();
    for (std::size_t c = 0; c < d.c; ++c) {
        for (std::size_t y = 0; y < d.h; ++y) {
            for (std::size_t x = 0; x < d.w; ++x) {
                dst(n, c, y, x) = src(0, c, y0 + y, x0 + x);
            }
        }
    }
}

}  // namespace

std::vector<double> train(Network& net, const UpsampleSet& data, const TrainOptions& opt) {
    const std::size_t m = net.spec().factor;
    if (opt.schedule.lrs.size() != opt.schedule.steps.size()) {
        throw std::invalid_argument("schedule needs one step count per learning rate");
    }
    std::vector<double> curve;
    const std::size_t steps = opt.schedule.total();
    if (steps == 0) {
        return curve;
    }
    if (data.guides.empty() || opt.batch == 0 || opt.crop == 0 || opt.crop % m != 0) {
        throw std::invalid_argument("training needs data, a batch size and a crop divisible by the factor");
    }
    const std::size_t sc = net.spec().signal_channels;
    const std::size_t gc = net.spec().guide_channels;
    const std::size_t crop = opt.crop;
    for (const Tensor4& g : data.guides) {
        if (g.dims().h < crop || g.dims().w < crop) {
            throw std::invalid_argument("crop larger than a training scene");
        }
    }
    std::mt19937_64 rng(opt.seed);
    AdamState adam;
    Tensor4 guide({opt.batch, gc, crop, crop});
    Tensor4 target({opt.batch, sc, crop, crop});
    Tensor4 low({opt.batch, sc, crop / m, crop / m});
    curve.reserve(steps);
    for (std::size_t step = 0; step < steps; ++step) {
        for (std::size_t b = 0; b < opt.batch; ++b) {
            const std::size_t i = rng() % data.guides.size();
            const Dims& d = data.guides[i].dims();
            const std::size_t oy = m * (rng() % ((d.h - crop) / m + 1));
            const std::size_t ox = m * (rng() % ((d.w - crop) / m + 1));
            copy_crop(data.guides[i], oy, ox, guide, b);
            copy_crop(data.targets[i], oy, ox, target, b);
            copy_crop(data.low_res[i], oy / m, ox / m, low, b);
        }
        Tensor4 pred = net.forward(low, guide);
        LossResult loss = opt.loss == TrainLoss::Mse ? loss_mse(pred, target) : loss_epe(pred, target);
        net.backward(loss.grad);
        adam.lr = opt.schedule.lr_at(step);
        adam_step(adam, net.params());
        curve.push_back(loss.value);
        if (opt.on_step) {
            opt.on_step(step, loss.value);
        }
    }
    return curve;
}

EvalMetrics evaluate(Network& net, const UpsampleSet& data) {
    EvalMetrics e;
    double sq = 0.0, base_sq = 0.0, epe = 0.0, base_epe = 0.0;
    std::size_t values = 0, pixels = 0;
    for (std::size_t i = 0; i < data.guides.size(); ++i) {
        Tensor4 pred = net.forward(data.low_res[i], data.guides[i]);
        Tensor4 base = bilinear_upsample(data.low_res[i], net.spec().factor);
        const Tensor4& t = data.targets[i];
        const auto n = static_cast<double>(t.size());
        sq += loss_mse(pred, t).value * n;
        base_sq += loss_mse(base, t).value * n;
        values += t.size();
        if (t.dims().c == 2) {
            const auto p = static_cast<double>(t.dims().n * t.dims().plane());
            epe += loss_epe(pred, t).value * p;
            base_epe += loss_epe(base, t).value * p;
            pixels += t.dims().n * t.dims().plane();
        }
    }
    if (values > 0) {
        e.rmse = std::sqrt(sq / static_cast<double>(values));
        e.baseline_rmse = std::sqrt(base_sq / static_cast<double>(values));
    }
    if (pixels > 0) {
        e.epe = epe / static_cast<double>(pixels);
        e.baseline_epe = base_epe / static_cast<double>(pixels);
    }
    return e;
}

std::filesystem::path manifest_path(const std::filesystem::path& checkpoint) {
    return checkpoint.string() + ".manifest";
}

namespace {

std::vector<std::string> layer_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line[0] != '#') {
            lines.push_back(line);
        }
    }
    return lines;
}

}  // namespace

void save_checkpoint(const Network& net, const std::filesystem::path& path, const std::string& header) {
    TensorContainer c;
    for (const Param& p : net.params()) {
        c.add(p.name, p.value, DType::F64);
    }
    c.save(path);
    std::ofstream out(manifest_path(path), std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + manifest_path(path).string());
    }
    std::istringstream hin(header);
    std::string line;
    while (std::getline(hin, line)) {
        out << "# " << line << '\n';
    }
    out << net.manifest();
}

void load_checkpoint(Network& net, const std::filesystem::path& path) {
    const auto mpath = manifest_path(path);
    std::ifstream in(mpath);
    if (!in) {
        throw std::runtime_error("cannot open " + mpath.string());
    }
    std::stringstream text;
    text << in.rdbuf();
    const auto have = layer_lines(text.str());
    const auto want = layer_lines(net.manifest());
    for (std::size_t i = 0; i < std::max(have.size(), want.size()); ++i) {
        const std::string a = i < have.size() ? have[i] : "<missing>";
        const std::string b = i < want.size() ? want[i] : "<missing>";
        if (a != b) {
            throw std::runtime_error(mpath.string() + ": layer " + std::to_string(i) + " is '" + a +
                                     "', network expects '" + b + "'");
        }
    }
    TensorContainer c = TensorContainer::load(path);
    for (Param& p : net.params()) {
        Tensor4 t = c.tensor(p.name);
        if (!(t.dims() == p.value.dims())) {
            throw std::runtime_error(path.string() + ": '" + p.name + "' has dims " + to_string(t.dims()) +
                                     ", expected " + to_string(p.value.dims()));
        }
        p.value = std::move(t);
    }
}

}  // namespace pacgrid
