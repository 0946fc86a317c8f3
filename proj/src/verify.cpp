#include "pacgrid/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <span>

#include "pacgrid/nn.hpp"
#include "pacgrid/pac.hpp"

namespace pacgrid {

namespace {

// Compiled into the negative-control build only: the reported dF has the
// wrong sign, so gradcheck must fail.
#ifdef PACGRID_FAULT_FLIP_DF
constexpr double kFeatureGradSign = -1.0;
#else
constexpr double kFeatureGradSign = 1.0;
#endif

constexpr double kOpTolerance = 1e-6;
constexpr double kNetworkTolerance = 1e-5;

Tensor4 uniform(const Dims& d, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor4 t(d);
    for (double& x : t.values()) {
        x = u(rng);
    }
    return t;
}

double rel_error(std::span<const double> a, std::span<const double> b) {
    double diff = 0.0;
    double scale = 1e-12;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
    }
    return diff / scale;
}

// Central differences of `loss` over every coordinate of `x`.
std::vector<double> numeric(const std::function<double()>& loss, std::span<double> x, double step) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + step;
        const double up = loss();
        x[i] = keep - step;
        const double down = loss();
        x[i] = keep;
        g[i] = (up - down) / (2.0 * step);
    }
    return g;
}

class Tally {
public:
    void add(const std::string& op, const std::string& grad, double err, std::size_t coords, double tol) {
        auto [it, fresh] = index_.try_emplace(op + "/" + grad, lines_.size());
        if (fresh) {
            lines_.push_back({op, grad, err, tol, coords});
            return;
        }
        GradcheckLine& l = lines_[it->second];
        l.max_rel_error = std::max(l.max_rel_error, err);
        l.coords += coords;
    }
    std::vector<GradcheckLine> take() { return std::move(lines_); }

private:
    std::map<std::string, std::size_t> index_;
    std::vector<GradcheckLine> lines_;
};

struct OpCase {
    Tensor4 v;
    Tensor4 features;
    PacParams params;
    TransposedGeometry geometry;
    bool transposed = false;
};

OpCase make_case(const GradcheckConfig& cfg, bool transposed, std::mt19937_64& rng) {
    OpCase c;
    c.transposed = transposed;
    const std::size_t in_ch = 2;
    const std::size_t out_ch = 2;
    const std::size_t half = cfg.dilation * (cfg.size - 1) / 2;

    PacParams& p = c.params;
    const bool normalized = cfg.kernel == 1;
    p.weight = normalized ? uniform({out_ch, in_ch, cfg.size, cfg.size}, rng, 0.1, 1.0)
                          : uniform({out_ch, in_ch, cfg.size, cfg.size}, rng, -1.0, 1.0);
    p.bias = {0.3, -0.2};
    p.normalize = normalized;
    p.kernel = cfg.kernel == 2 ? KernelSpec::detail_preserving(0.5, 0.5, 0.75) : KernelSpec::gaussian();
    p.win = {cfg.size, cfg.stride, half, cfg.dilation};

    if (!transposed) {
        c.v = uniform({1, in_ch, 8, 8}, rng, -1.0, 1.0);
        c.features = uniform({1, cfg.feature_channels, 8, 8}, rng, -1.0, 1.0);
        return c;
    }
    c.geometry = {cfg.stride, cfg.stride - 1};
    c.v = uniform({1, in_ch, 4, 4}, rng, -1.0, 1.0);
    const std::size_t fine = pact_out_extent(4, p.win, c.geometry);
    c.features = uniform({1, cfg.feature_channels, fine, fine}, rng, -1.0, 1.0);
    return c;
}

void check_op(OpCase& c, std::mt19937_64& rng, double step, Tally& tally) {
    auto forward = [&c]() {
        return c.transposed ? pact_forward(c.v, c.features, c.params, c.geometry)
                            : pac_forward(c.v, c.features, c.params);
    };
    const Tensor4 r = uniform(forward().dims(), rng, -1.0, 1.0);
    auto loss = [&]() { return dot(r, forward()); };

    PacGradients g = c.transposed ? pact_backward(c.v, c.features, c.params, c.geometry, r)
                                  : pac_backward(c.v, c.features, c.params, r);
    g.dfeatures *= kFeatureGradSign;

    const std::string op = c.transposed ? "pact" : "pac";
    auto record = [&](const char* name, std::span<double> x, std::span<const double> analytic) {
        const std::vector<double> num = numeric(loss, x, step);
        tally.add(op, name, rel_error(analytic, num), x.size(), kOpTolerance);
    };
    record("dV", c.v.values(), g.dv.values());
    record("dW", c.params.weight.values(), g.dweight.values());
    record("dB", c.params.bias, g.dbias);
    record("dF", c.features.values(), g.dfeatures.values());
}

void check_network(std::uint64_t seed, double step, Tally& tally) {
    std::mt19937_64 rng(seed ^ 0x6e6574ull);
    Network net(UpsamplerSpec::custom(4, 4, 1), seed);
    Tensor4 low = uniform({1, 1, 4, 4}, rng, -1.0, 1.0);
    Tensor4 guide = uniform({1, 3, 16, 16}, rng, 0.0, 1.0);
    const Tensor4 r = uniform({1, 1, 16, 16}, rng, -1.0, 1.0);

    dot(r, net.forward(low, guide));
    Network::InputGrads in = net.backward(r);
    in.guide *= kFeatureGradSign;
    const std::uint64_t sig = net.activation_signature();

    // A coordinate counts only when the ReLU pattern is the same on both
    // sides of the stencil; elsewhere the loss has a kink.
    struct Group {
        std::vector<double> analytic, numeric;
    };
    auto sample = [&](Group& grp, double& slot, double analytic) {
        const double keep = slot;
        slot = keep + step;
        const double up = dot(r, net.forward(low, guide));
        const bool same_up = net.activation_signature() == sig;
        slot = keep - step;
        const double down = dot(r, net.forward(low, guide));
        const bool same_down = net.activation_signature() == sig;
        slot = keep;
        if (same_up && same_down) {
            grp.analytic.push_back(analytic);
            grp.numeric.push_back((up - down) / (2.0 * step));
        }
    };

    constexpr std::size_t kPerGroup = 40;
    Group dv, dw, db, df;
    for (std::size_t i = 0; i < low.size(); ++i) {
        sample(dv, low[i], in.low_res[i]);
    }
    for (std::size_t k = 0; k < kPerGroup; ++k) {
        const std::size_t i = rng() % guide.size();
        sample(df, guide[i], in.guide[i]);
    }
    std::vector<std::size_t> weights, biases;
    for (const Layer& l : net.layers()) {
        if (l.kind != LayerKind::ReLU) {
            weights.push_back(l.weight);
            biases.push_back(l.bias);
        }
    }
    for (std::size_t k = 0; k < kPerGroup; ++k) {
        Param& w = net.params()[weights[k % weights.size()]];
        const std::size_t i = rng() % w.value.size();
        sample(dw, w.value[i], w.grad[i]);
        Param& b = net.params()[biases[k % biases.size()]];
        const std::size_t j = rng() % b.value.size();
        sample(db, b.value[j], b.grad[j]);
    }
    for (auto [name, grp] : {std::pair{"dV", &dv}, {"dW", &dw}, {"dB", &db}, {"dF", &df}}) {
        tally.add("network", name, rel_error(grp->analytic, grp->numeric), grp->analytic.size(),
                  kNetworkTolerance);
    }
}

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

}  // namespace

bool GradcheckReport::passed() const {
    return std::all_of(lines.begin(), lines.end(), [](const GradcheckLine& l) { return l.passed(); });
}

std::string GradcheckReport::text() const {
    std::string out;
    char buf[160];
    for (const GradcheckLine& l : lines) {
        std::snprintf(buf, sizeof buf, "%-2s %-7s max_rel %.3e tol %.0e coords %zu %s\n", l.gradient.c_str(),
                      l.op.c_str(), l.max_rel_error, l.tolerance, l.coords, l.passed() ? "PASS" : "FAIL");
        out += buf;
    }
    return out;
}

GradcheckConfig gradcheck_config(std::uint64_t seed, std::size_t k) {
    static constexpr std::size_t sizes[] = {1, 3, 5};
    static constexpr std::size_t strides[] = {1, 2};
    static constexpr std::size_t dilations[] = {1, 2, 4};
    static constexpr std::size_t depths[] = {1, 3, 5};
    const std::uint64_t o = splitmix(seed);
    GradcheckConfig c;
    c.size = sizes[(k + o) % 3];
    c.stride = strides[(k + (o >> 8)) % 2];
    c.dilation = dilations[(k / 2 + (o >> 16)) % 3];
    c.feature_channels = depths[(k / 3 + (o >> 24)) % 3];
    c.kernel = static_cast<int>((k / 6 + (o >> 32)) % 3);
    return c;
}

GradcheckReport run_gradcheck(const GradcheckOptions& opt) {
    const auto start = std::chrono::steady_clock::now();
    GradcheckReport report;
    report.cases = opt.cases;
    if (opt.cases == 0) {
        return report;
    }
    Tally tally;
    for (std::size_t k = 0; k < opt.cases; ++k) {
        const GradcheckConfig cfg = gradcheck_config(opt.seed, k);
        std::mt19937_64 rng(splitmix(opt.seed ^ splitmix(k)));
        for (bool transposed : {false, true}) {
            OpCase c = make_case(cfg, transposed, rng);
            check_op(c, rng, opt.step, tally);
        }
    }
    if (opt.network) {
        check_network(opt.seed, opt.step, tally);
    }
    report.lines = tally.take();
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

SwapCheckResult swap_check(std::uint64_t seed, double scale) {
    std::mt19937_64 rng(splitmix(seed ^ 0x73776170ull));
    const std::size_t widths[] = {3, 8, 8, 3};
    const std::size_t sizes[] = {3, 5, 3};
    Tensor4 input = uniform({1, 3, 16, 16}, rng, -1.0, 1.0);
    // Adapting features: a unit-range guide shared by every layer.
    Tensor4 guide = uniform({1, 3, 16, 16}, rng, 0.0, 1.0);
    double feature_norm = 0.0;
    for (std::size_t i = 0; i < 16 * 16; ++i) {
        double sq = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
            sq += guide[c * 256 + i] * guide[c * 256 + i];
        }
        feature_norm = std::max(feature_norm, std::sqrt(sq));
    }

    SwapCheckResult res;
    res.scale = scale;
    Tensor4 conv_x = input;
    Tensor4 pac_x = input;
    double bound = 0.0;
    for (std::size_t l = 0; l < 3; ++l) {
        const WindowSpec win = WindowSpec::same(sizes[l]);
        const double fan = static_cast<double>(widths[l] * sizes[l] * sizes[l]);
        Tensor4 w = uniform({widths[l + 1], widths[l], sizes[l], sizes[l]}, rng, -1.0 / std::sqrt(fan),
                            1.0 / std::sqrt(fan));
        std::vector<double> b(widths[l + 1]);
        for (double& x : b) {
            x = std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
        }
        double lipschitz = 0.0;
        const std::size_t row = widths[l] * sizes[l] * sizes[l];
        for (std::size_t o = 0; o < widths[l + 1]; ++o) {
            double s = 0.0;
            for (std::size_t i = 0; i < row; ++i) {
                s += std::abs(w[o * row + i]);
            }
            lipschitz = std::max(lipschitz, s);
        }
        // |pac(x') - conv(x)| <= |pac(x') - conv(x')| + |conv(x') - conv(x)|.
        bound = hot_swap_deviation_bound(w, max_abs(pac_x), scale, feature_norm) + lipschitz * bound;

        const HotSwappedLayer swapped = hot_swap_init(w, b, win, scale);
        conv_x = conv_forward(conv_x, w, b, win);
        pac_x = hot_swap_forward(swapped, pac_x, guide);
        if (l + 1 < 3) {
            for (Tensor4* t : {&conv_x, &pac_x}) {
                for (double& x : t->values()) {
                    x = std::max(x, 0.0);
                }
            }
        }
    }
    res.deviation = max_abs_diff(pac_x, conv_x);
    res.bound = bound;
    res.output_norm = max_abs(conv_x);
    return res;
}

}  // namespace pacgrid
