// End-to-end acceptance run: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "commands.hpp"
#include "oracles.hpp"
#include "pacgrid/crf.hpp"
#include "pacgrid/data.hpp"
#include "pacgrid/nn.hpp"
#include "pacgrid/pac.hpp"

using namespace pacgrid;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

class Clock {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double max_rel(std::initializer_list<double> errs) { return *std::max_element(errs.begin(), errs.end()); }

// ------------------------------------------------------------------ 1

Outcome gradient_fidelity() {
    Clock clock;
    std::mt19937_64 rng(2024);
    const std::size_t sizes[] = {1, 3, 5}, strides[] = {1, 2}, dilations[] = {1, 2, 4}, depths[] = {1, 3, 5};
    double worst = 0.0;
    std::size_t configs = 0;
    for (std::size_t s : sizes) {
        for (std::size_t st : strides) {
            for (std::size_t dil : dilations) {
                for (std::size_t d : depths) {
                    const int kernel = static_cast<int>(configs % 3);
                    const bool normalized = kernel == 1;
                    PacParams p;
                    p.weight = oracle::random_tensor({2, 2, s, s}, rng, normalized ? 0.1 : -1.0, 1.0);
                    p.bias = {0.25, -0.5};
                    p.normalize = normalized;
                    p.kernel = kernel == 2 ? KernelSpec::detail_preserving(0.3, 0.7, 0.6) : KernelSpec::gaussian();
                    p.win = {s, st, dil * (s - 1) / 2, dil};
                    for (bool transposed : {false, true}) {
                        const TransposedGeometry g{st, st - 1};
                        Tensor4 v = oracle::random_tensor({1, 2, transposed ? 4u : 9u, transposed ? 4u : 9u}, rng);
                        const std::size_t fh = transposed ? pact_out_extent(4, p.win, g) : 9;
                        Tensor4 f = oracle::random_tensor({1, d, fh, fh}, rng);
                        auto fwd = [&] { return transposed ? pact_forward(v, f, p, g) : pac_forward(v, f, p); };
                        const Tensor4 r = oracle::random_tensor(fwd().dims(), rng);
                        auto loss = [&] { return dot(r, fwd()); };
                        const PacGradients an = transposed ? pact_backward(v, f, p, g, r) : pac_backward(v, f, p, r);
                        worst = std::max(worst, max_rel({oracle::relative_error(an.dv, oracle::numeric_gradient(loss, v)),
                                                         oracle::relative_error(an.dweight,
                                                                                oracle::numeric_gradient(loss, p.weight)),
                                                         oracle::relative_error(an.dbias,
                                                                                oracle::numeric_gradient(loss, p.bias)),
                                                         oracle::relative_error(an.dfeatures,
                                                                                oracle::numeric_gradient(loss, f))}));
                    }
                    ++configs;
                }
            }
        }
    }
    const double t = clock.seconds();
    return {configs >= 20 && worst <= 1e-6 && t <= 120.0,
            fmt("%zu configs x {pac, pact} x {dV, dW, dB, dF}, max rel error %.2e (<= 1e-6), %.1f s (<= 120 s)",
                configs, worst, t)};
}

// ------------------------------------------------------------------ 2

Outcome reductions() {
    std::mt19937_64 rng(77);
    const Tensor4 v = oracle::random_tensor({1, 4, 16, 16}, rng);
    const Tensor4 f = oracle::random_tensor({1, 4, 16, 16}, rng);

    double conv_err = 0.0;
    for (const WindowSpec& win : {WindowSpec::same(3), WindowSpec{3, 2, 1, 1}, WindowSpec{5, 1, 4, 2}, WindowSpec{5, 2, 0, 1}}) {
        PacParams p;
        p.weight = oracle::random_tensor({4, 4, win.size, win.size}, rng);
        p.bias = {0.1, -0.2, 0.3, 0.0};
        p.win = win;
        p.kernel = KernelSpec::constant();
        conv_err = std::max(conv_err, max_abs_diff(pac_forward(v, f, p), oracle::conv(v, p.weight, p.bias, win)));
    }

    const Tensor4 img = oracle::random_tensor({1, 4, 16, 16}, rng, 0.0, 1.0);
    double bil_err = 0.0;
    for (auto [ss, fs_, size] : {std::tuple{1.5, 0.3, 5u}, std::tuple{2.0, 0.1, 7u}, std::tuple{1.0, 1.0, 3u}}) {
        BilateralOptions opt;
        opt.feature_sigma = fs_;
        opt.window = size;
        bil_err = std::max(bil_err, max_abs_diff(bilateral_filter(img, ss, opt), oracle::bilateral(img, ss, fs_, size)));
    }

    double pool_err = 0.0;
    for (auto [size, stride] : {std::pair{3u, 3u}, std::pair{3u, 1u}, std::pair{5u, 5u}, std::pair{5u, 2u}, std::pair{1u, 2u}}) {
        PacParams p;
        const std::vector<double> taps(size * size, 1.0 / static_cast<double>(size * size));
        p.weight = diagonal_weights(4, size, taps);
        p.win = {size, stride, 0, 1};
        p.kernel = KernelSpec::constant();
        const Tensor4 want = oracle::mean_pool(v, size, stride);
        pool_err = std::max(pool_err, max_abs_diff(pac_forward(v, f, p), want));
        pool_err = std::max(pool_err, max_abs_diff(avg_pool_via_pac(v, size, stride), want));
    }

    double pact_err = 0.0;
    const Tensor4 coarse = oracle::random_tensor({1, 4, 8, 8}, rng);
    for (std::size_t s : {3u, 5u}) {
        const std::size_t m = 2;
        PacParams p;
        p.weight = oracle::random_tensor({4, 4, s, s}, rng);
        p.bias = {0.5, 0.0, -0.5, 1.0};
        p.win = WindowSpec::same(s);
        Tensor4 fine = oracle::random_tensor({1, 4, 16, 16}, rng);
        // zero_insert gives 15 x 15; the transposed layer's output padding adds the 16th row/column.
        const Tensor4 z = zero_insert(coarse, m);
        Tensor4 ext({1, 4, 16, 16});
        for (std::size_t c = 0; c < 4; ++c) {
            for (std::size_t y = 0; y < z.dims().h; ++y) {
                for (std::size_t x = 0; x < z.dims().w; ++x) {
                    ext(0, c, y, x) = z(0, c, y, x);
                }
            }
        }
        const Tensor4 out = pact_forward(coarse, fine, p, {m, m - 1});
        pact_err = std::max(pact_err, max_abs_diff(out, pac_forward(ext, fine, p)));
        pact_err = std::max(pact_err, max_abs_diff(out, oracle::pac(ext, fine, p.weight, p.bias, p.win, p.kernel)));
    }

    const bool ok = conv_err <= 1e-12 && bil_err <= 1e-12 && pool_err <= 1e-12 && pact_err <= 1e-12;
    return {ok, fmt("conv %.1e, bilateral %.1e, mean pool %.1e, transposed %.1e (each <= 1e-12)", conv_err, bil_err,
                    pool_err, pact_err)};
}

// ------------------------------------------------------------------ 3

Outcome brute_force_oracle() {
    std::mt19937_64 rng(303);
    double worst = 0.0;
    std::size_t count = 0;
    for (std::size_t s : {1u, 3u, 5u}) {
        for (std::size_t stride : {1u, 2u, 3u}) {
            for (std::size_t dil : {1u, 2u, 3u}) {
                for (std::size_t pad : {0u, 1u, 2u, 4u}) {
                    const WindowSpec win{s, stride, pad, dil};
                    if (win.extent() > 6 + 2 * pad) {
                        continue;
                    }
                    const Tensor4 v = oracle::random_tensor({1, 2, 6, 6}, rng);
                    const Tensor4 f = oracle::random_tensor({1, 3, 6, 6}, rng);
                    for (int k = 0; k < 4; ++k) {
                        PacParams p;
                        p.weight = oracle::random_tensor({3, 2, s, s}, rng, k == 3 ? 0.1 : -1.0, 1.0);
                        p.bias = {0.1, 0.2, 0.3};
                        p.win = win;
                        p.kernel = k == 0   ? KernelSpec::gaussian()
                                   : k == 1 ? KernelSpec::detail_preserving(0.2, 0.5, -0.5)
                                   : k == 2 ? KernelSpec::constant()
                                            : KernelSpec::gaussian();
                        p.normalize = k == 3;
                        worst = std::max(worst, max_abs_diff(pac_forward(v, f, p),
                                                             oracle::pac(v, f, p.weight, p.bias, win, p.kernel,
                                                                         p.normalize)));
                        ++count;
                    }
                }
            }
        }
    }
    return {worst <= 1e-12, fmt("%zu instances on 1x2x6x6 over size/stride/dilation/padding, max diff %.1e (<= 1e-12)",
                                count, worst)};
}

// ------------------------------------------------------------------ 4

// Dense mean field with Potts compatibility, straight from the pairwise sums.
Tensor4 dense_oracle(const Tensor4& unary, const Tensor4& img, const FullCrfParams& p, std::size_t steps) {
    const Dims d = unary.dims();
    const std::size_t px = d.h * d.w;
    auto softmax = [&](const Tensor4& e) {
        Tensor4 q(d);
        for (std::size_t i = 0; i < px; ++i) {
            double lo = e[i];
            for (std::size_t l = 1; l < d.c; ++l) {
                lo = std::min(lo, e[l * px + i]);
            }
            double z = 0.0;
            for (std::size_t l = 0; l < d.c; ++l) {
                z += std::exp(-(e[l * px + i] - lo));
            }
            for (std::size_t l = 0; l < d.c; ++l) {
                q[l * px + i] = std::exp(-(e[l * px + i] - lo)) / z;
            }
        }
        return q;
    };
    Tensor4 q = softmax(unary);
    for (std::size_t t = 0; t < steps; ++t) {
        Tensor4 e = unary;
        for (std::size_t i = 0; i < px; ++i) {
            for (std::size_t j = 0; j < px; ++j) {
                if (i == j) {
                    continue;
                }
                const double dy = static_cast<double>(i / d.w) - static_cast<double>(j / d.w);
                const double dx = static_cast<double>(i % d.w) - static_cast<double>(j % d.w);
                double di = 0.0;
                for (std::size_t c = 0; c < img.dims().c; ++c) {
                    const double diff = img[c * px + i] - img[c * px + j];
                    di += diff * diff;
                }
                const double r2 = dy * dy + dx * dx;
                const double k = p.w1 * std::exp(-r2 / (2 * p.theta_alpha * p.theta_alpha) -
                                                 di / (2 * p.theta_beta * p.theta_beta)) +
                                 p.w2 * std::exp(-r2 / (2 * p.theta_gamma * p.theta_gamma));
                for (std::size_t l = 0; l < d.c; ++l) {
                    for (std::size_t lp = 0; lp < d.c; ++lp) {
                        if (lp != l) {
                            e[l * px + i] += k * q[lp * px + j];
                        }
                    }
                }
            }
        }
        q = softmax(e);
    }
    return q;
}

Outcome crf_correctness() {
    std::mt19937_64 rng(404);

    // (a) normalization after every step.
    double norm_err = 0.0;
    {
        CrfSpec spec;
        spec.labels = 3;
        spec.steps = 5;
        for (auto [s, dil] : {std::pair{5u, 1u}, std::pair{3u, 4u}}) {
            PairwiseBranch b;
            b.win = WindowSpec::same(s, dil);
            b.compat = oracle::random_tensor({3, 3, s, s}, rng, -1.0, 2.0);
            b.feature_scale = {4.0};
            spec.branches.push_back(b);
        }
        const Tensor4 unary = oracle::random_tensor({2, 3, 10, 10}, rng, 0.0, 4.0);
        const Tensor4 guide = oracle::random_tensor({2, 3, 10, 10}, rng, 0.0, 1.0);
        Tensor4 q = softmax_neg(unary);
        for (std::size_t t = 0; t < spec.steps; ++t) {
            q = mf_step(q, unary, guide, spec);
            const Dims& d = q.dims();
            for (std::size_t n = 0; n < d.n; ++n) {
                for (std::size_t i = 0; i < d.plane(); ++i) {
                    double sum = 0.0;
                    for (std::size_t l = 0; l < d.c; ++l) {
                        sum += q(n, l, i / d.w, i % d.w);
                    }
                    norm_err = std::max(norm_err, std::abs(sum - 1.0));
                }
            }
        }
    }

    // (b) single dilation-1 branch against the loop oracle, stepped five times.
    double oracle_err = 0.0;
    for (std::size_t labels : {2u, 3u}) {
        CrfSpec spec;
        spec.labels = labels;
        PairwiseBranch b;
        b.win = WindowSpec::same(3);
        b.compat = oracle::random_tensor({labels, labels, 3, 3}, rng, -0.5, 1.5);
        b.feature_scale = {2.0};
        spec.branches = {b};
        const Tensor4 unary = oracle::random_tensor({1, labels, 6, 6}, rng, 0.0, 3.0);
        const Tensor4 guide = oracle::random_tensor({1, 3, 6, 6}, rng, 0.0, 1.0);
        Tensor4 q = softmax_neg(unary);
        Tensor4 qo = q;
        for (std::size_t t = 0; t < 5; ++t) {
            q = mf_step(q, unary, guide, spec);
            qo = oracle::mf_step(qo, unary, {2.0 * guide}, {b.compat}, {b.win}, {false});
            oracle_err = std::max(oracle_err, max_abs_diff(q, qo));
        }
    }

    // (c) full-image window with folded spatial Gaussians against dense mean field.
    double dense_err = 0.0;
    FullCrfParams p;
    p.w1 = 0.9;
    p.w2 = 0.5;
    p.theta_alpha = 2.0;
    p.theta_beta = 0.25;
    p.theta_gamma = 1.2;
    for (std::size_t steps : {1u, 3u, 5u}) {
        const Tensor4 unary = oracle::random_tensor({1, 3, 8, 8}, rng, 0.0, 2.0);
        const Tensor4 img = oracle::random_tensor({1, 3, 8, 8}, rng, 0.0, 1.0);
        const Tensor4 windowed = mf_infer(unary, img, fullcrf_as_windowed(p, 3, 8, 8, 3, steps)).q;
        dense_err = std::max(dense_err, max_abs_diff(windowed, dense_oracle(unary, img, p, steps)));
        dense_err = std::max(dense_err, max_abs_diff(windowed, dense_fullcrf_mf(unary, img, p, steps)));
    }
    const bool ok = norm_err <= 1e-12 && oracle_err <= 1e-12 && dense_err <= 1e-6;
    return {ok, fmt("(a) normalization %.1e (<= 1e-12); (b) loop oracle L=2,3 %.1e (<= 1e-12); "
                    "(c) dense 8x8 T=1,3,5 %.1e (<= 1e-6)",
                    norm_err, oracle_err, dense_err)};
}

// ------------------------------------------------------------------ 5

Outcome hot_swap() {
    std::mt19937_64 rng(505);
    const std::size_t widths[] = {3, 6, 6, 2};
    const std::size_t sizes[] = {3, 5, 3};
    std::vector<Tensor4> ws;
    std::vector<std::vector<double>> bs;
    for (std::size_t l = 0; l < 3; ++l) {
        ws.push_back(oracle::random_tensor({widths[l + 1], widths[l], sizes[l], sizes[l]}, rng, -0.3, 0.3));
        bs.push_back(std::vector<double>(widths[l + 1], 0.05 * static_cast<double>(l)));
    }
    const Tensor4 input = oracle::random_tensor({1, 3, 16, 16}, rng);
    const Tensor4 guide = oracle::random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0);
    double fmax = 0.0;
    for (std::size_t i = 0; i < 256; ++i) {
        double sq = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
            sq += guide[c * 256 + i] * guide[c * 256 + i];
        }
        fmax = std::max(fmax, std::sqrt(sq));
    }
    auto relu = [](Tensor4 t) {
        for (double& x : t.values()) {
            x = std::max(x, 0.0);
        }
        return t;
    };
    auto conv_stack = [&] {
        Tensor4 x = input;
        for (std::size_t l = 0; l < 3; ++l) {
            x = conv_forward(x, ws[l], bs[l], WindowSpec::same(sizes[l]));
            if (l < 2) {
                x = relu(x);
            }
        }
        return x;
    };
    // Runs the swapped stack and the bound on its deviation: each layer adds
    // (1 - exp(-(2 s fmax)^2 / 2)) |W|_1 |x|_inf and scales what came in by |W|_1.
    auto swapped_stack = [&](double scale, double& bound) {
        Tensor4 x = input;
        bound = 0.0;
        for (std::size_t l = 0; l < 3; ++l) {
            const Tensor4& w = ws[l];
            const std::size_t row = w.size() / w.dims().n;
            double l1 = 0.0;
            for (std::size_t o = 0; o < w.dims().n; ++o) {
                double s = 0.0;
                for (std::size_t i = 0; i < row; ++i) {
                    s += std::abs(w[o * row + i]);
                }
                l1 = std::max(l1, s);
            }
            const double kdev = 1.0 - std::exp(-0.5 * (2 * scale * fmax) * (2 * scale * fmax));
            bound = kdev * l1 * max_abs(x) + l1 * bound;
            x = hot_swap_forward(hot_swap_init(w, bs[l], WindowSpec::same(sizes[l]), scale), x, guide);
            if (l < 2) {
                x = relu(x);
            }
        }
        return x;
    };
    const Tensor4 ref = conv_stack();
    double bound0 = 0.0, bound = 0.0;
    const Tensor4 zero = swapped_stack(0.0, bound0);
    const bool identical = std::equal(zero.values().begin(), zero.values().end(), ref.values().begin());
    const double dev = max_abs_diff(swapped_stack(1e-4, bound), ref);
    return {identical && dev > 0.0 && dev < bound,
            fmt("scale 0 bit-identical: %s; scale 1e-4 deviation %.3e < bound %.3e", identical ? "yes" : "no", dev,
                bound)};
}

// ------------------------------------------------------------------ 6

// Half-pixel bilinear upsampling with clamped edges.
Tensor4 bilinear_oracle(const Tensor4& t, std::size_t m) {
    const Dims d = t.dims();
    Tensor4 out({d.n, d.c, d.h * m, d.w * m});
    auto coord = [m](std::size_t o, std::size_t n, std::size_t& i0, std::size_t& i1, double& w) {
        double s = (static_cast<double>(o) + 0.5) / static_cast<double>(m) - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(n - 1));
        i0 = static_cast<std::size_t>(std::floor(s));
        i1 = std::min(i0 + 1, n - 1);
        w = s - static_cast<double>(i0);
    };
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t c = 0; c < d.c; ++c) {
            for (std::size_t y = 0; y < d.h * m; ++y) {
                std::size_t y0, y1;
                double wy;
                coord(y, d.h, y0, y1, wy);
                for (std::size_t x = 0; x < d.w * m; ++x) {
                    std::size_t x0, x1;
                    double wx;
                    coord(x, d.w, x0, x1, wx);
                    out(n, c, y, x) = (1 - wy) * ((1 - wx) * t(n, c, y0, x0) + wx * t(n, c, y0, x1)) +
                                      wy * ((1 - wx) * t(n, c, y1, x0) + wx * t(n, c, y1, x1));
                }
            }
        }
    }
    return out;
}

Outcome upsampling(const fs::path& work) {
    Clock clock;
    std::string detail;
    bool ok = true;
    for (const char* mode : {"depth", "flow"}) {
        const std::string ckpt = (work / (std::string(mode) + ".pact")).string();
        const std::string report = (work / (std::string(mode) + ".json")).string();
        std::ostringstream log, err;
        const int train = cli::run({"upsample-train", "--mode", mode, "--factor", "4", "--variant", "lite", "--out",
                                    ckpt, "--seed", "7"},
                                   log, err);
        const int eval = cli::run({"upsample-eval", "--ckpt", ckpt, "--report", report}, log, err);
        if (train != 0 || eval != 0) {
            return {false, std::string(mode) + ": " + err.str()};
        }
        std::ifstream in(report);
        const nlohmann::json m = nlohmann::json::parse(in);
        const double rmse = m["rmse"].get<double>();
        const double base = m["baseline_rmse"].get<double>();

        // Recompute the bilinear baseline on the held-out scenes.
        const SynthMode sm = std::string(mode) == "depth" ? SynthMode::Depth : SynthMode::Flow;
        double sq = 0.0;
        std::size_t count = 0;
        for (const SyntheticScene& s : synth_generate(7 + 1000, 50, 64, sm)) {
            const Tensor4 low = sm == SynthMode::Depth ? downsample_nearest(s.target, 4) : downsample_bilinear(s.target, 4);
            const Tensor4 up = bilinear_oracle(low, 4);
            for (std::size_t i = 0; i < up.size(); ++i) {
                sq += (up[i] - s.target[i]) * (up[i] - s.target[i]);
            }
            count += up.size();
        }
        const double base_check = std::sqrt(sq / static_cast<double>(count));
        const bool consistent = std::abs(base_check - base) <= 1e-9 * base;
        ok = ok && consistent && m["scenes"] == 50 && rmse < base;
        detail += fmt("%s RMSE %.5f vs bilinear %.5f%s; ", mode, rmse, base, consistent ? "" : " (baseline mismatch)");
    }
    const double t = clock.seconds();
    ok = ok && t <= 15 * 60;
    detail += fmt("200 train / 50 held-out scenes, seed 7, %.0f s (<= 900 s)", t);
    return {ok, detail};
}

// ------------------------------------------------------------------ 7

Outcome crf_learning() {
    std::mt19937_64 rng(707);
    double worst = 0.0;
    for (std::size_t steps : {1u, 3u}) {
        CrfSpec spec;
        spec.labels = 2;
        spec.steps = steps;
        for (auto [s, dil] : {std::pair{3u, 1u}, std::pair{5u, 2u}}) {
            PairwiseBranch b;
            b.win = WindowSpec::same(s, dil);
            b.compat = oracle::random_tensor({2, 2, s, s}, rng, -0.5, 1.0);
            b.feature_scale = {1.3, 0.6, 2.2};
            spec.branches.push_back(b);
        }
        Tensor4 unary = oracle::random_tensor({1, 2, 6, 6}, rng, 0.0, 2.0);
        const Tensor4 guide = oracle::random_tensor({1, 3, 6, 6}, rng, 0.0, 1.0);
        const Tensor4 up = oracle::random_tensor({1, 2, 6, 6}, rng);
        UnrolledCrf crf(spec);
        crf.forward(unary, guide);
        const UnrolledCrf::Grads g = crf.backward(up);
        auto loss = [&] { return dot(crf.forward(unary, guide), up); };
        for (std::size_t k = 0; k < 2; ++k) {
            worst = std::max(worst, oracle::relative_error(g.compat[k],
                                                           oracle::numeric_gradient(loss, crf.spec().branches[k].compat)));
            worst = std::max(worst, oracle::relative_error(
                                        g.feature_scale[k],
                                        oracle::numeric_gradient(loss, crf.spec().branches[k].feature_scale)));
        }
        worst = std::max(worst, oracle::relative_error(g.unary, oracle::numeric_gradient(loss, unary)));
    }

    const SegmentationTask task = synth_segmentation(17, 24, 2);
    CrfSpec spec;
    spec.labels = 2;
    spec.steps = 3;
    spec.branches = {potts_branch(2, 5, 1, 0.05, {5.0}), potts_branch(2, 5, 3, 0.05, {5.0})};
    UnrolledCrf crf(spec);
    const std::vector<double> curve = train_crf(crf, task, 100, 0.02);
    const bool ok = worst <= 1e-5 && curve.size() == 101 && curve.back() < curve.front();
    return {ok, fmt("backward FD T=1,3 max rel %.1e (<= 1e-5); cross-entropy %.4f -> %.4f after 100 Adam steps", worst,
                    curve.front(), curve.back())};
}

// ------------------------------------------------------------------ 8

Outcome io_bit_exact(const fs::path& work) {
    std::mt19937_64 rng(808);
    bool ok = true;
    std::string failed;
    auto expect = [&](bool cond, const char* what) {
        if (!cond) {
            ok = false;
            failed += std::string(" ") + what;
        }
    };
    for (std::size_t channels : {1u, 3u}) {
        ByteImage img{13, 7, channels, {}};
        for (std::size_t i = 0; i < 13 * 7 * channels; ++i) {
            img.pixels.push_back(static_cast<std::uint8_t>(rng()));
        }
        const Bytes bytes = channels == 1 ? encode_pgm(img) : encode_ppm(img);
        const std::string path = (work / (channels == 1 ? "rt.pgm" : "rt.ppm")).string();
        write_file(path, bytes);
        const ByteImage back = channels == 1 ? pgm_read(path) : ppm_read(path);
        expect(back == img, "netpbm-decode");
        expect((channels == 1 ? encode_pgm(back) : encode_ppm(back)) == read_file(path), "netpbm-bytes");
    }

    Tensor4 flow({1, 2, 5, 6});
    for (double& x : flow.values()) {
        x = static_cast<double>(static_cast<float>(std::uniform_real_distribution<double>(-40, 40)(rng)));
    }
    const std::string flo = (work / "rt.flo").string();
    flo_write(flo, flow);
    const Tensor4 flow_back = flo_read(flo);
    expect(max_abs_diff(flow_back, flow) == 0.0, "flo-values");
    expect(encode_flo(flow_back) == read_file(flo), "flo-bytes");

    const std::uint8_t golden[20] = {'P', 'I', 'E', 'H', 1, 0, 0, 0, 1, 0, 0, 0,
                                     0x00, 0x00, 0xC0, 0x3F, 0x00, 0x00, 0x00, 0xC0};
    const Tensor4 one({1, 2, 1, 1}, std::vector<double>{1.5, -2.0});
    expect(encode_flo(one) == Bytes(golden, golden + 20), "flo-golden-encode");
    expect(max_abs_diff(decode_flo(golden), one) == 0.0, "flo-golden-decode");

    TensorContainer c;
    c.add("weights", oracle::random_tensor({2, 3, 4, 5}, rng), DType::F64);
    Tensor4 half = oracle::random_tensor({1, 1, 3, 3}, rng);
    for (double& x : half.values()) {
        x = static_cast<double>(static_cast<float>(x));
    }
    c.add("half", half, DType::F32);
    c.add(ContainerEntry{"vec", DType::F64, {4}, {1.0, -2.0, 3.5, 1e-300}});
    c.add(ContainerEntry{"empty", DType::F32, {0, 3}, {}});
    const std::string pact = (work / "rt.pact").string();
    c.save(pact);
    const TensorContainer back = TensorContainer::load(pact);
    expect(back.encode() == read_file(pact), "container-bytes");
    expect(back.entries().size() == 4 && back.entry("vec").values == c.entry("vec").values, "container-values");
    expect(max_abs_diff(back.tensor("half"), half) == 0.0, "container-f32");
    return {ok, ok ? "PPM/PGM/FLO/container byte-identical round trips; 20-byte FLO golden file matches"
                   : "mismatch:" + failed};
}

}  // namespace

// With arguments, runs only the listed criterion numbers.
int main(int argc, char** argv) {
    const fs::path work = fs::temp_directory_path() / "pacgrid_acceptance";
    fs::remove_all(work);
    fs::create_directories(work);

    struct Criterion {
        const char* name;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria = {
        {"gradient fidelity", gradient_fidelity},
        {"reduction equivalences", reductions},
        {"brute-force oracle", brute_force_oracle},
        {"CRF correctness", crf_correctness},
        {"hot-swap", hot_swap},
        {"desk-scale upsampling", [&] { return upsampling(work); }},
        {"unrolled-CRF learning", crf_learning},
        {"I/O bit-exactness", [&] { return io_bit_exact(work); }},
    };
    std::vector<bool> selected(criteria.size(), argc == 1);
    for (int a = 1; a < argc; ++a) {
        const std::size_t k = std::strtoul(argv[a], nullptr, 10);
        if (k < 1 || k > criteria.size()) {
            std::cerr << "no criterion " << argv[a] << '\n';
            return 2;
        }
        selected[k - 1] = true;
    }
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (!selected[i]) {
            continue;
        }
        Outcome o;
        try {
            o = criteria[i].run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << (i + 1) << ". " << criteria[i].name << ": " << o.detail
                  << std::endl;
    }
    fs::remove_all(work);
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
