#include "pacgrid/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pacgrid {

std::string to_string(const Dims& d) {
    return std::to_string(d.n) + "x" + std::to_string(d.c) + "x" + std::to_string(d.h) + "x" +
           std::to_string(d.w);
}

namespace {

void check_dims(const Dims& d) {
    if (d.n == 0 || d.c == 0 || d.h == 0 || d.w == 0) {
        throw std::invalid_argument("tensor dims must all be >= 1, got " + to_string(d));
    }
}

void require_same_dims(const Tensor4& a, const Tensor4& b, const char* what) {
    if (a.dims() != b.dims()) {
        throw std::invalid_argument(std::string(what) + ": dims " + to_string(a.dims()) +
                                    " vs " + to_string(b.dims()));
    }
}

}  // namespace

Tensor4::Tensor4(Dims dims, double fill) : dims_(dims) {
    check_dims(dims_);
    data_.assign(dims_.count(), fill);
}

Tensor4::Tensor4(Dims dims, std::vector<double> values) : dims_(dims), data_(std::move(values)) {
    check_dims(dims_);
    if (data_.size() != dims_.count()) {
        throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                    " does not match dims " + to_string(dims_));
    }
}

std::span<double> Tensor4::sample(std::size_t n) {
    std::size_t len = dims_.c * dims_.plane();
    return std::span<double>(data_).subspan(n * len, len);
}

std::span<const double> Tensor4::sample(std::size_t n) const {
    std::size_t len = dims_.c * dims_.plane();
    return std::span<const double>(data_).subspan(n * len, len);
}

std::span<double> Tensor4::plane(std::size_t n, std::size_t c) {
    return std::span<double>(data_).subspan(offset(n, c, 0, 0), dims_.plane());
}

std::span<const double> Tensor4::plane(std::size_t n, std::size_t c) const {
    return std::span<const double>(data_).subspan(offset(n, c, 0, 0), dims_.plane());
}

void Tensor4::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor4& Tensor4::operator+=(const Tensor4& other) {
    require_same_dims(*this, other, "tensor add");
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] += other.data_[i];
    }
    return *this;
}

Tensor4& Tensor4::operator*=(double s) {
    for (double& v : data_) {
        v *= s;
    }
    return *this;
}

bool Tensor4::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor4 operator+(Tensor4 a, const Tensor4& b) {
    a += b;
    return a;
}

Tensor4 operator-(Tensor4 a, const Tensor4& b) {
    require_same_dims(a, b, "tensor subtract");
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] -= b[i];
    }
    return a;
}

Tensor4 operator*(double s, Tensor4 a) {
    a *= s;
    return a;
}

double dot(const Tensor4& a, const Tensor4& b) {
    require_same_dims(a, b, "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

double max_abs(const Tensor4& t) {
    double m = 0.0;
    for (double v : t.values()) {
        m = std::max(m, std::abs(v));
    }
    return m;
}

double max_abs_diff(const Tensor4& a, const Tensor4& b) {
    require_same_dims(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

Tensor4 slice_channels(const Tensor4& t, std::size_t begin, std::size_t count) {
    const Dims& d = t.dims();
    if (count == 0 || begin + count > d.c) {
        throw std::invalid_argument("channel slice out of range");
    }
    Tensor4 out({d.n, count, d.h, d.w});
    for (std::size_t n = 0; n < d.n; ++n) {
        auto src = t.sample(n).subspan(begin * d.plane(), count * d.plane());
        std::copy(src.begin(), src.end(), out.sample(n).begin());
    }
    return out;
}

Tensor4 concat_channels(std::span<const Tensor4> parts) {
    if (parts.empty()) {
        throw std::invalid_argument("concat_channels: no inputs");
    }
    Dims d = parts.front().dims();
    std::size_t total = 0;
    for (const auto& p : parts) {
        const Dims& pd = p.dims();
        if (pd.n != d.n || pd.h != d.h || pd.w != d.w) {
            throw std::invalid_argument("concat_channels: grid mismatch");
        }
        total += pd.c;
    }
    Tensor4 out({d.n, total, d.h, d.w});
    for (std::size_t n = 0; n < d.n; ++n) {
        auto dst = out.sample(n).begin();
        for (const auto& p : parts) {
            auto src = p.sample(n);
            dst = std::copy(src.begin(), src.end(), dst);
        }
    }
    return out;
}

WindowSpec WindowSpec::same(std::size_t size, std::size_t dilation) {
    return WindowSpec{size, 1, dilation * (size - 1) / 2, dilation};
}

void validate_window(const WindowSpec& win, std::size_t h, std::size_t w) {
    if (win.size == 0 || win.size % 2 == 0) {
        throw std::invalid_argument("window size must be odd and >= 1, got " +
                                    std::to_string(win.size));
    }
    if (win.stride == 0 || win.dilation == 0) {
        throw std::invalid_argument("window stride and dilation must be >= 1");
    }
    if (win.extent() > h + 2 * win.padding || win.extent() > w + 2 * win.padding) {
        throw std::invalid_argument("window extent " + std::to_string(win.extent()) +
                                    " exceeds padded input " + std::to_string(h) + "x" +
                                    std::to_string(w) + " (padding " +
                                    std::to_string(win.padding) + ")");
    }
}

GridOffset tap_offset(const WindowSpec& win, std::size_t tap) {
    long half = static_cast<long>(win.size - 1) / 2;
    long ky = static_cast<long>(tap / win.size);
    long kx = static_cast<long>(tap % win.size);
    long d = static_cast<long>(win.dilation);
    return {(ky - half) * d, (kx - half) * d};
}

Tensor4 pad_zero(const Tensor4& t, std::size_t p) {
    if (p == 0) {
        return t;
    }
    const Dims& d = t.dims();
    Tensor4 out({d.n, d.c, d.h + 2 * p, d.w + 2 * p});
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t c = 0; c < d.c; ++c) {
            for (std::size_t y = 0; y < d.h; ++y) {
                const double* src = &t.values()[t.offset(n, c, y, 0)];
                std::copy(src, src + d.w, &out(n, c, y + p, p));
            }
        }
    }
    return out;
}

Tensor4 crop(const Tensor4& t, std::size_t p) {
    const Dims& d = t.dims();
    if (2 * p >= d.h || 2 * p >= d.w) {
        throw std::invalid_argument("crop of " + std::to_string(p) + " leaves no pixels");
    }
    Tensor4 out({d.n, d.c, d.h - 2 * p, d.w - 2 * p});
    const Dims& od = out.dims();
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t c = 0; c < d.c; ++c) {
            for (std::size_t y = 0; y < od.h; ++y) {
                const double* src = &t.values()[t.offset(n, c, y + p, p)];
                std::copy(src, src + od.w, &out(n, c, y, 0));
            }
        }
    }
    return out;
}

namespace detail {

namespace {

// Output columns [lo, hi) whose input column ox*stride - pad + off lies in [0, w).
void valid_range(std::size_t out_w, std::size_t w, std::size_t stride, long start,
                 std::size_t& lo, std::size_t& hi) {
    long s = static_cast<long>(stride);
    long first = start >= 0 ? 0 : (-start + s - 1) / s;
    long last = (static_cast<long>(w) - 1 - start);
    long end = last < 0 ? 0 : last / s + 1;
    lo = static_cast<std::size_t>(std::min<long>(first, static_cast<long>(out_w)));
    hi = static_cast<std::size_t>(std::clamp<long>(end, static_cast<long>(lo), static_cast<long>(out_w)));
}

}  // namespace

void unfold_sample(const double* src, std::size_t c, std::size_t h, std::size_t w,
                   const WindowSpec& win, double* cols) {
    const std::size_t oh = win.out_extent(h);
    const std::size_t ow = win.out_extent(w);
    const std::size_t s = win.size;
    const long pad = static_cast<long>(win.padding);
    const long stride = static_cast<long>(win.stride);
    const long dil = static_cast<long>(win.dilation);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* plane = src + ch * h * w;
        for (std::size_t ky = 0; ky < s; ++ky) {
            for (std::size_t kx = 0; kx < s; ++kx) {
                double* row = cols + ((ch * s + ky) * s + kx) * oh * ow;
                long x0 = static_cast<long>(kx) * dil - pad;
                std::size_t lo = 0;
                std::size_t hi = 0;
                valid_range(ow, w, win.stride, x0, lo, hi);
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    long iy = static_cast<long>(oy) * stride - pad + static_cast<long>(ky) * dil;
                    double* out = row + oy * ow;
                    if (iy < 0 || iy >= static_cast<long>(h)) {
                        std::fill(out, out + ow, 0.0);
                        continue;
                    }
                    const double* in = plane + static_cast<std::size_t>(iy) * w;
                    std::fill(out, out + lo, 0.0);
                    for (std::size_t ox = lo; ox < hi; ++ox) {
                        out[ox] = in[static_cast<long>(ox) * stride + x0];
                    }
                    std::fill(out + hi, out + ow, 0.0);
                }
            }
        }
    }
}

void fold_sample(const double* cols, std::size_t c, std::size_t h, std::size_t w,
                 const WindowSpec& win, double* dst) {
    const std::size_t oh = win.out_extent(h);
    const std::size_t ow = win.out_extent(w);
    const std::size_t s = win.size;
    const long pad = static_cast<long>(win.padding);
    const long stride = static_cast<long>(win.stride);
    const long dil = static_cast<long>(win.dilation);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double* plane = dst + ch * h * w;
        for (std::size_t ky = 0; ky < s; ++ky) {
            for (std::size_t kx = 0; kx < s; ++kx) {
                const double* row = cols + ((ch * s + ky) * s + kx) * oh * ow;
                long x0 = static_cast<long>(kx) * dil - pad;
                std::size_t lo = 0;
                std::size_t hi = 0;
                valid_range(ow, w, win.stride, x0, lo, hi);
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    long iy = static_cast<long>(oy) * stride - pad + static_cast<long>(ky) * dil;
                    if (iy < 0 || iy >= static_cast<long>(h)) {
                        continue;
                    }
                    double* out = plane + static_cast<std::size_t>(iy) * w;
                    const double* in = row + oy * ow;
                    for (std::size_t ox = lo; ox < hi; ++ox) {
                        out[static_cast<long>(ox) * stride + x0] += in[ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

NeighborhoodView unfold(const Tensor4& t, const WindowSpec& win) {
    const Dims& d = t.dims();
    validate_window(win, d.h, d.w);
    Tensor4 cols({d.n, d.c * win.taps(), win.out_extent(d.h), win.out_extent(d.w)});
    for (std::size_t n = 0; n < d.n; ++n) {
        detail::unfold_sample(t.sample(n).data(), d.c, d.h, d.w, win, cols.sample(n).data());
    }
    return {std::move(cols), win, d};
}

Tensor4 scatter_add(const NeighborhoodView& view, const WindowSpec& win, const Dims& out_dims) {
    validate_window(win, out_dims.h, out_dims.w);
    const Dims& vd = view.cols.dims();
    if (vd.n != out_dims.n || vd.c != out_dims.c * win.taps() ||
        vd.h != win.out_extent(out_dims.h) || vd.w != win.out_extent(out_dims.w)) {
        throw std::invalid_argument("scatter_add: view dims " + to_string(vd) +
                                    " incompatible with output " + to_string(out_dims));
    }
    Tensor4 out(out_dims);
    for (std::size_t n = 0; n < out_dims.n; ++n) {
        detail::fold_sample(view.cols.sample(n).data(), out_dims.c, out_dims.h, out_dims.w, win,
                            out.sample(n).data());
    }
    return out;
}

Tensor4 zero_insert(const Tensor4& t, std::size_t m) {
    if (m == 0) {
        throw std::invalid_argument("zero_insert factor must be >= 1");
    }
    const Dims& d = t.dims();
    Tensor4 out({d.n, d.c, (d.h - 1) * m + 1, (d.w - 1) * m + 1});
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t c = 0; c < d.c; ++c) {
            for (std::size_t y = 0; y < d.h; ++y) {
                for (std::size_t x = 0; x < d.w; ++x) {
                    out(n, c, y * m, x * m) = t(n, c, y, x);
                }
            }
        }
    }
    return out;
}

}  // namespace pacgrid
