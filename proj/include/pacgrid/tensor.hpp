#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace pacgrid {

/// Extents of a batch x channel x height x width array.
struct Dims {
    std::size_t n = 1;
    std::size_t c = 1;
    std::size_t h = 1;
    std::size_t w = 1;

    std::size_t count() const { return n * c * h * w; }
    std::size_t plane() const { return h * w; }
    bool operator==(const Dims&) const = default;
};

std::string to_string(const Dims& d);

/// Dense rank-4 array of doubles, row-major with w fastest.
class Tensor4 {
public:
    Tensor4() : data_(1, 0.0) {}
    explicit Tensor4(Dims dims, double fill = 0.0);
    Tensor4(Dims dims, std::vector<double> values);

    const Dims& dims() const { return dims_; }
    std::size_t size() const { return data_.size(); }

    std::size_t offset(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
        return ((n * dims_.c + c) * dims_.h + y) * dims_.w + x;
    }
    double& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
        return data_[offset(n, c, y, x)];
    }
    double operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
        return data_[offset(n, c, y, x)];
    }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    /// Contiguous c*h*w block of one batch entry.
    std::span<double> sample(std::size_t n);
    std::span<const double> sample(std::size_t n) const;
    /// Contiguous h*w block of one channel.
    std::span<double> plane(std::size_t n, std::size_t c);
    std::span<const double> plane(std::size_t n, std::size_t c) const;

    void fill(double v);
    Tensor4& operator+=(const Tensor4& other);
    Tensor4& operator*=(double s);

    bool all_finite() const;

private:
    Dims dims_;
    std::vector<double> data_;
};

Tensor4 operator+(Tensor4 a, const Tensor4& b);
Tensor4 operator-(Tensor4 a, const Tensor4& b);
Tensor4 operator*(double s, Tensor4 a);

double dot(const Tensor4& a, const Tensor4& b);
double max_abs(const Tensor4& t);
double max_abs_diff(const Tensor4& a, const Tensor4& b);
/// Channel sub-range [begin, begin + count).
Tensor4 slice_channels(const Tensor4& t, std::size_t begin, std::size_t count);
Tensor4 concat_channels(std::span<const Tensor4> parts);

/// Sliding-window geometry shared by unfold, convolution and PAC.
struct WindowSpec {
    std::size_t size = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t dilation = 1;

    std::size_t taps() const { return size * size; }
    std::size_t extent() const { return dilation * (size - 1) + 1; }
    std::size_t out_extent(std::size_t in) const {
        return (in + 2 * padding - extent()) / stride + 1;
    }
    /// Zero-padding that keeps the grid size at stride 1.
    static WindowSpec same(std::size_t size, std::size_t dilation = 1);

    bool operator==(const WindowSpec&) const = default;
};

/// Throws std::invalid_argument unless `win` fits a grid of h x w.
void validate_window(const WindowSpec& win, std::size_t h, std::size_t w);

/// Integer offset p_j - p_i of a window tap relative to the window center.
struct GridOffset {
    long dy = 0;
    long dx = 0;
};
GridOffset tap_offset(const WindowSpec& win, std::size_t tap);

/// Materialized neighborhoods. `cols` has dims (n, c*s*s, h', w'); channel
/// index ch*s*s + ky*s + kx holds v_j for tap (ky, kx).
struct NeighborhoodView {
    Tensor4 cols;
    WindowSpec win;
    Dims source;
};

Tensor4 pad_zero(const Tensor4& t, std::size_t p);
/// Inverse of pad_zero: drops `p` pixels from every border.
Tensor4 crop(const Tensor4& t, std::size_t p);

NeighborhoodView unfold(const Tensor4& t, const WindowSpec& win);
/// Adjoint of unfold. Contributions landing in the padding are dropped.
Tensor4 scatter_add(const NeighborhoodView& view, const WindowSpec& win, const Dims& out_dims);

/// Places t[y, x] at (m*y, m*x) of a ((h-1)m+1) x ((w-1)m+1) zero grid.
Tensor4 zero_insert(const Tensor4& t, std::size_t m);

namespace detail {

// Single-sample column kernels used by the convolution family. `src` is a
// c*h*w block, `cols` a (c*s*s) x (h'*w') row-major matrix.
void unfold_sample(const double* src, std::size_t c, std::size_t h, std::size_t w,
                   const WindowSpec& win, double* cols);
void fold_sample(const double* cols, std::size_t c, std::size_t h, std::size_t w,
                 const WindowSpec& win, double* dst);

}  // namespace detail

}  // namespace pacgrid
