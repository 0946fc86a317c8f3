#include "pacgrid/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>

namespace pacgrid {

FormatError::FormatError(const std::string& what, std::size_t offset)
    : std::runtime_error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}

Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw std::runtime_error("short write to " + path.string());
    }
}

namespace {

// Little-endian cursor over a byte buffer.
class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == bytes_.size(); }

    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(std::string("truncated ") + what, bytes_.size());
        }
    }
    template <typename U>
    U uint(const char* what) {
        need(sizeof(U), what);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            v |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
        }
        pos_ += sizeof(U);
        return v;
    }
    float f32(const char* what) { return std::bit_cast<float>(uint<std::uint32_t>(what)); }
    double f64(const char* what) { return std::bit_cast<double>(uint<std::uint64_t>(what)); }
    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        need(n, what);
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

template <typename U>
void put(Bytes& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}
void put_f32(Bytes& out, float v) { put(out, std::bit_cast<std::uint32_t>(v)); }
void put_f64(Bytes& out, double v) { put(out, std::bit_cast<std::uint64_t>(v)); }

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

// Skips whitespace and '#' comments, then reads an unsigned decimal.
std::size_t header_number(std::span<const std::uint8_t> b, std::size_t& pos, const char* what) {
    while (pos < b.size()) {
        if (is_space(b[pos])) {
            ++pos;
        } else if (b[pos] == '#') {
            while (pos < b.size() && b[pos] != '\n') {
                ++pos;
            }
        } else {
            break;
        }
    }
    if (pos == b.size()) {
        throw FormatError(std::string("truncated header, expected ") + what, pos);
    }
    if (b[pos] < '0' || b[pos] > '9') {
        throw FormatError(std::string("expected ") + what, pos);
    }
    std::size_t v = 0;
    while (pos < b.size() && b[pos] >= '0' && b[pos] <= '9') {
        v = v * 10 + (b[pos] - '0');
        if (v > (1u << 24)) {
            throw FormatError(std::string(what) + " out of range", pos);
        }
        ++pos;
    }
    return v;
}

ByteImage decode_netpbm(std::span<const std::uint8_t> b, char kind, std::size_t channels) {
    if (b.size() < 2) {
        throw FormatError("truncated magic", b.size());
    }
    if (b[0] != 'P' || b[1] != static_cast<std::uint8_t>(kind)) {
        throw FormatError(std::string("bad magic, expected P") + kind, 0);
    }
    std::size_t pos = 2;
    ByteImage img;
    img.channels = channels;
    img.width = header_number(b, pos, "width");
    img.height = header_number(b, pos, "height");
    std::size_t maxval_pos = pos;
    std::size_t maxval = header_number(b, pos, "maxval");
    if (maxval != 255) {
        throw FormatError("unsupported maxval " + std::to_string(maxval), maxval_pos);
    }
    if (img.width == 0 || img.height == 0) {
        throw FormatError("empty raster", maxval_pos);
    }
    if (pos == b.size() || !is_space(b[pos])) {
        throw FormatError("expected whitespace after maxval", pos);
    }
    ++pos;
    std::size_t need = img.width * img.height * channels;
    if (b.size() - pos < need) {
        throw FormatError("truncated pixel data", b.size());
    }
    if (b.size() - pos > need) {
        throw FormatError("trailing bytes after pixel data", pos + need);
    }
    img.pixels.assign(b.begin() + static_cast<std::ptrdiff_t>(pos), b.end());
    return img;
}

Bytes encode_netpbm(const ByteImage& img, char kind, std::size_t channels) {
    if (img.channels != channels) {
        throw std::invalid_argument(std::string("P") + kind + " needs " + std::to_string(channels) +
                                    " channel(s), got " + std::to_string(img.channels));
    }
    if (img.width == 0 || img.height == 0 || img.pixels.size() != img.width * img.height * channels) {
        throw std::invalid_argument("raster size does not match its pixel buffer");
    }
    std::string header = std::string("P") + kind + "\n" + std::to_string(img.width) + " " +
                         std::to_string(img.height) + "\n255\n";
    Bytes out(header.begin(), header.end());
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
    return out;
}

// Re-throws decode errors with the file name in front.
template <typename Fn>
auto with_path(const std::filesystem::path& path, Fn&& fn) {
    Bytes bytes = read_file(path);
    try {
        return fn(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.offset());
    }
}

}  // namespace

ByteImage decode_ppm(std::span<const std::uint8_t> bytes) { return decode_netpbm(bytes, '6', 3); }
ByteImage decode_pgm(std::span<const std::uint8_t> bytes) { return decode_netpbm(bytes, '5', 1); }
Bytes encode_ppm(const ByteImage& img) { return encode_netpbm(img, '6', 3); }
Bytes encode_pgm(const ByteImage& img) { return encode_netpbm(img, '5', 1); }

ByteImage ppm_read(const std::filesystem::path& path) {
    return with_path(path, [](const Bytes& b) { return decode_ppm(b); });
}
void ppm_write(const std::filesystem::path& path, const ByteImage& img) { write_file(path, encode_ppm(img)); }
ByteImage pgm_read(const std::filesystem::path& path) {
    return with_path(path, [](const Bytes& b) { return decode_pgm(b); });
}
void pgm_write(const std::filesystem::path& path, const ByteImage& img) { write_file(path, encode_pgm(img)); }

Tensor4 image_to_tensor(const ByteImage& img) {
    Tensor4 t({1, img.channels, img.height, img.width});
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            for (std::size_t c = 0; c < img.channels; ++c) {
                t(0, c, y, x) = img.pixels[(y * img.width + x) * img.channels + c] / 255.0;
            }
        }
    }
    return t;
}

ByteImage tensor_to_image(const Tensor4& t, std::size_t n) {
    const Dims& d = t.dims();
    if (n >= d.n) {
        throw std::out_of_range("batch index " + std::to_string(n) + " outside " + to_string(d));
    }
    ByteImage img{d.w, d.h, d.c, std::vector<std::uint8_t>(d.c * d.plane())};
    for (std::size_t y = 0; y < d.h; ++y) {
        for (std::size_t x = 0; x < d.w; ++x) {
            for (std::size_t c = 0; c < d.c; ++c) {
                double v = std::clamp(t(n, c, y, x), 0.0, 1.0);
                img.pixels[(y * d.w + x) * d.c + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
        }
    }
    return img;
}

namespace {
constexpr float kFloMagic = 202021.25f;
}

Tensor4 decode_flo(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    float magic = r.f32("magic");
    if (magic != kFloMagic) {
        throw FormatError("bad .flo magic", 0);
    }
    auto width = static_cast<std::int32_t>(r.uint<std::uint32_t>("width"));
    auto height = static_cast<std::int32_t>(r.uint<std::uint32_t>("height"));
    if (width <= 0 || height <= 0 || width > (1 << 16) || height > (1 << 16)) {
        throw FormatError("implausible .flo size " + std::to_string(width) + "x" + std::to_string(height), 4);
    }
    const auto w = static_cast<std::size_t>(width);
    const auto h = static_cast<std::size_t>(height);
    r.need(w * h * 8, "flow data");
    Tensor4 flow({1, 2, h, w});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            flow(0, 0, y, x) = r.f32("u");
            flow(0, 1, y, x) = r.f32("v");
        }
    }
    if (!r.done()) {
        throw FormatError("trailing bytes after flow data", r.pos());
    }
    return flow;
}

Bytes encode_flo(const Tensor4& flow) {
    const Dims& d = flow.dims();
    if (d.n != 1 || d.c != 2) {
        throw std::invalid_argument("flow tensor must be (1, 2, h, w), got " + to_string(d));
    }
    Bytes out;
    out.reserve(12 + 8 * d.plane());
    put_f32(out, kFloMagic);
    put(out, static_cast<std::uint32_t>(d.w));
    put(out, static_cast<std::uint32_t>(d.h));
    for (std::size_t y = 0; y < d.h; ++y) {
        for (std::size_t x = 0; x < d.w; ++x) {
            put_f32(out, static_cast<float>(flow(0, 0, y, x)));
            put_f32(out, static_cast<float>(flow(0, 1, y, x)));
        }
    }
    return out;
}

Tensor4 flo_read(const std::filesystem::path& path) {
    return with_path(path, [](const Bytes& b) { return decode_flo(b); });
}
void flo_write(const std::filesystem::path& path, const Tensor4& flow) { write_file(path, encode_flo(flow)); }

void TensorContainer::add(ContainerEntry entry) {
    if (entry.name.empty() || entry.name.size() > 0xFFFF) {
        throw std::invalid_argument("container entry names must be 1..65535 bytes");
    }
    if (contains(entry.name)) {
        throw std::invalid_argument("duplicate container entry '" + entry.name + "'");
    }
    if (entry.dims.size() > 255) {
        throw std::invalid_argument("too many dims for '" + entry.name + "'");
    }
    std::uint64_t count = 1;
    for (std::uint64_t d : entry.dims) {
        count *= d;
    }
    if (count != entry.values.size()) {
        throw std::invalid_argument("dims of '" + entry.name + "' do not match its data");
    }
    entries_.push_back(std::move(entry));
}

void TensorContainer::add(const std::string& name, const Tensor4& t, DType dtype) {
    const Dims& d = t.dims();
    ContainerEntry e{name, dtype, {d.n, d.c, d.h, d.w}, {t.values().begin(), t.values().end()}};
    if (dtype == DType::F32) {
        for (double& v : e.values) {
            v = static_cast<float>(v);
        }
    }
    add(std::move(e));
}

bool TensorContainer::contains(const std::string& name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const ContainerEntry& e) { return e.name == name; });
}

const ContainerEntry& TensorContainer::entry(const std::string& name) const {
    for (const ContainerEntry& e : entries_) {
        if (e.name == name) {
            return e;
        }
    }
    throw std::out_of_range("no container entry '" + name + "'");
}

Tensor4 TensorContainer::tensor(const std::string& name) const {
    const ContainerEntry& e = entry(name);
    if (e.dims.size() > 4 || e.dims.empty()) {
        throw std::invalid_argument("entry '" + name + "' is not rank 1..4");
    }
    std::size_t d[4] = {1, 1, 1, 1};
    std::copy(e.dims.begin(), e.dims.end(), d + (4 - e.dims.size()));
    return Tensor4({d[0], d[1], d[2], d[3]}, e.values);
}

Bytes TensorContainer::encode() const {
    Bytes out{'P', 'A', 'C', 'T'};
    put(out, std::uint32_t{1});
    put(out, static_cast<std::uint32_t>(entries_.size()));
    for (const ContainerEntry& e : entries_) {
        put(out, static_cast<std::uint16_t>(e.name.size()));
        out.insert(out.end(), e.name.begin(), e.name.end());
        out.push_back(static_cast<std::uint8_t>(e.dtype));
        out.push_back(static_cast<std::uint8_t>(e.dims.size()));
        for (std::uint64_t d : e.dims) {
            put(out, d);
        }
        for (double v : e.values) {
            if (e.dtype == DType::F32) {
                put_f32(out, static_cast<float>(v));
            } else {
                put_f64(out, v);
            }
        }
    }
    return out;
}

TensorContainer TensorContainer::decode(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    auto magic = r.take(4, "magic");
    if (!std::equal(magic.begin(), magic.end(), "PACT")) {
        throw FormatError("bad container magic", 0);
    }
    std::size_t at = r.pos();
    std::uint32_t version = r.uint<std::uint32_t>("version");
    if (version != 1) {
        throw FormatError("unsupported container version " + std::to_string(version), at);
    }
    std::uint32_t count = r.uint<std::uint32_t>("entry count");
    TensorContainer c;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::size_t start = r.pos();
        ContainerEntry e;
        std::uint16_t len = r.uint<std::uint16_t>("name length");
        auto name = r.take(len, "name");
        e.name.assign(name.begin(), name.end());
        at = r.pos();
        std::uint8_t dtype = r.uint<std::uint8_t>("dtype");
        if (dtype > 1) {
            throw FormatError("unknown dtype " + std::to_string(dtype), at);
        }
        e.dtype = static_cast<DType>(dtype);
        std::uint8_t ndim = r.uint<std::uint8_t>("ndim");
        std::uint64_t n = 1;
        for (std::uint8_t k = 0; k < ndim; ++k) {
            at = r.pos();
            std::uint64_t d = r.uint<std::uint64_t>("dims");
            if (d != 0 && n > (std::uint64_t{1} << 40) / d) {
                throw FormatError("entry too large", at);
            }
            n *= d;
            e.dims.push_back(d);
        }
        const std::size_t width = e.dtype == DType::F32 ? 4 : 8;
        r.need(n * width, "tensor data");
        e.values.resize(n);
        for (double& v : e.values) {
            v = e.dtype == DType::F32 ? r.f32("data") : r.f64("data");
        }
        if (c.contains(e.name)) {
            throw FormatError("duplicate entry name '" + e.name + "'", start);
        }
        c.entries_.push_back(std::move(e));
    }
    if (!r.done()) {
        throw FormatError("trailing bytes after last entry", r.pos());
    }
    return c;
}

void TensorContainer::save(const std::filesystem::path& path) const { write_file(path, encode()); }

TensorContainer TensorContainer::load(const std::filesystem::path& path) {
    return with_path(path, [](const Bytes& b) { return decode(b); });
}

namespace {

// Integer draw in [0, n). Plain modulo keeps results identical on every
// standard library, unlike std::uniform_int_distribution.
std::uint64_t draw(std::mt19937_64& rng, std::uint64_t n) { return rng() % n; }
std::int64_t draw_range(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(draw(rng, static_cast<std::uint64_t>(hi - lo + 1)));
}

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

struct Color {
    std::int64_t r, g, b;
};

SyntheticScene make_scene(std::uint64_t seed, std::size_t size, SynthMode mode) {
    std::mt19937_64 rng(seed);
    const auto n = static_cast<std::int64_t>(size);
    const std::size_t sites = 4 + draw(rng, 5);
    std::vector<std::int64_t> sy(sites), sx(sites);
    for (std::size_t k = 0; k < sites; ++k) {
        sy[k] = draw_range(rng, 0, n - 1);
        sx[k] = draw_range(rng, 0, n - 1);
    }
    std::size_t regions = sites;
    std::int64_t ry0 = 0, rx0 = 0, ry1 = -1, rx1 = -1;
    if (draw(rng, 2) == 1 && n >= 4) {
        ry0 = draw_range(rng, 0, n / 2);
        rx0 = draw_range(rng, 0, n / 2);
        ry1 = ry0 + draw_range(rng, n / 4, n / 2);
        rx1 = rx0 + draw_range(rng, n / 4, n / 2);
        ++regions;
    }

    // Colors differ pairwise by at least 60 in L1 so every boundary is visible.
    std::vector<Color> colors;
    while (colors.size() < regions) {
        Color c{draw_range(rng, 0, 255), draw_range(rng, 0, 255), draw_range(rng, 0, 255)};
        bool distinct = std::all_of(colors.begin(), colors.end(), [&](const Color& o) {
            return std::abs(c.r - o.r) + std::abs(c.g - o.g) + std::abs(c.b - o.b) >= 60;
        });
        if (distinct) {
            colors.push_back(c);
        }
    }
    // Per-region target parameters in 1/256 units.
    struct Field {
        std::int64_t base, gy, gx, u, v;
    };
    std::vector<Field> fields(regions);
    for (Field& f : fields) {
        f.base = draw_range(rng, 64, 192);
        f.gy = draw_range(rng, -1, 1);
        f.gx = draw_range(rng, -1, 1);
        f.u = draw_range(rng, -768, 768);
        f.v = draw_range(rng, -768, 768);
    }

    SyntheticScene s;
    s.guide = Tensor4({1, 3, size, size});
    s.target = Tensor4({1, mode == SynthMode::Depth ? 1u : 2u, size, size});
    s.regions.resize(size * size);
    for (std::int64_t y = 0; y < n; ++y) {
        for (std::int64_t x = 0; x < n; ++x) {
            std::size_t id = 0;
            if (y >= ry0 && y <= ry1 && x >= rx0 && x <= rx1) {
                id = sites;
            } else {
                std::int64_t best = -1;
                for (std::size_t k = 0; k < sites; ++k) {
                    std::int64_t d = (y - sy[k]) * (y - sy[k]) + (x - sx[k]) * (x - sx[k]);
                    if (best < 0 || d < best) {
                        best = d;
                        id = k;
                    }
                }
            }
            const auto uy = static_cast<std::size_t>(y);
            const auto ux = static_cast<std::size_t>(x);
            s.regions[uy * size + ux] = static_cast<std::uint32_t>(id);
            s.guide(0, 0, uy, ux) = static_cast<double>(colors[id].r) / 255.0;
            s.guide(0, 1, uy, ux) = static_cast<double>(colors[id].g) / 255.0;
            s.guide(0, 2, uy, ux) = static_cast<double>(colors[id].b) / 255.0;
            const Field& f = fields[id];
            if (mode == SynthMode::Depth) {
                s.target(0, 0, uy, ux) = static_cast<double>(f.base + f.gy * y + f.gx * x) / 256.0;
            } else {
                s.target(0, 0, uy, ux) = static_cast<double>(f.u) / 256.0;
                s.target(0, 1, uy, ux) = static_cast<double>(f.v) / 256.0;
            }
        }
    }
    return s;
}

void check_factor(const Tensor4& t, std::size_t m) {
    const Dims& d = t.dims();
    if (m == 0 || d.h % m != 0 || d.w % m != 0) {
        throw std::invalid_argument("grid " + to_string(d) + " is not divisible by factor " + std::to_string(m));
    }
}

}  // namespace

std::vector<SyntheticScene> synth_generate(std::uint64_t seed, std::size_t count, std::size_t size,
                                           SynthMode mode) {
    if (size < 2) {
        throw std::invalid_argument("synthetic scenes need size >= 2");
    }
    std::vector<SyntheticScene> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(make_scene(splitmix(seed ^ splitmix(i)), size, mode));
    }
    return out;
}

Tensor4 downsample_nearest(const Tensor4& t, std::size_t m) {
    check_factor(t, m);
    const Dims& d = t.dims();
    Tensor4 out({d.n, d.c, d.h / m, d.w / m});
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t c = 0; c < d.c; ++c) {
            for (std::size_t y = 0; y < d.h / m; ++y) {
                for (std::size_t x = 0; x < d.w / m; ++x) {
                    out(n, c, y, x) = t(n, c, y * m, x * m);
                }
            }
        }
    }
    return out;
}

Tensor4 downsample_bilinear(const Tensor4& t, std::size_t m) {
    check_factor(t, m);
    if (m == 1) {
        return t;
    }
    const Dims& d = t.dims();
    const std::size_t oh = d.h / m, ow = d.w / m;
    // Source coordinate of output pixel o under the half-pixel convention.
    auto taps = [m](std::size_t o, std::size_t& lo, std::size_t& hi, double& wt) {
        const double src = (static_cast<double>(o) + 0.5) * static_cast<double>(m) - 0.5;
        lo = static_cast<std::size_t>(std::floor(src));
        hi = lo + 1;
        wt = src - static_cast<double>(lo);
    };
    Tensor4 out({d.n, d.c, oh, ow});
    for (std::size_t y = 0; y < oh; ++y) {
        std::size_t y0, y1;
        double ty;
        taps(y, y0, y1, ty);
        y1 = std::min(y1, d.h - 1);
        for (std::size_t x = 0; x < ow; ++x) {
            std::size_t x0, x1;
            double tx;
            taps(x, x0, x1, tx);
            x1 = std::min(x1, d.w - 1);
            for (std::size_t n = 0; n < d.n; ++n) {
                for (std::size_t c = 0; c < d.c; ++c) {
                    const double top = (1 - tx) * t(n, c, y0, x0) + tx * t(n, c, y0, x1);
                    const double bot = (1 - tx) * t(n, c, y1, x0) + tx * t(n, c, y1, x1);
                    out(n, c, y, x) = (1 - ty) * top + ty * bot;
                }
            }
        }
    }
    return out;
}

}  // namespace pacgrid
