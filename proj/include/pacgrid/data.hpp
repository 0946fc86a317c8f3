#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pacgrid/tensor.hpp"

namespace pacgrid {

/// Malformed or truncated file content; `offset` is the byte position at
/// which decoding stopped.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t offset);
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

using Bytes = std::vector<std::uint8_t>;

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// 8-bit interleaved raster (1 channel for PGM, 3 for PPM).
struct ByteImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 1;
    std::vector<std::uint8_t> pixels;

    bool operator==(const ByteImage&) const = default;
};

// Binary netpbm, maxval 255. Header comments are accepted on read; the
// writer always emits "P6\n<w> <h>\n255\n" (or P5).
ByteImage decode_ppm(std::span<const std::uint8_t> bytes);
ByteImage decode_pgm(std::span<const std::uint8_t> bytes);
Bytes encode_ppm(const ByteImage& img);
Bytes encode_pgm(const ByteImage& img);

ByteImage ppm_read(const std::filesystem::path& path);
void ppm_write(const std::filesystem::path& path, const ByteImage& img);
ByteImage pgm_read(const std::filesystem::path& path);
void pgm_write(const std::filesystem::path& path, const ByteImage& img);

/// (1, channels, h, w) tensor with values byte / 255.
Tensor4 image_to_tensor(const ByteImage& img);
/// Inverse of image_to_tensor for batch entry `n`; values are clamped to
/// [0, 1] and rounded to the nearest byte.
ByteImage tensor_to_image(const Tensor4& t, std::size_t n = 0);

/// Middlebury .flo: float32 magic 202021.25, int32 width, int32 height,
/// then interleaved (u, v) float32, all little-endian. Flow tensors are
/// (1, 2, h, w) with u in channel 0.
Tensor4 decode_flo(std::span<const std::uint8_t> bytes);
Bytes encode_flo(const Tensor4& flow);
Tensor4 flo_read(const std::filesystem::path& path);
void flo_write(const std::filesystem::path& path, const Tensor4& flow);

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

struct ContainerEntry {
    std::string name;
    DType dtype = DType::F64;
    std::vector<std::uint64_t> dims;
    std::vector<double> values;
};

/// Named tensors in the "PACT" binary layout. Entry order is preserved.
class TensorContainer {
public:
    void add(ContainerEntry entry);
    void add(const std::string& name, const Tensor4& t, DType dtype = DType::F64);

    bool contains(const std::string& name) const;
    const ContainerEntry& entry(const std::string& name) const;
    /// Entry as a Tensor4; fewer than four dims are padded with leading 1s.
    Tensor4 tensor(const std::string& name) const;

    const std::vector<ContainerEntry>& entries() const { return entries_; }

    Bytes encode() const;
    static TensorContainer decode(std::span<const std::uint8_t> bytes);
    void save(const std::filesystem::path& path) const;
    static TensorContainer load(const std::filesystem::path& path);

private:
    std::vector<ContainerEntry> entries_;
};

enum class SynthMode { Depth, Flow };

/// One guide/target pair. `regions` holds the partition label of every pixel.
struct SyntheticScene {
    Tensor4 guide;   // (1, 3, size, size), values byte / 255
    Tensor4 target;  // (1, 1, ...) depth or (1, 2, ...) flow, multiples of 1/256
    std::vector<std::uint32_t> regions;
};

/// Voronoi partitions (plus an occasional overlaid rectangle) with one
/// distinct color per region. Depth is a per-region plane with integer
/// slope in 1/256 units per pixel; flow is a per-region constant (u, v).
/// Only integer arithmetic is used before the final division by 256.
std::vector<SyntheticScene> synth_generate(std::uint64_t seed, std::size_t count, std::size_t size,
                                           SynthMode mode);

/// out[y, x] = t[m y, m x]. Grid extents must be multiples of m.
Tensor4 downsample_nearest(const Tensor4& t, std::size_t m);
/// Bilinear resampling at the centers of the m x m blocks (half-pixel
/// convention, no pre-filtering). Grid extents must be multiples of m.
Tensor4 downsample_bilinear(const Tensor4& t, std::size_t m);

}  // namespace pacgrid
