#include <cmath>
#include <filesystem>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "oracles.hpp"
#include "pacgrid/data.hpp"

using namespace pacgrid;

namespace {

ByteImage random_image(std::size_t w, std::size_t h, std::size_t c, std::mt19937_64& rng) {
    ByteImage img{w, h, c, std::vector<std::uint8_t>(w * h * c)};
    for (auto& p : img.pixels) {
        p = static_cast<std::uint8_t>(rng());
    }
    return img;
}

Bytes bytes_of(const std::string& s) { return Bytes(s.begin(), s.end()); }

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("pacgrid_test_" + name);
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("1x1 white P6 layout") {
    ByteImage white{1, 1, 3, {255, 255, 255}};
    Bytes expect = bytes_of("P6\n1 1\n255\n");
    expect.insert(expect.end(), {0xFF, 0xFF, 0xFF});
    CHECK(encode_ppm(white) == expect);
    CHECK(decode_ppm(expect) == white);
}

TEST_CASE("netpbm round trips") {
    std::mt19937_64 rng(51);
    for (std::size_t w : {1u, 7u, 32u}) {
        ByteImage color = random_image(w, w + 3, 3, rng);
        Bytes b = encode_ppm(color);
        CHECK(decode_ppm(b) == color);
        CHECK(encode_ppm(decode_ppm(b)) == b);
        ByteImage gray = random_image(w + 1, w, 1, rng);
        Bytes g = encode_pgm(gray);
        CHECK(encode_pgm(decode_pgm(g)) == g);
    }
    ByteImage img = random_image(5, 4, 3, rng);
    auto path = temp_path("rt.ppm");
    ppm_write(path, img);
    CHECK(ppm_read(path) == img);
    Bytes before = read_file(path);
    ppm_write(path, ppm_read(path));
    CHECK(read_file(path) == before);
    std::filesystem::remove(path);

    CHECK(tensor_to_image(image_to_tensor(img)) == img);
}

TEST_CASE("netpbm header comments and errors") {
    Bytes commented = bytes_of("P5 # comment\n2 # w\n1\n255\n");
    commented.insert(commented.end(), {7, 9});
    CHECK(decode_pgm(commented).pixels == std::vector<std::uint8_t>{7, 9});

    try {
        decode_ppm(bytes_of("P3\n1 1\n255\n   "));
        FAIL("accepted bad magic");
    } catch (const FormatError& e) {
        CHECK(e.offset() == 0);
        CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
    }
    try {
        decode_pgm(bytes_of("P5\n4 4\n255\n123"));
        FAIL("accepted truncated data");
    } catch (const FormatError& e) {
        CHECK(e.offset() == 14);
    }
    CHECK_THROWS_AS(decode_pgm(bytes_of("P5\n1 1\n65535\n\x01\x02")), FormatError);
    CHECK_THROWS_AS(decode_pgm(bytes_of("P5\n1 x\n255\n\x01")), FormatError);
    CHECK_THROWS_AS(decode_pgm(bytes_of("P5\n1 1")), FormatError);
    CHECK_THROWS_AS(decode_pgm(bytes_of("P")), FormatError);
    CHECK_THROWS_AS(decode_pgm(bytes_of("P5\n1 1\n255\n\x01\x02")), FormatError);
    CHECK_THROWS_AS(encode_pgm(ByteImage{2, 2, 3, std::vector<std::uint8_t>(12)}), std::invalid_argument);
    CHECK_THROWS_AS(ppm_read(temp_path("does_not_exist.ppm")), std::runtime_error);
}

TEST_CASE("1x1 flo golden bytes") {
    Tensor4 flow({1, 2, 1, 1}, std::vector<double>{1.5, -2.0});
    const Bytes golden{'P', 'I', 'E', 'H',          // 202021.25f
                       0x01, 0x00, 0x00, 0x00,      // width
                       0x01, 0x00, 0x00, 0x00,      // height
                       0x00, 0x00, 0xC0, 0x3F,      // 1.5f
                       0x00, 0x00, 0x00, 0xC0};     // -2.0f
    CHECK(encode_flo(flow) == golden);
    CHECK(max_abs_diff(decode_flo(golden), flow) == 0.0);
}

TEST_CASE("flo round trip and errors") {
    std::mt19937_64 rng(52);
    Tensor4 flow = oracle::random_tensor({1, 2, 5, 7}, rng, -20.0, 20.0);
    Bytes b = encode_flo(flow);
    CHECK(b.size() == 12 + 8 * 35);
    CHECK(encode_flo(decode_flo(b)) == b);
    auto path = temp_path("rt.flo");
    flo_write(path, decode_flo(b));
    CHECK(read_file(path) == b);
    std::filesystem::remove(path);

    Bytes bad = b;
    bad[0] ^= 1;
    CHECK_THROWS_AS(decode_flo(bad), FormatError);
    Bytes cut(b.begin(), b.end() - 3);
    try {
        decode_flo(cut);
        FAIL("accepted truncated flow");
    } catch (const FormatError& e) {
        CHECK(e.offset() == cut.size());
    }
    CHECK_THROWS_AS(decode_flo(Bytes(b.begin(), b.begin() + 6)), FormatError);
    CHECK_THROWS_AS(encode_flo(Tensor4({1, 3, 2, 2})), std::invalid_argument);
}

TEST_CASE("tensor container layout") {
    TensorContainer c;
    c.add(ContainerEntry{"ab", DType::F32, {2}, {1.0, -0.5}});
    Bytes expect{'P', 'A', 'C', 'T', 1, 0, 0, 0, 1, 0, 0, 0,  // magic, version, count
                 2, 0, 'a', 'b', 0, 1,                       // name, dtype, ndim
                 2, 0, 0, 0, 0, 0, 0, 0,                     // dims
                 0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0xBF};
    CHECK(c.encode() == expect);
}

TEST_CASE("tensor container round trips") {
    std::mt19937_64 rng(53);
    TensorContainer c;
    c.add("w64", oracle::random_tensor({2, 3, 5, 5}, rng), DType::F64);
    c.add("w32", oracle::random_tensor({1, 1, 4, 3}, rng), DType::F32);
    c.add(ContainerEntry{"scalar", DType::F64, {}, {3.25}});
    c.add(ContainerEntry{"empty", DType::F32, {0, 4}, {}});
    c.add(ContainerEntry{"tiny", DType::F64, {1, 2}, {5e-324, -0.0}});
    Bytes b = c.encode();
    TensorContainer back = TensorContainer::decode(b);
    CHECK(back.encode() == b);
    CHECK(max_abs_diff(back.tensor("w64"), c.tensor("w64")) == 0.0);
    CHECK(std::signbit(back.entry("tiny").values[1]));
    CHECK(back.tensor("tiny").dims() == Dims{1, 1, 1, 2});

    auto path = temp_path("rt.pact");
    back.save(path);
    CHECK(read_file(path) == b);
    CHECK(TensorContainer::load(path).encode() == b);
    std::filesystem::remove(path);
}

TEST_CASE("tensor container errors") {
    TensorContainer c;
    c.add("x", Tensor4({1, 1, 2, 2}));
    CHECK_THROWS_AS(c.add("x", Tensor4()), std::invalid_argument);
    CHECK_THROWS_AS(c.add(ContainerEntry{"y", DType::F64, {3}, {1.0}}), std::invalid_argument);
    CHECK_THROWS_AS(c.entry("missing"), std::out_of_range);
    c.add("y", Tensor4());
    Bytes b = c.encode();

    for (std::size_t cut : {2u, 10u, 13u, 20u, 30u}) {
        CHECK_THROWS_AS(TensorContainer::decode(Bytes(b.begin(), b.begin() + cut)), FormatError);
    }
    Bytes extra = b;
    extra.push_back(0);
    CHECK_THROWS_AS(TensorContainer::decode(extra), FormatError);
    Bytes dup = b;
    const std::size_t second_name = 12 + (2 + 1 + 2 + 4 * 8 + 4 * 8) + 2;
    REQUIRE(dup[second_name] == 'y');
    dup[second_name] = 'x';
    CHECK_THROWS_AS(TensorContainer::decode(dup), FormatError);
    Bytes version = b;
    version[4] = 2;
    CHECK_THROWS_AS(TensorContainer::decode(version), FormatError);
}

TEST_CASE("synthetic scenes are deterministic") {
    auto encode_all = [](const std::vector<SyntheticScene>& scenes) {
        TensorContainer c;
        for (std::size_t i = 0; i < scenes.size(); ++i) {
            c.add("g" + std::to_string(i), scenes[i].guide);
            c.add("t" + std::to_string(i), scenes[i].target);
        }
        return c.encode();
    };
    for (SynthMode mode : {SynthMode::Depth, SynthMode::Flow}) {
        auto a = synth_generate(7, 5, 32, mode);
        auto b = synth_generate(7, 5, 32, mode);
        CHECK(encode_all(a) == encode_all(b));
        CHECK(encode_all(a) != encode_all(synth_generate(8, 5, 32, mode)));
        CHECK(a[0].target.dims().c == (mode == SynthMode::Depth ? 1u : 2u));
        CHECK(max_abs_diff(a[0].guide, a[1].guide) > 0.0);
    }
    CHECK(synth_generate(7, 0, 32, SynthMode::Depth).empty());
}

TEST_CASE("synthetic target values are 1/256 multiples") {
    for (const SyntheticScene& s : synth_generate(3, 4, 24, SynthMode::Flow)) {
        for (double v : s.target.values()) {
            CHECK(v * 256.0 == std::round(v * 256.0));
        }
    }
}

TEST_CASE("target discontinuities lie on guide edges") {
    // Within a region the depth changes by at most one 1/256 step per pixel.
    const double ramp = 1.0 / 256.0;
    for (SynthMode mode : {SynthMode::Depth, SynthMode::Flow}) {
        std::size_t jumps = 0;
        for (const SyntheticScene& s : synth_generate(11, 6, 32, mode)) {
            const Dims& d = s.target.dims();
            auto check_pair = [&](std::size_t y0, std::size_t x0, std::size_t y1, std::size_t x1) {
                double dt = 0.0;
                for (std::size_t c = 0; c < d.c; ++c) {
                    dt = std::max(dt, std::abs(s.target(0, c, y0, x0) - s.target(0, c, y1, x1)));
                }
                if (dt <= ramp) {
                    return;
                }
                ++jumps;
                double dg = 0.0;
                for (std::size_t c = 0; c < 3; ++c) {
                    dg += std::abs(s.guide(0, c, y0, x0) - s.guide(0, c, y1, x1));
                }
                CHECK(dg > 0.0);
            };
            for (std::size_t y = 0; y < d.h; ++y) {
                for (std::size_t x = 0; x < d.w; ++x) {
                    if (x + 1 < d.w) check_pair(y, x, y, x + 1);
                    if (y + 1 < d.h) check_pair(y, x, y + 1, x);
                }
            }
        }
        CHECK(jumps > 0);
    }
}

TEST_CASE("downsampling") {
    std::mt19937_64 rng(54);
    Tensor4 t = oracle::random_tensor({2, 2, 8, 12}, rng);
    CHECK(max_abs_diff(downsample_nearest(t, 1), t) == 0.0);
    CHECK(max_abs_diff(downsample_bilinear(t, 1), t) == 0.0);

    Tensor4 flat({1, 1, 8, 8}, 0.7);
    for (std::size_t m : {2u, 4u}) {
        CHECK(max_abs_diff(downsample_nearest(flat, m), Tensor4({1, 1, 8 / m, 8 / m}, 0.7)) == 0.0);
        CHECK(max_abs_diff(downsample_bilinear(flat, m), Tensor4({1, 1, 8 / m, 8 / m}, 0.7)) <= 1e-15);
    }

    Tensor4 checker({1, 1, 4, 4});
    for (std::size_t y = 0; y < 4; ++y) {
        for (std::size_t x = 0; x < 4; ++x) {
            checker(0, 0, y, x) = static_cast<double>((x + y) % 2) + static_cast<double>(4 * y + x);
        }
    }
    Tensor4 near = downsample_nearest(checker, 2);
    CHECK(near.values()[0] == checker(0, 0, 0, 0));
    CHECK(near.values()[1] == checker(0, 0, 0, 2));
    CHECK(near.values()[2] == checker(0, 0, 2, 0));
    CHECK(near.values()[3] == checker(0, 0, 2, 2));

    // Factor 2 samples the exact center of each block: the 2x2 mean.
    Tensor4 bil = downsample_bilinear(t, 2);
    CHECK(max_abs_diff(bil, oracle::mean_pool(t, 2, 2)) <= 1e-15);
    // Factor 4 interpolates the middle 2x2 of each block.
    Tensor4 b4 = downsample_bilinear(t, 4);
    double expect = 0.25 * (t(1, 1, 5, 9) + t(1, 1, 5, 10) + t(1, 1, 6, 9) + t(1, 1, 6, 10));
    CHECK(b4(1, 1, 1, 2) == doctest::Approx(expect).epsilon(1e-15));

    CHECK_THROWS_AS(downsample_nearest(t, 3), std::invalid_argument);
    CHECK_THROWS_AS(downsample_bilinear(t, 0), std::invalid_argument);
}

}
