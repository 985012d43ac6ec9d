#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <string>

#include "cmfl/error.hpp"
#include "cmfl/raster.hpp"
#include "support.hpp"

using namespace cmfl;
using cmfl::test::TempDir;

namespace {

Image quantized(std::size_t channels, std::size_t h, std::size_t w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> u(0, 255);
    Image img(channels, h, w);
    for (double& v : img.pixels) v = u(rng) / 255.0;
    return img;
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream(p, std::ios::binary) << bytes;
}

}  // namespace

TEST(Raster, PnmRoundTrip) {
    TempDir dir("raster");
    for (std::size_t c : {1u, 3u}) {
        const Image img = quantized(c, 5, 7, c);
        const auto path = dir.path() / (c == 1 ? "x.pgm" : "x.ppm");
        write_pnm(path, img);
        const Raster r = read_raster(path);
        EXPECT_EQ(r.channels, c);
        EXPECT_EQ(r.height, 5u);
        EXPECT_EQ(r.width, 7u);
        EXPECT_EQ(r.bit_depth, 8);
        EXPECT_EQ(to_image(r), img);
    }
}

TEST(Raster, D16RoundTrip) {
    TempDir dir("d16");
    RawDepthMap d;
    d.height = 3;
    d.width = 4;
    d.values = {0, 1, 255, 256, 1000, 65535, 42, 7, 8, 9, 10, 11};
    write_d16(dir.path() / "x.d16", d);
    const Raster r = read_raster(dir.path() / "x.d16");
    EXPECT_EQ(r.bit_depth, 16);
    const RawDepthMap back = to_depth(r);
    EXPECT_EQ(back.values, d.values);
    EXPECT_EQ(back.height, 3u);
}

TEST(Raster, SixteenBitPgmIsBigEndian) {
    TempDir dir("p5");
    write_bytes(dir.path() / "x.pgm", std::string("P5\n2 1\n65535\n") + std::string("\x01\x02\x00\x03", 4));
    const RawDepthMap d = to_depth(read_raster(dir.path() / "x.pgm"));
    EXPECT_EQ(d.values, (std::vector<std::uint32_t>{0x0102, 0x0003}));
}

TEST(Raster, ErrorsNameTheFile) {
    TempDir dir("rasterr");
    auto expect_named = [](const std::filesystem::path& p) {
        try {
            (void)read_raster(p);
            ADD_FAILURE() << "no error for " << p;
        } catch (const DataError& e) {
            EXPECT_NE(std::string(e.what()).find(p.filename().string()), std::string::npos) << e.what();
        }
    };
    expect_named(dir.path() / "absent.pgm");
    write_bytes(dir.path() / "garbage.pgm", "hello");
    expect_named(dir.path() / "garbage.pgm");
    write_bytes(dir.path() / "short.pgm", "P5\n4 4\n255\nab");
    expect_named(dir.path() / "short.pgm");
}
