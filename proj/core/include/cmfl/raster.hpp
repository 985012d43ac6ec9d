#pragma once

// Raster files used by the dataset directory format.
//
//  - 8-bit: binary Netpbm, P5 (grayscale) or P6 (RGB), maxval 255.
//  - 16-bit depth: ".d16", an ASCII header "D16\n<width> <height>\n"
//    followed by width*height little-endian uint16 samples, row-major.
//    Binary P5 files with maxval > 255 are also read (big-endian, as Netpbm
//    defines them).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "cmfl/image.hpp"
#include "cmfl/preprocessing.hpp"

namespace cmfl {

struct Raster {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    int bit_depth = 8;
    /// Interleaved samples, row-major.
    std::vector<std::uint16_t> samples;
};

/// Throws DataError naming the file on any decode failure.
[[nodiscard]] Raster read_raster(const std::filesystem::path& path);

/// 8-bit raster to planar image with values k/255.
[[nodiscard]] Image to_image(const Raster& raster);
/// Single-channel 16-bit raster to raw depth.
[[nodiscard]] RawDepthMap to_depth(const Raster& raster);

/// Writes P5/P6 for 1/3-channel images; pixels are quantized to k/255.
void write_pnm(const std::filesystem::path& path, const Image& img);
void write_d16(const std::filesystem::path& path, const RawDepthMap& depth);

}  // namespace cmfl
