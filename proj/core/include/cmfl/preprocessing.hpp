#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cmfl/image.hpp"

namespace cmfl {

/// Raw depth in sensor units; zero marks an invalid pixel.
struct RawDepthMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint32_t> values;
};

inline constexpr double kDefaultMadClip = 3.0;

/// Robust depth-to-8-bit mapping. Over valid pixels, with median m and
/// MAD = median(|x - m|), maps [m - k*MAD, m + k*MAD] linearly onto [0, 255]
/// (clipped, rounded half away from zero) and divides by 255. Invalid pixels
/// map to 0; when MAD < 1e-9 every valid pixel maps to 128/255.
/// Throws DataError("no valid depth pixels").
[[nodiscard]] Image mad_normalize(const RawDepthMap& depth, double k = kDefaultMadClip);

/// Separable bilinear resize using the corner-aligned convention: output
/// pixel i samples input coordinate i * (in - 1) / (out - 1), so the four
/// corners are preserved exactly. Identity dimensions return a copy.
[[nodiscard]] Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w);

/// Round to the nearest multiple of 1/255 after clipping to [0, 1].
[[nodiscard]] double quantize_unit8(double v) noexcept;

}  // namespace cmfl
