#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cmfl {

/// Planar (channel, row, column) image with real-valued pixels.
struct Image {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
        : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

    [[nodiscard]] bool empty() const noexcept { return pixels.empty(); }
    [[nodiscard]] std::size_t plane_size() const noexcept { return height * width; }

    double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
    [[nodiscard]] double at(std::size_t c, std::size_t y, std::size_t x) const {
        return pixels[(c * height + y) * width + x];
    }

    [[nodiscard]] std::span<double> plane(std::size_t c) { return {pixels.data() + c * plane_size(), plane_size()}; }
    [[nodiscard]] std::span<const double> plane(std::size_t c) const {
        return {pixels.data() + c * plane_size(), plane_size()};
    }

    bool operator==(const Image&) const = default;
};

/// Mirror every channel left-to-right.
inline Image hflip(const Image& img) {
    Image out(img.channels, img.height, img.width);
    for (std::size_t c = 0; c < img.channels; ++c)
        for (std::size_t y = 0; y < img.height; ++y)
            for (std::size_t x = 0; x < img.width; ++x)
                out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
    return out;
}

}  // namespace cmfl
