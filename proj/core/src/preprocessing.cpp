#include "cmfl/preprocessing.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cmfl/error.hpp"

namespace cmfl {

namespace {

double median_of(std::vector<double> v) {
    const std::size_t n = v.size();
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(v.begin(), mid, v.end());
    const double upper = *mid;
    if (n % 2 == 1) return upper;
    const double lower = *std::max_element(v.begin(), mid);
    return 0.5 * (lower + upper);
}

}  // namespace

double quantize_unit8(double v) noexcept { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

Image mad_normalize(const RawDepthMap& depth, double k) {
    if (depth.values.size() != depth.height * depth.width) throw DataError("depth map size does not match dimensions");
    if (!(k > 0.0)) throw ConfigError("MAD clip width must be > 0");

    std::vector<double> valid;
    valid.reserve(depth.values.size());
    for (const std::uint32_t v : depth.values)
        if (v != 0) valid.push_back(static_cast<double>(v));
    if (valid.empty()) throw DataError("no valid depth pixels");

    const double m = median_of(valid);
    std::vector<double> dev(valid.size());
    std::transform(valid.begin(), valid.end(), dev.begin(), [m](double x) { return std::abs(x - m); });
    const double mad = median_of(std::move(dev));

    Image out(1, depth.height, depth.width, 0.0);
    const double lo = m - k * mad;
    const double span = 2.0 * k * mad;
    for (std::size_t i = 0; i < depth.values.size(); ++i) {
        if (depth.values[i] == 0) continue;
        double level = 128.0;
        if (mad >= 1e-9) level = std::round(std::clamp((static_cast<double>(depth.values[i]) - lo) / span * 255.0, 0.0, 255.0));
        out.pixels[i] = level / 255.0;
    }
    return out;
}

Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w) {
    if (out_h == 0 || out_w == 0) throw std::invalid_argument("resize target must be positive");
    if (img.empty()) throw std::invalid_argument("cannot resize an empty image");
    if (out_h == img.height && out_w == img.width) return img;

    auto coord = [](std::size_t i, std::size_t in, std::size_t out) {
        if (out == 1 || in == 1) return 0.0;
        return static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
    };

    // Rows first, then columns.
    Image tmp(img.channels, out_h, img.width);
    for (std::size_t y = 0; y < out_h; ++y) {
        const double sy = coord(y, img.height, out_h);
        const auto y0 = static_cast<std::size_t>(std::floor(sy));
        const std::size_t y1 = std::min(y0 + 1, img.height - 1);
        const double fy = sy - static_cast<double>(y0);
        for (std::size_t c = 0; c < img.channels; ++c)
            for (std::size_t x = 0; x < img.width; ++x)
                tmp.at(c, y, x) = img.at(c, y0, x) + fy * (img.at(c, y1, x) - img.at(c, y0, x));
    }
    Image out(img.channels, out_h, out_w);
    for (std::size_t x = 0; x < out_w; ++x) {
        const double sx = coord(x, img.width, out_w);
        const auto x0 = static_cast<std::size_t>(std::floor(sx));
        const std::size_t x1 = std::min(x0 + 1, img.width - 1);
        const double fx = sx - static_cast<double>(x0);
        for (std::size_t c = 0; c < img.channels; ++c)
            for (std::size_t y = 0; y < out_h; ++y)
                out.at(c, y, x) = tmp.at(c, y, x0) + fx * (tmp.at(c, y, x1) - tmp.at(c, y, x0));
    }
    return out;
}

}  // namespace cmfl
