#include "cmfl/raster.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "cmfl/error.hpp"

namespace cmfl {

namespace {

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& why) {
    throw DataError("cannot decode raster " + path.string() + ": " + why);
}

class HeaderParser {
public:
    HeaderParser(const std::vector<unsigned char>& bytes, const std::filesystem::path& path)
        : bytes_(bytes), path_(path) {}

    std::size_t number() {
        skip_space_and_comments();
        if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) fail(path_, "malformed header");
        std::size_t v = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            v = v * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
            if (v > (std::size_t{1} << 31)) fail(path_, "header value too large");
            ++pos_;
        }
        return v;
    }

    // Exactly one whitespace byte separates the header from the payload.
    std::size_t payload_start() {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail(path_, "malformed header");
        return pos_ + 1;
    }

    void seek(std::size_t p) { pos_ = p; }

private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    const std::vector<unsigned char>& bytes_;
    const std::filesystem::path& path_;
    std::size_t pos_ = 0;
};

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("missing file: " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Raster read_raster(const std::filesystem::path& path) {
    const std::vector<unsigned char> bytes = slurp(path);
    if (bytes.size() < 3) fail(path, "file too short");

    Raster r;
    HeaderParser header(bytes, path);
    if (bytes[0] == 'D' && bytes[1] == '1' && bytes[2] == '6') {
        header.seek(3);
        r.channels = 1;
        r.width = header.number();
        r.height = header.number();
        r.bit_depth = 16;
        const std::size_t start = header.payload_start();
        const std::size_t n = r.width * r.height;
        if (bytes.size() - start != 2 * n) fail(path, "payload size mismatch");
        r.samples.resize(n);
        for (std::size_t i = 0; i < n; ++i)
            r.samples[i] = static_cast<std::uint16_t>(bytes[start + 2 * i] | (bytes[start + 2 * i + 1] << 8));
        return r;
    }

    if (bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) fail(path, "unsupported raster type");
    header.seek(2);
    r.channels = bytes[1] == '5' ? 1 : 3;
    r.width = header.number();
    r.height = header.number();
    const std::size_t maxval = header.number();
    if (maxval == 0 || maxval > 65535) fail(path, "bad maxval");
    r.bit_depth = maxval > 255 ? 16 : 8;
    if (r.bit_depth == 16 && r.channels != 1) fail(path, "16-bit color rasters are not supported");
    const std::size_t start = header.payload_start();
    const std::size_t n = r.width * r.height * r.channels;
    const std::size_t bytes_per = r.bit_depth == 16 ? 2 : 1;
    if (bytes.size() - start != n * bytes_per) fail(path, "payload size mismatch");
    r.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        r.samples[i] = bytes_per == 1
                           ? bytes[start + i]
                           : static_cast<std::uint16_t>((bytes[start + 2 * i] << 8) | bytes[start + 2 * i + 1]);
    return r;
}

Image to_image(const Raster& raster) {
    if (raster.bit_depth != 8) throw DataError("expected an 8-bit raster");
    Image img(raster.channels, raster.height, raster.width);
    for (std::size_t y = 0; y < raster.height; ++y)
        for (std::size_t x = 0; x < raster.width; ++x)
            for (std::size_t c = 0; c < raster.channels; ++c)
                img.at(c, y, x) = raster.samples[(y * raster.width + x) * raster.channels + c] / 255.0;
    return img;
}

RawDepthMap to_depth(const Raster& raster) {
    if (raster.channels != 1) throw DataError("depth raster must have one channel");
    RawDepthMap d;
    d.height = raster.height;
    d.width = raster.width;
    d.values.assign(raster.samples.begin(), raster.samples.end());
    return d;
}

void write_pnm(const std::filesystem::path& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw DataError("PNM output needs 1 or 3 channels");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
    std::string payload(img.pixels.size(), '\0');
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < img.channels; ++c) {
                const double v = std::round(std::clamp(img.at(c, y, x), 0.0, 1.0) * 255.0);
                payload[(y * img.width + x) * img.channels + c] = static_cast<char>(static_cast<unsigned char>(v));
            }
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw DataError("failed writing " + path.string());
}

void write_d16(const std::filesystem::path& path, const RawDepthMap& depth) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "D16\n" << depth.width << ' ' << depth.height << '\n';
    std::string payload(2 * depth.values.size(), '\0');
    for (std::size_t i = 0; i < depth.values.size(); ++i) {
        if (depth.values[i] > 0xffffU) throw DataError("depth value exceeds 16 bits");
        payload[2 * i] = static_cast<char>(depth.values[i] & 0xffU);
        payload[2 * i + 1] = static_cast<char>((depth.values[i] >> 8) & 0xffU);
    }
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace cmfl
