#ifndef MPK_IMAGE_HPP
#define MPK_IMAGE_HPP

// Binary PGM (P5) and PPM (P6) rasters.

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "error.hpp"

namespace mpk {

/// Interleaved raster with samples scaled to [0, 1].
struct Raster {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 1;
    std::vector<double> data;

    double& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * channels + c]; }
    double at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * width + x) * channels + c]; }
};

namespace detail {

inline std::size_t read_header_int(std::istream& is) {
    int ch = is.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') {
                ch = is.get();
            }
        } else if (!std::isspace(ch)) {
            break;
        }
        ch = is.get();
    }
    if (ch == EOF || !std::isdigit(ch)) {
        throw format_error("malformed PNM header");
    }
    std::size_t value = 0;
    while (ch != EOF && std::isdigit(ch)) {
        value = value * 10 + static_cast<std::size_t>(ch - '0');
        if (value > (1u << 30)) {
            throw format_error("PNM header value too large");
        }
        ch = is.get();
    }
    // exactly one whitespace byte terminates the last header field
    return value;
}

} // namespace detail

inline Raster read_pnm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw error("cannot open '" + path.string() + "'");
    }
    char magic[2] = {};
    is.read(magic, 2);
    if (!is || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
        throw format_error("'" + path.string() + "' is not a binary PGM/PPM file");
    }
    Raster img;
    img.channels = magic[1] == '6' ? 3 : 1;
    img.width = detail::read_header_int(is);
    img.height = detail::read_header_int(is);
    const std::size_t maxval = detail::read_header_int(is);
    if (img.width == 0 || img.height == 0 || maxval == 0 || maxval > 65535) {
        throw format_error("invalid PNM dimensions or maxval in '" + path.string() + "'");
    }
    const std::size_t n = img.width * img.height * img.channels;
    const std::size_t bytes_per = maxval < 256 ? 1 : 2;
    std::vector<unsigned char> raw(n * bytes_per);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(is.gcount()) != raw.size()) {
        throw format_error("truncated pixel data in '" + path.string() + "'");
    }
    img.data.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t v = bytes_per == 1 ? raw[k] : (static_cast<std::size_t>(raw[2 * k]) << 8) | raw[2 * k + 1];
        img.data[k] = static_cast<double>(v) / static_cast<double>(maxval);
    }
    return img;
}

/// Writes an 8-bit PGM or PPM depending on the channel count; samples are clamped to [0, 1].
inline void write_pnm(const std::filesystem::path& path, const Raster& img) {
    if (img.channels != 1 && img.channels != 3) {
        throw argument_error("PNM output supports 1 or 3 channels");
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw error("cannot open '" + path.string() + "' for writing");
    }
    os << (img.channels == 3 ? "P6" : "P5") << "\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> out(img.data.size());
    for (std::size_t k = 0; k < out.size(); ++k) {
        const double v = img.data[k] < 0.0 ? 0.0 : (img.data[k] > 1.0 ? 1.0 : img.data[k]);
        out[k] = static_cast<unsigned char>(v * 255.0 + 0.5);
    }
    os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!os) {
        throw error("write failed for '" + path.string() + "'");
    }
}

} // namespace mpk

#endif
