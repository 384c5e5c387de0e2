#include "framescope/image.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "framescope/errors.hpp"
#include "framescope/rng.hpp"

namespace framescope {

ImageRgb::ImageRgb(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b)
    : width(w), height(h), pixels(static_cast<size_t>(w) * h * 3) {
    for (size_t i = 0; i < pixels.size(); i += 3) {
        pixels[i] = r;
        pixels[i + 1] = g;
        pixels[i + 2] = b;
    }
}

void ImageRgb::set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    auto* p = at(x, y);
    p[0] = r;
    p[1] = g;
    p[2] = b;
}

void ImageRgb::fill_rect(int x0, int y0, int w, int h, std::uint8_t r, std::uint8_t g,
                         std::uint8_t b) {
    for (int y = std::max(0, y0); y < std::min(height, y0 + h); ++y) {
        for (int x = std::max(0, x0); x < std::min(width, x0 + w); ++x) set(x, y, r, g, b);
    }
}

void ImageRgb::outline_rect(int x0, int y0, int w, int h, std::uint8_t r, std::uint8_t g,
                            std::uint8_t b, int thickness) {
    for (int t = 0; t < thickness; ++t) {
        for (int x = x0; x < x0 + w; ++x) {
            set(x, y0 + t, r, g, b);
            set(x, y0 + h - 1 - t, r, g, b);
        }
        for (int y = y0; y < y0 + h; ++y) {
            set(x0 + t, y, r, g, b);
            set(x0 + w - 1 - t, y, r, g, b);
        }
    }
}

void ImageRgb::blend_rect(int x0, int y0, int w, int h, std::uint8_t r, std::uint8_t g,
                          std::uint8_t b, double alpha) {
    const double keep = 1.0 - alpha;
    for (int y = std::max(0, y0); y < std::min(height, y0 + h); ++y) {
        for (int x = std::max(0, x0); x < std::min(width, x0 + w); ++x) {
            auto* p = at(x, y);
            p[0] = static_cast<std::uint8_t>(keep * p[0] + alpha * r);
            p[1] = static_cast<std::uint8_t>(keep * p[1] + alpha * g);
            p[2] = static_cast<std::uint8_t>(keep * p[2] + alpha * b);
        }
    }
}

ImageRgb synthetic_image(int width, int height, std::uint64_t seed) {
    ImageRgb img(width, height);
    Rng rng(seed);
    const int cell = std::max(4, width / 8);
    for (int cy = 0; cy * cell < height; ++cy) {
        for (int cx = 0; cx * cell < width; ++cx) {
            const auto r = static_cast<std::uint8_t>(100 + rng.uniform_int(130));
            const auto g = static_cast<std::uint8_t>(100 + rng.uniform_int(130));
            const auto b = static_cast<std::uint8_t>(100 + rng.uniform_int(130));
            img.fill_rect(cx * cell, cy * cell, cell, cell, r, g, b);
        }
    }
    return img;
}

void heat_color(double t, std::uint8_t& r, std::uint8_t& g, std::uint8_t& b) {
    t = std::clamp(t, 0.0, 1.0);
    // dark blue -> red -> yellow
    if (t < 0.5) {
        const double u = t / 0.5;
        r = static_cast<std::uint8_t>(20 + 215 * u);
        g = static_cast<std::uint8_t>(20 * (1 - u));
        b = static_cast<std::uint8_t>(120 * (1 - u));
    } else {
        const double u = (t - 0.5) / 0.5;
        r = 235;
        g = static_cast<std::uint8_t>(235 * u);
        b = 10;
    }
}

namespace {

std::uint32_t crc32_of(const std::uint8_t* data, size_t size, std::uint32_t seed = 0) {
    return static_cast<std::uint32_t>(
        ::crc32(seed, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(size)));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
               const std::vector<std::uint8_t>& payload) {
    put_u32(out, static_cast<std::uint32_t>(payload.size()));
    std::vector<std::uint8_t> body(type, type + 4);
    body.insert(body.end(), payload.begin(), payload.end());
    out.insert(out.end(), body.begin(), body.end());
    put_u32(out, crc32_of(body.data(), body.size()));
}

}  // namespace

void write_png(const ImageRgb& image, const std::filesystem::path& path) {
    if (image.width <= 0 || image.height <= 0) {
        throw Error("write_png: empty image");
    }
    // filter byte 0 per scanline
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<size_t>(image.height) * (1 + 3 * image.width));
    for (int y = 0; y < image.height; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), image.at(0, y), image.at(0, y) + 3 * image.width);
    }

    uLongf compressed_size = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> compressed(compressed_size);
    if (compress2(compressed.data(), &compressed_size, raw.data(),
                  static_cast<uLong>(raw.size()), 6) != Z_OK) {
        throw Error("write_png: deflate failed");
    }
    compressed.resize(compressed_size);

    std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(image.width));
    put_u32(ihdr, static_cast<std::uint32_t>(image.height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", compressed);
    put_chunk(out, "IEND", {});

    std::ofstream file(path, std::ios::binary);
    if (!file) {
        throw Error("cannot write " + path.string());
    }
    file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

}  // namespace framescope
