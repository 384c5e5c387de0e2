#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace framescope {

// Tiny 8-bit RGB raster with just enough drawing for the plots.
struct ImageRgb {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // row-major, 3 bytes per pixel

    ImageRgb() = default;
    ImageRgb(int w, int h, std::uint8_t r = 255, std::uint8_t g = 255, std::uint8_t b = 255);

    std::uint8_t* at(int x, int y) { return pixels.data() + 3 * (static_cast<size_t>(y) * width + x); }
    const std::uint8_t* at(int x, int y) const {
        return pixels.data() + 3 * (static_cast<size_t>(y) * width + x);
    }

    void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b);
    void fill_rect(int x0, int y0, int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b);
    void outline_rect(int x0, int y0, int w, int h, std::uint8_t r, std::uint8_t g,
                      std::uint8_t b, int thickness = 1);
    // dst = (1 - alpha) * dst + alpha * src over the rectangle
    void blend_rect(int x0, int y0, int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b,
                    double alpha);
};

// Deterministic checkerboard stand-in when no real image is available.
ImageRgb synthetic_image(int width, int height, std::uint64_t seed);

// Linear colormap from dark blue through red to yellow; t in [0, 1].
void heat_color(double t, std::uint8_t& r, std::uint8_t& g, std::uint8_t& b);

void write_png(const ImageRgb& image, const std::filesystem::path& path);

}  // namespace framescope
