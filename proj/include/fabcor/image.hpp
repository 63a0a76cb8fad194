// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdlib>
#include <string>
#include <vector>

#include "fabcor/errors.hpp"

namespace fabcor {

// Binary raster, 1 = silicon, 0 = silica. Row-major, 1 nm/pixel convention.
struct BitMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pix; // values 0 or 1

    BitMask() = default;
    BitMask(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), pix(static_cast<std::size_t>(w) * h, fill) {}

    std::uint8_t at(int x, int y) const { return pix[static_cast<std::size_t>(y) * width + x]; }
    void set(int x, int y, std::uint8_t v) { pix[static_cast<std::size_t>(y) * width + x] = v; }
    bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
    std::size_t size() const { return pix.size(); }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto v : pix) n += v;
        return n;
    }

    bool operator==(const BitMask& o) const {
        return width == o.width && height == o.height && pix == o.pix;
    }
};

// 8-bit grayscale raster.
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pix;

    GrayImage() = default;
    GrayImage(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), pix(static_cast<std::size_t>(w) * h, fill) {}

    std::uint8_t at(int x, int y) const { return pix[static_cast<std::size_t>(y) * width + x]; }
    void set(int x, int y, std::uint8_t v) { pix[static_cast<std::size_t>(y) * width + x] = v; }
    std::size_t size() const { return pix.size(); }

    bool operator==(const GrayImage& o) const {
        return width == o.width && height == o.height && pix == o.pix;
    }
};

inline void require_same_dims(const BitMask& a, const BitMask& b, const char* what) {
    if (a.width != b.width || a.height != b.height)
        throw ShapeError(std::string(what) + ": mask dimensions differ");
}

} // namespace fabcor
