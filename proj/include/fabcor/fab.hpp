// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "fabcor/image.hpp"

namespace fabcor {

// Synthetic fabrication-variation model: signed etch bias, corner rounding,
// minimum-feature dropout and speckle defects. Deterministic per (mask, params).
struct FabParams {
    int etch_bias_px = -2;     // negative = over-etch shrink, positive = growth
    int corner_radius_px = 2;  // Gaussian sigma before re-threshold
    int min_feature_px = 4;    // components thinner than this vanish
    double defect_rate = 0.0;  // per-pixel flip probability, [0, 0.01]
    std::uint64_t seed = 0;

    bool is_identity() const {
        return etch_bias_px == 0 && corner_radius_px == 0 && min_feature_px == 0 &&
               defect_rate == 0.0;
    }
};

struct SemRenderParams {
    double noise_sigma = 0.0;      // gray levels
    int edge_glow_px = 2;          // halo width at material boundaries
    double brightness_gradient = 30.0; // gray-level ramp across the field
    int fg_level = 180;            // silicon
    int bg_level = 60;             // silica
    std::uint64_t seed = 0;
};

// Binary morphology with a disk structuring element of the given radius.
BitMask erode(const BitMask& mask, int radius_px);
BitMask dilate(const BitMask& mask, int radius_px);

// Separable Gaussian blur, kernel truncated at 3*sigma and renormalized,
// replicated edges. sigma = 0 is the identity. Floats, row-major.
std::vector<float> gaussian_blur(const std::vector<float>& img, int width, int height,
                                 double sigma);

// Design mask -> "fabricated" mask.
BitMask fabricate(const BitMask& design, const FabParams& params);

// Mask -> synthetic SEM-style grayscale render.
GrayImage render_sem(const BitMask& mask, const SemRenderParams& params);

// 4-connected component labelling; 0 = background, labels start at 1.
// Returns the number of components.
int label_components(const BitMask& mask, std::vector<std::int32_t>& labels);

} // namespace fabcor
