// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fabcor/image.hpp"

namespace fabcor {

struct CannyParams {
    // Hysteresis bounds as fractions of the Otsu between-class mean separation
    // of the blurred image (shift-invariant; see otsu_threshold).
    double low_ratio = 0.5;
    double high_ratio = 1.0;
    double blur_sigma = 1.4;
};

struct OtsuResult {
    int level = 0;        // chosen threshold t; foreground is value > t
    bool degenerate = false; // constant image
    double class_separation = 0.0; // mu1 - mu0 at the chosen split
};

// Exhaustive maximization of between-class variance over the 256-bin
// histogram; ties resolve to the smallest t.
OtsuResult otsu_threshold(const GrayImage& image);

BitMask canny_edges(const GrayImage& image, const CannyParams& params);

// Otsu region mask refined by Canny contours: boundary snapped to the nearest
// edge pixel within 2 px, then interior holes without edge support filled.
BitMask segment_threshold(const GrayImage& image, const CannyParams& params);

} // namespace fabcor
