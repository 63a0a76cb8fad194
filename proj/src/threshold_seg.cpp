// SPDX-License-Identifier: Apache-2.0
#include "fabcor/threshold_seg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "fabcor/fab.hpp"

namespace fabcor {

OtsuResult otsu_threshold(const GrayImage& image) {
    std::array<std::int64_t, 256> hist{};
    for (auto v : image.pix) ++hist[v];

    const double total = static_cast<double>(image.size());
    double sum_all = 0.0;
    for (int v = 0; v < 256; ++v) sum_all += static_cast<double>(v) * hist[static_cast<std::size_t>(v)];

    OtsuResult best;
    double best_var = -1.0;
    double w0 = 0.0, sum0 = 0.0;
    for (int t = 0; t < 256; ++t) {
        w0 += hist[static_cast<std::size_t>(t)];
        sum0 += static_cast<double>(t) * hist[static_cast<std::size_t>(t)];
        double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        double mu0 = sum0 / w0;
        double mu1 = (sum_all - sum0) / w1;
        double var = (w0 / total) * (w1 / total) * (mu1 - mu0) * (mu1 - mu0);
        if (var > best_var + 1e-12) { // strict improvement keeps the smallest t
            best_var = var;
            best.level = t;
            best.class_separation = mu1 - mu0;
        }
    }
    if (best_var < 0.0) { // constant image
        best.level = image.pix.empty() ? 0 : image.pix[0];
        best.degenerate = true;
        best.class_separation = 0.0;
    }
    return best;
}

namespace {

std::vector<float> to_float(const GrayImage& img) {
    std::vector<float> f(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) f[i] = img.pix[i];
    return f;
}

GrayImage quantize(const std::vector<float>& f, int w, int h) {
    GrayImage out(w, h);
    for (std::size_t i = 0; i < f.size(); ++i) {
        long v = std::lround(f[i]);
        out.pix[i] = static_cast<std::uint8_t>(std::clamp(v, 0L, 255L));
    }
    return out;
}

struct Gradients {
    std::vector<float> mag;
    std::vector<std::uint8_t> dir; // quantized to 4 bins: 0 deg, 45, 90, 135
};

Gradients sobel(const std::vector<float>& img, int w, int h) {
    Gradients g;
    g.mag.assign(img.size(), 0.0f);
    g.dir.assign(img.size(), 0);
    auto at = [&](int x, int y) {
        x = std::clamp(x, 0, w - 1);
        y = std::clamp(y, 0, h - 1);
        return static_cast<double>(img[static_cast<std::size_t>(y) * w + x]);
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)) -
                        (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            double gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)) -
                        (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            std::size_t i = static_cast<std::size_t>(y) * w + x;
            g.mag[i] = static_cast<float>(std::sqrt(gx * gx + gy * gy));
            double ang = std::atan2(gy, gx) * 180.0 / 3.14159265358979323846;
            if (ang < 0.0) ang += 180.0;
            std::uint8_t bin;
            if (ang < 22.5 || ang >= 157.5)
                bin = 0; // horizontal gradient -> vertical edge
            else if (ang < 67.5)
                bin = 1;
            else if (ang < 112.5)
                bin = 2;
            else
                bin = 3;
            g.dir[i] = bin;
        }
    }
    return g;
}

} // namespace

BitMask canny_edges(const GrayImage& image, const CannyParams& params) {
    const int w = image.width, h = image.height;
    std::vector<float> blurred = gaussian_blur(to_float(image), w, h, params.blur_sigma);
    GrayImage blurred_q = quantize(blurred, w, h);
    OtsuResult otsu = otsu_threshold(blurred_q);
    if (otsu.degenerate) return BitMask(w, h);

    Gradients g = sobel(blurred, w, h);

    const double high = params.high_ratio * otsu.class_separation;
    const double low = params.low_ratio * otsu.class_separation;

    // Non-maximum suppression along the quantized gradient direction. "<="
    // keeps both samples of a symmetric two-pixel ridge.
    static const int dx[4] = {1, 1, 0, -1};
    static const int dy[4] = {0, 1, 1, 1};
    std::vector<std::uint8_t> state(image.size(), 0); // 0 none, 1 weak, 2 strong
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            std::size_t i = static_cast<std::size_t>(y) * w + x;
            float m = g.mag[i];
            if (m < low) continue;
            int b = g.dir[i];
            auto magat = [&](int xx, int yy) -> float {
                if (xx < 0 || xx >= w || yy < 0 || yy >= h) return 0.0f;
                return g.mag[static_cast<std::size_t>(yy) * w + xx];
            };
            if (m < magat(x + dx[b], y + dy[b]) || m < magat(x - dx[b], y - dy[b])) continue;
            state[i] = m >= high ? 2 : 1;
        }
    }

    // Hysteresis: keep weak pixels 8-connected to a strong one.
    BitMask out(w, h);
    std::vector<std::pair<int, int>> stack;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (state[static_cast<std::size_t>(y) * w + x] == 2) {
                out.set(x, y, 1);
                stack.emplace_back(x, y);
            }
    while (!stack.empty()) {
        auto [cx, cy] = stack.back();
        stack.pop_back();
        for (int ddy = -1; ddy <= 1; ++ddy)
            for (int ddx = -1; ddx <= 1; ++ddx) {
                int nx = cx + ddx, ny = cy + ddy;
                if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
                std::size_t i = static_cast<std::size_t>(ny) * w + nx;
                if (state[i] == 1 && !out.pix[i]) {
                    out.pix[i] = 1;
                    stack.emplace_back(nx, ny);
                }
            }
    }
    return out;
}

namespace {

constexpr int kSnapRadius = 2;

// For every pixel within kSnapRadius of an edge pixel, reclassify against the
// local edge level (midpoint of the 3x3 min/max around the nearest edge).
void snap_to_edges(BitMask& mask, const std::vector<float>& blurred, const BitMask& edges) {
    const int w = mask.width, h = mask.height;
    auto level_at = [&](int ex, int ey) {
        float lo = blurred[static_cast<std::size_t>(ey) * w + ex];
        float hi = lo;
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                int nx = std::clamp(ex + dx, 0, w - 1);
                int ny = std::clamp(ey + dy, 0, h - 1);
                float v = blurred[static_cast<std::size_t>(ny) * w + nx];
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        return 0.5f * (lo + hi);
    };
    BitMask snapped = mask;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            // nearest edge pixel within the snap window, scanned in a fixed order
            int best_d2 = 2 * kSnapRadius * kSnapRadius + 1;
            int ex = -1, ey = -1;
            for (int dy = -kSnapRadius; dy <= kSnapRadius; ++dy)
                for (int dx = -kSnapRadius; dx <= kSnapRadius; ++dx) {
                    int nx = x + dx, ny = y + dy;
                    if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
                    if (!edges.at(nx, ny)) continue;
                    int d2 = dx * dx + dy * dy;
                    if (d2 < best_d2) {
                        best_d2 = d2;
                        ex = nx;
                        ey = ny;
                    }
                }
            if (ex < 0) continue;
            float level = level_at(ex, ey);
            snapped.set(x, y, blurred[static_cast<std::size_t>(y) * w + x] > level ? 1 : 0);
        }
    }
    mask = snapped;
}

// Fill interior background components lacking edge support along their rim.
void fill_unsupported_holes(BitMask& mask, const BitMask& edges) {
    const int w = mask.width, h = mask.height;
    BitMask inv(w, h);
    for (std::size_t i = 0; i < mask.size(); ++i) inv.pix[i] = mask.pix[i] ? 0 : 1;
    std::vector<std::int32_t> labels;
    int n = label_components(inv, labels);
    if (n == 0) return;

    std::vector<std::uint8_t> touches_border(static_cast<std::size_t>(n) + 1, 0);
    for (int x = 0; x < w; ++x) {
        if (labels[static_cast<std::size_t>(x)]) touches_border[labels[static_cast<std::size_t>(x)]] = 1;
        std::size_t bot = static_cast<std::size_t>(h - 1) * w + x;
        if (labels[bot]) touches_border[labels[bot]] = 1;
    }
    for (int y = 0; y < h; ++y) {
        std::size_t left = static_cast<std::size_t>(y) * w;
        if (labels[left]) touches_border[labels[left]] = 1;
        std::size_t right = left + w - 1;
        if (labels[right]) touches_border[labels[right]] = 1;
    }

    std::vector<std::int64_t> rim(static_cast<std::size_t>(n) + 1, 0);
    std::vector<std::int64_t> rim_near_edge(static_cast<std::size_t>(n) + 1, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int l = labels[static_cast<std::size_t>(y) * w + x];
            if (!l) continue;
            bool on_rim = (x > 0 && mask.at(x - 1, y)) || (x + 1 < w && mask.at(x + 1, y)) ||
                          (y > 0 && mask.at(x, y - 1)) || (y + 1 < h && mask.at(x, y + 1));
            if (!on_rim) continue;
            ++rim[l];
            bool near_edge = false;
            for (int dy = -1; dy <= 1 && !near_edge; ++dy)
                for (int dx = -1; dx <= 1 && !near_edge; ++dx) {
                    int nx = x + dx, ny = y + dy;
                    if (nx >= 0 && nx < w && ny >= 0 && ny < h && edges.at(nx, ny))
                        near_edge = true;
                }
            if (near_edge) ++rim_near_edge[l];
        }

    std::vector<std::uint8_t> fill(static_cast<std::size_t>(n) + 1, 0);
    for (int l = 1; l <= n; ++l) {
        if (touches_border[static_cast<std::size_t>(l)]) continue;
        if (rim[l] == 0 || 2 * rim_near_edge[l] < rim[l]) fill[static_cast<std::size_t>(l)] = 1;
    }
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (labels[i] && fill[static_cast<std::size_t>(labels[i])]) mask.pix[i] = 1;
}

} // namespace

BitMask segment_threshold(const GrayImage& image, const CannyParams& params) {
    const int w = image.width, h = image.height;
    std::vector<float> blurred = gaussian_blur(to_float(image), w, h, params.blur_sigma);
    GrayImage blurred_q = quantize(blurred, w, h);

    OtsuResult otsu = otsu_threshold(blurred_q);
    BitMask mask(w, h);
    if (otsu.degenerate) return mask;
    for (std::size_t i = 0; i < mask.size(); ++i)
        mask.pix[i] = blurred_q.pix[i] > otsu.level ? 1 : 0;

    BitMask edges = canny_edges(image, params);
    snap_to_edges(mask, blurred, edges);
    fill_unsupported_holes(mask, edges);
    return mask;
}

} // namespace fabcor
