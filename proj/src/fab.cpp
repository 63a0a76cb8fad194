// SPDX-License-Identifier: Apache-2.0
#include "fabcor/fab.hpp"

#include <algorithm>
#include <cmath>

#include "fabcor/rng.hpp"

namespace fabcor {

namespace {

// Offsets of a disk structuring element, dx^2 + dy^2 <= r^2.
std::vector<std::pair<int, int>> disk_offsets(int radius) {
    std::vector<std::pair<int, int>> off;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dx * dx + dy * dy <= radius * radius) off.emplace_back(dx, dy);
    return off;
}

} // namespace

BitMask erode(const BitMask& mask, int radius_px) {
    if (radius_px <= 0) return mask;
    auto off = disk_offsets(radius_px);
    BitMask out(mask.width, mask.height);
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            std::uint8_t keep = 1;
            for (auto [dx, dy] : off) {
                int nx = x + dx, ny = y + dy;
                if (!mask.in_bounds(nx, ny) || !mask.at(nx, ny)) {
                    keep = 0;
                    break;
                }
            }
            out.set(x, y, keep);
        }
    }
    return out;
}

BitMask dilate(const BitMask& mask, int radius_px) {
    if (radius_px <= 0) return mask;
    auto off = disk_offsets(radius_px);
    BitMask out(mask.width, mask.height);
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            std::uint8_t hit = 0;
            for (auto [dx, dy] : off) {
                int nx = x + dx, ny = y + dy;
                if (mask.in_bounds(nx, ny) && mask.at(nx, ny)) {
                    hit = 1;
                    break;
                }
            }
            out.set(x, y, hit);
        }
    }
    return out;
}

std::vector<float> gaussian_blur(const std::vector<float>& img, int width, int height,
                                 double sigma) {
    if (sigma <= 0.0) return img;
    int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> w(static_cast<std::size_t>(radius) + 1);
    double norm = 1.0;
    for (int k = 1; k <= radius; ++k) {
        w[static_cast<std::size_t>(k)] = std::exp(-0.5 * k * k / (sigma * sigma));
        norm += 2.0 * w[static_cast<std::size_t>(k)];
    }
    w[0] = 1.0;
    for (auto& v : w) v /= norm;

    auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };

    // Taps paired symmetrically so mirroring the input mirrors the output
    // bit-exactly (float addition of the pair is commutative).
    std::vector<float> tmp(img.size());
    for (int y = 0; y < height; ++y) {
        const float* row = img.data() + static_cast<std::size_t>(y) * width;
        float* orow = tmp.data() + static_cast<std::size_t>(y) * width;
        for (int x = 0; x < width; ++x) {
            double acc = w[0] * row[x];
            for (int k = 1; k <= radius; ++k)
                acc += w[static_cast<std::size_t>(k)] *
                       (static_cast<double>(row[clampi(x - k, width - 1)]) +
                        row[clampi(x + k, width - 1)]);
            orow[x] = static_cast<float>(acc);
        }
    }
    std::vector<float> out(img.size());
    for (int y = 0; y < height; ++y) {
        float* orow = out.data() + static_cast<std::size_t>(y) * width;
        for (int x = 0; x < width; ++x) {
            double acc = w[0] * tmp[static_cast<std::size_t>(y) * width + x];
            for (int k = 1; k <= radius; ++k) {
                int ym = clampi(y - k, height - 1), yp = clampi(y + k, height - 1);
                acc += w[static_cast<std::size_t>(k)] *
                       (static_cast<double>(tmp[static_cast<std::size_t>(ym) * width + x]) +
                        tmp[static_cast<std::size_t>(yp) * width + x]);
            }
            orow[x] = static_cast<float>(acc);
        }
    }
    return out;
}

int label_components(const BitMask& mask, std::vector<std::int32_t>& labels) {
    labels.assign(mask.size(), 0);
    int next = 0;
    std::vector<std::pair<int, int>> stack;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y) || labels[static_cast<std::size_t>(y) * mask.width + x]) continue;
            ++next;
            stack.clear();
            stack.emplace_back(x, y);
            labels[static_cast<std::size_t>(y) * mask.width + x] = next;
            while (!stack.empty()) {
                auto [cx, cy] = stack.back();
                stack.pop_back();
                const int nx[4] = {cx - 1, cx + 1, cx, cx};
                const int ny[4] = {cy, cy, cy - 1, cy + 1};
                for (int i = 0; i < 4; ++i) {
                    if (!mask.in_bounds(nx[i], ny[i])) continue;
                    std::size_t idx = static_cast<std::size_t>(ny[i]) * mask.width + nx[i];
                    if (mask.pix[idx] && !labels[idx]) {
                        labels[idx] = next;
                        stack.emplace_back(nx[i], ny[i]);
                    }
                }
            }
        }
    }
    return next;
}

namespace {

BitMask drop_small_components(const BitMask& mask, int min_feature_px) {
    if (min_feature_px <= 0) return mask;
    std::vector<std::int32_t> labels;
    int n = label_components(mask, labels);
    if (n == 0) return mask;
    std::vector<int> x0(static_cast<std::size_t>(n) + 1, mask.width);
    std::vector<int> x1(static_cast<std::size_t>(n) + 1, -1);
    std::vector<int> y0(static_cast<std::size_t>(n) + 1, mask.height);
    std::vector<int> y1(static_cast<std::size_t>(n) + 1, -1);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            int l = labels[static_cast<std::size_t>(y) * mask.width + x];
            if (!l) continue;
            x0[l] = std::min(x0[l], x);
            x1[l] = std::max(x1[l], x);
            y0[l] = std::min(y0[l], y);
            y1[l] = std::max(y1[l], y);
        }
    std::vector<std::uint8_t> keep(static_cast<std::size_t>(n) + 1, 0);
    for (int l = 1; l <= n; ++l) {
        int w = x1[l] - x0[l] + 1;
        int h = y1[l] - y0[l] + 1;
        keep[static_cast<std::size_t>(l)] = std::min(w, h) >= min_feature_px ? 1 : 0;
    }
    BitMask out(mask.width, mask.height);
    for (std::size_t i = 0; i < mask.size(); ++i)
        out.pix[i] = labels[i] && keep[static_cast<std::size_t>(labels[i])] ? 1 : 0;
    return out;
}

} // namespace

BitMask fabricate(const BitMask& design, const FabParams& params) {
    BitMask m = design;
    if (params.etch_bias_px < 0)
        m = erode(m, -params.etch_bias_px);
    else if (params.etch_bias_px > 0)
        m = dilate(m, params.etch_bias_px);

    if (params.corner_radius_px > 0) {
        std::vector<float> field(m.size());
        for (std::size_t i = 0; i < m.size(); ++i) field[i] = m.pix[i] ? 1.0f : 0.0f;
        field = gaussian_blur(field, m.width, m.height, params.corner_radius_px);
        for (std::size_t i = 0; i < m.size(); ++i) m.pix[i] = field[i] > 0.5f ? 1 : 0;
    }

    m = drop_small_components(m, params.min_feature_px);

    if (params.defect_rate > 0.0) {
        Rng rng(params.seed);
        for (auto& p : m.pix)
            if (rng.bernoulli(params.defect_rate)) p ^= 1;
    }
    return m;
}

namespace {

constexpr double kGlowAmplitude = 64.0;

// Chebyshev distance (capped) to the nearest material boundary pixel.
std::vector<int> boundary_distance(const BitMask& mask, int cap) {
    const int big = cap + 1;
    std::vector<int> dist(mask.size(), big);
    std::vector<std::pair<int, int>> frontier;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            std::uint8_t v = mask.at(x, y);
            bool boundary = (x > 0 && mask.at(x - 1, y) != v) ||
                            (x + 1 < mask.width && mask.at(x + 1, y) != v) ||
                            (y > 0 && mask.at(x, y - 1) != v) ||
                            (y + 1 < mask.height && mask.at(x, y + 1) != v);
            if (boundary) {
                dist[static_cast<std::size_t>(y) * mask.width + x] = 0;
                frontier.emplace_back(x, y);
            }
        }
    std::vector<std::pair<int, int>> next;
    for (int d = 1; d <= cap && !frontier.empty(); ++d) {
        next.clear();
        for (auto [x, y] : frontier) {
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    int nx = x + dx, ny = y + dy;
                    if (nx < 0 || nx >= mask.width || ny < 0 || ny >= mask.height) continue;
                    std::size_t idx = static_cast<std::size_t>(ny) * mask.width + nx;
                    if (dist[idx] > d) {
                        dist[idx] = d;
                        next.emplace_back(nx, ny);
                    }
                }
        }
        frontier.swap(next);
    }
    return dist;
}

} // namespace

GrayImage render_sem(const BitMask& mask, const SemRenderParams& params) {
    std::vector<double> field(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i)
        field[i] = mask.pix[i] ? params.fg_level : params.bg_level;

    if (params.edge_glow_px > 0) {
        auto dist = boundary_distance(mask, params.edge_glow_px);
        for (std::size_t i = 0; i < field.size(); ++i) {
            int d = dist[i];
            if (d <= params.edge_glow_px)
                field[i] += kGlowAmplitude *
                            (1.0 - static_cast<double>(d) / (params.edge_glow_px + 1));
        }
    }

    if (params.brightness_gradient != 0.0 && mask.width > 1) {
        for (int y = 0; y < mask.height; ++y)
            for (int x = 0; x < mask.width; ++x)
                field[static_cast<std::size_t>(y) * mask.width + x] +=
                    params.brightness_gradient *
                    (static_cast<double>(x) / (mask.width - 1) - 0.5);
    }

    if (params.noise_sigma > 0.0) {
        Rng rng(params.seed);
        for (auto& v : field) v += rng.normal(0.0, params.noise_sigma);
    }

    GrayImage out(mask.width, mask.height);
    for (std::size_t i = 0; i < field.size(); ++i) {
        double v = std::llround(field[i]);
        out.pix[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
    return out;
}

} // namespace fabcor
