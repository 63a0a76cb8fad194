// SPDX-License-Identifier: Apache-2.0
#include "fabcor/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <thread>
#include <unordered_set>

namespace fabcor {

using detail::Node;

std::string Shape::str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) os << ',';
        os << dims[i];
    }
    os << ']';
    return os.str();
}

// ---------------------------------------------------------------------------
// globals

namespace {
thread_local bool g_grad_enabled = true;
std::atomic<int> g_num_threads{0}; // 0 = use hardware concurrency
} // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool f) { g_grad_enabled = f; }

int num_threads() {
    int n = g_num_threads.load();
    if (n > 0) return n;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}
void set_num_threads(int n) { g_num_threads.store(n < 1 ? 1 : n); }

namespace {

// Splits [0, n) into contiguous chunks, one worker per chunk. Every item is
// processed by exactly one worker with the same per-item serial order, so
// results do not depend on the thread count.
void parallel_for(std::int64_t n, std::int64_t work_per_item,
                  const std::function<void(std::int64_t)>& fn) {
    int t = num_threads();
    if (t > 1 && n * work_per_item < 100000) t = 1; // not worth spawning
    if (t <= 1 || n <= 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    if (t > n) t = static_cast<int>(n);
    std::vector<std::thread> workers;
    workers.reserve(static_cast<std::size_t>(t));
    for (int w = 0; w < t; ++w) {
        std::int64_t lo = n * w / t;
        std::int64_t hi = n * (w + 1) / t;
        workers.emplace_back([lo, hi, &fn] {
            for (std::int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : workers) th.join();
}

std::shared_ptr<Node> new_node(Shape shape, const char* op) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.resize(static_cast<std::size_t>(n->shape.numel()));
    n->op = op;
    return n;
}

bool wants_grad(const Tensor& t) { return t.node()->needs_grad; }

} // namespace

// ---------------------------------------------------------------------------
// construction

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = new_node(std::move(shape), "leaf");
    n->requires_grad = requires_grad;
    n->needs_grad = requires_grad;
    return wrap(std::move(n));
}

Tensor Tensor::full(Shape shape, float v, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.values().begin(), t.values().end(), v);
    return t;
}

Tensor Tensor::from_vector(Shape shape, std::vector<float> data, bool requires_grad) {
    if (shape.numel() != static_cast<std::int64_t>(data.size()))
        throw ShapeError("from_vector: " + shape.str() + " does not hold " +
                         std::to_string(data.size()) + " elements");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    n->needs_grad = requires_grad;
    return wrap(std::move(n));
}

// ---------------------------------------------------------------------------
// conv2d

namespace {

struct ConvDims {
    int n, cin, h, w, cout, kh, kw, pad, stride, hout, wout;
};

void conv_forward(const float* in, const float* wt, const float* bias, float* out,
                  const ConvDims& d) {
    parallel_for(static_cast<std::int64_t>(d.n) * d.cout,
                 static_cast<std::int64_t>(d.hout) * d.wout * d.cin * d.kh * d.kw,
                 [&](std::int64_t idx) {
        int nn = static_cast<int>(idx / d.cout);
        int co = static_cast<int>(idx % d.cout);
        std::vector<double> acc(static_cast<std::size_t>(d.wout));
        for (int oy = 0; oy < d.hout; ++oy) {
            std::fill(acc.begin(), acc.end(), static_cast<double>(bias[co]));
            for (int ci = 0; ci < d.cin; ++ci) {
                for (int ky = 0; ky < d.kh; ++ky) {
                    int iy = oy * d.stride + ky - d.pad;
                    if (iy < 0 || iy >= d.h) continue;
                    const float* irow =
                        in + ((static_cast<std::int64_t>(nn) * d.cin + ci) * d.h + iy) * d.w;
                    const float* wrow =
                        wt + ((static_cast<std::int64_t>(co) * d.cin + ci) * d.kh + ky) * d.kw;
                    for (int kx = 0; kx < d.kw; ++kx) {
                        double wv = wrow[kx];
                        int shift = kx - d.pad;
                        int x0 = 0;
                        if (shift < 0) x0 = (-shift + d.stride - 1) / d.stride;
                        int x1 = std::min(d.wout, (d.w - 1 - shift) / d.stride + 1);
                        if (d.stride == 1) {
                            const float* src = irow + shift;
                            for (int ox = x0; ox < x1; ++ox)
                                acc[ox] += wv * static_cast<double>(src[ox]);
                        } else {
                            for (int ox = x0; ox < x1; ++ox)
                                acc[ox] += wv * static_cast<double>(irow[ox * d.stride + shift]);
                        }
                    }
                }
            }
            float* orow = out + ((static_cast<std::int64_t>(nn) * d.cout + co) * d.hout + oy) * d.wout;
            for (int ox = 0; ox < d.wout; ++ox) orow[ox] = static_cast<float>(acc[ox]);
        }
    });
}

void conv_backward_input(const float* g, const float* wt, float* din, const ConvDims& d) {
    parallel_for(static_cast<std::int64_t>(d.n) * d.cin,
                 static_cast<std::int64_t>(d.h) * d.w * d.cout * d.kh * d.kw,
                 [&](std::int64_t idx) {
        int nn = static_cast<int>(idx / d.cin);
        int ci = static_cast<int>(idx % d.cin);
        std::vector<double> acc(static_cast<std::size_t>(d.w));
        for (int iy = 0; iy < d.h; ++iy) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int co = 0; co < d.cout; ++co) {
                for (int ky = 0; ky < d.kh; ++ky) {
                    int t = iy + d.pad - ky;
                    if (t < 0) continue;
                    if (t % d.stride) continue;
                    int oy = t / d.stride;
                    if (oy >= d.hout) continue;
                    const float* grow =
                        g + ((static_cast<std::int64_t>(nn) * d.cout + co) * d.hout + oy) * d.wout;
                    const float* wrow =
                        wt + ((static_cast<std::int64_t>(co) * d.cin + ci) * d.kh + ky) * d.kw;
                    for (int kx = 0; kx < d.kw; ++kx) {
                        double wv = wrow[kx];
                        if (d.stride == 1) {
                            int shift = d.pad - kx; // ox = ix + shift
                            int x0 = std::max(0, -shift);
                            int x1 = std::min(d.w, d.wout - shift);
                            const float* src = grow + shift;
                            for (int ix = x0; ix < x1; ++ix)
                                acc[ix] += wv * static_cast<double>(src[ix]);
                        } else {
                            for (int ix = 0; ix < d.w; ++ix) {
                                int u = ix + d.pad - kx;
                                if (u < 0 || u % d.stride) continue;
                                int ox = u / d.stride;
                                if (ox >= d.wout) continue;
                                acc[ix] += wv * static_cast<double>(grow[ox]);
                            }
                        }
                    }
                }
            }
            float* drow = din + ((static_cast<std::int64_t>(nn) * d.cin + ci) * d.h + iy) * d.w;
            for (int ix = 0; ix < d.w; ++ix) drow[ix] += static_cast<float>(acc[ix]);
        }
    });
}

void conv_backward_weight(const float* g, const float* in, float* dw, const ConvDims& d) {
    parallel_for(static_cast<std::int64_t>(d.cout) * d.cin,
                 static_cast<std::int64_t>(d.n) * d.hout * d.wout * d.kh * d.kw,
                 [&](std::int64_t idx) {
        int co = static_cast<int>(idx / d.cin);
        int ci = static_cast<int>(idx % d.cin);
        for (int ky = 0; ky < d.kh; ++ky) {
            for (int kx = 0; kx < d.kw; ++kx) {
                double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
                for (int nn = 0; nn < d.n; ++nn) {
                    for (int oy = 0; oy < d.hout; ++oy) {
                        int iy = oy * d.stride + ky - d.pad;
                        if (iy < 0 || iy >= d.h) continue;
                        const float* grow =
                            g + ((static_cast<std::int64_t>(nn) * d.cout + co) * d.hout + oy) * d.wout;
                        const float* irow =
                            in + ((static_cast<std::int64_t>(nn) * d.cin + ci) * d.h + iy) * d.w;
                        int shift = kx - d.pad;
                        if (d.stride == 1) {
                            int x0 = std::max(0, -shift);
                            int x1 = std::min(d.wout, d.w - shift);
                            const float* src = irow + shift;
                            int ox = x0;
                            for (; ox + 3 < x1; ox += 4) {
                                s0 += static_cast<double>(grow[ox]) * src[ox];
                                s1 += static_cast<double>(grow[ox + 1]) * src[ox + 1];
                                s2 += static_cast<double>(grow[ox + 2]) * src[ox + 2];
                                s3 += static_cast<double>(grow[ox + 3]) * src[ox + 3];
                            }
                            for (; ox < x1; ++ox) s0 += static_cast<double>(grow[ox]) * src[ox];
                        } else {
                            for (int ox = 0; ox < d.wout; ++ox) {
                                int ix = ox * d.stride + shift;
                                if (ix < 0 || ix >= d.w) continue;
                                s0 += static_cast<double>(grow[ox]) * irow[ix];
                            }
                        }
                    }
                }
                dw[((static_cast<std::int64_t>(co) * d.cin + ci) * d.kh + ky) * d.kw + kx] +=
                    static_cast<float>((s0 + s1) + (s2 + s3));
            }
        }
    });
}

void conv_backward_bias(const float* g, float* db, const ConvDims& d) {
    std::int64_t plane = static_cast<std::int64_t>(d.hout) * d.wout;
    for (int co = 0; co < d.cout; ++co) {
        double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
        for (int nn = 0; nn < d.n; ++nn) {
            const float* gp = g + (static_cast<std::int64_t>(nn) * d.cout + co) * plane;
            std::int64_t i = 0;
            for (; i + 3 < plane; i += 4) {
                s0 += gp[i];
                s1 += gp[i + 1];
                s2 += gp[i + 2];
                s3 += gp[i + 3];
            }
            for (; i < plane; ++i) s0 += gp[i];
        }
        db[co] += static_cast<float>((s0 + s1) + (s2 + s3));
    }
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              Padding padding, int stride) {
    const Shape& is = input.shape();
    const Shape& ws = weight.shape();
    if (is.rank() != 4 || ws.rank() != 4)
        throw ShapeError("conv2d: input " + is.str() + " / weight " + ws.str() + " must be 4-D");
    if (bias.shape().rank() != 1 || bias.shape()[0] != ws[0])
        throw ShapeError("conv2d: bias must be [Cout]");
    if (is[1] != ws[1])
        throw ShapeError("conv2d: input channels " + std::to_string(is[1]) +
                         " != weight channels " + std::to_string(ws[1]));
    if (ws[2] % 2 == 0 || ws[3] % 2 == 0)
        throw ContractError("conv2d: kernel extents must be odd");
    if (stride < 1) throw ContractError("conv2d: stride must be >= 1");

    ConvDims d;
    d.n = is[0];
    d.cin = is[1];
    d.h = is[2];
    d.w = is[3];
    d.cout = ws[0];
    d.kh = ws[2];
    d.kw = ws[3];
    d.pad = padding == Padding::same ? (d.kh - 1) / 2 : 0;
    d.stride = stride;
    d.hout = (d.h + 2 * d.pad - d.kh) / stride + 1;
    d.wout = (d.w + 2 * d.pad - d.kw) / stride + 1;
    if (d.hout < 1 || d.wout < 1)
        throw ShapeError("conv2d: kernel larger than padded input");

    auto out = new_node(Shape{d.n, d.cout, d.hout, d.wout}, "conv2d");
    conv_forward(input.data(), weight.data(), bias.data(), out->value.data(), d);

    if (grad_enabled() && (wants_grad(input) || wants_grad(weight) || wants_grad(bias))) {
        out->needs_grad = true;
        out->inputs = {input.node(), weight.node(), bias.node()};
        auto in_n = input.node();
        auto w_n = weight.node();
        auto b_n = bias.node();
        out->backward = [in_n, w_n, b_n, d](Node& self) {
            const float* g = self.grad.data();
            if (in_n->needs_grad) {
                in_n->ensure_grad();
                conv_backward_input(g, w_n->value.data(), in_n->grad.data(), d);
            }
            if (w_n->needs_grad) {
                w_n->ensure_grad();
                conv_backward_weight(g, in_n->value.data(), w_n->grad.data(), d);
            }
            if (b_n->needs_grad) {
                b_n->ensure_grad();
                conv_backward_bias(g, b_n->grad.data(), d);
            }
        };
    }
    return Tensor::wrap(out);
}

// ---------------------------------------------------------------------------
// elementwise and structural ops

Tensor relu(const Tensor& x) {
    auto out = new_node(x.shape(), "relu");
    const auto& xv = x.values();
    for (std::size_t i = 0; i < xv.size(); ++i) out->value[i] = xv[i] > 0.0f ? xv[i] : 0.0f;
    if (grad_enabled() && wants_grad(x)) {
        out->needs_grad = true;
        out->inputs = {x.node()};
        auto xn = x.node();
        out->backward = [xn](Node& self) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (xn->value[i] > 0.0f) xn->grad[i] += self.grad[i];
        };
    }
    return Tensor::wrap(out);
}

Tensor sigmoid(const Tensor& x) {
    auto out = new_node(x.shape(), "sigmoid");
    const auto& xv = x.values();
    for (std::size_t i = 0; i < xv.size(); ++i)
        out->value[i] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(xv[i]))));
    if (grad_enabled() && wants_grad(x)) {
        out->needs_grad = true;
        out->inputs = {x.node()};
        auto xn = x.node();
        out->backward = [xn](Node& self) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                float s = self.value[i];
                xn->grad[i] += self.grad[i] * s * (1.0f - s);
            }
        };
    }
    return Tensor::wrap(out);
}

Tensor maxpool2x2(const Tensor& x) {
    const Shape& s = x.shape();
    int n = s.n(), c = s.c(), h = s.h(), w = s.w();
    if (h % 2 || w % 2)
        throw ShapeError("maxpool2x2: spatial extents must be even, got " + s.str());
    int ho = h / 2, wo = w / 2;
    auto out = new_node(Shape{n, c, ho, wo}, "maxpool2x2");
    auto argmax = std::make_shared<std::vector<std::int32_t>>(out->value.size());
    const float* in = x.data();
    for (int nc = 0; nc < n * c; ++nc) {
        const float* plane = in + static_cast<std::int64_t>(nc) * h * w;
        float* op = out->value.data() + static_cast<std::int64_t>(nc) * ho * wo;
        std::int32_t* ap = argmax->data() + static_cast<std::int64_t>(nc) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                int base = (2 * oy) * w + 2 * ox;
                // row-major window scan; strict > keeps the first of a tie
                int best = base;
                float bv = plane[base];
                if (plane[base + 1] > bv) { best = base + 1; bv = plane[base + 1]; }
                if (plane[base + w] > bv) { best = base + w; bv = plane[base + w]; }
                if (plane[base + w + 1] > bv) { best = base + w + 1; bv = plane[base + w + 1]; }
                op[oy * wo + ox] = bv;
                ap[oy * wo + ox] = static_cast<std::int32_t>(nc) * h * w + best;
            }
        }
    }
    if (grad_enabled() && wants_grad(x)) {
        out->needs_grad = true;
        out->inputs = {x.node()};
        auto xn = x.node();
        out->backward = [xn, argmax](Node& self) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                xn->grad[static_cast<std::size_t>((*argmax)[i])] += self.grad[i];
        };
    }
    return Tensor::wrap(out);
}

Tensor upsample2x(const Tensor& x) {
    const Shape& s = x.shape();
    int n = s.n(), c = s.c(), h = s.h(), w = s.w();
    auto out = new_node(Shape{n, c, 2 * h, 2 * w}, "upsample2x");
    const float* in = x.data();
    float* op = out->value.data();
    for (int nc = 0; nc < n * c; ++nc) {
        const float* ip = in + static_cast<std::int64_t>(nc) * h * w;
        float* o = op + static_cast<std::int64_t>(nc) * 4 * h * w;
        for (int y = 0; y < h; ++y) {
            for (int x2 = 0; x2 < w; ++x2) {
                float v = ip[y * w + x2];
                int b = (2 * y) * (2 * w) + 2 * x2;
                o[b] = v;
                o[b + 1] = v;
                o[b + 2 * w] = v;
                o[b + 2 * w + 1] = v;
            }
        }
    }
    if (grad_enabled() && wants_grad(x)) {
        out->needs_grad = true;
        out->inputs = {x.node()};
        auto xn = x.node();
        out->backward = [xn, n, c, h, w](Node& self) {
            xn->ensure_grad();
            const float* g = self.grad.data();
            for (int nc = 0; nc < n * c; ++nc) {
                const float* gp = g + static_cast<std::int64_t>(nc) * 4 * h * w;
                float* d = xn->grad.data() + static_cast<std::int64_t>(nc) * h * w;
                for (int y = 0; y < h; ++y)
                    for (int x2 = 0; x2 < w; ++x2) {
                        int b = (2 * y) * (2 * w) + 2 * x2;
                        d[y * w + x2] += gp[b] + gp[b + 1] + gp[b + 2 * w] + gp[b + 2 * w + 1];
                    }
            }
        };
    }
    return Tensor::wrap(out);
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.n() != sb.n() || sa.h() != sb.h() || sa.w() != sb.w())
        throw ShapeError("concat_channels: " + sa.str() + " vs " + sb.str());
    int n = sa.n(), ca = sa.c(), cb = sb.c(), h = sa.h(), w = sa.w();
    std::int64_t plane = static_cast<std::int64_t>(h) * w;
    auto out = new_node(Shape{n, ca + cb, h, w}, "concat_channels");
    for (int nn = 0; nn < n; ++nn) {
        std::memcpy(out->value.data() + nn * (ca + cb) * plane,
                    a.data() + nn * ca * plane, sizeof(float) * ca * plane);
        std::memcpy(out->value.data() + (nn * (ca + cb) + ca) * plane,
                    b.data() + nn * cb * plane, sizeof(float) * cb * plane);
    }
    if (grad_enabled() && (wants_grad(a) || wants_grad(b))) {
        out->needs_grad = true;
        out->inputs = {a.node(), b.node()};
        auto an = a.node();
        auto bn = b.node();
        out->backward = [an, bn, n, ca, cb, plane](Node& self) {
            const float* g = self.grad.data();
            if (an->needs_grad) {
                an->ensure_grad();
                for (int nn = 0; nn < n; ++nn) {
                    const float* gp = g + nn * (ca + cb) * plane;
                    float* d = an->grad.data() + nn * ca * plane;
                    for (std::int64_t i = 0; i < ca * plane; ++i) d[i] += gp[i];
                }
            }
            if (bn->needs_grad) {
                bn->ensure_grad();
                for (int nn = 0; nn < n; ++nn) {
                    const float* gp = g + (nn * (ca + cb) + ca) * plane;
                    float* d = bn->grad.data() + nn * cb * plane;
                    for (std::int64_t i = 0; i < cb * plane; ++i) d[i] += gp[i];
                }
            }
        };
    }
    return Tensor::wrap(out);
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: " + a.shape().str() + " vs " + b.shape().str());
    auto out = new_node(a.shape(), "add");
    const float* av = a.data();
    const float* bv = b.data();
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = av[i] + bv[i];
    if (grad_enabled() && (wants_grad(a) || wants_grad(b))) {
        out->needs_grad = true;
        out->inputs = {a.node(), b.node()};
        auto an = a.node();
        auto bn = b.node();
        out->backward = [an, bn](Node& self) {
            if (an->needs_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
            }
            if (bn->needs_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
            }
        };
    }
    return Tensor::wrap(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: " + a.shape().str() + " vs " + b.shape().str());
    auto out = new_node(a.shape(), "mul_elementwise");
    const float* av = a.data();
    const float* bv = b.data();
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = av[i] * bv[i];
    if (grad_enabled() && (wants_grad(a) || wants_grad(b))) {
        out->needs_grad = true;
        out->inputs = {a.node(), b.node()};
        auto an = a.node();
        auto bn = b.node();
        out->backward = [an, bn](Node& self) {
            if (an->needs_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    an->grad[i] += self.grad[i] * bn->value[i];
            }
            if (bn->needs_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    bn->grad[i] += self.grad[i] * an->value[i];
            }
        };
    }
    return Tensor::wrap(out);
}

Tensor mul_map(const Tensor& x, const Tensor& map) {
    const Shape& xs = x.shape();
    const Shape& ms = map.shape();
    if (ms.rank() != 4 || ms.c() != 1 || xs.rank() != 4 || ms.n() != xs.n() ||
        ms.h() != xs.h() || ms.w() != xs.w())
        throw ShapeError("mul_map: map " + ms.str() + " must be [N,1,H,W] matching " + xs.str());
    int n = xs.n(), c = xs.c();
    std::int64_t plane = static_cast<std::int64_t>(xs.h()) * xs.w();
    auto out = new_node(xs, "mul_map");
    for (int nn = 0; nn < n; ++nn) {
        const float* mp = map.data() + nn * plane;
        for (int cc = 0; cc < c; ++cc) {
            const float* xp = x.data() + (nn * c + cc) * plane;
            float* op = out->value.data() + (nn * c + cc) * plane;
            for (std::int64_t i = 0; i < plane; ++i) op[i] = xp[i] * mp[i];
        }
    }
    if (grad_enabled() && (wants_grad(x) || wants_grad(map))) {
        out->needs_grad = true;
        out->inputs = {x.node(), map.node()};
        auto xn = x.node();
        auto mn = map.node();
        out->backward = [xn, mn, n, c, plane](Node& self) {
            const float* g = self.grad.data();
            if (xn->needs_grad) {
                xn->ensure_grad();
                for (int nn = 0; nn < n; ++nn) {
                    const float* mp = mn->value.data() + nn * plane;
                    for (int cc = 0; cc < c; ++cc) {
                        const float* gp = g + (nn * c + cc) * plane;
                        float* d = xn->grad.data() + (nn * c + cc) * plane;
                        for (std::int64_t i = 0; i < plane; ++i) d[i] += gp[i] * mp[i];
                    }
                }
            }
            if (mn->needs_grad) {
                mn->ensure_grad();
                std::vector<double> acc(static_cast<std::size_t>(plane));
                for (int nn = 0; nn < n; ++nn) {
                    std::fill(acc.begin(), acc.end(), 0.0);
                    for (int cc = 0; cc < c; ++cc) {
                        const float* gp = g + (nn * c + cc) * plane;
                        const float* xp = xn->value.data() + (nn * c + cc) * plane;
                        for (std::int64_t i = 0; i < plane; ++i)
                            acc[static_cast<std::size_t>(i)] +=
                                static_cast<double>(gp[i]) * xp[i];
                    }
                    float* d = mn->grad.data() + nn * plane;
                    for (std::int64_t i = 0; i < plane; ++i)
                        d[i] += static_cast<float>(acc[static_cast<std::size_t>(i)]);
                }
            }
        };
    }
    return Tensor::wrap(out);
}

Tensor affine(const Tensor& x, float a, float b) {
    auto out = new_node(x.shape(), "scale");
    const float* xv = x.data();
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a * xv[i] + b;
    if (grad_enabled() && wants_grad(x)) {
        out->needs_grad = true;
        out->inputs = {x.node()};
        auto xn = x.node();
        out->backward = [xn, a](Node& self) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += a * self.grad[i];
        };
    }
    return Tensor::wrap(out);
}

Tensor sum(const Tensor& x) {
    auto out = new_node(Shape{1}, "sum");
    const float* xv = x.data();
    std::size_t nel = x.values().size();
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 3 < nel; i += 4) {
        s0 += xv[i];
        s1 += xv[i + 1];
        s2 += xv[i + 2];
        s3 += xv[i + 3];
    }
    for (; i < nel; ++i) s0 += xv[i];
    double total = (s0 + s1) + (s2 + s3);
    out->value[0] = static_cast<float>(total);
    out->scalar_f64 = total;
    out->has_scalar_f64 = true;
    if (grad_enabled() && wants_grad(x)) {
        out->needs_grad = true;
        out->inputs = {x.node()};
        auto xn = x.node();
        out->backward = [xn](Node& self) {
            xn->ensure_grad();
            float g = self.grad[0];
            for (auto& d : xn->grad) d += g;
        };
    }
    return Tensor::wrap(out);
}

// ---------------------------------------------------------------------------
// backward sweep

void backward(Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward requires a defined scalar loss");
    Node* root = loss.node().get();
    if (!root->needs_grad) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame {
        Node* n;
        std::size_t i;
    };
    std::vector<Frame> stack;
    stack.push_back({root, 0});
    visited.insert(root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.i < f.n->inputs.size()) {
            Node* child = f.n->inputs[f.i++].get();
            if (child->needs_grad && !visited.count(child)) {
                visited.insert(child);
                stack.push_back({child, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

void check_finite(const Tensor& t, const std::string& what) {
    for (float v : t.values())
        if (!std::isfinite(v)) throw NumericError(what + ": non-finite value in forward data");
    if (t.has_grad())
        for (std::size_t i = 0; i < t.grad().size(); ++i)
            if (!std::isfinite(t.grad()[i]))
                throw NumericError(what + ": non-finite value in gradient");
}

// ---------------------------------------------------------------------------
// finite-difference harness

std::string GradCheckReport::to_string() const {
    std::ostringstream os;
    for (const auto& e : entries) {
        os << "  " << e.name << ": ";
        if (e.skipped_frozen)
            os << "skipped (frozen)";
        else
            os << "max rel err " << e.max_rel_err;
        os << '\n';
    }
    os << "worst " << worst << " -> " << (ok ? "OK" : "FAIL") << '\n';
    return os.str();
}

GradCheckReport grad_check(GradCheckTask& task, double epsilon, double tolerance) {
    GradCheckReport rep;
    std::unordered_set<std::string> frozen(task.frozen.begin(), task.frozen.end());

    for (auto& [name, p] : task.params) p.zero_grad();
    Tensor loss = task.loss();
    if (loss.numel() != 1) throw ContractError("grad_check: loss builder must return a scalar");
    check_finite(loss, "grad_check loss");
    backward(loss);

    auto eval_loss = [&task]() {
        NoGradGuard ng;
        return task.loss().item_f64();
    };

    for (auto& [name, p] : task.params) {
        GradCheckEntry entry;
        entry.name = name;
        if (frozen.count(name)) {
            entry.skipped_frozen = true;
            rep.entries.push_back(std::move(entry));
            continue;
        }
        std::vector<float> analytic(p.values().size(), 0.0f);
        if (p.has_grad()) analytic.assign(p.grad().begin(), p.grad().end());
        for (float v : analytic)
            if (!std::isfinite(v))
                throw NumericError("grad_check: non-finite analytic gradient in parameter " + name);

        float* data = p.data();
        for (std::size_t k = 0; k < analytic.size(); ++k) {
            float orig = data[k];
            data[k] = static_cast<float>(orig + epsilon);
            double lp = eval_loss();
            data[k] = static_cast<float>(orig - epsilon);
            double lm = eval_loss();
            data[k] = orig;
            if (!std::isfinite(lp) || !std::isfinite(lm))
                throw NumericError("grad_check: non-finite loss while probing parameter " + name);
            double numeric = (lp - lm) / (2.0 * epsilon);
            double a = analytic[k];
            double rel = std::fabs(a - numeric) /
                         std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            if (rel > entry.max_rel_err) entry.max_rel_err = rel;
        }
        rep.worst = std::max(rep.worst, entry.max_rel_err);
        if (entry.max_rel_err > tolerance) rep.ok = false;
        rep.entries.push_back(std::move(entry));
    }
    return rep;
}

} // namespace fabcor
