// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fabcor/errors.hpp"

namespace fabcor {

// Tensor shape, up to four axes in (batch, channel, height, width) order.
// Scalars are rank-1 tensors with a single element.
struct Shape {
    std::vector<int> dims;

    Shape() = default;
    Shape(std::initializer_list<int> d) : dims(d) {}
    explicit Shape(std::vector<int> d) : dims(std::move(d)) {}

    int rank() const { return static_cast<int>(dims.size()); }
    std::int64_t numel() const {
        std::int64_t n = 1;
        for (int d : dims) n *= d;
        return dims.empty() ? 0 : n;
    }
    int operator[](int i) const { return dims[static_cast<std::size_t>(i)]; }
    bool operator==(const Shape& o) const { return dims == o.dims; }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    // 4-D accessors; throw on lower rank.
    int n() const { return dim4(0); }
    int c() const { return dim4(1); }
    int h() const { return dim4(2); }
    int w() const { return dim4(3); }

    std::string str() const;

private:
    int dim4(int i) const {
        if (rank() != 4) throw ShapeError("expected a 4-D tensor, got " + str());
        return dims[static_cast<std::size_t>(i)];
    }
};

namespace detail {

struct Node {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad; // empty until gradient first flows here
    bool requires_grad = false; // leaf parameter flag
    bool needs_grad = false;    // leaf flag or depends on a leaf that has it
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    // Pulls this node's grad into the inputs' grads. Null for leaves and for
    // nodes built while gradients were globally disabled.
    std::function<void(Node&)> backward;
    // Scalar-producing ops keep their 64-bit reduction result here so the
    // finite-difference harness is not limited by float32 loss readout.
    double scalar_f64 = 0.0;
    bool has_scalar_f64 = false;

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0f);
    }
};

} // namespace detail

// Handle to a node of the recorded computation graph. Copies share state.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float v, bool requires_grad = false);
    static Tensor from_vector(Shape shape, std::vector<float> data, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

    float* data() { return node_->value.data(); }
    const float* data() const { return node_->value.data(); }
    std::vector<float>& values() { return node_->value; }
    const std::vector<float>& values() const { return node_->value; }

    bool has_grad() const { return !node_->grad.empty(); }
    float* grad_data() { return node_->grad.data(); }
    const float* grad_data() const { return node_->grad.data(); }
    const std::vector<float>& grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool f) {
        node_->requires_grad = f;
        node_->needs_grad = f;
    }

    float item() const {
        if (numel() != 1) throw ContractError("item() on non-scalar tensor");
        return node_->value[0];
    }
    // Best available double-precision reading of a scalar.
    double item_f64() const {
        if (numel() != 1) throw ContractError("item_f64() on non-scalar tensor");
        return node_->has_scalar_f64 ? node_->scalar_f64 : static_cast<double>(node_->value[0]);
    }

    const char* op() const { return node_->op; }
    const std::shared_ptr<detail::Node>& node() const { return node_; }

    static Tensor wrap(std::shared_ptr<detail::Node> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<detail::Node> node_;
};

// Gradient recording is on by default; evaluation loops turn it off to skip
// closure construction. Forward numerics are identical either way.
bool grad_enabled();
void set_grad_enabled(bool);
struct NoGradGuard {
    NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
    ~NoGradGuard() { set_grad_enabled(prev_); }

private:
    bool prev_;
};

// Deterministic worker-thread count for the conv kernels (each output element
// is produced by exactly one thread with a fixed accumulation order, so the
// results are bit-identical for any setting).
int num_threads();
void set_num_threads(int n);

enum class Padding { same, valid };

// input [N,Cin,H,W] * weight [Cout,Cin,Kh,Kw] + bias [Cout] -> [N,Cout,H',W'].
// Odd kernels only; zero fill for same padding; 64-bit accumulators.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              Padding padding = Padding::same, int stride = 1);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor maxpool2x2(const Tensor& x);
Tensor upsample2x(const Tensor& x);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// x [N,C,H,W] * map [N,1,H,W], map broadcast across channels.
Tensor mul_map(const Tensor& x, const Tensor& map);
// a*x + b, elementwise with scalar coefficients.
Tensor affine(const Tensor& x, float a, float b);
Tensor sum(const Tensor& x);

// Reverse-mode sweep from a scalar loss. Gradients accumulate additively into
// every reachable tensor whose needs_grad flag is set.
void backward(Tensor& loss);

// Throws NumericError when a non-finite value is present.
void check_finite(const Tensor& t, const std::string& what);

// ---- finite-difference verification harness ----

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    bool skipped_frozen = false;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double worst = 0.0;
    bool ok = true;
    std::string to_string() const;
};

struct GradCheckTask {
    // Parameters probed one element at a time; frozen ones are only listed.
    std::vector<std::pair<std::string, Tensor>> params;
    std::vector<std::string> frozen;
    // Rebuilds the graph from current parameter values and returns the loss.
    std::function<Tensor()> loss;
};

// Central differences against the analytic backward pass. Relative error is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
GradCheckReport grad_check(GradCheckTask& task, double epsilon, double tolerance);

} // namespace fabcor
