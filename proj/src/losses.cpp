// SPDX-License-Identifier: Apache-2.0
#include "fabcor/losses.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace fabcor {

namespace {

constexpr double kClampEps = 1e-7;

void require_same_shape(const Tensor& pred, const Tensor& target, const char* what) {
    if (pred.shape() != target.shape())
        throw ShapeError(std::string(what) + ": pred " + pred.shape().str() + " vs target " +
                         target.shape().str());
}

} // namespace

Tensor bce_loss(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "bce_loss");
    const std::size_t n = pred.values().size();
    const float* p = pred.data();
    const float* y = target.data();

    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double pc = std::clamp(static_cast<double>(p[i]), kClampEps, 1.0 - kClampEps);
        acc += -(y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc));
    }
    double mean = acc / static_cast<double>(n);

    auto out = Tensor::from_vector(Shape{1}, {static_cast<float>(mean)});
    out.node()->op = "bce_loss";
    out.node()->scalar_f64 = mean;
    out.node()->has_scalar_f64 = true;

    if (grad_enabled() && pred.node()->needs_grad) {
        out.node()->needs_grad = true;
        out.node()->inputs = {pred.node(), target.node()};
        auto pn = pred.node();
        auto tn = target.node();
        out.node()->backward = [pn, tn, n](detail::Node& self) {
            pn->ensure_grad();
            float g = self.grad[0];
            double inv_n = 1.0 / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                double pv = pn->value[i];
                if (pv <= kClampEps || pv >= 1.0 - kClampEps) continue; // clamp region
                double d = (pv - tn->value[i]) / (pv * (1.0 - pv)) * inv_n;
                pn->grad[i] += static_cast<float>(g * d);
            }
        };
    }
    return out;
}

Tensor dice_loss(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "dice_loss");
    const std::size_t n = pred.values().size();
    const float* p = pred.data();
    const float* y = target.data();

    const double smooth = 1.0;
    double inter = 0.0, sum_p = 0.0, sum_y = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        inter += static_cast<double>(p[i]) * y[i];
        sum_p += p[i];
        sum_y += y[i];
    }
    double denom = sum_p + sum_y + smooth;
    double loss = 1.0 - (2.0 * inter + smooth) / denom;

    auto out = Tensor::from_vector(Shape{1}, {static_cast<float>(loss)});
    out.node()->op = "dice_loss";
    out.node()->scalar_f64 = loss;
    out.node()->has_scalar_f64 = true;

    if (grad_enabled() && pred.node()->needs_grad) {
        out.node()->needs_grad = true;
        out.node()->inputs = {pred.node(), target.node()};
        auto pn = pred.node();
        auto tn = target.node();
        double num = 2.0 * inter + smooth;
        out.node()->backward = [pn, tn, n, num, denom](detail::Node& self) {
            pn->ensure_grad();
            float g = self.grad[0];
            double inv_d2 = 1.0 / (denom * denom);
            for (std::size_t i = 0; i < n; ++i) {
                double d = -(2.0 * tn->value[i] * denom - num) * inv_d2;
                pn->grad[i] += static_cast<float>(g * d);
            }
        };
    }
    return out;
}

Tensor combined_loss(const Tensor& pred, const Tensor& target) {
    Tensor bce = bce_loss(pred, target);
    Tensor dice = dice_loss(pred, target);
    Tensor out = add(bce, affine(dice, 0.5f, 0.0f));
    // keep the f64 reading exact for the finite-difference harness
    out.node()->scalar_f64 = bce.item_f64() + 0.5 * dice.item_f64();
    out.node()->has_scalar_f64 = true;
    return out;
}

double iou(const BitMask& pred, const BitMask& truth) {
    require_same_dims(pred, truth, "iou");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.pix.size(); ++i) {
        inter += pred.pix[i] & truth.pix[i];
        uni += pred.pix[i] | truth.pix[i];
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

MetricSummary summarize(const std::vector<double>& ious) {
    if (ious.empty()) throw ContractError("summarize: empty IoU list");
    MetricSummary s;
    s.n_samples = ious.size();
    std::vector<double> v = ious;
    std::sort(v.begin(), v.end());
    s.min_iou = v.front();
    s.max_iou = v.back();
    double acc = 0.0;
    for (double x : v) acc += x;
    s.average_iou = acc / static_cast<double>(v.size());
    std::size_t m = v.size() / 2;
    s.median_iou = v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
    return s;
}

MetricSummary median_of_runs(const std::vector<MetricSummary>& runs) {
    if (runs.empty()) throw ContractError("median_of_runs: empty run list");
    auto med = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        std::size_t m = v.size() / 2;
        return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
    };
    std::vector<double> avg, mn, mx, md;
    std::size_t n = 0;
    for (const auto& r : runs) {
        avg.push_back(r.average_iou);
        mn.push_back(r.min_iou);
        mx.push_back(r.max_iou);
        md.push_back(r.median_iou);
        n += r.n_samples;
    }
    MetricSummary s;
    s.average_iou = med(avg);
    s.min_iou = med(mn);
    s.max_iou = med(mx);
    s.median_iou = med(md);
    s.n_samples = n;
    return s;
}

std::string metric_csv_header() { return "run_id,model,avg_iou,min_iou,median_iou,max_iou,n"; }

std::string metric_csv_row(const std::string& run_id, const std::string& model,
                           const MetricSummary& s) {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed << run_id << ',' << model << ',' << s.average_iou << ',' << s.min_iou << ','
       << s.median_iou << ',' << s.max_iou << ',' << s.n_samples;
    return os.str();
}

} // namespace fabcor
