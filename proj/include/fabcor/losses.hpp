// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "fabcor/image.hpp"
#include "fabcor/tensor.hpp"

namespace fabcor {

// Mean binary cross-entropy. pred holds probabilities (clamped internally to
// [1e-7, 1-1e-7]); target holds 0/1 values and receives no gradient.
Tensor bce_loss(const Tensor& pred, const Tensor& target);

// Soft dice loss over the whole batch, smoothing 1.0.
Tensor dice_loss(const Tensor& pred, const Tensor& target);

// bce + 0.5 * dice.
Tensor combined_loss(const Tensor& pred, const Tensor& target);

// Intersection-over-union of two binary masks; 1.0 when both are empty.
double iou(const BitMask& pred, const BitMask& truth);

struct MetricSummary {
    double average_iou = 0.0;
    double min_iou = 0.0;
    double max_iou = 0.0;
    double median_iou = 0.0;
    std::size_t n_samples = 0;
};

MetricSummary summarize(const std::vector<double>& ious);

// Field-wise median across runs (the five-runs protocol).
MetricSummary median_of_runs(const std::vector<MetricSummary>& runs);

// One CSV row: run_id,model,avg,min,median,max,n
std::string metric_csv_row(const std::string& run_id, const std::string& model,
                           const MetricSummary& s);
std::string metric_csv_header();

} // namespace fabcor
