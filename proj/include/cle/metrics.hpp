#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cle/dataset.hpp"

namespace cle {

struct ScoredItem {
    double score = 0.0;  // probability of being diagnostic
    Label truth = Label::Nondiagnostic;
};

struct ConfusionCounts {
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::uint64_t total() const { return tp + fp + tn + fn; }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Diagnostic iff score >= threshold. Empty input, a threshold outside
/// [0,1] or a score outside [0,1] is a ValidationError.
ConfusionCounts classify_at_threshold(std::span<const ScoredItem> items, double threshold);

/// Undefined rates (zero denominators) are nullopt, never 0.
struct Rates {
    std::optional<double> accuracy;
    std::optional<double> sensitivity;
    std::optional<double> specificity;
};

Rates rates(const ConfusionCounts& c);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
    double threshold = 0.0;  // +inf / -inf for the sentinels, NaN on averaged curves
};

struct RocCurve {
    std::vector<RocPoint> points;
    double auc = 0.0;
};

/// Threshold sweep over every distinct score plus +inf and -inf sentinels;
/// AUC by the trapezoid rule. Needs both classes present.
RocCurve roc_curve(std::span<const ScoredItem> items);

/// Vertical averaging on the FPR grid 0, 0.001, ..., 1 (upper envelope where
/// a curve is vertical), with (0,0) prepended. auc is the mean fold AUC.
RocCurve mean_roc(std::span<const RocCurve> curves);

inline constexpr std::size_t kRocGridPoints = 1001;

/// TPR of a curve at a given FPR: linear interpolation, upper envelope on
/// vertical runs.
double tpr_at(const RocCurve& curve, double fpr);

/// Threshold with the highest accuracy among the curve's thresholds (ties to
/// the higher threshold), with its counts.
struct ThresholdChoice {
    double threshold = 0.0;
    ConfusionCounts counts;
};
ThresholdChoice best_accuracy_threshold(std::span<const ScoredItem> items);

/// CSV with header fpr,tpr,threshold.
std::string roc_csv(const RocCurve& curve);

} // namespace cle
