#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cle/metrics.hpp"
#include "cle/pipeline.hpp"

namespace cle {

struct FoldReport {
    std::size_t fold = 0;
    ConfusionCounts counts;  // at the run's threshold
    Rates rates;
    std::optional<double> auc;  // undefined when the fold holds one class only
    std::optional<ThresholdChoice> best_threshold;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> best_epoch;
};

FoldReport fold_report(const ScoredFold& fold, double threshold);

/// Arithmetic means over folds; a field is undefined if any fold's is.
struct MeanReport {
    std::optional<double> accuracy, sensitivity, specificity, auc;
    std::optional<double> best_threshold_sensitivity, best_threshold_specificity;
};
MeanReport mean_report(const std::vector<FoldReport>& folds);

struct Timings {
    double wall_seconds = 0.0;
    double scoring_seconds = 0.0;
    std::size_t scored_images = 0;
};

struct RunInfo {
    std::string kind;                // "cnn" or "entropy"
    std::optional<std::string> arch;
    double threshold = 0.5;
    nlohmann::ordered_json config;   // training config echo, null if none
    std::size_t records = 0;
    std::size_t skipped = 0;
};

/// Published results on the private clinical data matching this run's kind,
/// architecture family and threshold, for side-by-side reading only.
nlohmann::ordered_json reference_values(const RunInfo& info);

nlohmann::ordered_json build_report(const RunInfo& info, const std::vector<FoldReport>& folds, const Timings& timings);

/// Report text without the "timings" block, for byte comparisons.
std::string report_without_timings(const nlohmann::ordered_json& report);

std::string roc_svg(const std::vector<RocCurve>& folds, const RocCurve& mean, const std::string& title);

/// Writes roc_fold<K>.csv, roc_mean.csv and roc.svg into dir.
void write_roc_files(const std::filesystem::path& dir, const std::vector<ScoredFold>& folds, const std::string& title);

void write_text(const std::filesystem::path& path, const std::string& text);

} // namespace cle
