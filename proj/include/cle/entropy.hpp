#pragma once

#include <string>
#include <vector>

#include "cle/dataset.hpp"
#include "cle/image.hpp"
#include "cle/metrics.hpp"

namespace cle {

/// Shannon entropy of the 256-bin histogram. normalized = raw_bits / 8.
struct EntropyScore {
    double raw_bits = 0.0;
    double normalized = 0.0;
};

EntropyScore image_entropy(const GrayImage& image);

/// Scores a subset of a manifest at full resolution. Unreadable files are
/// skipped and reported; items and record_index stay aligned.
struct EntropyScoring {
    std::vector<ScoredItem> items;
    std::vector<std::size_t> record_index;
    std::vector<std::string> errors;

    std::size_t skipped() const { return errors.size(); }
};

EntropyScoring entropy_classifier(const DatasetManifest& manifest, const std::vector<std::size_t>& indices);
EntropyScoring entropy_classifier(const DatasetManifest& manifest);

/// CSV with header path,label,entropy_norm.
std::string entropy_csv(const DatasetManifest& manifest, const EntropyScoring& scoring);

} // namespace cle
