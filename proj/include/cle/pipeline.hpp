#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cle/checkpoint.hpp"
#include "cle/dataset.hpp"
#include "cle/entropy.hpp"
#include "cle/metrics.hpp"
#include "cle/trainer.hpp"

namespace cle {

/// Image size of a dataset: dataset_meta.json's image_size when present,
/// otherwise the size of the first image (which must be square).
std::size_t dataset_image_size(const DatasetManifest& manifest);

struct LoadedDataset {
    DatasetManifest manifest;
    std::vector<GrayImage> images;  // aligned with manifest.records
};

/// Reads the manifest and decodes every image for `spec`. The dataset size
/// must equal the network input, otherwise StructuralError naming the size
/// the architecture expects; individual frames of another size are resized.
LoadedDataset load_dataset(const std::filesystem::path& manifest_path, const NetSpec& spec);

/// Test indices per fold (ascending record order). Every record needs a fold.
std::vector<std::vector<std::size_t>> test_folds(const DatasetManifest& manifest);

/// Test-set scores of one fold, from a CNN checkpoint or the entropy baseline.
struct ScoredFold {
    std::size_t fold = 0;
    std::vector<std::size_t> indices;
    std::vector<ScoredItem> items;
    std::optional<std::size_t> epochs;      // training epochs run (CNN only)
    std::optional<std::size_t> best_epoch;  // epoch of the kept weights (CNN only)
};

std::vector<ScoredFold> scored_folds(const std::vector<FoldOutcome>& outcomes);

inline std::string checkpoint_name(std::size_t fold)
{
    return "fold" + std::to_string(fold) + ".ckpt";
}

/// Loads fold<K>.ckpt for every fold of the manifest from dir.
std::vector<Checkpoint> load_fold_checkpoints(const std::filesystem::path& dir, std::size_t folds);

/// Scores each fold's test images with that fold's checkpoint.
std::vector<ScoredFold> score_with_checkpoints(const LoadedDataset& data, const std::vector<Checkpoint>& checkpoints);

/// Groups entropy scores by test fold. Skipped records simply do not appear.
std::vector<ScoredFold> entropy_folds(const DatasetManifest& manifest, const EntropyScoring& scoring);

} // namespace cle
