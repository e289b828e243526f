#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cle/image.hpp"

namespace cle {

/// Class labels; the diagnostic class is the positive one and matches the
/// network's output index 1.
enum class Label : int { Nondiagnostic = 0, Diagnostic = 1 };

std::string to_string(Label label);
Label label_from_string(const std::string& name);

struct ManifestRecord {
    std::string path;  // relative to the manifest's directory unless absolute
    Label label = Label::Nondiagnostic;
    std::optional<std::size_t> fold;
    std::optional<std::string> patient;

    friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;
    std::filesystem::path base_dir;  // directory the relative paths resolve against

    std::filesystem::path resolve(const ManifestRecord& r) const;
    std::vector<Label> labels() const;
    std::size_t fold_count() const;  // 1 + max fold; 0 when no record has a fold
};

/// JSON lines, one {"path","label","fold"[,"patient"]} object per line.
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
std::string manifest_line(const ManifestRecord& record);

/// Per class: shuffle with the seed, then cut into k folds of floor(n/k)
/// with the n mod k remainder going to the last folds. Returns the fold of
/// every index. With groups (e.g. patient ids) whole groups move together
/// and the per-class arithmetic only holds approximately.
std::vector<std::size_t> stratified_kfold(const std::vector<Label>& labels, std::size_t k, std::uint64_t seed,
                                          const std::vector<std::string>* groups = nullptr);

/// Per-class 3:1 train/validation split of the given indices. The validation
/// share is n/4 rounded to nearest, halves going to train.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> train_val_split(
    const std::vector<std::size_t>& indices, const std::vector<Label>& labels, std::uint64_t seed);

/// Number of validation items train_val_split takes from a class of n.
std::size_t validation_count(std::size_t n);

/// Loads every record, resizing to size x size when the file differs.
std::vector<GrayImage> load_images(const DatasetManifest& manifest, std::optional<std::size_t> size);

} // namespace cle
