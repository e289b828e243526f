#include "cle/pipeline.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "cle/error.hpp"

namespace cle {

std::size_t dataset_image_size(const DatasetManifest& manifest)
{
    const auto meta_path = manifest.base_dir / "dataset_meta.json";
    if (std::filesystem::exists(meta_path)) {
        std::ifstream in(meta_path);
        try {
            const auto meta = nlohmann::json::parse(in);
            if (meta.contains("image_size")) return meta["image_size"].get<std::size_t>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(meta_path.string() + ": " + e.what());
        }
    }
    if (manifest.records.empty()) throw ValidationError("empty manifest");
    const GrayImage first = pgm_read(manifest.resolve(manifest.records.front()));
    if (first.width != first.height)
        throw StructuralError("dataset frames are " + std::to_string(first.width) + "x" + std::to_string(first.height) +
                              " and no dataset_meta.json gives a square size");
    return first.width;
}

LoadedDataset load_dataset(const std::filesystem::path& manifest_path, const NetSpec& spec)
{
    LoadedDataset out;
    out.manifest = read_manifest(manifest_path);
    const std::size_t size = dataset_image_size(out.manifest);
    const std::size_t H = spec.input[1], W = spec.input[2];
    if (size != H || size != W)
        throw StructuralError("dataset images are " + std::to_string(size) + "x" + std::to_string(size) + " but " +
                              spec.name + " expects " + std::to_string(W) + "x" + std::to_string(H) + " input");
    out.images = load_images(out.manifest, size);
    return out;
}

std::vector<std::vector<std::size_t>> test_folds(const DatasetManifest& manifest)
{
    for (const auto& r : manifest.records)
        if (!r.fold) throw ConfigError("record '" + r.path + "' has no fold; run split first");
    std::vector<std::vector<std::size_t>> folds(manifest.fold_count());
    for (std::size_t i = 0; i < manifest.records.size(); ++i) folds[*manifest.records[i].fold].push_back(i);
    for (std::size_t f = 0; f < folds.size(); ++f)
        if (folds[f].empty()) throw ValidationError("fold " + std::to_string(f) + " has no records");
    return folds;
}

std::vector<ScoredFold> scored_folds(const std::vector<FoldOutcome>& outcomes)
{
    std::vector<ScoredFold> out;
    for (const auto& o : outcomes)
        out.push_back({o.training.fold, o.test_indices, o.test_scores, o.training.stopped_epoch, o.training.best_epoch});
    return out;
}

std::vector<Checkpoint> load_fold_checkpoints(const std::filesystem::path& dir, std::size_t folds)
{
    std::vector<Checkpoint> out;
    for (std::size_t f = 0; f < folds; ++f) {
        out.push_back(load_checkpoint(dir / checkpoint_name(f)));
        if (f > 0 && !(out[f].spec == out[0].spec))
            throw CheckpointError(CheckpointError::Kind::SpecMismatch,
                                  checkpoint_name(f) + " holds " + out[f].spec.name + ", " + checkpoint_name(0) +
                                      " holds " + out[0].spec.name);
        if (!out[f].meta.mean_pixel)
            throw ConfigError(checkpoint_name(f) + " carries no training mean pixel");
    }
    return out;
}

std::vector<ScoredFold> score_with_checkpoints(const LoadedDataset& data, const std::vector<Checkpoint>& checkpoints)
{
    const auto folds = test_folds(data.manifest);
    if (checkpoints.size() != folds.size())
        throw ConfigError("manifest has " + std::to_string(folds.size()) + " folds but " +
                          std::to_string(checkpoints.size()) + " checkpoints were given");
    std::vector<ScoredFold> out;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        const Network net = restore(checkpoints[f]);
        std::vector<const GrayImage*> images;
        for (std::size_t i : folds[f]) images.push_back(&data.images[i]);
        const auto probs = score_images(net, *checkpoints[f].meta.mean_pixel, images);
        ScoredFold sf;
        sf.fold = f;
        sf.indices = folds[f];
        for (std::size_t j = 0; j < probs.size(); ++j) sf.items.push_back({probs[j], data.manifest.records[folds[f][j]].label});
        sf.epochs = checkpoints[f].meta.val_accuracy.size();
        sf.best_epoch = checkpoints[f].meta.epoch;
        out.push_back(std::move(sf));
    }
    return out;
}

std::vector<ScoredFold> entropy_folds(const DatasetManifest& manifest, const EntropyScoring& scoring)
{
    const auto folds = test_folds(manifest);
    std::vector<ScoredFold> out(folds.size());
    for (std::size_t f = 0; f < folds.size(); ++f) out[f].fold = f;
    for (std::size_t j = 0; j < scoring.items.size(); ++j) {
        const std::size_t i = scoring.record_index[j];
        auto& sf = out[*manifest.records[i].fold];
        sf.indices.push_back(i);
        sf.items.push_back(scoring.items[j]);
    }
    return out;
}

} // namespace cle
