#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cle/checkpoint.hpp"
#include "cle/dataset.hpp"
#include "cle/image.hpp"
#include "cle/metrics.hpp"
#include "cle/network.hpp"

namespace cle {

struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 40;
    double lr_decay_factor = 0.1;
    std::size_t lr_decay_step = 10;
    std::size_t patience = 3;
    std::uint64_t seed = 42;

    /// Throws ConfigError naming the first violated bound.
    void validate() const;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Missing keys keep their defaults; unknown keys are a ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const TrainConfig& config);
TrainConfig load_train_config(const std::filesystem::path& path);

/// Learning rate for a 1-based epoch: base * factor^floor((epoch-1)/step).
double learning_rate_at(const TrainConfig& config, std::size_t epoch);

/// v = momentum*v - lr*(g + weight_decay*w); w += v; then zero the gradients.
void sgd_step(Params& params, double lr, double momentum, double weight_decay);
void sgd_step(const std::vector<Params*>& params, double lr, double momentum, double weight_decay);

/// Stops once validation accuracy has not improved for `patience` epochs or
/// validation loss has risen for `patience` consecutive epochs. The best
/// epoch is the first one reaching the highest accuracy.
class EarlyStopper {
public:
    explicit EarlyStopper(std::size_t patience);

    /// Feeds one epoch; returns true when training should stop.
    bool update(double val_accuracy, double val_loss);
    /// True when the last update set a new best.
    bool improved() const { return improved_; }
    std::size_t best_epoch() const { return best_epoch_; }  // 1-based, 0 before any update
    double best_accuracy() const { return best_accuracy_; }

private:
    std::size_t patience_;
    std::size_t epoch_ = 0;
    std::size_t best_epoch_ = 0;
    double best_accuracy_ = 0.0;
    std::size_t since_best_ = 0;
    std::size_t loss_rises_ = 0;
    double last_loss_ = std::numeric_limits<double>::infinity();
    bool improved_ = false;
};

/// Non-owning view of a labeled image set.
struct LabeledImages {
    std::vector<const GrayImage*> images;
    std::vector<Label> labels;

    std::size_t size() const { return images.size(); }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double learning_rate = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct FoldResult {
    std::size_t fold = 0;
    Checkpoint best;
    std::vector<EpochRecord> history;
    std::size_t stopped_epoch = 0;
    std::size_t best_epoch = 0;
};

using EpochCallback = std::function<void(std::size_t fold, const EpochRecord&)>;

/// Trains a fresh network (initialized from config.seed) on `train`, early
/// stopping on `val`. The mean pixel comes from the training images and is
/// stored with the returned best checkpoint.
FoldResult train_fold(const NetSpec& spec, const LabeledImages& train, const LabeledImages& val,
                      const TrainConfig& config, std::size_t fold = 0, const EpochCallback& on_epoch = {});

/// P(diagnostic) per image, evaluated in fixed-size chunks.
std::vector<double> score_images(const Network& net, double mean_pixel, const std::vector<const GrayImage*>& images);

/// Mean cross-entropy and accuracy (diagnostic iff p >= 0.5).
struct Evaluation {
    double loss = 0.0;
    double accuracy = 0.0;
};
Evaluation evaluate(const Network& net, double mean_pixel, const LabeledImages& set);

/// Fills a [N,1,H,W] batch from images[order[begin..end)].
Tensor make_batch(const std::vector<const GrayImage*>& images, const std::vector<std::size_t>& order,
                  std::size_t begin, std::size_t end, double mean_pixel);

/// CSV with header epoch,train_loss,val_loss,val_acc.
std::string curves_csv(const std::vector<EpochRecord>& history);

struct FoldOutcome {
    FoldResult training;
    std::vector<std::size_t> test_indices;  // manifest record indices, ascending
    std::vector<ScoredItem> test_scores;    // aligned with test_indices
};

/// Worker cap from CLE_TRIAGE_THREADS, else the number of logical cores.
std::size_t worker_threads();

/// k-fold cross-validation over a fold-assigned manifest: for fold f the test
/// set is fold f, the rest is split 3:1 into train and validation. Folds run
/// concurrently (up to worker_threads()) and results are ordered by fold.
/// images[i] is the decoded image of manifest.records[i].
std::vector<FoldOutcome> cross_validate(const DatasetManifest& manifest, const std::vector<GrayImage>& images,
                                        const NetSpec& spec, const TrainConfig& config,
                                        const EpochCallback& on_epoch = {});

} // namespace cle
