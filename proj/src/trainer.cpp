#include "cle/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

#include "cle/error.hpp"
#include "cle/random.hpp"

namespace cle {

namespace {

constexpr std::size_t kEvalChunk = 64;
constexpr std::uint64_t kDropoutStream = 0xd1b54a32d192ed03ull;

std::string fmt(double v)
{
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

Tensor one_hot(const std::vector<Label>& labels, const std::vector<std::size_t>& order, std::size_t begin,
               std::size_t end, std::size_t classes)
{
    Tensor t({end - begin, classes});
    for (std::size_t i = begin; i < end; ++i) t[(i - begin) * classes + static_cast<std::size_t>(labels[order[i]])] = 1.0f;
    return t;
}

void check_sizes(const NetSpec& spec, const LabeledImages& set, const char* which)
{
    if (set.images.size() != set.labels.size())
        throw ConfigError(std::string(which) + " set has mismatched image and label counts");
    const std::size_t H = spec.input[1], W = spec.input[2];
    for (const auto* img : set.images)
        if (img->width != W || img->height != H)
            throw StructuralError(std::string(which) + " image is " + std::to_string(img->width) + "x" +
                                  std::to_string(img->height) + " but " + spec.name + " expects " +
                                  std::to_string(W) + "x" + std::to_string(H));
}

std::vector<std::size_t> identity_order(std::size_t n)
{
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    return order;
}

} // namespace

void TrainConfig::validate() const
{
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("learning_rate must be > 0, got " + fmt(learning_rate));
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1), got " + fmt(momentum));
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0, got " + fmt(weight_decay));
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0))
        throw ConfigError("lr_decay_factor must be in (0,1], got " + fmt(lr_decay_factor));
    if (lr_decay_step < 1) throw ConfigError("lr_decay_step must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
}

TrainConfig train_config_from_json(const nlohmann::json& j)
{
    if (!j.is_object()) throw ConfigError("training config must be a JSON object");
    TrainConfig c;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "learning_rate") c.learning_rate = value.get<double>();
            else if (key == "momentum") c.momentum = value.get<double>();
            else if (key == "weight_decay") c.weight_decay = value.get<double>();
            else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
            else if (key == "max_epochs") c.max_epochs = value.get<std::size_t>();
            else if (key == "lr_decay_factor") c.lr_decay_factor = value.get<double>();
            else if (key == "lr_decay_step") c.lr_decay_step = value.get<std::size_t>();
            else if (key == "patience") c.patience = value.get<std::size_t>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else throw ConfigError("unknown training config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad training config value: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::ordered_json to_json(const TrainConfig& c)
{
    nlohmann::ordered_json j;
    j["learning_rate"] = c.learning_rate;
    j["momentum"] = c.momentum;
    j["weight_decay"] = c.weight_decay;
    j["batch_size"] = c.batch_size;
    j["max_epochs"] = c.max_epochs;
    j["lr_decay_factor"] = c.lr_decay_factor;
    j["lr_decay_step"] = c.lr_decay_step;
    j["patience"] = c.patience;
    j["seed"] = c.seed;
    return j;
}

TrainConfig load_train_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    try {
        return train_config_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

double learning_rate_at(const TrainConfig& config, std::size_t epoch)
{
    const std::size_t drops = epoch == 0 ? 0 : (epoch - 1) / config.lr_decay_step;
    return config.learning_rate * std::pow(config.lr_decay_factor, static_cast<double>(drops));
}

void sgd_step(Params& p, double lr, double momentum, double weight_decay)
{
    auto update = [&](Tensor& w, Tensor& g, Tensor& v) {
        float* wp = w.raw();
        float* gp = g.raw();
        float* vp = v.raw();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double vel = momentum * vp[i] - lr * (gp[i] + weight_decay * wp[i]);
            vp[i] = static_cast<float>(vel);
            wp[i] = static_cast<float>(wp[i] + vel);
        }
        g.zero();
    };
    update(p.weights, p.weight_grad, p.weight_velocity);
    update(p.bias, p.bias_grad, p.bias_velocity);
}

void sgd_step(const std::vector<Params*>& params, double lr, double momentum, double weight_decay)
{
    for (Params* p : params) sgd_step(*p, lr, momentum, weight_decay);
}

EarlyStopper::EarlyStopper(std::size_t patience) : patience_(patience)
{
    if (patience < 1) throw ConfigError("patience must be >= 1");
}

bool EarlyStopper::update(double val_accuracy, double val_loss)
{
    ++epoch_;
    improved_ = best_epoch_ == 0 || val_accuracy > best_accuracy_;
    if (improved_) {
        best_epoch_ = epoch_;
        best_accuracy_ = val_accuracy;
        since_best_ = 0;
    } else {
        ++since_best_;
    }
    loss_rises_ = val_loss > last_loss_ ? loss_rises_ + 1 : 0;
    last_loss_ = val_loss;
    return since_best_ >= patience_ || loss_rises_ >= patience_;
}

Tensor make_batch(const std::vector<const GrayImage*>& images, const std::vector<std::size_t>& order,
                  std::size_t begin, std::size_t end, double mean_pixel)
{
    const GrayImage& first = *images[order[begin]];
    const std::size_t plane = first.width * first.height;
    Tensor batch({end - begin, 1, first.height, first.width});
    for (std::size_t i = begin; i < end; ++i) normalize_into(*images[order[i]], mean_pixel, batch.raw() + (i - begin) * plane);
    return batch;
}

std::vector<double> score_images(const Network& net, double mean_pixel, const std::vector<const GrayImage*>& images)
{
    std::vector<double> out;
    out.reserve(images.size());
    const auto order = identity_order(images.size());
    for (std::size_t b = 0; b < images.size(); b += kEvalChunk) {
        const std::size_t e = std::min(images.size(), b + kEvalChunk);
        const auto probs = positive_probabilities(net.predict(make_batch(images, order, b, e, mean_pixel)));
        out.insert(out.end(), probs.begin(), probs.end());
    }
    return out;
}

Evaluation evaluate(const Network& net, double mean_pixel, const LabeledImages& set)
{
    if (set.size() == 0) throw ConfigError("cannot evaluate an empty set");
    const auto order = identity_order(set.size());
    double loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < set.size(); b += kEvalChunk) {
        const std::size_t e = std::min(set.size(), b + kEvalChunk);
        const Tensor logits = net.predict(make_batch(set.images, order, b, e, mean_pixel));
        loss += softmax_cross_entropy(logits, one_hot(set.labels, order, b, e, net.spec().classes)).value *
                static_cast<double>(e - b);
        const auto probs = positive_probabilities(logits);
        for (std::size_t i = b; i < e; ++i)
            correct += (probs[i - b] >= 0.5) == (set.labels[i] == Label::Diagnostic);
    }
    const double n = static_cast<double>(set.size());
    return {loss / n, static_cast<double>(correct) / n};
}

FoldResult train_fold(const NetSpec& spec, const LabeledImages& train, const LabeledImages& val,
                      const TrainConfig& config, std::size_t fold, const EpochCallback& on_epoch)
{
    config.validate();
    if (train.size() == 0) throw ConfigError("fold " + std::to_string(fold) + ": empty training set");
    if (val.size() == 0) throw ConfigError("fold " + std::to_string(fold) + ": empty validation set");
    check_sizes(spec, train, "training");
    check_sizes(spec, val, "validation");

    const double mean = mean_pixel(train.images);
    Network net(spec, config.seed);
    net.seed_dropout(config.seed ^ kDropoutStream);
    EarlyStopper stopper(config.patience);

    FoldResult result;
    result.fold = fold;
    std::vector<double> val_history;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const double lr = learning_rate_at(config, epoch);
        auto order = identity_order(train.size());
        std::mt19937_64 shuffle_rng(config.seed + epoch);
        fisher_yates(order, shuffle_rng);

        double loss_sum = 0.0;
        for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
            const std::size_t e = std::min(order.size(), b + config.batch_size);
            const Tensor logits = net.forward(make_batch(train.images, order, b, e, mean), Mode::Train);
            const auto loss = softmax_cross_entropy(logits, one_hot(train.labels, order, b, e, spec.classes));
            net.zero_grad();
            net.backward(loss.gradient);
            sgd_step(net.params(), lr, config.momentum, config.weight_decay);
            loss_sum += loss.value * static_cast<double>(e - b);
        }
        const double train_loss = loss_sum / static_cast<double>(train.size());
        if (!std::isfinite(train_loss))
            throw ConfigError("fold " + std::to_string(fold) + ": training diverged at epoch " + std::to_string(epoch) +
                              " (lower the learning rate)");

        const Evaluation ev = evaluate(net, mean, val);
        const EpochRecord rec{epoch, lr, train_loss, ev.loss, ev.accuracy};
        result.history.push_back(rec);
        val_history.push_back(ev.accuracy);
        if (on_epoch) on_epoch(fold, rec);

        const bool stop = stopper.update(ev.accuracy, ev.loss);
        if (stopper.improved()) result.best = snapshot(net, {fold, epoch, config.seed, val_history, mean});
        result.stopped_epoch = epoch;
        if (stop) break;
    }
    result.best_epoch = stopper.best_epoch();
    result.best.meta.val_accuracy = val_history;
    return result;
}

std::string curves_csv(const std::vector<EpochRecord>& history)
{
    std::string out = "epoch,train_loss,val_loss,val_acc\n";
    for (const auto& r : history)
        out += std::to_string(r.epoch) + "," + fmt(r.train_loss) + "," + fmt(r.val_loss) + "," + fmt(r.val_accuracy) + "\n";
    return out;
}

std::size_t worker_threads()
{
    if (const char* env = std::getenv("CLE_TRIAGE_THREADS"); env && *env) {
        std::size_t n = 0;
        const char* end = env + std::char_traits<char>::length(env);
        const auto res = std::from_chars(env, end, n);
        if (res.ec != std::errc() || res.ptr != end || n == 0)
            throw ConfigError(std::string("CLE_TRIAGE_THREADS must be a positive integer, got '") + env + "'");
        return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<FoldOutcome> cross_validate(const DatasetManifest& manifest, const std::vector<GrayImage>& images,
                                        const NetSpec& spec, const TrainConfig& config, const EpochCallback& on_epoch)
{
    config.validate();
    if (images.size() != manifest.records.size())
        throw ConfigError("loaded " + std::to_string(images.size()) + " images for " +
                          std::to_string(manifest.records.size()) + " manifest records");
    for (const auto& r : manifest.records)
        if (!r.fold) throw ConfigError("record '" + r.path + "' has no fold; run split first");
    const std::size_t k = manifest.fold_count();
    if (k < 2) throw ValidationError("cross-validation needs at least 2 folds, manifest has " + std::to_string(k));
    const auto labels = manifest.labels();

    struct Plan {
        std::vector<std::size_t> test, train, val;
    };
    std::vector<Plan> plans(k);
    for (std::size_t f = 0; f < k; ++f) {
        std::vector<std::size_t> rest;
        for (std::size_t i = 0; i < labels.size(); ++i) (*manifest.records[i].fold == f ? plans[f].test : rest).push_back(i);
        if (plans[f].test.empty()) throw ValidationError("fold " + std::to_string(f) + " has no test items");
        std::tie(plans[f].train, plans[f].val) = train_val_split(rest, labels, config.seed + f);
    }

    auto view = [&](const std::vector<std::size_t>& idx) {
        LabeledImages s;
        for (std::size_t i : idx) {
            s.images.push_back(&images[i]);
            s.labels.push_back(labels[i]);
        }
        return s;
    };

    std::mutex callback_mutex;
    EpochCallback locked;
    if (on_epoch)
        locked = [&](std::size_t fold, const EpochRecord& rec) {
            std::lock_guard lock(callback_mutex);
            on_epoch(fold, rec);
        };

    std::vector<FoldOutcome> out(k);
    std::vector<std::exception_ptr> errors(k);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t f; (f = next.fetch_add(1)) < k;) {
            try {
                FoldOutcome& o = out[f];
                o.training = train_fold(spec, view(plans[f].train), view(plans[f].val), config, f, locked);
                const Network best = restore(o.training.best);
                const auto test = view(plans[f].test);
                const auto probs = score_images(best, *o.training.best.meta.mean_pixel, test.images);
                o.test_indices = plans[f].test;
                for (std::size_t j = 0; j < probs.size(); ++j) o.test_scores.push_back({probs[j], test.labels[j]});
            } catch (...) {
                errors[f] = std::current_exception();
            }
        }
    };
    const std::size_t n_workers = std::min(k, worker_threads());
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n_workers; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

} // namespace cle
