#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <random>
#include <set>

#include "cle/error.hpp"
#include "cle/trainer.hpp"

using namespace cle;

namespace {

Params scalar_param(float w, float g)
{
    Params p({1}, {1});
    p.weights[0] = w;
    p.weight_grad[0] = g;
    return p;
}

NetSpec tiny_spec()
{
    return SpecBuilder("tiny", {1, 16, 16}, 2).conv(4, 3, 1, 1).relu().maxpool(2, 2, 0).fc(2).build();
}

// Bright-centred images are diagnostic, dark-centred ones are not.
std::vector<GrayImage> toy_images(std::size_t n, std::uint64_t seed, std::vector<Label>& labels)
{
    std::mt19937_64 rng(seed);
    std::vector<GrayImage> out;
    for (std::size_t i = 0; i < n; ++i) {
        const bool diag = i % 2 == 0;
        GrayImage img(16, 16);
        for (std::size_t y = 0; y < 16; ++y)
            for (std::size_t x = 0; x < 16; ++x) {
                const bool centre = x >= 5 && x < 11 && y >= 5 && y < 11;
                const int base = centre ? (diag ? 200 : 40) : 110;
                img.at(x, y) = static_cast<std::uint8_t>(base + static_cast<int>(rng() % 30));
            }
        out.push_back(std::move(img));
        labels.push_back(diag ? Label::Diagnostic : Label::Nondiagnostic);
    }
    return out;
}

LabeledImages view(const std::vector<GrayImage>& images, const std::vector<Label>& labels, std::size_t begin,
                   std::size_t end)
{
    LabeledImages s;
    for (std::size_t i = begin; i < end; ++i) {
        s.images.push_back(&images[i]);
        s.labels.push_back(labels[i]);
    }
    return s;
}

} // namespace

TEST_CASE("sgd step arithmetic")
{
    SUBCASE("lr 0 leaves weights bit-identical")
    {
        auto p = scalar_param(0.123456f, 3.0f);
        sgd_step(p, 0.0, 0.9, 5e-4);
        CHECK(p.weights[0] == 0.123456f);
        CHECK(p.weight_grad[0] == 0.0f);
    }

    SUBCASE("hand computed single step")
    {
        auto p = scalar_param(1.0f, 0.5f);
        sgd_step(p, 0.1, 0.0, 0.0);
        CHECK(p.weights[0] == doctest::Approx(0.95).epsilon(1e-7));
    }

    SUBCASE("momentum and decay follow the update rule")
    {
        auto p = scalar_param(2.0f, 1.0f);
        p.weight_velocity[0] = 0.5f;
        sgd_step(p, 0.1, 0.9, 0.01);
        const double v = 0.9 * 0.5 - 0.1 * (1.0 + 0.01 * 2.0);
        CHECK(p.weight_velocity[0] == doctest::Approx(v).epsilon(1e-7));
        CHECK(p.weights[0] == doctest::Approx(2.0 + v).epsilon(1e-7));
    }

    SUBCASE("scalar quadratic converges")
    {
        auto p = scalar_param(0.0f, 0.0f);
        for (int i = 0; i < 100; ++i) {
            p.weight_grad[0] = 2.0f * (p.weights[0] - 3.0f);
            sgd_step(p, 0.1, 0.0, 0.0);
        }
        CHECK(std::abs(p.weights[0] - 3.0f) < 1e-3);
    }

    SUBCASE("weight decay alone shrinks toward zero")
    {
        auto p = scalar_param(-4.0f, 0.0f);
        float prev = std::abs(p.weights[0]);
        for (int i = 0; i < 50; ++i) {
            sgd_step(p, 0.1, 0.0, 0.5);
            CHECK(std::abs(p.weights[0]) < prev);
            prev = std::abs(p.weights[0]);
        }
    }
}

TEST_CASE("step learning-rate schedule")
{
    TrainConfig c;
    CHECK(learning_rate_at(c, 1) == 0.01);
    CHECK(learning_rate_at(c, 10) == 0.01);
    CHECK(learning_rate_at(c, 11) == doctest::Approx(0.001));
    CHECK(learning_rate_at(c, 21) == doctest::Approx(0.0001));
}

TEST_CASE("early stopping")
{
    SUBCASE("plateau with patience 2")
    {
        EarlyStopper s(2);
        CHECK_FALSE(s.update(0.6, 1.0));
        CHECK_FALSE(s.update(0.7, 0.9));
        CHECK_FALSE(s.update(0.7, 0.8));
        CHECK(s.update(0.7, 0.7));
        CHECK(s.best_epoch() == 2);
        CHECK(s.best_accuracy() == 0.7);
    }

    SUBCASE("rising validation loss")
    {
        EarlyStopper s(2);
        CHECK_FALSE(s.update(0.5, 1.0));
        CHECK_FALSE(s.update(0.6, 1.1));
        CHECK(s.update(0.7, 1.2));
        CHECK(s.best_epoch() == 3);
    }

    SUBCASE("a falling loss resets the rise count")
    {
        EarlyStopper s(2);
        s.update(0.5, 1.0);
        CHECK_FALSE(s.update(0.6, 1.1));
        CHECK_FALSE(s.update(0.7, 0.9));
        CHECK_FALSE(s.update(0.8, 1.0));
    }

    SUBCASE("best never regresses")
    {
        std::mt19937_64 rng(1);
        for (int trial = 0; trial < 100; ++trial) {
            EarlyStopper s(1 + rng() % 4);
            double max_seen = -1.0;
            std::size_t first_max = 0;
            for (std::size_t e = 1; e <= 30; ++e) {
                const double acc = static_cast<double>(rng() % 20) / 20.0;
                if (acc > max_seen) {
                    max_seen = acc;
                    first_max = e;
                }
                const bool stop = s.update(acc, static_cast<double>(rng() % 100));
                CHECK(s.best_accuracy() == max_seen);
                CHECK(s.best_epoch() == first_max);
                if (stop) break;
            }
        }
    }

    CHECK_THROWS_AS(EarlyStopper(0), ConfigError);
}

TEST_CASE("training config")
{
    const TrainConfig defaults;
    CHECK(defaults.learning_rate == 0.01);
    CHECK(defaults.momentum == 0.9);
    CHECK(defaults.weight_decay == 5e-4);
    CHECK(defaults.batch_size == 32);
    CHECK(defaults.max_epochs == 40);
    CHECK(defaults.patience == 3);

    const auto c = train_config_from_json(nlohmann::json{{"max_epochs", 5}, {"seed", 9}});
    CHECK(c.max_epochs == 5);
    CHECK(c.seed == 9);
    CHECK(c.learning_rate == 0.01);
    CHECK(train_config_from_json(to_json(c)) == c);

    CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"learnig_rate", 0.1}}), ConfigError);
    CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"learning_rate", 0}}), ConfigError);
    CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"momentum", 1.0}}), ConfigError);
    CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"patience", 0}}), ConfigError);
    CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"batch_size", "big"}}), ConfigError);
}

TEST_CASE("train_fold")
{
    std::vector<Label> labels;
    const auto images = toy_images(96, 3, labels);
    const auto train = view(images, labels, 0, 64);
    const auto val = view(images, labels, 64, 96);
    TrainConfig config;
    config.batch_size = 8;
    config.seed = 5;

    SUBCASE("max_epochs 1 runs exactly one epoch")
    {
        config.max_epochs = 1;
        config.patience = 1;
        const auto r = train_fold(tiny_spec(), train, val, config);
        CHECK(r.history.size() == 1);
        CHECK(r.stopped_epoch == 1);
        CHECK(r.best_epoch == 1);
        CHECK(r.best.meta.epoch == 1);
    }

    SUBCASE("learns a separable toy problem and keeps the best epoch")
    {
        config.max_epochs = 8;
        config.patience = 8;
        const auto r = train_fold(tiny_spec(), train, val, config, 2);
        CHECK(r.history.back().train_loss < r.history.front().train_loss);
        double best = 0.0;
        for (const auto& h : r.history) best = std::max(best, h.val_accuracy);
        CHECK(best >= 0.9);
        CHECK(r.history[r.best_epoch - 1].val_accuracy == best);
        CHECK(r.best.meta.fold == 2);
        CHECK(r.best.meta.val_accuracy.size() == r.history.size());

        // The stored weights and mean reproduce the best epoch's validation accuracy.
        const Network net = restore(r.best);
        CHECK(evaluate(net, *r.best.meta.mean_pixel, val).accuracy == best);
    }

    SUBCASE("same seed, bit-identical histories and checkpoints")
    {
        config.max_epochs = 3;
        const auto a = train_fold(tiny_spec(), train, val, config);
        const auto b = train_fold(tiny_spec(), train, val, config);
        CHECK(a.history == b.history);
        CHECK(serialize(a.best) == serialize(b.best));
    }

    SUBCASE("errors")
    {
        CHECK_THROWS_AS(train_fold(tiny_spec(), LabeledImages{}, val, config), ConfigError);
        CHECK_THROWS_AS(train_fold(tiny_spec(), train, LabeledImages{}, config), ConfigError);
        const GrayImage wrong(20, 20);
        LabeledImages bad = train;
        bad.images[0] = &wrong;
        CHECK_THROWS_AS(train_fold(tiny_spec(), bad, val, config), StructuralError);
    }
}

TEST_CASE("score_images is independent of chunking")
{
    std::vector<Label> labels;
    const auto images = toy_images(70, 8, labels);
    const Network net(tiny_spec(), 4);
    std::vector<const GrayImage*> all;
    for (const auto& img : images) all.push_back(&img);
    const auto batch = score_images(net, 0.4, all);
    for (std::size_t i = 0; i < all.size(); ++i) CHECK(score_images(net, 0.4, {all[i]})[0] == batch[i]);
}

TEST_CASE("cross_validate")
{
    std::vector<Label> labels;
    const auto images = toy_images(32, 11, labels);
    DatasetManifest m;
    const auto fold_of = stratified_kfold(labels, 4, 1);
    for (std::size_t i = 0; i < images.size(); ++i)
        m.records.push_back({"img" + std::to_string(i), labels[i], fold_of[i], std::nullopt});
    TrainConfig config;
    config.batch_size = 4;
    config.max_epochs = 2;

    SUBCASE("test folds partition the manifest")
    {
        const auto out = cross_validate(m, images, tiny_spec(), config);
        REQUIRE(out.size() == 4);
        std::multiset<std::size_t> seen;
        for (std::size_t f = 0; f < 4; ++f) {
            CHECK(out[f].training.fold == f);
            CHECK(out[f].test_scores.size() == out[f].test_indices.size());
            for (std::size_t j = 0; j < out[f].test_indices.size(); ++j) {
                const std::size_t i = out[f].test_indices[j];
                CHECK(fold_of[i] == f);
                CHECK(out[f].test_scores[j].truth == labels[i]);
                seen.insert(i);
            }
        }
        CHECK(seen.size() == images.size());
        CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == images.size());
    }

    SUBCASE("thread count does not change results")
    {
        setenv("CLE_TRIAGE_THREADS", "1", 1);
        const auto one = cross_validate(m, images, tiny_spec(), config);
        setenv("CLE_TRIAGE_THREADS", "4", 1);
        const auto four = cross_validate(m, images, tiny_spec(), config);
        unsetenv("CLE_TRIAGE_THREADS");
        for (std::size_t f = 0; f < 4; ++f) {
            CHECK(one[f].training.history == four[f].training.history);
            CHECK(serialize(one[f].training.best) == serialize(four[f].training.best));
            for (std::size_t j = 0; j < one[f].test_scores.size(); ++j)
                CHECK(one[f].test_scores[j].score == four[f].test_scores[j].score);
        }
    }

    SUBCASE("records without folds are rejected")
    {
        auto unassigned = m;
        unassigned.records[5].fold.reset();
        CHECK_THROWS_AS(cross_validate(unassigned, images, tiny_spec(), config), ConfigError);
        setenv("CLE_TRIAGE_THREADS", "zero", 1);
        CHECK_THROWS_AS(cross_validate(m, images, tiny_spec(), config), ConfigError);
        unsetenv("CLE_TRIAGE_THREADS");
    }
}
