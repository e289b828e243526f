#include "doctest.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <regex>
#include <thread>

#include "cle/bounded_queue.hpp"
#include "cle/error.hpp"
#include "cle/report.hpp"
#include "cle/stream.hpp"
#include "cle/synthetic.hpp"

using namespace cle;

namespace {

// A fold whose rates at 0.5 come out exactly as (tp, fp, tn, fn).
ScoredFold fold_with(std::size_t index, std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn)
{
    ScoredFold f;
    f.fold = index;
    for (std::size_t i = 0; i < tp; ++i) f.items.push_back({0.9, Label::Diagnostic});
    for (std::size_t i = 0; i < fn; ++i) f.items.push_back({0.1, Label::Diagnostic});
    for (std::size_t i = 0; i < tn; ++i) f.items.push_back({0.2, Label::Nondiagnostic});
    for (std::size_t i = 0; i < fp; ++i) f.items.push_back({0.8, Label::Nondiagnostic});
    return f;
}

std::size_t count_matches(const std::string& text, const std::string& pattern)
{
    const std::regex re(pattern);
    return static_cast<std::size_t>(std::distance(std::sregex_iterator(text.begin(), text.end(), re), {}));
}

std::filesystem::path scratch(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / ("cle_test_report_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("mean report is the arithmetic mean of fold values")
{
    // Per-fold accuracies 91.35%, 90.69%, 90.66%, 90.45% on 10000 items each.
    std::vector<FoldReport> folds;
    const std::size_t correct[] = {9135, 9069, 9066, 9045};
    for (std::size_t k = 0; k < 4; ++k) {
        const std::size_t c = correct[k];
        folds.push_back(fold_report(fold_with(k, c / 2, 5000 - c / 2, c - c / 2, 5000 - (c - c / 2)), 0.5));
    }
    const MeanReport m = mean_report(folds);
    REQUIRE(m.accuracy);
    CHECK(*m.accuracy == doctest::Approx(0.907875).epsilon(1e-12));
    CHECK(std::round(*m.accuracy * 10000) / 100 == doctest::Approx(90.79));

    double sens = 0, spec = 0, auc = 0;
    for (const auto& f : folds) {
        sens += *f.rates.sensitivity;
        spec += *f.rates.specificity;
        auc += *f.auc;
    }
    CHECK(std::abs(*m.sensitivity - sens / 4) < 1e-12);
    CHECK(std::abs(*m.specificity - spec / 4) < 1e-12);
    CHECK(std::abs(*m.auc - auc / 4) < 1e-12);
}

TEST_CASE("undefined fold values propagate to the mean")
{
    ScoredFold only_pos;
    only_pos.fold = 1;
    only_pos.items = {{0.7, Label::Diagnostic}, {0.2, Label::Diagnostic}};
    const auto a = fold_report(fold_with(0, 3, 1, 2, 1), 0.5);
    const auto b = fold_report(only_pos, 0.5);
    CHECK_FALSE(b.auc);
    CHECK_FALSE(b.rates.specificity);
    CHECK(b.rates.sensitivity == doctest::Approx(0.5));

    const MeanReport m = mean_report({a, b});
    CHECK(m.accuracy);
    CHECK(m.sensitivity);
    CHECK_FALSE(m.specificity);
    CHECK_FALSE(m.auc);

    RunInfo info{"cnn", std::string("mini-alexnet"), 0.5, nullptr, 6, 0};
    const auto j = build_report(info, {a, b}, {});
    CHECK(j["folds"][1]["auc"].is_null());
    CHECK(j["mean"]["auc"].is_null());
    CHECK(j["timings"]["images_per_second"].is_null());
}

TEST_CASE("report layout and reference rows")
{
    const auto f0 = fold_report(fold_with(0, 4, 1, 3, 0), 0.5);
    RunInfo info{"cnn", std::string("mini-inception"), 1e-5, nullptr, 8, 0};
    const auto j = build_report(info, {f0}, {12.0, 2.0, 8});

    std::vector<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
    CHECK(keys == std::vector<std::string>{"kind", "arch", "threshold", "records", "skipped", "config", "folds", "mean",
                                           "reference", "timings"});
    CHECK(j["folds"][0]["counts"]["tp"] == 4);
    CHECK(j["folds"][0]["test_images"] == 8);
    CHECK(j["timings"]["images_per_second"] == doctest::Approx(4.0));
    CHECK(j["reference"]["results"]["sensitivity"] == doctest::Approx(0.9791));
    CHECK(j["reference"]["gpu_inference_images_per_second"] == 84);

    info.kind = "entropy";
    info.arch.reset();
    const auto e = build_report(info, {f0}, {});
    CHECK(e["arch"].is_null());
    CHECK(e["reference"]["results"]["auc"] == doctest::Approx(0.7122));

    info = {"cnn", std::string("mini-alexnet"), 0.5, nullptr, 8, 0};
    const auto a = build_report(info, {f0}, {99.0, 1.0, 8});
    const auto b = build_report(info, {f0}, {1.0, 3.0, 8});
    CHECK(a.dump() != b.dump());
    CHECK(report_without_timings(a) == report_without_timings(b));
    CHECK(report_without_timings(a).find("timings") == std::string::npos);
    CHECK(a["reference"]["results"]["accuracy"] == doctest::Approx(0.9079));
}

TEST_CASE("ROC files: one curve per fold plus the mean")
{
    std::vector<ScoredFold> folds;
    for (std::size_t k = 0; k < 4; ++k) folds.push_back(fold_with(k, 5 + k, 2, 6, 1 + k));
    for (auto& f : folds)
        for (std::size_t i = 0; i < f.items.size(); ++i) f.items[i].score = std::min(0.99, f.items[i].score + 0.001 * i);

    const auto dir = scratch("roc");
    write_roc_files(dir, folds, "test & check");
    for (std::size_t k = 0; k < 4; ++k) CHECK(std::filesystem::exists(dir / ("roc_fold" + std::to_string(k) + ".csv")));
    CHECK(std::filesystem::exists(dir / "roc_mean.csv"));

    std::vector<RocCurve> curves;
    for (const auto& f : folds) curves.push_back(roc_curve(f.items));
    const std::string svg = roc_svg(curves, mean_roc(curves), "test & check");
    CHECK(count_matches(svg, "<polyline") == 5);
    CHECK(count_matches(svg, "class=\"fold\"") == 4);
    CHECK(count_matches(svg, "class=\"mean\"") == 1);
    CHECK(svg.find("1 - specificity (FPR)") != std::string::npos);
    CHECK(svg.find("sensitivity (TPR) of model") != std::string::npos);
    CHECK(svg.find("test &amp; check") != std::string::npos);
    std::filesystem::remove_all(dir);
}

TEST_CASE("bounded queue blocks producers at capacity")
{
    BoundedQueue<int> q(3);
    std::atomic<int> pushed{0};
    std::thread producer([&] {
        for (int i = 0; i < 10; ++i) {
            q.push(i);
            ++pushed;
        }
        q.close();
    });
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    CHECK(pushed.load() == 3);

    std::vector<int> got;
    while (auto v = q.pop()) got.push_back(*v);
    producer.join();
    CHECK(got == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    CHECK(q.high_water() == 3);
    CHECK_FALSE(q.push(11));
}

TEST_CASE("nearest-rank percentile")
{
    std::vector<double> v;
    for (int i = 100; i >= 1; --i) v.push_back(i);
    CHECK(percentile(v, 50) == 50);
    CHECK(percentile(v, 90) == 90);
    CHECK(percentile(v, 99) == 99);
    CHECK(percentile(v, 100) == 100);
    CHECK(percentile({7.0}, 50) == 7.0);
    CHECK(percentile({1.0, 2.0, 3.0}, 50) == 2.0);
}

TEST_CASE("streamed scores match batch evaluation bit for bit")
{
    const auto dir = scratch("stream");
    const auto manifest = generate_synthetic_dataset(250, 64, 11, dir);
    REQUIRE(manifest.records.size() == 500);

    Network net(build_mini_alexnet(), 5);
    TrainingMeta meta;
    meta.mean_pixel = 0.45;
    const Checkpoint ckpt = snapshot(net, meta);

    for (std::size_t batch : {1, 7}) {
        StreamOptions opts;
        opts.batch = batch;
        opts.queue_capacity = 4;
        const StreamResult r = run_stream_bench(ckpt, manifest, opts);
        CHECK(r.frames == 500);
        CHECK(r.bit_exact);
        CHECK(r.stream_scores == r.batch_scores);
        CHECK(r.max_queue_depth <= 4);
        CHECK(r.latency_p50_ms <= r.latency_p90_ms);
        CHECK(r.latency_p90_ms <= r.latency_p99_ms);
        CHECK(r.throughput() > 0);
    }

    StreamOptions limited;
    limited.limit = 20;
    CHECK(run_stream_bench(ckpt, manifest, limited).frames == 20);

    TrainingMeta no_mean;
    CHECK_THROWS_AS(run_stream_bench(snapshot(net, no_mean), manifest), ConfigError);
    std::filesystem::remove_all(dir);
}
