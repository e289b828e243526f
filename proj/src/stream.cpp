#include "cle/stream.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "cle/bounded_queue.hpp"
#include "cle/error.hpp"
#include "cle/trainer.hpp"

namespace cle {

namespace {

using Clock = std::chrono::steady_clock;

struct Frame {
    std::size_t index = 0;
    Clock::time_point arrived;
    GrayImage image;
    Tensor input;
};

GrayImage decode_frame(const DatasetManifest& manifest, std::size_t i, std::size_t H, std::size_t W)
{
    GrayImage img = pgm_read(manifest.resolve(manifest.records[i]));
    if (img.width != W || img.height != H) img = resize_bilinear(img, W, H);
    return img;
}

double seconds(Clock::duration d)
{
    return std::chrono::duration<double>(d).count();
}

} // namespace

double percentile(std::vector<double> samples, double p)
{
    if (samples.empty()) throw ValidationError("percentile of no samples");
    std::sort(samples.begin(), samples.end());
    const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(samples.size())));
    return samples[std::clamp<std::size_t>(rank, 1, samples.size()) - 1];
}

StreamResult run_stream_bench(const Checkpoint& checkpoint, const DatasetManifest& manifest, const StreamOptions& options)
{
    if (options.batch < 1) throw ConfigError("stream batch must be >= 1");
    if (!checkpoint.meta.mean_pixel) throw ConfigError("checkpoint carries no training mean pixel");
    const double mean = *checkpoint.meta.mean_pixel;
    const Network net = restore(checkpoint);
    const std::size_t H = checkpoint.spec.input[1], W = checkpoint.spec.input[2];
    std::size_t n = manifest.records.size();
    if (options.limit) n = std::min(n, options.limit);
    if (n == 0) throw ValidationError("no frames to stream");

    BoundedQueue<Frame> decoded(options.queue_capacity), prepared(options.queue_capacity);
    std::exception_ptr error;
    std::mutex error_mutex;
    auto fail = [&] {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        decoded.close();
        prepared.close();
    };

    StreamResult result;
    result.frames = n;
    result.stream_scores.assign(n, 0.0);
    std::vector<double> latency_ms(n, 0.0);

    const auto t_start = Clock::now();
    std::thread decoder([&] {
        try {
            for (std::size_t i = 0; i < n; ++i) {
                Frame f;
                f.index = i;
                f.arrived = Clock::now();
                f.image = decode_frame(manifest, i, H, W);
                if (!decoded.push(std::move(f))) return;
            }
            decoded.close();
        } catch (...) {
            fail();
        }
    });
    std::thread preprocessor([&] {
        try {
            while (auto f = decoded.pop()) {
                f->input = normalize_for_net(f->image, mean);
                f->image = GrayImage();
                if (!prepared.push(std::move(*f))) return;
            }
            prepared.close();
        } catch (...) {
            fail();
        }
    });

    try {
        std::vector<Frame> pending;
        auto flush = [&] {
            if (pending.empty()) return;
            Tensor batch({pending.size(), 1, H, W});
            for (std::size_t j = 0; j < pending.size(); ++j)
                std::copy(pending[j].input.raw(), pending[j].input.raw() + H * W, batch.raw() + j * H * W);
            const auto t0 = Clock::now();
            const auto probs = positive_probabilities(net.predict(batch));
            const auto t1 = Clock::now();
            result.inference_seconds += seconds(t1 - t0);
            for (std::size_t j = 0; j < pending.size(); ++j) {
                result.stream_scores[pending[j].index] = probs[j];
                latency_ms[pending[j].index] = 1e3 * seconds(t1 - pending[j].arrived);
            }
            pending.clear();
        };
        while (auto f = prepared.pop()) {
            pending.push_back(std::move(*f));
            if (pending.size() == options.batch) flush();
        }
        flush();
    } catch (...) {
        fail();
    }
    decoder.join();
    preprocessor.join();
    if (error) std::rethrow_exception(error);
    result.wall_seconds = seconds(Clock::now() - t_start);
    result.max_queue_depth = std::max(decoded.high_water(), prepared.high_water());
    result.latency_p50_ms = percentile(latency_ms, 50);
    result.latency_p90_ms = percentile(latency_ms, 90);
    result.latency_p99_ms = percentile(latency_ms, 99);

    std::vector<GrayImage> images;
    images.reserve(n);
    for (std::size_t i = 0; i < n; ++i) images.push_back(decode_frame(manifest, i, H, W));
    std::vector<const GrayImage*> ptrs;
    for (const auto& img : images) ptrs.push_back(&img);
    result.batch_scores = score_images(net, mean, ptrs);
    result.bit_exact = result.batch_scores == result.stream_scores;
    return result;
}

nlohmann::ordered_json stream_report(const StreamResult& r, const StreamOptions& options)
{
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < r.frames; ++i) mismatches += r.stream_scores[i] != r.batch_scores[i];
    nlohmann::ordered_json j;
    j["frames"] = r.frames;
    j["batch"] = options.batch;
    j["queue_capacity"] = options.queue_capacity;
    j["max_queue_depth"] = r.max_queue_depth;
    j["wall_seconds"] = r.wall_seconds;
    j["end_to_end_images_per_second"] = r.throughput();
    j["inference_only_images_per_second"] = r.inference_throughput();
    j["latency_ms"] = {{"p50", r.latency_p50_ms}, {"p90", r.latency_p90_ms}, {"p99", r.latency_p99_ms}};
    j["bit_exact_vs_batch"] = r.bit_exact;
    j["mismatched_scores"] = mismatches;
    j["reference"] = {{"published_inference_images_per_second", 95},
                      {"note", "GPU, full-size network, inference only; recorded for comparison, not asserted"}};
    return j;
}

} // namespace cle
