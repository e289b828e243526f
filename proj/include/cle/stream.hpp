#pragma once

#include <cstddef>
#include <vector>

#include <nlohmann/json.hpp>

#include "cle/checkpoint.hpp"
#include "cle/dataset.hpp"

namespace cle {

struct StreamOptions {
    std::size_t batch = 1;           // frames per inference call
    std::size_t queue_capacity = 8;  // between every pair of stages
    std::size_t limit = 0;           // replay at most this many frames; 0 = all
};

struct StreamResult {
    std::vector<double> stream_scores;  // input order
    std::vector<double> batch_scores;   // same frames through batch evaluation
    std::size_t frames = 0;
    double wall_seconds = 0.0;          // first decode to last score
    double inference_seconds = 0.0;     // time spent inside the network only
    double latency_p50_ms = 0.0, latency_p90_ms = 0.0, latency_p99_ms = 0.0;
    std::size_t max_queue_depth = 0;
    bool bit_exact = false;

    double throughput() const { return wall_seconds > 0 ? static_cast<double>(frames) / wall_seconds : 0.0; }
    double inference_throughput() const
    {
        return inference_seconds > 0 ? static_cast<double>(frames) / inference_seconds : 0.0;
    }
};

/// Replays manifest frames through decode -> preprocess -> inference stages
/// running on their own threads, joined by bounded queues, then checks the
/// streamed scores against batch evaluation of the same checkpoint.
StreamResult run_stream_bench(const Checkpoint& checkpoint, const DatasetManifest& manifest,
                              const StreamOptions& options = {});

/// Nearest-rank percentile (p in (0,100]) of unsorted samples.
double percentile(std::vector<double> samples, double p);

nlohmann::ordered_json stream_report(const StreamResult& result, const StreamOptions& options);

} // namespace cle
