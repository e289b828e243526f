#include "cle/entropy.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <numeric>

#include "cle/error.hpp"

namespace cle {

EntropyScore image_entropy(const GrayImage& image)
{
    if (image.pixels.empty()) throw ValidationError("entropy of an empty image");
    std::array<std::uint64_t, 256> hist{};
    for (auto p : image.pixels) ++hist[p];
    const double n = static_cast<double>(image.pixels.size());
    double h = 0.0;
    for (auto c : hist) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / n;
        h -= p * std::log2(p);
    }
    h = std::max(h, 0.0);  // -0.0 and rounding noise on constant images
    return {h, h / 8.0};
}

EntropyScoring entropy_classifier(const DatasetManifest& manifest, const std::vector<std::size_t>& indices)
{
    EntropyScoring out;
    for (std::size_t i : indices) {
        if (i >= manifest.records.size()) throw ValidationError("record index " + std::to_string(i) + " out of range");
        const auto& r = manifest.records[i];
        try {
            const double s = image_entropy(pgm_read(manifest.resolve(r))).normalized;
            out.items.push_back({s, r.label});
            out.record_index.push_back(i);
        } catch (const Error& e) {
            out.errors.push_back(r.path + ": " + e.what());
        }
    }
    return out;
}

EntropyScoring entropy_classifier(const DatasetManifest& manifest)
{
    std::vector<std::size_t> all(manifest.records.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return entropy_classifier(manifest, all);
}

std::string entropy_csv(const DatasetManifest& manifest, const EntropyScoring& scoring)
{
    std::string out = "path,label,entropy_norm\n";
    char buf[32];
    for (std::size_t j = 0; j < scoring.items.size(); ++j) {
        const auto& r = manifest.records[scoring.record_index[j]];
        const auto res = std::to_chars(buf, buf + sizeof buf, scoring.items[j].score);
        out += r.path + "," + to_string(r.label) + "," + std::string(buf, res.ptr) + "\n";
    }
    return out;
}

} // namespace cle
