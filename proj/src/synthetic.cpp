#include "cle/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cle/error.hpp"
#include "cle/random.hpp"

namespace cle {

namespace {

using Field = std::vector<double>;

std::uint64_t splitmix(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Bilinear upsampling of a (cells+1)^2 lattice of uniform values in [-1,1].
Field value_noise(std::size_t size, std::size_t cells, std::mt19937_64& rng)
{
    const std::size_t g = cells + 1;
    Field lattice(g * g);
    for (auto& v : lattice) v = uniform_range(rng, -1.0, 1.0);
    Field out(size * size);
    const double step = static_cast<double>(cells) / static_cast<double>(size);
    for (std::size_t y = 0; y < size; ++y) {
        const double fy = (static_cast<double>(y) + 0.5) * step;
        const std::size_t y0 = std::min(static_cast<std::size_t>(fy), cells - 1);
        const double ty = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < size; ++x) {
            const double fx = (static_cast<double>(x) + 0.5) * step;
            const std::size_t x0 = std::min(static_cast<std::size_t>(fx), cells - 1);
            const double tx = fx - static_cast<double>(x0);
            const double top = lattice[y0 * g + x0] * (1 - tx) + lattice[y0 * g + x0 + 1] * tx;
            const double bot = lattice[(y0 + 1) * g + x0] * (1 - tx) + lattice[(y0 + 1) * g + x0 + 1] * tx;
            out[y * size + x] = top * (1 - ty) + bot * ty;
        }
    }
    return out;
}

Field texture(std::size_t size, std::mt19937_64& rng)
{
    Field coarse = value_noise(size, 4, rng);
    const Field fine = value_noise(size, std::max<std::size_t>(size / 6, 5), rng);
    for (std::size_t i = 0; i < coarse.size(); ++i) coarse[i] = 0.6 * coarse[i] + 0.4 * fine[i];
    return coarse;
}

GrayImage quantize(const Field& f, std::size_t size)
{
    GrayImage img(size, size);
    for (std::size_t i = 0; i < f.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(f[i]), 0L, 255L));
    return img;
}

Field box_blur(const Field& f, std::size_t size, int radius)
{
    auto pass = [&](const Field& in, bool horizontal) {
        Field out(in.size());
        const auto n = static_cast<long>(size);
        for (long y = 0; y < n; ++y)
            for (long x = 0; x < n; ++x) {
                double s = 0.0;
                for (long d = -radius; d <= radius; ++d) {
                    const long xx = horizontal ? std::clamp(x + d, 0L, n - 1) : x;
                    const long yy = horizontal ? y : std::clamp(y + d, 0L, n - 1);
                    s += in[static_cast<std::size_t>(yy * n + xx)];
                }
                out[static_cast<std::size_t>(y * n + x)] = s / static_cast<double>(2 * radius + 1);
            }
        return out;
    };
    return pass(pass(f, true), false);
}

Field diagnostic_field(std::size_t size, std::mt19937_64& rng)
{
    const double s = static_cast<double>(size);
    Field f = texture(size, rng);
    for (auto& v : f) v = 105.0 + 25.0 * v + 6.0 * standard_normal(rng);

    const auto cells = 5 + uniform_below(rng, 21);
    for (std::uint64_t c = 0; c < cells; ++c) {
        const double cx = uniform_range(rng, 0.0, s), cy = uniform_range(rng, 0.0, s);
        const double a = s * uniform_range(rng, 0.05, 0.12), b = s * uniform_range(rng, 0.05, 0.12);
        const double theta = uniform_range(rng, 0.0, 3.141592653589793);
        const double inside = uniform_range(rng, 150.0, 190.0);
        const double rim = 1.0 - 1.6 / std::min(a, b);
        const double ct = std::cos(theta), st = std::sin(theta);
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
                const double u = (dx * ct + dy * st) / a, v = (-dx * st + dy * ct) / b;
                const double d = std::sqrt(u * u + v * v);
                if (d > 1.0) continue;
                f[y * size + x] = d > rim ? 35.0 : inside + 0.3 * (f[y * size + x] - 105.0);
            }
    }
    return f;
}

// Average along a random direction over a streak of length size/5..size/3.
Field motion_smear(const Field& f, std::size_t size, std::mt19937_64& rng)
{
    const double s = static_cast<double>(size);
    const double theta = uniform_range(rng, 0.0, 3.141592653589793);
    const int taps = static_cast<int>(uniform_range(rng, s / 5.0, s / 3.0)) | 1;
    const double dx = std::cos(theta), dy = std::sin(theta);
    const auto n = static_cast<long>(size);
    Field out(f.size());
    for (long y = 0; y < n; ++y)
        for (long x = 0; x < n; ++x) {
            double acc = 0.0;
            for (int t = -taps / 2; t <= taps / 2; ++t) {
                const long xx = std::clamp(std::lround(static_cast<double>(x) + t * dx), 0L, n - 1);
                const long yy = std::clamp(std::lround(static_cast<double>(y) + t * dy), 0L, n - 1);
                acc += f[static_cast<std::size_t>(yy * n + xx)];
            }
            out[static_cast<std::size_t>(y * n + x)] = acc / taps;
        }
    return out;
}

void check_size(std::size_t size)
{
    if (size < kMinSyntheticSize)
        throw ValidationError("synthetic image size " + std::to_string(size) + " is below the minimum " +
                              std::to_string(kMinSyntheticSize));
}

} // namespace

char subclass_letter(ArtifactKind kind)
{
    return static_cast<char>('a' + static_cast<int>(kind));
}

GrayImage render_diagnostic(std::size_t size, std::mt19937_64& rng)
{
    check_size(size);
    return quantize(diagnostic_field(size, rng), size);
}

GrayImage render_artifact(ArtifactKind kind, std::size_t size, std::mt19937_64& rng)
{
    check_size(size);
    Field f;
    switch (kind) {
    case ArtifactKind::MotionSmear:
        f = motion_smear(diagnostic_field(size, rng), size, rng);
        for (auto& v : f) v += 3.0 * standard_normal(rng);
        break;
    case ArtifactKind::Saturated:
        f = value_noise(size, 3, rng);
        for (auto& v : f) v = 236.0 + 12.0 * v + 4.0 * standard_normal(rng);
        break;
    case ArtifactKind::LowContrast: {
        Field noise(size * size);
        for (auto& v : noise) v = standard_normal(rng);
        f = box_blur(noise, size, 2);
        const double level = uniform_range(rng, 60.0, 120.0);
        for (auto& v : f) v = level + 18.0 * v;
        break;
    }
    case ArtifactKind::UniformNoise: {
        GrayImage img(size, size);
        for (auto& p : img.pixels) p = static_cast<std::uint8_t>(uniform_below(rng, 256));
        return img;
    }
    }
    return quantize(f, size);
}

DatasetManifest generate_synthetic_dataset(std::size_t n_per_class, std::size_t size, std::uint64_t seed,
                                           const std::filesystem::path& out_dir)
{
    if (n_per_class < 1) throw ValidationError("n_per_class must be at least 1");
    check_size(size);
    try {
        std::filesystem::create_directories(out_dir / "images");
    } catch (const std::filesystem::filesystem_error& e) {
        throw IoError("cannot create output directory " + out_dir.string() + ": " + e.code().message());
    }

    DatasetManifest manifest;
    manifest.base_dir = out_dir;
    std::array<std::size_t, 4> subclass_counts{};
    char name[64];
    for (std::size_t i = 0; i < n_per_class; ++i) {
        // Each image has its own stream so any one can be regenerated alone.
        std::mt19937_64 diag_rng(splitmix(seed ^ splitmix(2 * i)));
        std::snprintf(name, sizeof name, "images/diag_%05zu.pgm", i);
        pgm_write(out_dir / name, render_diagnostic(size, diag_rng));
        manifest.records.push_back({name, Label::Diagnostic, std::nullopt, std::nullopt});

        std::mt19937_64 non_rng(splitmix(seed ^ splitmix(2 * i + 1)));
        const auto kind = static_cast<ArtifactKind>(uniform_below(non_rng, 4));
        ++subclass_counts[static_cast<std::size_t>(kind)];
        std::snprintf(name, sizeof name, "images/nondiag_%05zu_%c.pgm", i, subclass_letter(kind));
        pgm_write(out_dir / name, render_artifact(kind, size, non_rng));
        manifest.records.push_back({name, Label::Nondiagnostic, std::nullopt, std::nullopt});
    }

    const bool with_folds = n_per_class >= kSyntheticFolds;
    if (with_folds) {
        const auto fold_of = stratified_kfold(manifest.labels(), kSyntheticFolds, seed);
        for (std::size_t i = 0; i < manifest.records.size(); ++i) manifest.records[i].fold = fold_of[i];
    }
    write_manifest(out_dir / "manifest.jsonl", manifest);

    nlohmann::ordered_json meta;
    meta["generator"] = "synthetic";
    meta["seed"] = seed;
    meta["n_per_class"] = n_per_class;
    meta["image_size"] = size;
    meta["folds"] = with_folds ? kSyntheticFolds : 0;
    meta["nondiagnostic_subclasses"] = {{"a_motion_smear", subclass_counts[0]},
                                        {"b_saturated", subclass_counts[1]},
                                        {"c_low_contrast", subclass_counts[2]},
                                        {"d_uniform_noise", subclass_counts[3]}};
    std::ofstream out(out_dir / "dataset_meta.json", std::ios::binary | std::ios::trunc);
    out << meta.dump(2) << '\n';
    if (!out) throw IoError("cannot write " + (out_dir / "dataset_meta.json").string());
    return manifest;
}

} // namespace cle
