#pragma once

#include <cstdint>
#include <filesystem>
#include <random>

#include "cle/dataset.hpp"
#include "cle/image.hpp"

namespace cle {

/// Nondiagnostic artifact families of the synthetic surrogate data.
enum class ArtifactKind { MotionSmear, Saturated, LowContrast, UniformNoise };

char subclass_letter(ArtifactKind kind);  // 'a'..'d'

/// Textured background with 5-25 dark-rimmed elliptical cells.
GrayImage render_diagnostic(std::size_t size, std::mt19937_64& rng);
GrayImage render_artifact(ArtifactKind kind, std::size_t size, std::mt19937_64& rng);

inline constexpr std::size_t kMinSyntheticSize = 32;
inline constexpr std::size_t kSyntheticFolds = 4;

/// Writes n_per_class images of each class as PGM under out_dir/images, a
/// manifest.jsonl with 4-fold assignments (when every class has >= 4 items)
/// and dataset_meta.json echoing the parameters. Byte-identical per seed.
DatasetManifest generate_synthetic_dataset(std::size_t n_per_class, std::size_t size, std::uint64_t seed,
                                           const std::filesystem::path& out_dir);

} // namespace cle
