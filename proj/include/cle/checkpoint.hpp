#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   "CLET"                magic, 4 bytes
//   u16                   format version
//   u32                   header length in bytes
//   header                compact JSON: net spec, training metadata and a blob
//                         table {name, shape, offset, bytes, crc32}
//   blobs                 raw IEEE-754 f32 values, row-major, offsets relative
//                         to the first byte after the header
//
// Serialization is deterministic: save -> load -> save yields identical bytes.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cle/net_spec.hpp"
#include "cle/network.hpp"

namespace cle {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct TrainingMeta {
    std::size_t fold = 0;
    std::size_t epoch = 0;  // 1-based epoch the weights come from; 0 = untrained
    std::uint64_t seed = 0;
    std::vector<double> val_accuracy;  // per-epoch history of the whole training run
    std::optional<double> mean_pixel;  // training-set mean of pixel/255

    friend bool operator==(const TrainingMeta&, const TrainingMeta&) = default;
};

struct Blob {
    std::string name;
    Shape shape;
    std::vector<float> values;

    friend bool operator==(const Blob&, const Blob&) = default;
};

/// Weights + architecture + metadata as a plain value.
struct Checkpoint {
    NetSpec spec;
    TrainingMeta meta;
    std::vector<Blob> blobs;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

Checkpoint snapshot(const Network& net, TrainingMeta meta);

/// Builds a network from the checkpoint's spec and copies the weights in.
/// Throws CheckpointError(SpecMismatch) when blobs do not fit the spec.
Network restore(const Checkpoint& ckpt);

/// Copies checkpoint weights into an existing network of the same spec.
void load_weights(Network& net, const Checkpoint& ckpt);

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
/// expected_spec, when given, must equal the stored spec.
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes, const NetSpec* expected_spec = nullptr);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path, const NetSpec* expected_spec = nullptr);

std::uint32_t crc32_of(const void* data, std::size_t bytes);

} // namespace cle
