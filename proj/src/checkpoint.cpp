#include "cle/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include <zlib.h>

namespace cle {

namespace {

constexpr char kMagic[4] = {'C', 'L', 'E', 'T'};
constexpr std::size_t kPreambleBytes = 4 + 2 + 4;

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value)
{
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p)
{
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
    return v;
}

void append_floats(std::vector<std::uint8_t>& out, const std::vector<float>& values)
{
    const std::size_t start = out.size();
    out.resize(start + values.size() * 4);
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(out.data() + start, values.data(), values.size() * 4);
    } else {
        for (std::size_t i = 0; i < values.size(); ++i) {
            const auto bits = std::bit_cast<std::uint32_t>(values[i]);
            for (std::size_t b = 0; b < 4; ++b) out[start + 4 * i + b] = static_cast<std::uint8_t>(bits >> (8 * b));
        }
    }
}

std::vector<float> read_floats(const std::uint8_t* p, std::size_t count)
{
    std::vector<float> values(count);
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(values.data(), p, count * 4);
    } else {
        for (std::size_t i = 0; i < count; ++i) values[i] = std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * i));
    }
    return values;
}

nlohmann::json meta_to_json(const TrainingMeta& m)
{
    nlohmann::json j{{"fold", m.fold}, {"epoch", m.epoch}, {"seed", m.seed}, {"val_accuracy", m.val_accuracy}};
    j["mean_pixel"] = m.mean_pixel ? nlohmann::json(*m.mean_pixel) : nlohmann::json(nullptr);
    return j;
}

TrainingMeta meta_from_json(const nlohmann::json& j)
{
    TrainingMeta m;
    m.fold = j.at("fold").get<std::size_t>();
    m.epoch = j.at("epoch").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.val_accuracy = j.at("val_accuracy").get<std::vector<double>>();
    if (!j.at("mean_pixel").is_null()) m.mean_pixel = j.at("mean_pixel").get<double>();
    return m;
}

std::vector<std::string> blob_names(std::size_t param_count)
{
    std::vector<std::string> names;
    for (std::size_t i = 0; i < param_count; ++i) {
        names.push_back("p" + std::to_string(i) + ".weights");
        names.push_back("p" + std::to_string(i) + ".bias");
    }
    return names;
}

} // namespace

std::uint32_t crc32_of(const void* data, std::size_t bytes)
{
    uLong crc = ::crc32(0L, Z_NULL, 0);
    const auto* p = static_cast<const Bytef*>(data);
    while (bytes > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes, 1u << 30));
        crc = ::crc32(crc, p, chunk);
        p += chunk;
        bytes -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

Checkpoint snapshot(const Network& net, TrainingMeta meta)
{
    Checkpoint ckpt{net.spec(), std::move(meta), {}};
    const auto params = net.params();
    const auto names = blob_names(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Params& p = *params[i];
        ckpt.blobs.push_back({names[2 * i], p.weights.shape(), {p.weights.data().begin(), p.weights.data().end()}});
        ckpt.blobs.push_back({names[2 * i + 1], p.bias.shape(), {p.bias.data().begin(), p.bias.data().end()}});
    }
    return ckpt;
}

void load_weights(Network& net, const Checkpoint& ckpt)
{
    if (!(net.spec() == ckpt.spec))
        throw CheckpointError(CheckpointError::Kind::SpecMismatch,
                              "checkpoint spec '" + ckpt.spec.name + "' does not match network '" + net.spec().name + "'");
    auto params = net.params();
    if (ckpt.blobs.size() != 2 * params.size())
        throw CheckpointError(CheckpointError::Kind::SpecMismatch,
                              "checkpoint holds " + std::to_string(ckpt.blobs.size()) + " blobs, spec needs " +
                                  std::to_string(2 * params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor* targets[2] = {&params[i]->weights, &params[i]->bias};
        for (std::size_t j = 0; j < 2; ++j) {
            const Blob& b = ckpt.blobs[2 * i + j];
            if (b.shape != targets[j]->shape() || b.values.size() != targets[j]->size())
                throw CheckpointError(CheckpointError::Kind::SpecMismatch,
                                      "blob '" + b.name + "' has shape " + shape_str(b.shape) + ", spec needs " +
                                          shape_str(targets[j]->shape()));
            std::copy(b.values.begin(), b.values.end(), targets[j]->data().begin());
        }
    }
}

Network restore(const Checkpoint& ckpt)
{
    Network net(ckpt.spec, ckpt.meta.seed, false);
    load_weights(net, ckpt);
    return net;
}

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt)
{
    nlohmann::json table = nlohmann::json::array();
    std::size_t offset = 0;
    for (const Blob& b : ckpt.blobs) {
        const std::size_t bytes = b.values.size() * 4;
        std::vector<std::uint8_t> raw;
        append_floats(raw, b.values);
        table.push_back({{"name", b.name},
                         {"shape", b.shape},
                         {"offset", offset},
                         {"bytes", bytes},
                         {"crc32", crc32_of(raw.data(), raw.size())}});
        offset += bytes;
    }
    const nlohmann::json header{{"spec", to_json(ckpt.spec)}, {"meta", meta_to_json(ckpt.meta)}, {"blobs", table}};
    const std::string text = header.dump();

    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_le<std::uint16_t>(out, kCheckpointVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    out.reserve(out.size() + offset);
    for (const Blob& b : ckpt.blobs) append_floats(out, b.values);
    return out;
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes, const NetSpec* expected_spec)
{
    using Kind = CheckpointError::Kind;
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw CheckpointError(Kind::BadMagic, "not a checkpoint file (missing CLET magic)");
    if (bytes.size() < kPreambleBytes) throw CheckpointError(Kind::Truncated, "checkpoint truncated in preamble");
    const auto version = get_le<std::uint16_t>(bytes.data() + 4);
    if (version != kCheckpointVersion)
        throw CheckpointError(Kind::VersionMismatch, "checkpoint format version " + std::to_string(version) +
                                                         ", this build reads version " +
                                                         std::to_string(kCheckpointVersion));
    const auto header_len = get_le<std::uint32_t>(bytes.data() + 6);
    if (bytes.size() < kPreambleBytes + header_len)
        throw CheckpointError(Kind::Truncated, "checkpoint truncated in header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + kPreambleBytes, bytes.begin() + kPreambleBytes + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(Kind::Malformed, std::string("checkpoint header is not valid JSON: ") + e.what());
    }

    Checkpoint ckpt;
    try {
        ckpt.spec = net_spec_from_json(header.at("spec"));
        ckpt.meta = meta_from_json(header.at("meta"));
    } catch (const StructuralError& e) {
        throw CheckpointError(Kind::SpecMismatch, std::string("checkpoint spec invalid: ") + e.what());
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(Kind::Malformed, std::string("checkpoint header malformed: ") + e.what());
    }
    if (expected_spec && !(*expected_spec == ckpt.spec))
        throw CheckpointError(Kind::SpecMismatch, "checkpoint holds net '" + ckpt.spec.name + "' with " +
                                                      std::to_string(ckpt.spec.layers.size()) +
                                                      " layers, expected '" + expected_spec->name + "' with " +
                                                      std::to_string(expected_spec->layers.size()) + " layers");

    const std::size_t data_start = kPreambleBytes + header_len;
    const std::size_t data_len = bytes.size() - data_start;
    try {
        for (const auto& entry : header.at("blobs")) {
            Blob b;
            b.name = entry.at("name").get<std::string>();
            b.shape = entry.at("shape").get<Shape>();
            const auto offset = entry.at("offset").get<std::size_t>();
            const auto len = entry.at("bytes").get<std::size_t>();
            const auto crc = entry.at("crc32").get<std::uint32_t>();
            if (len != shape_size(b.shape) * 4)
                throw CheckpointError(Kind::Malformed, "blob '" + b.name + "' byte count disagrees with its shape");
            if (offset > data_len || len > data_len - offset)
                throw CheckpointError(Kind::Truncated, "checkpoint truncated inside blob '" + b.name + "'");
            const std::uint8_t* p = bytes.data() + data_start + offset;
            if (crc32_of(p, len) != crc)
                throw CheckpointError(Kind::ChecksumMismatch, "checksum mismatch in blob '" + b.name + "'");
            b.values = read_floats(p, len / 4);
            ckpt.blobs.push_back(std::move(b));
        }
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(Kind::Malformed, std::string("checkpoint blob table malformed: ") + e.what());
    }

    // Blob layout must match what the spec builds.
    const auto shapes = parameter_shapes(ckpt.spec);
    if (ckpt.blobs.size() != 2 * shapes.size())
        throw CheckpointError(Kind::SpecMismatch, "checkpoint holds " + std::to_string(ckpt.blobs.size()) +
                                                      " blobs but its spec has " + std::to_string(2 * shapes.size()));
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        if (ckpt.blobs[2 * i].shape != shapes[i].first || ckpt.blobs[2 * i + 1].shape != shapes[i].second)
            throw CheckpointError(Kind::SpecMismatch, "blob " + ckpt.blobs[2 * i].name + " does not fit the spec");
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path)
{
    const auto bytes = serialize(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const NetSpec* expected_spec)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes, expected_spec);
}

} // namespace cle
