#include "cle/dataset.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <set>

#include "cle/error.hpp"
#include "cle/random.hpp"

namespace cle {

std::string to_string(Label label)
{
    return label == Label::Diagnostic ? "diagnostic" : "nondiagnostic";
}

Label label_from_string(const std::string& name)
{
    if (name == "diagnostic") return Label::Diagnostic;
    if (name == "nondiagnostic") return Label::Nondiagnostic;
    throw ValidationError("unknown label '" + name + "' (expected diagnostic or nondiagnostic)");
}

std::filesystem::path DatasetManifest::resolve(const ManifestRecord& r) const
{
    const std::filesystem::path p(r.path);
    return p.is_absolute() ? p : base_dir / p;
}

std::vector<Label> DatasetManifest::labels() const
{
    std::vector<Label> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.label);
    return out;
}

std::size_t DatasetManifest::fold_count() const
{
    std::size_t k = 0;
    for (const auto& r : records)
        if (r.fold) k = std::max(k, *r.fold + 1);
    return k;
}

std::string manifest_line(const ManifestRecord& record)
{
    nlohmann::ordered_json j;
    j["path"] = record.path;
    j["label"] = to_string(record.label);
    j["fold"] = record.fold ? nlohmann::ordered_json(*record.fold) : nlohmann::ordered_json(nullptr);
    if (record.patient) j["patient"] = *record.patient;
    return j.dump();
}

DatasetManifest read_manifest(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    DatasetManifest m;
    m.base_dir = path.parent_path();
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.string() + ":" + std::to_string(lineno);
        ManifestRecord r;
        try {
            const auto j = nlohmann::json::parse(line);
            r.path = j.at("path").get<std::string>();
            r.label = label_from_string(j.at("label").get<std::string>());
            if (j.contains("fold") && !j["fold"].is_null()) r.fold = j["fold"].get<std::size_t>();
            if (j.contains("patient") && !j["patient"].is_null()) r.patient = j["patient"].get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(where + ": malformed manifest record: " + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(where + ": " + e.what());
        }
        if (!seen.insert(r.path).second) throw ValidationError(where + ": duplicate path '" + r.path + "'");
        m.records.push_back(std::move(r));
    }
    if (m.records.empty()) throw ValidationError("manifest " + path.string() + " has no records");
    return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    for (const auto& r : manifest.records) out << manifest_line(r) << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

namespace {

std::vector<std::size_t> group_kfold(const std::vector<Label>& labels, std::size_t k, std::uint64_t seed,
                                     const std::vector<std::string>& groups)
{
    // Group -> members, in first-appearance order.
    std::vector<std::string> order;
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        auto [it, fresh] = members.try_emplace(groups[i]);
        if (fresh) order.push_back(groups[i]);
        it->second.push_back(i);
    }
    if (order.size() < k)
        throw ValidationError("group split needs at least " + std::to_string(k) + " groups, got " +
                              std::to_string(order.size()));
    std::mt19937_64 rng(seed);
    fisher_yates(order, rng);

    // Greedy: each group joins the fold holding the fewest items of its
    // majority class, ties to the fold with fewest items, then lowest index.
    std::vector<std::array<std::size_t, 2>> per_class(k, {0, 0});
    std::vector<std::size_t> fold_of(labels.size());
    for (const auto& g : order) {
        const auto& idx = members[g];
        std::array<std::size_t, 2> counts{0, 0};
        for (std::size_t i : idx) ++counts[static_cast<int>(labels[i])];
        const int major = counts[1] > counts[0] ? 1 : 0;
        std::size_t best = 0;
        for (std::size_t f = 1; f < k; ++f) {
            const auto key = [&](std::size_t x) {
                return std::pair{per_class[x][major], per_class[x][0] + per_class[x][1]};
            };
            if (key(f) < key(best)) best = f;
        }
        for (std::size_t i : idx) fold_of[i] = best;
        per_class[best][0] += counts[0];
        per_class[best][1] += counts[1];
    }
    return fold_of;
}

} // namespace

std::vector<std::size_t> stratified_kfold(const std::vector<Label>& labels, std::size_t k, std::uint64_t seed,
                                          const std::vector<std::string>* groups)
{
    if (k < 2) throw ValidationError("k-fold needs k >= 2, got " + std::to_string(k));
    if (groups) {
        if (groups->size() != labels.size()) throw ValidationError("group list does not match label count");
        return group_kfold(labels, k, seed, *groups);
    }
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> fold_of(labels.size());
    for (Label cls : {Label::Diagnostic, Label::Nondiagnostic}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == cls) idx.push_back(i);
        if (idx.size() < k)
            throw ValidationError("class " + to_string(cls) + " has " + std::to_string(idx.size()) +
                                  " items, fewer than k=" + std::to_string(k));
        fisher_yates(idx, rng);
        const std::size_t base = idx.size() / k, extra = idx.size() % k;
        std::size_t pos = 0;
        for (std::size_t f = 0; f < k; ++f) {
            const std::size_t len = base + (f >= k - extra ? 1 : 0);
            for (std::size_t j = 0; j < len; ++j) fold_of[idx[pos++]] = f;
        }
    }
    return fold_of;
}

std::size_t validation_count(std::size_t n)
{
    return (n + 1) / 4;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> train_val_split(
    const std::vector<std::size_t>& indices, const std::vector<Label>& labels, std::uint64_t seed)
{
    if (indices.empty()) throw ValidationError("train/validation split of an empty set");
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> train, val;
    for (Label cls : {Label::Diagnostic, Label::Nondiagnostic}) {
        std::vector<std::size_t> idx;
        for (std::size_t i : indices) {
            if (i >= labels.size()) throw ValidationError("split index " + std::to_string(i) + " out of range");
            if (labels[i] == cls) idx.push_back(i);
        }
        if (idx.empty()) throw ValidationError("class " + to_string(cls) + " is empty in the train/validation pool");
        fisher_yates(idx, rng);
        const std::size_t nval = validation_count(idx.size());
        val.insert(val.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(nval));
        train.insert(train.end(), idx.begin() + static_cast<std::ptrdiff_t>(nval), idx.end());
    }
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    return {train, val};
}

std::vector<GrayImage> load_images(const DatasetManifest& manifest, std::optional<std::size_t> size)
{
    std::vector<GrayImage> out;
    out.reserve(manifest.records.size());
    for (const auto& r : manifest.records) {
        GrayImage img = pgm_read(manifest.resolve(r));
        if (size && (img.width != *size || img.height != *size)) img = resize_bilinear(img, *size, *size);
        out.push_back(std::move(img));
    }
    return out;
}

} // namespace cle
