#include "cle/net_spec.hpp"

#include <array>
#include <utility>

namespace cle {

namespace {

constexpr std::array<std::pair<LayerKind, const char*>, 8> kKindNames{{
    {LayerKind::Conv, "conv"},
    {LayerKind::ReLU, "relu"},
    {LayerKind::LRN, "lrn"},
    {LayerKind::MaxPool, "maxpool"},
    {LayerKind::FC, "fc"},
    {LayerKind::Dropout, "dropout"},
    {LayerKind::Inception, "inception"},
    {LayerKind::GlobalAvgPool, "global_avgpool"},
}};

std::string describe(std::size_t index, const LayerDesc& layer)
{
    return "layer " + std::to_string(index) + " (" + to_string(layer.kind) + ")";
}

Shape spatial_output(const LayerDesc& l, std::size_t channels)
{
    if (l.input.size() != 3)
        throw StructuralError(to_string(l.kind) + " needs a [C,H,W] input, declared " + shape_str(l.input));
    return {channels, window_output_extent(l.input[1], l.kernel, l.stride, l.pad),
            window_output_extent(l.input[2], l.kernel, l.stride, l.pad)};
}

} // namespace

std::string to_string(LayerKind kind)
{
    for (const auto& [k, name] : kKindNames)
        if (k == kind) return name;
    return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name)
{
    for (const auto& [k, n] : kKindNames)
        if (name == n) return k;
    throw StructuralError("unknown layer kind '" + name + "'");
}

Shape layer_output_shape(const LayerDesc& l)
{
    switch (l.kind) {
    case LayerKind::Conv:
        if (l.out_channels == 0) throw StructuralError("conv layer with zero filters");
        return spatial_output(l, l.out_channels);
    case LayerKind::MaxPool:
        if (l.input.size() != 3) throw StructuralError("maxpool needs a [C,H,W] input");
        if (l.pad >= l.kernel) throw StructuralError("maxpool pad must be smaller than the window");
        return spatial_output(l, l.input[0]);
    case LayerKind::FC:
        if (l.input.empty()) throw StructuralError("fc layer without a declared input");
        if (l.out_channels == 0) throw StructuralError("fc layer with zero units");
        return {l.out_channels};
    case LayerKind::ReLU:
    case LayerKind::Dropout:
        if (l.input.empty()) throw StructuralError(to_string(l.kind) + " layer without a declared input");
        if (l.kind == LayerKind::Dropout && !(l.dropout_rate >= 0.0 && l.dropout_rate < 1.0))
            throw ConfigError("dropout rate must lie in [0, 1)");
        return l.input;
    case LayerKind::LRN:
        if (l.input.size() != 3) throw StructuralError("lrn needs a [C,H,W] input");
        return l.input;
    case LayerKind::Inception: {
        if (l.input.size() != 3) throw StructuralError("inception needs a [C,H,W] input");
        const auto& b = l.inception;
        if (b.conv1 == 0 || b.reduce3 == 0 || b.conv3 == 0 || b.reduce5 == 0 || b.conv5 == 0 || b.pool_proj == 0)
            throw StructuralError("inception branches need nonzero widths");
        return {b.out_channels(), l.input[1], l.input[2]};
    }
    case LayerKind::GlobalAvgPool:
        if (l.input.size() != 3) throw StructuralError("global_avgpool needs a [C,H,W] input");
        return {l.input[0]};
    }
    throw StructuralError("unknown layer kind");
}

void validate(const NetSpec& spec)
{
    if (spec.input.size() != 3) throw StructuralError("net input must be [C,H,W], got " + shape_str(spec.input));
    if (spec.layers.empty()) throw StructuralError("net '" + spec.name + "' has no layers");
    if (spec.classes < 2) throw StructuralError("net needs at least 2 classes");
    Shape expected = spec.input;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerDesc& l = spec.layers[i];
        if (l.input != expected)
            throw StructuralError(describe(i, l) + " declares input " + shape_str(l.input) + " but receives " +
                                  shape_str(expected));
        try {
            expected = layer_output_shape(l);
        } catch (const StructuralError& e) {
            throw StructuralError(describe(i, l) + ": " + e.what());
        }
    }
    if (expected != Shape{spec.classes})
        throw StructuralError("net '" + spec.name + "' emits " + shape_str(expected) + ", expected [" +
                              std::to_string(spec.classes) + "] logits");
}

// ---------------------------------------------------------------------------

SpecBuilder::SpecBuilder(std::string name, Shape input, std::size_t classes) : current_(input)
{
    spec_.name = std::move(name);
    spec_.input = std::move(input);
    spec_.classes = classes;
}

SpecBuilder& SpecBuilder::push(LayerDesc desc)
{
    desc.input = current_;
    current_ = layer_output_shape(desc);
    spec_.layers.push_back(std::move(desc));
    return *this;
}

SpecBuilder& SpecBuilder::conv(std::size_t filters, std::size_t kernel, std::size_t stride, std::size_t pad)
{
    LayerDesc d;
    d.kind = LayerKind::Conv;
    d.out_channels = filters;
    d.kernel = kernel;
    d.stride = stride;
    d.pad = pad;
    return push(std::move(d));
}

SpecBuilder& SpecBuilder::relu()
{
    LayerDesc d;
    d.kind = LayerKind::ReLU;
    return push(std::move(d));
}

SpecBuilder& SpecBuilder::lrn()
{
    LayerDesc d;
    d.kind = LayerKind::LRN;
    return push(std::move(d));
}

SpecBuilder& SpecBuilder::maxpool(std::size_t window, std::size_t stride, std::size_t pad)
{
    LayerDesc d;
    d.kind = LayerKind::MaxPool;
    d.kernel = window;
    d.stride = stride;
    d.pad = pad;
    return push(std::move(d));
}

SpecBuilder& SpecBuilder::fc(std::size_t units)
{
    LayerDesc d;
    d.kind = LayerKind::FC;
    d.out_channels = units;
    return push(std::move(d));
}

SpecBuilder& SpecBuilder::dropout(double rate)
{
    LayerDesc d;
    d.kind = LayerKind::Dropout;
    d.dropout_rate = rate;
    return push(std::move(d));
}

SpecBuilder& SpecBuilder::inception(const InceptionBlockSpec& block)
{
    LayerDesc d;
    d.kind = LayerKind::Inception;
    d.inception = block;
    return push(std::move(d));
}

SpecBuilder& SpecBuilder::global_avgpool()
{
    LayerDesc d;
    d.kind = LayerKind::GlobalAvgPool;
    return push(std::move(d));
}

NetSpec SpecBuilder::build() const
{
    validate(spec_);
    return spec_;
}

// ---------------------------------------------------------------------------

NetSpec build_mini_alexnet(bool use_lrn, double dropout_rate)
{
    SpecBuilder b("mini-alexnet", {1, 64, 64});
    b.conv(16, 5, 1, 2).relu();
    if (use_lrn) b.lrn();
    b.maxpool(2, 2);
    b.conv(32, 5, 1, 2).relu();
    if (use_lrn) b.lrn();
    b.maxpool(2, 2);
    b.conv(64, 3, 1, 1).relu();
    b.conv(64, 3, 1, 1).relu();
    b.conv(32, 3, 1, 1).relu().maxpool(2, 2);
    b.fc(256).relu();
    if (dropout_rate > 0.0) b.dropout(dropout_rate);
    b.fc(2);
    return b.build();
}

NetSpec build_full_alexnet(bool use_lrn, double dropout_rate)
{
    SpecBuilder b("full-alexnet", {1, 256, 256});
    b.conv(96, 11, 4, 0).relu();
    if (use_lrn) b.lrn();
    b.maxpool(3, 2);
    b.conv(256, 5, 1, 2).relu();
    if (use_lrn) b.lrn();
    b.maxpool(3, 2);
    b.conv(384, 3, 1, 1).relu();
    b.conv(384, 3, 1, 1).relu();
    b.conv(256, 3, 1, 1).relu().maxpool(3, 2);
    b.fc(4096).relu();
    if (dropout_rate > 0.0) b.dropout(dropout_rate);
    b.fc(4096).relu();
    if (dropout_rate > 0.0) b.dropout(dropout_rate);
    b.fc(2);
    return b.build();
}

NetSpec build_mini_inception_net()
{
    SpecBuilder b("mini-inception", {1, 64, 64});
    b.conv(16, 5, 1, 2).relu().maxpool(2, 2);
    b.inception({.conv1 = 8, .reduce3 = 8, .conv3 = 12, .reduce5 = 4, .conv5 = 6, .pool_proj = 6});
    b.maxpool(2, 2);
    b.inception({.conv1 = 16, .reduce3 = 16, .conv3 = 24, .reduce5 = 8, .conv5 = 12, .pool_proj = 12});
    b.global_avgpool().fc(2);
    return b.build();
}

const std::vector<std::string>& architecture_names()
{
    static const std::vector<std::string> names{"mini-alexnet", "mini-inception", "full-alexnet"};
    return names;
}

NetSpec build_architecture(const std::string& arch)
{
    if (arch == "mini-alexnet") return build_mini_alexnet();
    if (arch == "mini-inception") return build_mini_inception_net();
    if (arch == "full-alexnet") return build_full_alexnet();
    std::string valid;
    for (const auto& n : architecture_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown architecture '" + arch + "' (valid: " + valid + ")");
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const NetSpec& spec)
{
    nlohmann::json layers = nlohmann::json::array();
    for (const LayerDesc& l : spec.layers) {
        nlohmann::json j{{"kind", to_string(l.kind)}, {"input", l.input}};
        switch (l.kind) {
        case LayerKind::Conv:
            j["filters"] = l.out_channels;
            [[fallthrough]];
        case LayerKind::MaxPool:
            j["kernel"] = l.kernel;
            j["stride"] = l.stride;
            j["pad"] = l.pad;
            break;
        case LayerKind::FC:
            j["units"] = l.out_channels;
            break;
        case LayerKind::Dropout:
            j["rate"] = l.dropout_rate;
            break;
        case LayerKind::Inception:
            j["branches"] = {{"conv1", l.inception.conv1},     {"reduce3", l.inception.reduce3},
                             {"conv3", l.inception.conv3},     {"reduce5", l.inception.reduce5},
                             {"conv5", l.inception.conv5},     {"pool_proj", l.inception.pool_proj}};
            break;
        default:
            break;
        }
        layers.push_back(std::move(j));
    }
    return {{"name", spec.name}, {"input", spec.input}, {"classes", spec.classes}, {"layers", std::move(layers)}};
}

NetSpec net_spec_from_json(const nlohmann::json& j)
{
    NetSpec spec;
    try {
        spec.name = j.at("name").get<std::string>();
        spec.input = j.at("input").get<Shape>();
        spec.classes = j.at("classes").get<std::size_t>();
        for (const auto& lj : j.at("layers")) {
            LayerDesc l;
            l.kind = layer_kind_from_string(lj.at("kind").get<std::string>());
            l.input = lj.at("input").get<Shape>();
            switch (l.kind) {
            case LayerKind::Conv:
                l.out_channels = lj.at("filters").get<std::size_t>();
                [[fallthrough]];
            case LayerKind::MaxPool:
                l.kernel = lj.at("kernel").get<std::size_t>();
                l.stride = lj.at("stride").get<std::size_t>();
                l.pad = lj.at("pad").get<std::size_t>();
                break;
            case LayerKind::FC:
                l.out_channels = lj.at("units").get<std::size_t>();
                break;
            case LayerKind::Dropout:
                l.dropout_rate = lj.at("rate").get<double>();
                break;
            case LayerKind::Inception: {
                const auto& b = lj.at("branches");
                l.inception = {b.at("conv1").get<std::size_t>(),   b.at("reduce3").get<std::size_t>(),
                               b.at("conv3").get<std::size_t>(),   b.at("reduce5").get<std::size_t>(),
                               b.at("conv5").get<std::size_t>(),   b.at("pool_proj").get<std::size_t>()};
                break;
            }
            default:
                break;
            }
            spec.layers.push_back(std::move(l));
        }
    } catch (const nlohmann::json::exception& e) {
        throw StructuralError(std::string("malformed net spec: ") + e.what());
    }
    validate(spec);
    return spec;
}

} // namespace cle
