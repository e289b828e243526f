#include "cle/network.hpp"

#include <array>
#include <cmath>

namespace cle {

namespace {

class ConvLayer final : public Layer {
public:
    ConvLayer(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride, std::size_t pad,
              bool input_grad = true)
        : params_({cout, cin, k, k}, {cout}), stride_(stride), pad_(pad), input_grad_(input_grad) {}

    Tensor forward(const Tensor& input, Mode, std::mt19937_64&) override
    {
        cached_ = input;
        return conv2d_forward(input, params_, stride_, pad_);
    }
    Tensor infer(const Tensor& input) const override { return conv2d_forward(input, params_, stride_, pad_); }
    Tensor backward(const Tensor& grad_out) override
    {
        return conv2d_backward(grad_out, cached_, params_, stride_, pad_, input_grad_);
    }
    void collect_params(std::vector<Params*>& out) override { out.push_back(&params_); }
    void collect_params(std::vector<const Params*>& out) const override { out.push_back(&params_); }

private:
    Params params_;
    std::size_t stride_, pad_;
    bool input_grad_;
    Tensor cached_;
};

class ReluLayer final : public Layer {
public:
    Tensor forward(const Tensor& input, Mode, std::mt19937_64&) override
    {
        cached_ = input;
        return relu_forward(input);
    }
    Tensor infer(const Tensor& input) const override { return relu_forward(input); }
    Tensor backward(const Tensor& grad_out) override
    {
        if (cached_.rank() == 0) throw UsageError("relu backward called before forward");
        return relu_backward(grad_out, cached_);
    }

private:
    Tensor cached_;
};

class LrnLayer final : public Layer {
public:
    Tensor forward(const Tensor& input, Mode, std::mt19937_64&) override
    {
        cached_ = input;
        return lrn_forward(input);
    }
    Tensor infer(const Tensor& input) const override { return lrn_forward(input); }
    Tensor backward(const Tensor& grad_out) override { return lrn_backward(grad_out, cached_); }

private:
    Tensor cached_;
};

class MaxPoolLayer final : public Layer {
public:
    MaxPoolLayer(std::size_t window, std::size_t stride, std::size_t pad)
        : window_(window), stride_(stride), pad_(pad) {}

    Tensor forward(const Tensor& input, Mode, std::mt19937_64&) override
    {
        auto res = maxpool_forward(input, window_, stride_, pad_);
        argmax_ = std::move(res.argmax);
        input_shape_ = std::move(res.input_shape);
        return std::move(res.output);
    }
    Tensor infer(const Tensor& input) const override { return maxpool_forward(input, window_, stride_, pad_).output; }
    Tensor backward(const Tensor& grad_out) override
    {
        if (input_shape_.empty()) throw UsageError("maxpool backward called before forward");
        return maxpool_backward(grad_out, std::span<const std::size_t>(argmax_), input_shape_);
    }

private:
    std::size_t window_, stride_, pad_;
    std::vector<std::size_t> argmax_;
    Shape input_shape_;
};

class FcLayer final : public Layer {
public:
    FcLayer(std::size_t in, std::size_t out) : params_({out, in}, {out}) {}

    Tensor forward(const Tensor& input, Mode, std::mt19937_64&) override
    {
        cached_ = input;
        return fc_forward(input, params_);
    }
    Tensor infer(const Tensor& input) const override { return fc_forward(input, params_); }
    Tensor backward(const Tensor& grad_out) override { return fc_backward(grad_out, cached_, params_); }
    void collect_params(std::vector<Params*>& out) override { out.push_back(&params_); }
    void collect_params(std::vector<const Params*>& out) const override { out.push_back(&params_); }

private:
    Params params_;
    Tensor cached_;
};

class DropoutLayer final : public Layer {
public:
    explicit DropoutLayer(double rate) : rate_(rate) {}

    Tensor forward(const Tensor& input, Mode mode, std::mt19937_64& rng) override
    {
        auto res = dropout_forward(input, rate_, mode, rng);
        mask_ = std::move(res.mask);
        return std::move(res.output);
    }
    Tensor infer(const Tensor& input) const override { return input; }
    Tensor backward(const Tensor& grad_out) override
    {
        return dropout_backward(grad_out, std::span<const float>(mask_));
    }

private:
    double rate_;
    std::vector<float> mask_;
};

class GlobalAvgPoolLayer final : public Layer {
public:
    Tensor forward(const Tensor& input, Mode, std::mt19937_64&) override
    {
        input_shape_ = input.shape();
        return global_avgpool_forward(input);
    }
    Tensor infer(const Tensor& input) const override { return global_avgpool_forward(input); }
    Tensor backward(const Tensor& grad_out) override
    {
        if (input_shape_.empty()) throw UsageError("global_avgpool backward called before forward");
        return global_avgpool_backward(grad_out, input_shape_);
    }

private:
    Shape input_shape_;
};

class Sequence {
public:
    void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

    Tensor forward(Tensor x, Mode mode, std::mt19937_64& rng)
    {
        for (auto& l : layers_) x = l->forward(x, mode, rng);
        return x;
    }
    Tensor infer(Tensor x) const
    {
        for (const auto& l : layers_) x = l->infer(x);
        return x;
    }
    Tensor backward(Tensor g)
    {
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
        return g;
    }
    void collect(std::vector<Params*>& out)
    {
        for (auto& l : layers_) l->collect_params(out);
    }
    void collect(std::vector<const Params*>& out) const
    {
        for (const auto& l : layers_) l->collect_params(out);
    }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

// Four parallel branches concatenated along channels.
class InceptionLayer final : public Layer {
public:
    InceptionLayer(std::size_t cin, const InceptionBlockSpec& b)
        : widths_{b.conv1, b.conv3, b.conv5, b.pool_proj}
    {
        branches_[0].add(std::make_unique<ConvLayer>(cin, b.conv1, 1, 1, 0));
        branches_[0].add(std::make_unique<ReluLayer>());

        branches_[1].add(std::make_unique<ConvLayer>(cin, b.reduce3, 1, 1, 0));
        branches_[1].add(std::make_unique<ReluLayer>());
        branches_[1].add(std::make_unique<ConvLayer>(b.reduce3, b.conv3, 3, 1, 1));
        branches_[1].add(std::make_unique<ReluLayer>());

        branches_[2].add(std::make_unique<ConvLayer>(cin, b.reduce5, 1, 1, 0));
        branches_[2].add(std::make_unique<ReluLayer>());
        branches_[2].add(std::make_unique<ConvLayer>(b.reduce5, b.conv5, 5, 1, 2));
        branches_[2].add(std::make_unique<ReluLayer>());

        branches_[3].add(std::make_unique<MaxPoolLayer>(3, 1, 1));
        branches_[3].add(std::make_unique<ConvLayer>(cin, b.pool_proj, 1, 1, 0));
        branches_[3].add(std::make_unique<ReluLayer>());
    }

    Tensor forward(const Tensor& input, Mode mode, std::mt19937_64& rng) override
    {
        std::array<Tensor, 4> outs;
        for (std::size_t i = 0; i < 4; ++i) outs[i] = branches_[i].forward(input, mode, rng);
        return concat_channels(std::span<const Tensor>(outs));
    }
    Tensor infer(const Tensor& input) const override
    {
        std::array<Tensor, 4> outs;
        for (std::size_t i = 0; i < 4; ++i) outs[i] = branches_[i].infer(input);
        return concat_channels(std::span<const Tensor>(outs));
    }
    Tensor backward(const Tensor& grad_out) override
    {
        auto grads = concat_channels_backward(grad_out, std::span<const std::size_t>(widths_));
        Tensor total = branches_[0].backward(std::move(grads[0]));
        for (std::size_t i = 1; i < 4; ++i) {
            Tensor g = branches_[i].backward(std::move(grads[i]));
            for (std::size_t j = 0; j < total.size(); ++j) total[j] += g[j];
        }
        return total;
    }
    void collect_params(std::vector<Params*>& out) override
    {
        for (auto& b : branches_) b.collect(out);
    }
    void collect_params(std::vector<const Params*>& out) const override
    {
        for (const auto& b : branches_) b.collect(out);
    }

private:
    std::array<std::size_t, 4> widths_;
    std::array<Sequence, 4> branches_;
};

std::size_t flat(const Shape& s) { return shape_size(s); }

} // namespace

std::unique_ptr<Layer> make_layer(const LayerDesc& d)
{
    switch (d.kind) {
    case LayerKind::Conv:
        return std::make_unique<ConvLayer>(d.input.at(0), d.out_channels, d.kernel, d.stride, d.pad);
    case LayerKind::ReLU:
        return std::make_unique<ReluLayer>();
    case LayerKind::LRN:
        return std::make_unique<LrnLayer>();
    case LayerKind::MaxPool:
        return std::make_unique<MaxPoolLayer>(d.kernel, d.stride, d.pad);
    case LayerKind::FC:
        return std::make_unique<FcLayer>(flat(d.input), d.out_channels);
    case LayerKind::Dropout:
        return std::make_unique<DropoutLayer>(d.dropout_rate);
    case LayerKind::Inception:
        return std::make_unique<InceptionLayer>(d.input.at(0), d.inception);
    case LayerKind::GlobalAvgPool:
        return std::make_unique<GlobalAvgPoolLayer>();
    }
    throw StructuralError("unknown layer kind");
}

Network::Network(NetSpec spec, std::uint64_t init_seed, bool initialize)
    : spec_(std::move(spec)), dropout_rng_(init_seed ^ 0x9e3779b97f4a7c15ULL)
{
    validate(spec_);
    for (const LayerDesc& d : spec_.layers) layers_.push_back(make_layer(d));
    // Nothing consumes the image gradient, so a leading conv skips computing it.
    if (spec_.layers.front().kind == LayerKind::Conv) {
        const LayerDesc& d = spec_.layers.front();
        layers_.front() = std::make_unique<ConvLayer>(d.input.at(0), d.out_channels, d.kernel, d.stride, d.pad, false);
    }

    if (!initialize) return;
    std::mt19937_64 rng(init_seed);
    for (Params* p : params()) {
        const Shape& ws = p->weights.shape();
        std::size_t fan_in = 1;
        for (std::size_t i = 1; i < ws.size(); ++i) fan_in *= ws[i];
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        for (float& w : p->weights.data()) w = static_cast<float>(dist(rng));
        p->bias.zero();
        p->zero_grad();
        p->weight_velocity.zero();
        p->bias_velocity.zero();
    }
}

void Network::check_input(const Tensor& batch) const
{
    Shape expected{batch.rank() ? batch.dim(0) : 0};
    expected.insert(expected.end(), spec_.input.begin(), spec_.input.end());
    if (batch.rank() != 4 || batch.shape() != expected)
        throw StructuralError("net '" + spec_.name + "' expects input [N," + shape_str(spec_.input).substr(1) +
                              ", got " + shape_str(batch.shape()));
}

Tensor Network::forward(const Tensor& batch, Mode mode)
{
    check_input(batch);
    Tensor x = batch;
    for (auto& l : layers_) x = l->forward(x, mode, dropout_rng_);
    return x;
}

void Network::backward(const Tensor& grad_logits)
{
    Tensor g = grad_logits;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
}

Tensor Network::predict(const Tensor& batch) const
{
    check_input(batch);
    Tensor x = batch;
    for (const auto& l : layers_) x = l->infer(x);
    return x;
}

std::vector<Params*> Network::params()
{
    std::vector<Params*> out;
    for (auto& l : layers_) l->collect_params(out);
    return out;
}

std::vector<const Params*> Network::params() const
{
    std::vector<const Params*> out;
    for (const auto& l : layers_) l->collect_params(out);
    return out;
}

std::size_t Network::parameter_count() const
{
    std::size_t n = 0;
    for (const Params* p : params()) n += p->count();
    return n;
}

void Network::zero_grad()
{
    for (Params* p : params()) p->zero_grad();
}

std::vector<std::pair<Shape, Shape>> parameter_shapes(const NetSpec& spec)
{
    std::vector<std::pair<Shape, Shape>> out;
    auto conv = [&out](std::size_t cin, std::size_t cout, std::size_t k) {
        out.push_back({{cout, cin, k, k}, {cout}});
    };
    for (const LayerDesc& d : spec.layers) {
        switch (d.kind) {
        case LayerKind::Conv:
            conv(d.input.at(0), d.out_channels, d.kernel);
            break;
        case LayerKind::FC:
            out.push_back({{d.out_channels, shape_size(d.input)}, {d.out_channels}});
            break;
        case LayerKind::Inception: {
            const std::size_t cin = d.input.at(0);
            const auto& b = d.inception;
            conv(cin, b.conv1, 1);
            conv(cin, b.reduce3, 1);
            conv(b.reduce3, b.conv3, 3);
            conv(cin, b.reduce5, 1);
            conv(b.reduce5, b.conv5, 5);
            conv(cin, b.pool_proj, 1);
            break;
        }
        default:
            break;
        }
    }
    return out;
}

std::vector<double> positive_probabilities(const Tensor& logits)
{
    const Tensor probs = softmax(logits);
    const std::size_t N = probs.dim(0), C = probs.dim(1);
    std::vector<double> out(N);
    for (std::size_t n = 0; n < N; ++n) out[n] = static_cast<double>(probs[n * C + kDiagnosticClass]);
    return out;
}

} // namespace cle
