#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cle/net_spec.hpp"
#include "cle/ops.hpp"

namespace cle {

using Params = LayerParams<float>;

/// One differentiable stage. forward() caches what backward() needs;
/// infer() is const and caches nothing, so a network used only through
/// infer() may be shared between threads.
class Layer {
public:
    virtual ~Layer() = default;

    virtual Tensor forward(const Tensor& input, Mode mode, std::mt19937_64& rng) = 0;
    virtual Tensor infer(const Tensor& input) const = 0;
    virtual Tensor backward(const Tensor& grad_out) = 0;

    virtual void collect_params(std::vector<Params*>&) {}
    virtual void collect_params(std::vector<const Params*>&) const {}
};

std::unique_ptr<Layer> make_layer(const LayerDesc& desc);

/// A network instance built from a validated NetSpec. Single writer:
/// forward/backward/update must be serialized by the caller.
class Network {
public:
    /// Builds the layers and draws He-normal weights (std sqrt(2/fan_in),
    /// zero bias) from init_seed. With initialize=false all weights are zero.
    Network(NetSpec spec, std::uint64_t init_seed, bool initialize = true);

    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;

    const NetSpec& spec() const { return spec_; }

    /// Training-path forward; caches activations for backward().
    Tensor forward(const Tensor& batch, Mode mode);
    /// Backpropagates dL/dlogits, accumulating parameter gradients.
    void backward(const Tensor& grad_logits);
    /// Inference without caching; logits [N, classes].
    Tensor predict(const Tensor& batch) const;

    std::vector<Params*> params();
    std::vector<const Params*> params() const;
    std::size_t parameter_count() const;
    void zero_grad();

    void seed_dropout(std::uint64_t seed) { dropout_rng_.seed(seed); }

private:
    void check_input(const Tensor& batch) const;

    NetSpec spec_;
    std::vector<std::unique_ptr<Layer>> layers_;
    std::mt19937_64 dropout_rng_;
};

/// (weights, bias) shapes of every parameterized layer, in the order
/// Network::params() returns them.
std::vector<std::pair<Shape, Shape>> parameter_shapes(const NetSpec& spec);

/// Probability of the positive ("diagnostic", class index 1) class per row.
std::vector<double> positive_probabilities(const Tensor& logits);

constexpr std::size_t kDiagnosticClass = 1;

} // namespace cle
