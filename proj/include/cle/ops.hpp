#pragma once

// Differentiable layer kernels. Every kernel is a free function over
// BasicTensor<T>; float and double are explicitly instantiated in ops.cpp.
// Reductions (dot products, loss sums) accumulate in double regardless of T.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "cle/tensor.hpp"

namespace cle {

/// Trainable parameters of one layer with their gradient accumulators and
/// momentum buffers. All three copies of a tensor always share a shape.
template <typename T>
struct LayerParams {
    BasicTensor<T> weights;
    BasicTensor<T> bias;
    BasicTensor<T> weight_grad;
    BasicTensor<T> bias_grad;
    BasicTensor<T> weight_velocity;
    BasicTensor<T> bias_velocity;

    LayerParams() = default;
    LayerParams(const Shape& weight_shape, const Shape& bias_shape)
        : weights(weight_shape), bias(bias_shape), weight_grad(weight_shape), bias_grad(bias_shape),
          weight_velocity(weight_shape), bias_velocity(bias_shape) {}

    void zero_grad()
    {
        weight_grad.zero();
        bias_grad.zero();
    }

    std::size_t count() const { return weights.size() + bias.size(); }
};

// Output extent of a sliding window: floor((in + 2*pad - window) / stride) + 1.
// Throws StructuralError when the window does not fit.
std::size_t window_output_extent(std::size_t in, std::size_t window, std::size_t stride, std::size_t pad);

// ---- convolution (cross-correlation, zero padding) ----
// weights: [Cout, Cin, k, k], bias: [Cout]

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const LayerParams<T>& params, std::size_t stride,
                              std::size_t pad);

/// Returns dL/dinput and accumulates weight/bias gradients into params.
/// When need_input_grad is false the returned tensor is empty.
template <typename T>
BasicTensor<T> conv2d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& cached_input,
                               LayerParams<T>& params, std::size_t stride, std::size_t pad,
                               bool need_input_grad = true);

// ---- max pooling ----

template <typename T>
struct PoolResult {
    BasicTensor<T> output;
    // Flat row-major index into the input tensor of each output's winner.
    std::vector<std::size_t> argmax;
    Shape input_shape;
};

template <typename T>
PoolResult<T> maxpool_forward(const BasicTensor<T>& input, std::size_t window, std::size_t stride,
                              std::size_t pad = 0);

template <typename T>
BasicTensor<T> maxpool_backward(const BasicTensor<T>& grad_out, std::span<const std::size_t> argmax,
                                const Shape& input_shape);

// ---- ReLU ----

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input);

// Derivative at exactly 0 is 0.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& cached_input);

// ---- local response normalization across channels ----

struct LrnConfig {
    std::size_t depth_radius = 2;
    double k = 2.0;
    double alpha = 1e-4;
    double beta = 0.75;
};

template <typename T>
BasicTensor<T> lrn_forward(const BasicTensor<T>& input, const LrnConfig& cfg = {});

template <typename T>
BasicTensor<T> lrn_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& cached_input,
                            const LrnConfig& cfg = {});

// ---- fully connected: input [N, D] (higher ranks are flattened), weights [M, D], bias [M] ----

template <typename T>
BasicTensor<T> fc_forward(const BasicTensor<T>& input, const LayerParams<T>& params);

template <typename T>
BasicTensor<T> fc_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& cached_input,
                           LayerParams<T>& params);

// ---- inverted dropout ----

enum class Mode { Train, Infer };

template <typename T>
struct DropoutResult {
    BasicTensor<T> output;
    // Per-element multiplier applied in train mode (0 or 1/(1-rate)); empty in infer mode.
    std::vector<T> mask;
};

template <typename T>
DropoutResult<T> dropout_forward(const BasicTensor<T>& input, double rate, Mode mode, std::mt19937_64& rng);

template <typename T>
BasicTensor<T> dropout_backward(const BasicTensor<T>& grad_out, std::span<const T> mask);

// ---- channel concatenation ----

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>> inputs);

template <typename T>
std::vector<BasicTensor<T>> concat_channels_backward(const BasicTensor<T>& grad_out,
                                                     std::span<const std::size_t> branch_channels);

// ---- global average pooling: [N, C, H, W] -> [N, C] ----

template <typename T>
BasicTensor<T> global_avgpool_forward(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> global_avgpool_backward(const BasicTensor<T>& grad_out, const Shape& input_shape);

// ---- softmax cross-entropy ----

template <typename T>
struct LossValue {
    double value = 0.0;       // mean loss in nats
    BasicTensor<T> gradient;  // dL/dlogits, same shape as the logits
};

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits);

/// Mean softmax cross-entropy over the batch. targets must be one-hot rows.
template <typename T>
LossValue<T> softmax_cross_entropy(const BasicTensor<T>& logits, const BasicTensor<T>& targets);

} // namespace cle
