#include "cle/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gemm.hpp"

namespace cle {

namespace {

void require_rank(const Shape& shape, std::size_t rank, const char* what)
{
    if (shape.size() != rank)
        throw StructuralError(std::string(what) + " expects a rank-" + std::to_string(rank) + " tensor, got " +
                              shape_str(shape));
}

struct ConvGeometry {
    std::size_t n, cin, h, w, cout, k, stride, pad, hout, wout;

    std::size_t patch() const { return cin * k * k; }
    std::size_t positions() const { return hout * wout; }
    bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

template <typename T>
ConvGeometry conv_geometry(const Shape& in, const LayerParams<T>& params, std::size_t stride, std::size_t pad)
{
    require_rank(in, 4, "conv2d");
    const Shape& ws = params.weights.shape();
    if (ws.size() != 4 || ws[2] != ws[3])
        throw StructuralError("conv2d expects square kernels [Cout,Cin,k,k], got " + shape_str(ws));
    if (ws[1] != in[1])
        throw StructuralError("conv2d input " + shape_str(in) + " has " + std::to_string(in[1]) +
                              " channels but kernel " + shape_str(ws) + " expects " + std::to_string(ws[1]));
    if (params.bias.size() != ws[0])
        throw StructuralError("conv2d bias " + shape_str(params.bias.shape()) + " does not match kernel " +
                              shape_str(ws));
    if (stride == 0) throw StructuralError("conv2d stride must be >= 1");
    ConvGeometry g{in[0], in[1], in[2], in[3], ws[0], ws[2], stride, pad, 0, 0};
    g.hout = window_output_extent(g.h, g.k, stride, pad);
    g.wout = window_output_extent(g.w, g.k, stride, pad);
    return g;
}

// col[(c*k + ky)*k + kx][oy*wout + ox] for one image.
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col)
{
    const std::size_t P = g.positions();
    for (std::size_t c = 0; c < g.cin; ++c) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                T* row = col + ((c * g.k + ky) * g.k + kx) * P;
                for (std::size_t oy = 0; oy < g.hout; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    T* out = row + oy * g.wout;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill(out, out + g.wout, T{0});
                        continue;
                    }
                    const T* src = img + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.wout; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T{0}
                                                                                       : src[ix];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* img)
{
    const std::size_t P = g.positions();
    for (std::size_t c = 0; c < g.cin; ++c) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                const T* row = col + ((c * g.k + ky) * g.k + kx) * P;
                for (std::size_t oy = 0; oy < g.hout; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    T* dst = img + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    const T* src = row + oy * g.wout;
                    for (std::size_t ox = 0; ox < g.wout; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

template <typename T>
void transpose(const T* src, std::size_t rows, std::size_t cols, T* dst)
{
    constexpr std::size_t B = 32;
    for (std::size_t r0 = 0; r0 < rows; r0 += B)
        for (std::size_t c0 = 0; c0 < cols; c0 += B)
            for (std::size_t r = r0; r < std::min(rows, r0 + B); ++r)
                for (std::size_t c = c0; c < std::min(cols, c0 + B); ++c) dst[c * rows + r] = src[r * cols + c];
}

std::size_t flat_features(const Shape& s)
{
    std::size_t d = 1;
    for (std::size_t i = 1; i < s.size(); ++i) d *= s[i];
    return d;
}

} // namespace

std::size_t window_output_extent(std::size_t in, std::size_t window, std::size_t stride, std::size_t pad)
{
    if (stride == 0) throw StructuralError("stride must be >= 1");
    if (window == 0) throw StructuralError("window must be >= 1");
    if (window > in + 2 * pad)
        throw StructuralError("window " + std::to_string(window) + " exceeds padded extent " +
                              std::to_string(in + 2 * pad) + " (input " + std::to_string(in) + ", pad " +
                              std::to_string(pad) + ")");
    return (in + 2 * pad - window) / stride + 1;
}

// ---------------------------------------------------------------------------
// convolution

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const LayerParams<T>& params, std::size_t stride,
                              std::size_t pad)
{
    const ConvGeometry g = conv_geometry(input.shape(), params, stride, pad);
    const std::size_t K = g.patch();
    const std::size_t P = g.positions();
    BasicTensor<T> out({g.n, g.cout, g.hout, g.wout});
    std::vector<T> col(g.pointwise() ? 0 : K * P);

    for (std::size_t n = 0; n < g.n; ++n) {
        const T* img = input.raw() + n * g.cin * g.h * g.w;
        const T* B = img;
        if (!g.pointwise()) {
            im2col(img, g, col.data());
            B = col.data();
        }
        detail::gemm_acc(g.cout, K, P, params.weights.raw(), K, 1, B, P, 1, out.raw() + n * g.cout * P, P,
                         params.bias.raw(), false);
    }
    return out;
}

template <typename T>
BasicTensor<T> conv2d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& cached_input,
                               LayerParams<T>& params, std::size_t stride, std::size_t pad, bool need_input_grad)
{
    if (cached_input.rank() == 0) throw UsageError("conv2d backward called before forward (no cached input)");
    const ConvGeometry g = conv_geometry(cached_input.shape(), params, stride, pad);
    const Shape expected{g.n, g.cout, g.hout, g.wout};
    if (grad_out.shape() != expected)
        throw StructuralError("conv2d backward: grad_out " + shape_str(grad_out.shape()) +
                              " does not match forward output " + shape_str(expected));

    const std::size_t K = g.patch();
    const std::size_t P = g.positions();
    BasicTensor<T> grad_in;
    if (need_input_grad) grad_in = BasicTensor<T>(cached_input.shape());

    std::vector<T> col(g.pointwise() ? 0 : K * P);
    std::vector<T> dcol(need_input_grad && !g.pointwise() ? K * P : 0);

    for (std::size_t n = 0; n < g.n; ++n) {
        const T* img = cached_input.raw() + n * g.cin * g.h * g.w;
        const T* go = grad_out.raw() + n * g.cout * P;

        for (std::size_t co = 0; co < g.cout; ++co) {
            double s = 0.0;
            const T* row = go + co * P;
            for (std::size_t p = 0; p < P; ++p) s += static_cast<double>(row[p]);
            params.bias_grad[co] = static_cast<T>(static_cast<double>(params.bias_grad[co]) + s);
        }

        const T* colp = img;
        if (!g.pointwise()) {
            im2col(img, g, col.data());
            colp = col.data();
        }
        // dW[Cout,K] += gout[Cout,P] * col^T[P,K]
        detail::gemm_acc(g.cout, P, K, go, P, 1, colp, 1, P, params.weight_grad.raw(), K,
                         static_cast<const T*>(nullptr), true);

        if (need_input_grad) {
            T* gi = grad_in.raw() + n * g.cin * g.h * g.w;
            // dcol[K,P] = W^T[K,Cout] * gout[Cout,P]
            T* target = g.pointwise() ? gi : dcol.data();
            detail::gemm_acc(K, g.cout, P, params.weights.raw(), 1, K, go, P, 1, target, P,
                             static_cast<const T*>(nullptr), false);
            if (!g.pointwise()) col2im(dcol.data(), g, gi);
        }
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// max pooling

template <typename T>
PoolResult<T> maxpool_forward(const BasicTensor<T>& input, std::size_t window, std::size_t stride,
                              std::size_t pad)
{
    require_rank(input.shape(), 4, "maxpool");
    const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (pad >= window) throw StructuralError("maxpool pad must be smaller than the window");
    const std::size_t ho = window_output_extent(H, window, stride, pad);
    const std::size_t wo = window_output_extent(W, window, stride, pad);

    PoolResult<T> res{BasicTensor<T>({N, C, ho, wo}), std::vector<std::size_t>(N * C * ho * wo),
                      input.shape()};
    const T* in = input.raw();
    std::size_t o = 0;
    for (std::size_t plane = 0; plane < N * C; ++plane) {
        const std::size_t base = plane * H * W;
        for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy * stride) - static_cast<std::ptrdiff_t>(pad);
            const std::size_t ylo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(y0, 0));
            const std::size_t yhi = std::min<std::size_t>(H, static_cast<std::size_t>(y0 + static_cast<std::ptrdiff_t>(window)));
            for (std::size_t ox = 0; ox < wo; ++ox, ++o) {
                const std::ptrdiff_t x0 =
                    static_cast<std::ptrdiff_t>(ox * stride) - static_cast<std::ptrdiff_t>(pad);
                const std::size_t xlo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(x0, 0));
                const std::size_t xhi =
                    std::min<std::size_t>(W, static_cast<std::size_t>(x0 + static_cast<std::ptrdiff_t>(window)));
                std::size_t best = base + ylo * W + xlo;
                T best_v = in[best];
                for (std::size_t y = ylo; y < yhi; ++y) {
                    for (std::size_t x = xlo; x < xhi; ++x) {
                        const std::size_t idx = base + y * W + x;
                        if (in[idx] > best_v) {
                            best_v = in[idx];
                            best = idx;
                        }
                    }
                }
                res.output[o] = best_v;
                res.argmax[o] = best;
            }
        }
    }
    return res;
}

template <typename T>
BasicTensor<T> maxpool_backward(const BasicTensor<T>& grad_out, std::span<const std::size_t> argmax,
                                const Shape& input_shape)
{
    if (argmax.size() != grad_out.size())
        throw StructuralError("maxpool backward: argmax map has " + std::to_string(argmax.size()) +
                              " entries but grad_out " + shape_str(grad_out.shape()) + " has " +
                              std::to_string(grad_out.size()));
    BasicTensor<T> grad_in(input_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) {
        if (argmax[i] >= grad_in.size())
            throw StructuralError("maxpool backward: argmax index " + std::to_string(argmax[i]) +
                                  " outside input " + shape_str(input_shape));
        grad_in[argmax[i]] += grad_out[i];
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// ReLU

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input)
{
    BasicTensor<T> out = input;
    for (T& v : out.data()) v = v > T{0} ? v : T{0};
    return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& cached_input)
{
    if (grad_out.shape() != cached_input.shape())
        throw StructuralError("relu backward: grad " + shape_str(grad_out.shape()) + " vs input " +
                              shape_str(cached_input.shape()));
    BasicTensor<T> out(grad_out.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = cached_input[i] > T{0} ? grad_out[i] : T{0};
    return out;
}

// ---------------------------------------------------------------------------
// LRN: b_c = a_c / (k + alpha * sum_{c' in window(c)} a_c'^2)^beta

namespace {

// s^-beta; the default beta = 3/4 avoids pow.
inline double inv_pow(double s, double beta)
{
    if (beta == 0.75) {
        const double r = std::sqrt(s);
        return 1.0 / (r * std::sqrt(r));
    }
    return std::pow(s, -beta);
}

// Denominator base k + alpha * sum of squares over the channel window, for one
// image laid out [C, HW].
template <typename T>
void lrn_denominators(const T* a, std::size_t C, std::size_t HW, const LrnConfig& cfg, std::vector<double>& sq,
                      std::vector<double>& scale)
{
    sq.resize(C * HW);
    scale.resize(C * HW);
    for (std::size_t i = 0; i < C * HW; ++i) {
        const double v = static_cast<double>(a[i]);
        sq[i] = v * v;
    }
    for (std::size_t c = 0; c < C; ++c) {
        const std::size_t lo = c >= cfg.depth_radius ? c - cfg.depth_radius : 0;
        const std::size_t hi = std::min(C - 1, c + cfg.depth_radius);
        double* s = scale.data() + c * HW;
        std::fill(s, s + HW, 0.0);
        for (std::size_t cc = lo; cc <= hi; ++cc) {
            const double* q = sq.data() + cc * HW;
            for (std::size_t p = 0; p < HW; ++p) s[p] += q[p];
        }
        for (std::size_t p = 0; p < HW; ++p) s[p] = cfg.k + cfg.alpha * s[p];
    }
}

} // namespace

template <typename T>
BasicTensor<T> lrn_forward(const BasicTensor<T>& input, const LrnConfig& cfg)
{
    require_rank(input.shape(), 4, "lrn");
    const std::size_t N = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
    BasicTensor<T> out(input.shape());
    std::vector<double> sq, scale;
    for (std::size_t n = 0; n < N; ++n) {
        const T* a = input.raw() + n * C * HW;
        T* b = out.raw() + n * C * HW;
        lrn_denominators(a, C, HW, cfg, sq, scale);
        for (std::size_t i = 0; i < C * HW; ++i)
            b[i] = static_cast<T>(static_cast<double>(a[i]) * inv_pow(scale[i], cfg.beta));
    }
    return out;
}

template <typename T>
BasicTensor<T> lrn_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& cached_input,
                            const LrnConfig& cfg)
{
    if (cached_input.rank() == 0) throw UsageError("lrn backward called before forward");
    if (grad_out.shape() != cached_input.shape())
        throw StructuralError("lrn backward: grad " + shape_str(grad_out.shape()) + " vs input " +
                              shape_str(cached_input.shape()));
    const std::size_t N = cached_input.dim(0), C = cached_input.dim(1);
    const std::size_t HW = cached_input.dim(2) * cached_input.dim(3);
    BasicTensor<T> grad_in(cached_input.shape());
    std::vector<double> sq, scale, window(HW);

    // With s_c^-beta in scale and t_c = g_c a_c s_c^(-beta-1) in sq:
    // da_j = g_j s_j^-beta - 2 alpha beta a_j sum_{c in window(j)} t_c
    for (std::size_t n = 0; n < N; ++n) {
        const T* a = cached_input.raw() + n * C * HW;
        const T* g = grad_out.raw() + n * C * HW;
        T* gi = grad_in.raw() + n * C * HW;
        lrn_denominators(a, C, HW, cfg, sq, scale);
        for (std::size_t i = 0; i < C * HW; ++i) {
            const double sb = inv_pow(scale[i], cfg.beta);
            sq[i] = static_cast<double>(g[i]) * static_cast<double>(a[i]) * sb / scale[i];
            scale[i] = sb;
        }
        for (std::size_t j = 0; j < C; ++j) {
            const std::size_t lo = j >= cfg.depth_radius ? j - cfg.depth_radius : 0;
            const std::size_t hi = std::min(C - 1, j + cfg.depth_radius);
            std::fill(window.begin(), window.end(), 0.0);
            for (std::size_t c = lo; c <= hi; ++c) {
                const double* tc = sq.data() + c * HW;
                for (std::size_t p = 0; p < HW; ++p) window[p] += tc[p];
            }
            const std::size_t off = j * HW;
            for (std::size_t p = 0; p < HW; ++p)
                gi[off + p] = static_cast<T>(static_cast<double>(g[off + p]) * scale[off + p] -
                                             2.0 * cfg.alpha * cfg.beta * static_cast<double>(a[off + p]) * window[p]);
        }
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// fully connected

template <typename T>
BasicTensor<T> fc_forward(const BasicTensor<T>& input, const LayerParams<T>& params)
{
    if (input.rank() < 2) throw StructuralError("fc expects [N, D] input, got " + shape_str(input.shape()));
    const std::size_t N = input.dim(0), D = flat_features(input.shape());
    const Shape& ws = params.weights.shape();
    if (ws.size() != 2 || ws[1] != D)
        throw StructuralError("fc input " + shape_str(input.shape()) + " has " + std::to_string(D) +
                              " features but weights " + shape_str(ws) + " expect " +
                              (ws.size() == 2 ? std::to_string(ws[1]) : std::string("?")));
    const std::size_t M = ws[0];
    if (params.bias.size() != M)
        throw StructuralError("fc bias " + shape_str(params.bias.shape()) + " does not match weights " +
                              shape_str(ws));

    std::vector<T> out_t(M * N);
    // out^T[M,N] = W[M,D] * x^T[D,N] + b
    detail::gemm_acc(M, D, N, params.weights.raw(), D, 1, input.raw(), 1, D, out_t.data(), N, params.bias.raw(),
                     false);
    BasicTensor<T> out({N, M});
    transpose(out_t.data(), M, N, out.raw());
    return out;
}

template <typename T>
BasicTensor<T> fc_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& cached_input,
                           LayerParams<T>& params)
{
    if (cached_input.rank() == 0) throw UsageError("fc backward called before forward");
    const std::size_t N = cached_input.dim(0), D = flat_features(cached_input.shape());
    const std::size_t M = params.weights.dim(0);
    if (grad_out.shape() != Shape{N, M})
        throw StructuralError("fc backward: grad_out " + shape_str(grad_out.shape()) + " expected " +
                              shape_str({N, M}));
    for (std::size_t m = 0; m < M; ++m) {
        double s = 0.0;
        for (std::size_t n = 0; n < N; ++n) s += static_cast<double>(grad_out[n * M + m]);
        params.bias_grad[m] = static_cast<T>(static_cast<double>(params.bias_grad[m]) + s);
    }
    // dW[M,D] += g^T[M,N] * x[N,D]
    detail::gemm_acc(M, N, D, grad_out.raw(), 1, M, cached_input.raw(), D, 1, params.weight_grad.raw(), D,
                     static_cast<const T*>(nullptr), true);
    // dx[N,D] = g[N,M] * W[M,D]
    BasicTensor<T> grad_in(cached_input.shape());
    detail::gemm_acc(N, M, D, grad_out.raw(), M, 1, params.weights.raw(), D, 1, grad_in.raw(), D,
                     static_cast<const T*>(nullptr), false);
    return grad_in;
}

// ---------------------------------------------------------------------------
// dropout

template <typename T>
DropoutResult<T> dropout_forward(const BasicTensor<T>& input, double rate, Mode mode, std::mt19937_64& rng)
{
    if (!(rate >= 0.0 && rate < 1.0))
        throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    if (mode == Mode::Infer || rate == 0.0) return {input, {}};

    DropoutResult<T> res{BasicTensor<T>(input.shape()), std::vector<T>(input.size())};
    std::bernoulli_distribution drop(rate);
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (std::size_t i = 0; i < input.size(); ++i) {
        res.mask[i] = drop(rng) ? T{0} : keep_scale;
        res.output[i] = input[i] * res.mask[i];
    }
    return res;
}

template <typename T>
BasicTensor<T> dropout_backward(const BasicTensor<T>& grad_out, std::span<const T> mask)
{
    if (mask.empty()) return grad_out;
    if (mask.size() != grad_out.size())
        throw StructuralError("dropout backward: mask size " + std::to_string(mask.size()) + " vs grad " +
                              shape_str(grad_out.shape()));
    BasicTensor<T> out(grad_out.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = grad_out[i] * mask[i];
    return out;
}

// ---------------------------------------------------------------------------
// concat

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>> inputs)
{
    if (inputs.empty()) throw StructuralError("concat_channels needs at least one input");
    const Shape& first = inputs[0].shape();
    require_rank(first, 4, "concat_channels");
    std::size_t channels = 0;
    for (std::size_t b = 0; b < inputs.size(); ++b) {
        const Shape& s = inputs[b].shape();
        if (s.size() != 4 || s[0] != first[0] || s[2] != first[2] || s[3] != first[3])
            throw StructuralError("concat_channels: branch " + std::to_string(b) + " has shape " + shape_str(s) +
                                  ", expected [" + std::to_string(first[0]) + ",*," + std::to_string(first[2]) +
                                  "," + std::to_string(first[3]) + "]");
        channels += s[1];
    }
    const std::size_t N = first[0], HW = first[2] * first[3];
    BasicTensor<T> out({N, channels, first[2], first[3]});
    for (std::size_t n = 0; n < N; ++n) {
        T* dst = out.raw() + n * channels * HW;
        for (const auto& in : inputs) {
            const std::size_t block = in.dim(1) * HW;
            std::copy_n(in.raw() + n * block, block, dst);
            dst += block;
        }
    }
    return out;
}

template <typename T>
std::vector<BasicTensor<T>> concat_channels_backward(const BasicTensor<T>& grad_out,
                                                     std::span<const std::size_t> branch_channels)
{
    require_rank(grad_out.shape(), 4, "concat_channels backward");
    std::size_t total = 0;
    for (std::size_t c : branch_channels) total += c;
    if (total != grad_out.dim(1))
        throw StructuralError("concat backward: branch channels sum to " + std::to_string(total) + " but grad has " +
                              std::to_string(grad_out.dim(1)));
    const std::size_t N = grad_out.dim(0), H = grad_out.dim(2), W = grad_out.dim(3), HW = H * W;
    std::vector<BasicTensor<T>> grads;
    grads.reserve(branch_channels.size());
    for (std::size_t c : branch_channels) grads.emplace_back(Shape{N, c, H, W});
    for (std::size_t n = 0; n < N; ++n) {
        const T* src = grad_out.raw() + n * total * HW;
        for (std::size_t b = 0; b < grads.size(); ++b) {
            const std::size_t block = branch_channels[b] * HW;
            std::copy_n(src, block, grads[b].raw() + n * block);
            src += block;
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// global average pooling

template <typename T>
BasicTensor<T> global_avgpool_forward(const BasicTensor<T>& input)
{
    require_rank(input.shape(), 4, "global_avgpool");
    const std::size_t N = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
    BasicTensor<T> out({N, C});
    for (std::size_t i = 0; i < N * C; ++i) {
        double s = 0.0;
        const T* p = input.raw() + i * HW;
        for (std::size_t j = 0; j < HW; ++j) s += static_cast<double>(p[j]);
        out[i] = static_cast<T>(s / static_cast<double>(HW));
    }
    return out;
}

template <typename T>
BasicTensor<T> global_avgpool_backward(const BasicTensor<T>& grad_out, const Shape& input_shape)
{
    require_rank(input_shape, 4, "global_avgpool backward");
    const std::size_t N = input_shape[0], C = input_shape[1], HW = input_shape[2] * input_shape[3];
    if (grad_out.shape() != Shape{N, C})
        throw StructuralError("global_avgpool backward: grad " + shape_str(grad_out.shape()) + " vs input " +
                              shape_str(input_shape));
    BasicTensor<T> grad_in(input_shape);
    for (std::size_t i = 0; i < N * C; ++i) {
        const T g = static_cast<T>(static_cast<double>(grad_out[i]) / static_cast<double>(HW));
        std::fill_n(grad_in.raw() + i * HW, HW, g);
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// softmax cross-entropy

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits)
{
    require_rank(logits.shape(), 2, "softmax");
    const std::size_t N = logits.dim(0), C = logits.dim(1);
    BasicTensor<T> out(logits.shape());
    std::vector<double> e(C);
    for (std::size_t n = 0; n < N; ++n) {
        const T* y = logits.raw() + n * C;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < C; ++k) mx = std::max(mx, static_cast<double>(y[k]));
        double z = 0.0;
        for (std::size_t k = 0; k < C; ++k) {
            e[k] = std::exp(static_cast<double>(y[k]) - mx);
            z += e[k];
        }
        for (std::size_t k = 0; k < C; ++k) out[n * C + k] = static_cast<T>(e[k] / z);
    }
    return out;
}

template <typename T>
LossValue<T> softmax_cross_entropy(const BasicTensor<T>& logits, const BasicTensor<T>& targets)
{
    require_rank(logits.shape(), 2, "softmax_cross_entropy");
    if (targets.shape() != logits.shape())
        throw StructuralError("softmax_cross_entropy: targets " + shape_str(targets.shape()) + " vs logits " +
                              shape_str(logits.shape()));
    const std::size_t N = logits.dim(0), C = logits.dim(1);
    if (N == 0 || C == 0) throw ValidationError("softmax_cross_entropy on an empty batch");
    for (std::size_t n = 0; n < N; ++n) {
        std::size_t ones = 0;
        for (std::size_t k = 0; k < C; ++k) {
            const T t = targets[n * C + k];
            if (t == T{1}) ++ones;
            else if (t != T{0})
                throw ValidationError("target row " + std::to_string(n) + " is not one-hot");
        }
        if (ones != 1) throw ValidationError("target row " + std::to_string(n) + " is not one-hot");
    }

    constexpr double kMinProb = 1e-12;
    LossValue<T> res{0.0, BasicTensor<T>(logits.shape())};
    std::vector<double> p(C);
    double total = 0.0;
    const double inv_n = 1.0 / static_cast<double>(N);
    for (std::size_t n = 0; n < N; ++n) {
        const T* y = logits.raw() + n * C;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < C; ++k) mx = std::max(mx, static_cast<double>(y[k]));
        double z = 0.0;
        for (std::size_t k = 0; k < C; ++k) {
            p[k] = std::exp(static_cast<double>(y[k]) - mx);
            z += p[k];
        }
        for (std::size_t k = 0; k < C; ++k) {
            p[k] /= z;
            const double t = static_cast<double>(targets[n * C + k]);
            if (t != 0.0) total -= t * std::log(std::max(p[k], kMinProb));
            res.gradient[n * C + k] = static_cast<T>((p[k] - t) * inv_n);
        }
    }
    res.value = total * inv_n;
    return res;
}

// ---------------------------------------------------------------------------

#define CLE_INSTANTIATE_OPS(T)                                                                                \
    template BasicTensor<T> conv2d_forward(const BasicTensor<T>&, const LayerParams<T>&, std::size_t,         \
                                           std::size_t);                                                      \
    template BasicTensor<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&, LayerParams<T>&,    \
                                            std::size_t, std::size_t, bool);                                  \
    template PoolResult<T> maxpool_forward(const BasicTensor<T>&, std::size_t, std::size_t, std::size_t);     \
    template BasicTensor<T> maxpool_backward(const BasicTensor<T>&, std::span<const std::size_t>,             \
                                             const Shape&);                                                   \
    template BasicTensor<T> relu_forward(const BasicTensor<T>&);                                              \
    template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);                      \
    template BasicTensor<T> lrn_forward(const BasicTensor<T>&, const LrnConfig&);                             \
    template BasicTensor<T> lrn_backward(const BasicTensor<T>&, const BasicTensor<T>&, const LrnConfig&);     \
    template BasicTensor<T> fc_forward(const BasicTensor<T>&, const LayerParams<T>&);                         \
    template BasicTensor<T> fc_backward(const BasicTensor<T>&, const BasicTensor<T>&, LayerParams<T>&);       \
    template DropoutResult<T> dropout_forward(const BasicTensor<T>&, double, Mode, std::mt19937_64&);         \
    template BasicTensor<T> dropout_backward(const BasicTensor<T>&, std::span<const T>);                      \
    template BasicTensor<T> concat_channels(std::span<const BasicTensor<T>>);                                 \
    template std::vector<BasicTensor<T>> concat_channels_backward(const BasicTensor<T>&,                      \
                                                                  std::span<const std::size_t>);              \
    template BasicTensor<T> global_avgpool_forward(const BasicTensor<T>&);                                    \
    template BasicTensor<T> global_avgpool_backward(const BasicTensor<T>&, const Shape&);                     \
    template BasicTensor<T> softmax(const BasicTensor<T>&);                                                   \
    template LossValue<T> softmax_cross_entropy(const BasicTensor<T>&, const BasicTensor<T>&);

CLE_INSTANTIATE_OPS(float)
CLE_INSTANTIATE_OPS(double)

#undef CLE_INSTANTIATE_OPS

} // namespace cle
