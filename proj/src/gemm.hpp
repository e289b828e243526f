#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace cle::detail {

inline constexpr std::size_t kGemmMR = 6;
inline constexpr std::size_t kGemmNR = 32;

using Vec8 = double __attribute__((vector_size(64)));
using Vec8u = double __attribute__((vector_size(64), aligned(8), may_alias));

// acc[r][p] = init[r][p] + sum_k a[k][r] * b[k][p], k ascending.
inline void gemm_micro(std::size_t K, const double* __restrict a, const double* __restrict b,
                       double (&acc)[kGemmMR][kGemmNR])
{
    constexpr std::size_t NV = kGemmNR / 8;
    Vec8 c[kGemmMR][NV];
    for (std::size_t r = 0; r < kGemmMR; ++r)
        for (std::size_t v = 0; v < NV; ++v) c[r][v] = *reinterpret_cast<const Vec8u*>(&acc[r][v * 8]);
    for (std::size_t k = 0; k < K; ++k) {
        Vec8 bk[NV];
        for (std::size_t v = 0; v < NV; ++v) bk[v] = *reinterpret_cast<const Vec8u*>(b + k * kGemmNR + v * 8);
        const double* ak = a + k * kGemmMR;
        for (std::size_t r = 0; r < kGemmMR; ++r) {
            const Vec8 ar = {ak[r], ak[r], ak[r], ak[r], ak[r], ak[r], ak[r], ak[r]};
            for (std::size_t v = 0; v < NV; ++v) c[r][v] += ar * bk[v];
        }
    }
    for (std::size_t r = 0; r < kGemmMR; ++r)
        for (std::size_t v = 0; v < NV; ++v) *reinterpret_cast<Vec8u*>(&acc[r][v * 8]) = c[r][v];
}

/**
 * C[M,P] = init + sum_k A(i,k) * B[k,P], accumulated in double.
 *
 * A is addressed as A[i * a_row + k * a_col] and B as B[k * b_row + p * b_col],
 * so either operand may be passed transposed without copying. C is row-major
 * with leading dimension ldc. init is C itself when accumulate is set, else bias[i] (or 0
 * when bias is null).
 *
 * Every output element goes through the same micro-kernel (edges are
 * zero-padded), summing k in ascending order, so a result never depends on
 * M, P or where the element falls in a tile. Per-sample results are therefore
 * independent of batch composition.
 */
template <typename T>
void gemm_acc(std::size_t M, std::size_t K, std::size_t P, const T* A, std::size_t a_row, std::size_t a_col,
              const T* B, std::size_t b_row, std::size_t b_col, T* C, std::size_t ldc, const T* bias,
              bool accumulate)
{
    constexpr std::size_t MR = kGemmMR, NR = kGemmNR;
    if (M == 0 || P == 0) return;
    const std::size_t mpanels = (M + MR - 1) / MR;

    std::vector<double> apack(mpanels * K * MR, 0.0);
    for (std::size_t ip = 0; ip < mpanels; ++ip) {
        double* dst = apack.data() + ip * K * MR;
        const std::size_t rows = std::min(MR, M - ip * MR);
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t r = 0; r < rows; ++r)
                dst[k * MR + r] = static_cast<double>(A[(ip * MR + r) * a_row + k * a_col]);
    }

    std::vector<double> bpack(K * NR);
    alignas(64) double acc[MR][NR];
    for (std::size_t p0 = 0; p0 < P; p0 += NR) {
        const std::size_t np = std::min(NR, P - p0);
        if (b_col == 1) {
            for (std::size_t k = 0; k < K; ++k) {
                const T* src = B + k * b_row + p0;
                double* dst = bpack.data() + k * NR;
                for (std::size_t p = 0; p < np; ++p) dst[p] = static_cast<double>(src[p]);
                for (std::size_t p = np; p < NR; ++p) dst[p] = 0.0;
            }
        } else {
            if (np < NR) std::fill(bpack.begin(), bpack.end(), 0.0);
            // Blocked over k so the scattered writes stay in L1.
            constexpr std::size_t KB = 64;
            for (std::size_t k0 = 0; k0 < K; k0 += KB) {
                const std::size_t k1 = std::min(K, k0 + KB);
                for (std::size_t p = 0; p < np; ++p) {
                    const T* src = B + (p0 + p) * b_col;
                    for (std::size_t k = k0; k < k1; ++k) bpack[k * NR + p] = static_cast<double>(src[k * b_row]);
                }
            }
        }
        for (std::size_t ip = 0; ip < mpanels; ++ip) {
            const std::size_t rows = std::min(MR, M - ip * MR);
            for (std::size_t r = 0; r < MR; ++r) {
                const std::size_t i = ip * MR + r;
                if (r < rows && accumulate) {
                    const T* cr = C + i * ldc + p0;
                    for (std::size_t p = 0; p < np; ++p) acc[r][p] = static_cast<double>(cr[p]);
                    for (std::size_t p = np; p < NR; ++p) acc[r][p] = 0.0;
                } else {
                    const double init = (r < rows && bias) ? static_cast<double>(bias[i]) : 0.0;
                    for (std::size_t p = 0; p < NR; ++p) acc[r][p] = init;
                }
            }
            gemm_micro(K, apack.data() + ip * K * MR, bpack.data(), acc);
            for (std::size_t r = 0; r < rows; ++r) {
                T* cr = C + (ip * MR + r) * ldc + p0;
                for (std::size_t p = 0; p < np; ++p) cr[p] = static_cast<T>(acc[r][p]);
            }
        }
    }
}

} // namespace cle::detail
