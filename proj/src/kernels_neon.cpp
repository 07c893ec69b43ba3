#include "hfn/kernels.hpp"

// NEON kernels for aarch64. Explicit vmul + vadd (never vmla, which compilers
// may fuse) keeps rounding identical to the scalar reference.

#if defined(__aarch64__) && defined(__ARM_NEON)

#include <arm_neon.h>

namespace hfn::kernels {
namespace {

void gemm_nn_acc_f64(int m, int k, int n, const double* a, const double* b, double* c) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int t = 0; t < k; ++t) {
            const float64x2_t av = vdupq_n_f64(arow[t]);
            const double* brow = b + static_cast<std::size_t>(t) * n;
            int j = 0;
            for (; j + 2 <= n; j += 2) {
                float64x2_t cv = vld1q_f64(crow + j);
                cv = vaddq_f64(cv, vmulq_f64(av, vld1q_f64(brow + j)));
                vst1q_f64(crow + j, cv);
            }
            const double at = arow[t];
            for (; j < n; ++j) crow[j] += at * brow[j];
        }
    }
}

void gemm_nn_acc_f32(int m, int k, int n, const float* a, const float* b, float* c) {
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<std::size_t>(i) * k;
        float* crow = c + static_cast<std::size_t>(i) * n;
        for (int t = 0; t < k; ++t) {
            const float32x4_t av = vdupq_n_f32(arow[t]);
            const float* brow = b + static_cast<std::size_t>(t) * n;
            int j = 0;
            for (; j + 4 <= n; j += 4) {
                float32x4_t cv = vld1q_f32(crow + j);
                cv = vaddq_f32(cv, vmulq_f32(av, vld1q_f32(brow + j)));
                vst1q_f32(crow + j, cv);
            }
            const float at = arow[t];
            for (; j < n; ++j) crow[j] += at * brow[j];
        }
    }
}

void axpy_f64(std::size_t n, double alpha, const double* x, double* y) {
    const float64x2_t av = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t yv = vld1q_f64(y + i);
        yv = vaddq_f64(yv, vmulq_f64(av, vld1q_f64(x + i)));
        vst1q_f64(y + i, yv);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void axpy_f32(std::size_t n, float alpha, const float* x, float* y) {
    const float32x4_t av = vdupq_n_f32(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        float32x4_t yv = vld1q_f32(y + i);
        yv = vaddq_f32(yv, vmulq_f32(av, vld1q_f32(x + i)));
        vst1q_f32(y + i, yv);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void nesterov_f64(std::size_t n, double lr, double mu, double wd, const double* g, double* u, double* p) {
    const float64x2_t lrv = vdupq_n_f64(lr);
    const float64x2_t muv = vdupq_n_f64(mu);
    const float64x2_t wdv = vdupq_n_f64(wd);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t pv = vld1q_f64(p + i);
        const float64x2_t gv = vld1q_f64(g + i);
        const float64x2_t uv = vld1q_f64(u + i);
        const float64x2_t gp = vaddq_f64(gv, vmulq_f64(wdv, pv));
        const float64x2_t unew = vaddq_f64(vmulq_f64(muv, uv), gp);
        vst1q_f64(u + i, unew);
        const float64x2_t step = vmulq_f64(lrv, vaddq_f64(gp, vmulq_f64(muv, unew)));
        vst1q_f64(p + i, vsubq_f64(pv, step));
    }
    for (; i < n; ++i) {
        const double gp = g[i] + wd * p[i];
        const double unew = mu * u[i] + gp;
        u[i] = unew;
        p[i] = p[i] - lr * (gp + mu * unew);
    }
}

void nesterov_f32(std::size_t n, float lr, float mu, float wd, const float* g, float* u, float* p) {
    const float32x4_t lrv = vdupq_n_f32(lr);
    const float32x4_t muv = vdupq_n_f32(mu);
    const float32x4_t wdv = vdupq_n_f32(wd);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const float32x4_t pv = vld1q_f32(p + i);
        const float32x4_t gv = vld1q_f32(g + i);
        const float32x4_t uv = vld1q_f32(u + i);
        const float32x4_t gp = vaddq_f32(gv, vmulq_f32(wdv, pv));
        const float32x4_t unew = vaddq_f32(vmulq_f32(muv, uv), gp);
        vst1q_f32(u + i, unew);
        const float32x4_t step = vmulq_f32(lrv, vaddq_f32(gp, vmulq_f32(muv, unew)));
        vst1q_f32(p + i, vsubq_f32(pv, step));
    }
    for (; i < n; ++i) {
        const float gp = g[i] + wd * p[i];
        const float unew = mu * u[i] + gp;
        u[i] = unew;
        p[i] = p[i] - lr * (gp + mu * unew);
    }
}

void relu_fwd_f64(std::size_t n, const double* x, double* y) {
    const float64x2_t zero = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(y + i, vmaxq_f64(vld1q_f64(x + i), zero));
    }
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_fwd_f32(std::size_t n, const float* x, float* y) {
    const float32x4_t zero = vdupq_n_f32(0.0f);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        vst1q_f32(y + i, vmaxq_f32(vld1q_f32(x + i), zero));
    }
    for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_bwd_f64(std::size_t n, const double* x, const double* dy, double* dx) {
    const float64x2_t zero = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const uint64x2_t mask = vcgtq_f64(vld1q_f64(x + i), zero);
        const float64x2_t gated = vreinterpretq_f64_u64(
            vandq_u64(mask, vreinterpretq_u64_f64(vld1q_f64(dy + i))));
        vst1q_f64(dx + i, vaddq_f64(vld1q_f64(dx + i), gated));
    }
    for (; i < n; ++i) dx[i] += x[i] > 0.0 ? dy[i] : 0.0;
}

void relu_bwd_f32(std::size_t n, const float* x, const float* dy, float* dx) {
    const float32x4_t zero = vdupq_n_f32(0.0f);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const uint32x4_t mask = vcgtq_f32(vld1q_f32(x + i), zero);
        const float32x4_t gated = vreinterpretq_f32_u32(
            vandq_u32(mask, vreinterpretq_u32_f32(vld1q_f32(dy + i))));
        vst1q_f32(dx + i, vaddq_f32(vld1q_f32(dx + i), gated));
    }
    for (; i < n; ++i) dx[i] += x[i] > 0.0f ? dy[i] : 0.0f;
}

}  // namespace

namespace detail {

const KernelTable* neon_table() {
    static const KernelTable table = {
        &gemm_nn_acc_f64, &gemm_nn_acc_f32,
        &axpy_f64,        &axpy_f32,
        &nesterov_f64,    &nesterov_f32,
        &relu_fwd_f64,    &relu_fwd_f32,
        &relu_bwd_f64,    &relu_bwd_f32,
    };
    return &table;
}

}  // namespace detail
}  // namespace hfn::kernels

#else  // !aarch64 NEON

namespace hfn::kernels::detail {
const KernelTable* neon_table() { return nullptr; }
}  // namespace hfn::kernels::detail

#endif
