#include "hfn/kernels.hpp"

// AVX2 kernels. This translation unit is compiled with -mavx2 on x86-64;
// callers reach it only through the dispatch table after a CPUID check.
// Vector lanes cover independent output elements and every multiply/add is
// kept separate (no FMA), so results match the scalar reference bit-for-bit.

#if defined(__AVX2__)

#include <immintrin.h>

namespace hfn::kernels {
namespace {

void gemm_nn_acc_f64(int m, int k, int n, const double* a, const double* b, double* c) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int t = 0; t < k; ++t) {
            const __m256d av = _mm256_set1_pd(arow[t]);
            const double* brow = b + static_cast<std::size_t>(t) * n;
            int j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d cv = _mm256_loadu_pd(crow + j);
                const __m256d bv = _mm256_loadu_pd(brow + j);
                cv = _mm256_add_pd(cv, _mm256_mul_pd(av, bv));
                _mm256_storeu_pd(crow + j, cv);
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
            const __m256 av = _mm256_set1_ps(arow[t]);
            const float* brow = b + static_cast<std::size_t>(t) * n;
            int j = 0;
            for (; j + 8 <= n; j += 8) {
                __m256 cv = _mm256_loadu_ps(crow + j);
                const __m256 bv = _mm256_loadu_ps(brow + j);
                cv = _mm256_add_ps(cv, _mm256_mul_ps(av, bv));
                _mm256_storeu_ps(crow + j, cv);
            }
            const float at = arow[t];
            for (; j < n; ++j) crow[j] += at * brow[j];
        }
    }
}

void axpy_f64(std::size_t n, double alpha, const double* x, double* y) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d yv = _mm256_loadu_pd(y + i);
        yv = _mm256_add_pd(yv, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
        _mm256_storeu_pd(y + i, yv);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void axpy_f32(std::size_t n, float alpha, const float* x, float* y) {
    const __m256 av = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 yv = _mm256_loadu_ps(y + i);
        yv = _mm256_add_ps(yv, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
        _mm256_storeu_ps(y + i, yv);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void nesterov_f64(std::size_t n, double lr, double mu, double wd, const double* g, double* u, double* p) {
    const __m256d lrv = _mm256_set1_pd(lr);
    const __m256d muv = _mm256_set1_pd(mu);
    const __m256d wdv = _mm256_set1_pd(wd);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d pv = _mm256_loadu_pd(p + i);
        const __m256d gv = _mm256_loadu_pd(g + i);
        const __m256d uv = _mm256_loadu_pd(u + i);
        const __m256d gp = _mm256_add_pd(gv, _mm256_mul_pd(wdv, pv));
        const __m256d unew = _mm256_add_pd(_mm256_mul_pd(muv, uv), gp);
        _mm256_storeu_pd(u + i, unew);
        const __m256d step = _mm256_mul_pd(lrv, _mm256_add_pd(gp, _mm256_mul_pd(muv, unew)));
        _mm256_storeu_pd(p + i, _mm256_sub_pd(pv, step));
    }
    for (; i < n; ++i) {
        const double gp = g[i] + wd * p[i];
        const double unew = mu * u[i] + gp;
        u[i] = unew;
        p[i] = p[i] - lr * (gp + mu * unew);
    }
}

void nesterov_f32(std::size_t n, float lr, float mu, float wd, const float* g, float* u, float* p) {
    const __m256 lrv = _mm256_set1_ps(lr);
    const __m256 muv = _mm256_set1_ps(mu);
    const __m256 wdv = _mm256_set1_ps(wd);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 pv = _mm256_loadu_ps(p + i);
        const __m256 gv = _mm256_loadu_ps(g + i);
        const __m256 uv = _mm256_loadu_ps(u + i);
        const __m256 gp = _mm256_add_ps(gv, _mm256_mul_ps(wdv, pv));
        const __m256 unew = _mm256_add_ps(_mm256_mul_ps(muv, uv), gp);
        _mm256_storeu_ps(u + i, unew);
        const __m256 step = _mm256_mul_ps(lrv, _mm256_add_ps(gp, _mm256_mul_ps(muv, unew)));
        _mm256_storeu_ps(p + i, _mm256_sub_ps(pv, step));
    }
    for (; i < n; ++i) {
        const float gp = g[i] + wd * p[i];
        const float unew = mu * u[i] + gp;
        u[i] = unew;
        p[i] = p[i] - lr * (gp + mu * unew);
    }
}

void relu_fwd_f64(std::size_t n, const double* x, double* y) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
    }
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_fwd_f32(std::size_t n, const float* x, float* y) {
    const __m256 zero = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(x + i), zero));
    }
    for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_bwd_f64(std::size_t n, const double* x, const double* dy, double* dx) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
        const __m256d gated = _mm256_and_pd(mask, _mm256_loadu_pd(dy + i));
        _mm256_storeu_pd(dx + i, _mm256_add_pd(_mm256_loadu_pd(dx + i), gated));
    }
    for (; i < n; ++i) dx[i] += x[i] > 0.0 ? dy[i] : 0.0;
}

void relu_bwd_f32(std::size_t n, const float* x, const float* dy, float* dx) {
    const __m256 zero = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
        const __m256 gated = _mm256_and_ps(mask, _mm256_loadu_ps(dy + i));
        _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), gated));
    }
    for (; i < n; ++i) dx[i] += x[i] > 0.0f ? dy[i] : 0.0f;
}

}  // namespace

namespace detail {

const KernelTable* avx2_table() {
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

#else  // !__AVX2__

namespace hfn::kernels::detail {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace hfn::kernels::detail

#endif
