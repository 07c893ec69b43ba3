#include "hfn/kernels.hpp"

// Scalar reference kernels. Loop order and rounding here define the
// semantics the SIMD variants must reproduce bit-for-bit; see kernels.hpp.

namespace hfn::kernels {

namespace {

template <typename T>
void gemm_nn_acc_ref(int m, int k, int n, const T* a, const T* b, T* c) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<std::size_t>(i) * k;
        T* crow = c + static_cast<std::size_t>(i) * n;
        for (int t = 0; t < k; ++t) {
            const T at = arow[t];
            const T* brow = b + static_cast<std::size_t>(t) * n;
            for (int j = 0; j < n; ++j) {
                crow[j] += at * brow[j];
            }
        }
    }
}

template <typename T>
void axpy_ref(std::size_t n, T alpha, const T* x, T* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void nesterov_ref(std::size_t n, T lr, T mu, T wd, const T* g, T* u, T* p) {
    for (std::size_t i = 0; i < n; ++i) {
        const T gp = g[i] + wd * p[i];
        const T unew = mu * u[i] + gp;
        u[i] = unew;
        p[i] = p[i] - lr * (gp + mu * unew);
    }
}

template <typename T>
void relu_fwd_ref(std::size_t n, const T* x, T* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

// Unconditional add form so the masked SIMD variants round identically.
template <typename T>
void relu_bwd_ref(std::size_t n, const T* x, const T* dy, T* dx) {
    for (std::size_t i = 0; i < n; ++i) dx[i] += x[i] > T(0) ? dy[i] : T(0);
}

}  // namespace

namespace detail {

const KernelTable& scalar_table() {
    static const KernelTable table = {
        &gemm_nn_acc_ref<double>, &gemm_nn_acc_ref<float>,
        &axpy_ref<double>,        &axpy_ref<float>,
        &nesterov_ref<double>,    &nesterov_ref<float>,
        &relu_fwd_ref<double>,    &relu_fwd_ref<float>,
        &relu_bwd_ref<double>,    &relu_bwd_ref<float>,
    };
    return table;
}

}  // namespace detail

double dot(std::size_t n, const double* a, const double* b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

float dot(std::size_t n, const float* a, const float* b) {
    float acc = 0.0f;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double sum(std::size_t n, const double* x) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

float sum(std::size_t n, const float* x) {
    float acc = 0.0f;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

void transpose(int rows, int cols, const double* in, double* out) {
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            out[static_cast<std::size_t>(c) * rows + r] = in[static_cast<std::size_t>(r) * cols + c];
}

void transpose(int rows, int cols, const float* in, float* out) {
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            out[static_cast<std::size_t>(c) * rows + r] = in[static_cast<std::size_t>(r) * cols + c];
}

}  // namespace hfn::kernels
