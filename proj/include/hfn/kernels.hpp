#pragma once

#include <cstddef>
#include <vector>

namespace hfn::kernels {

// Dense inner-loop kernels behind the tensor/tape layer. Every kernel has a
// scalar reference implementation plus SIMD variants (AVX2 on x86-64, NEON on
// aarch64) selected once at runtime.
//
// Contract: all variants of a kernel perform the *same per-element rounding
// sequence* as the scalar reference -- vector lanes map to independent output
// elements, multiplies and adds stay separate (no FMA), and no reduction is
// reassociated. Results are therefore bitwise identical across ISAs, which
// the kernel equivalence suite asserts. Order-sensitive reductions
// (dot / sum) are deliberately scalar-only.

enum class Isa { scalar, avx2, neon };

const char* isa_name(Isa isa);

// The ISA in effect for dispatched calls. Resolved once from CPU capabilities,
// honoring the HFN_SIMD environment variable (scalar|avx2|neon|auto).
Isa active_isa();

// Test hook: force a specific ISA (throws ContractError if unavailable).
void force_isa(Isa isa);
void reset_isa();  // back to auto-detection

std::vector<Isa> available_isas();

struct KernelTable {
    // c[m x n] += a[m x k] * b[k x n], row-major.
    void (*gemm_nn_acc_f64)(int m, int k, int n, const double* a, const double* b, double* c);
    void (*gemm_nn_acc_f32)(int m, int k, int n, const float* a, const float* b, float* c);
    // y += alpha * x
    void (*axpy_f64)(std::size_t n, double alpha, const double* x, double* y);
    void (*axpy_f32)(std::size_t n, float alpha, const float* x, float* y);
    // Nesterov momentum step:
    //   g' = g + wd*p;  u = mu*u + g';  p -= lr*(g' + mu*u)
    void (*nesterov_f64)(std::size_t n, double lr, double mu, double wd, const double* g, double* u, double* p);
    void (*nesterov_f32)(std::size_t n, float lr, float mu, float wd, const float* g, float* u, float* p);
    // y = max(x, 0)
    void (*relu_fwd_f64)(std::size_t n, const double* x, double* y);
    void (*relu_fwd_f32)(std::size_t n, const float* x, float* y);
    // dx += (x > 0) ? dy : 0
    void (*relu_bwd_f64)(std::size_t n, const double* x, const double* dy, double* dx);
    void (*relu_bwd_f32)(std::size_t n, const float* x, const float* dy, float* dx);
};

const KernelTable& table_for(Isa isa);
const KernelTable& active_table();

// --- dispatched entry points ---------------------------------------------

inline void gemm_nn_acc(int m, int k, int n, const double* a, const double* b, double* c) {
    active_table().gemm_nn_acc_f64(m, k, n, a, b, c);
}
inline void gemm_nn_acc(int m, int k, int n, const float* a, const float* b, float* c) {
    active_table().gemm_nn_acc_f32(m, k, n, a, b, c);
}
inline void axpy(std::size_t n, double alpha, const double* x, double* y) {
    active_table().axpy_f64(n, alpha, x, y);
}
inline void axpy(std::size_t n, float alpha, const float* x, float* y) {
    active_table().axpy_f32(n, alpha, x, y);
}
inline void nesterov_update(std::size_t n, double lr, double mu, double wd, const double* g, double* u, double* p) {
    active_table().nesterov_f64(n, lr, mu, wd, g, u, p);
}
inline void nesterov_update(std::size_t n, float lr, float mu, float wd, const float* g, float* u, float* p) {
    active_table().nesterov_f32(n, lr, mu, wd, g, u, p);
}
inline void relu_forward(std::size_t n, const double* x, double* y) {
    active_table().relu_fwd_f64(n, x, y);
}
inline void relu_forward(std::size_t n, const float* x, float* y) {
    active_table().relu_fwd_f32(n, x, y);
}
inline void relu_backward_acc(std::size_t n, const double* x, const double* dy, double* dx) {
    active_table().relu_bwd_f64(n, x, dy, dx);
}
inline void relu_backward_acc(std::size_t n, const float* x, const float* dy, float* dx) {
    active_table().relu_bwd_f32(n, x, dy, dx);
}

// --- scalar-only helpers ---------------------------------------------------

double dot(std::size_t n, const double* a, const double* b);
float dot(std::size_t n, const float* a, const float* b);
double sum(std::size_t n, const double* x);
float sum(std::size_t n, const float* x);

// out[cols x rows] = transpose of in[rows x cols]
void transpose(int rows, int cols, const double* in, double* out);
void transpose(int rows, int cols, const float* in, float* out);

namespace detail {
const KernelTable& scalar_table();
const KernelTable* avx2_table();  // nullptr when not compiled in
const KernelTable* neon_table();
bool cpu_has_avx2();
}  // namespace detail

}  // namespace hfn::kernels
