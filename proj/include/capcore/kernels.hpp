#pragma once

#include <cstdint>

namespace capcore::kernels {

// Dense numeric inner loops. Every kernel exists in a serial form and an
// OpenMP form; the OpenMP form distributes whole output elements across
// threads while each element's reduction stays serial in ascending index,
// so both forms produce bit-identical results for any thread count.
// `set_parallel` selects the path globally (tests pin it to compare both).

void set_parallel(bool enabled);
bool parallel_enabled();

// c[m x n] = a[m x k] * b[k x n], accumulate == false overwrites c.
void gemm_nn(const double* a, const double* b, double* c,
             int64_t m, int64_t k, int64_t n, bool accumulate = false);
// c[m x n] = a[m x k] * b[n x k]^T
void gemm_nt(const double* a, const double* b, double* c,
             int64_t m, int64_t k, int64_t n, bool accumulate = false);
// c[m x n] = a[k x m]^T * b[k x n]
void gemm_tn(const double* a, const double* b, double* c,
             int64_t m, int64_t k, int64_t n, bool accumulate = false);

// Cross-correlation: x[ci x h x w] * k[co x ci x kh x kw] -> y[co x oh x ow].
void conv2d_forward(const double* x, const double* kern, double* y,
                    int64_t ci, int64_t h, int64_t w,
                    int64_t co, int64_t kh, int64_t kw,
                    int64_t stride, int64_t pad, int64_t oh, int64_t ow);

// Accumulates into gx (caller zeroes or chains micro-batches).
void conv2d_grad_input(const double* gy, const double* kern, double* gx,
                       int64_t ci, int64_t h, int64_t w,
                       int64_t co, int64_t kh, int64_t kw,
                       int64_t stride, int64_t pad, int64_t oh, int64_t ow);

// Accumulates into gk.
void conv2d_grad_kernel(const double* gy, const double* x, double* gk,
                        int64_t ci, int64_t h, int64_t w,
                        int64_t co, int64_t kh, int64_t kw,
                        int64_t stride, int64_t pad, int64_t oh, int64_t ow);

// Serial reference implementations, kept for parity tests and benchmarks.
namespace serial {
void gemm_nn(const double* a, const double* b, double* c,
             int64_t m, int64_t k, int64_t n, bool accumulate = false);
void gemm_nt(const double* a, const double* b, double* c,
             int64_t m, int64_t k, int64_t n, bool accumulate = false);
void gemm_tn(const double* a, const double* b, double* c,
             int64_t m, int64_t k, int64_t n, bool accumulate = false);
void conv2d_forward(const double* x, const double* kern, double* y,
                    int64_t ci, int64_t h, int64_t w,
                    int64_t co, int64_t kh, int64_t kw,
                    int64_t stride, int64_t pad, int64_t oh, int64_t ow);
void conv2d_grad_input(const double* gy, const double* kern, double* gx,
                       int64_t ci, int64_t h, int64_t w,
                       int64_t co, int64_t kh, int64_t kw,
                       int64_t stride, int64_t pad, int64_t oh, int64_t ow);
void conv2d_grad_kernel(const double* gy, const double* x, double* gk,
                        int64_t ci, int64_t h, int64_t w,
                        int64_t co, int64_t kh, int64_t kw,
                        int64_t stride, int64_t pad, int64_t oh, int64_t ow);
} // namespace serial

} // namespace capcore::kernels
