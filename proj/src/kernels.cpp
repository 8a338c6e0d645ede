#include "capcore/kernels.hpp"

#include <atomic>

namespace capcore::kernels {

namespace {
std::atomic<bool> g_parallel{true};
}

void set_parallel(bool enabled) { g_parallel.store(enabled); }
bool parallel_enabled() { return g_parallel.load(); }

namespace serial {

void gemm_nn(const double* a, const double* b, double* c,
             int64_t m, int64_t k, int64_t n, bool accumulate) {
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            double acc = accumulate ? c[i * n + j] : 0.0;
            for (int64_t p = 0; p < k; ++p) {
                acc += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = acc;
        }
    }
}

void gemm_nt(const double* a, const double* b, double* c,
             int64_t m, int64_t k, int64_t n, bool accumulate) {
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            double acc = accumulate ? c[i * n + j] : 0.0;
            for (int64_t p = 0; p < k; ++p) {
                acc += a[i * k + p] * b[j * k + p];
            }
            c[i * n + j] = acc;
        }
    }
}

void gemm_tn(const double* a, const double* b, double* c,
             int64_t m, int64_t k, int64_t n, bool accumulate) {
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            double acc = accumulate ? c[i * n + j] : 0.0;
            for (int64_t p = 0; p < k; ++p) {
                acc += a[p * m + i] * b[p * n + j];
            }
            c[i * n + j] = acc;
        }
    }
}

void conv2d_forward(const double* x, const double* kern, double* y,
                    int64_t ci, int64_t h, int64_t w,
                    int64_t co, int64_t kh, int64_t kw,
                    int64_t stride, int64_t pad, int64_t oh, int64_t ow) {
    for (int64_t o = 0; o < co; ++o) {
        for (int64_t oy = 0; oy < oh; ++oy) {
            for (int64_t ox = 0; ox < ow; ++ox) {
                double acc = 0.0;
                for (int64_t c = 0; c < ci; ++c) {
                    for (int64_t ky = 0; ky < kh; ++ky) {
                        const int64_t iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            const int64_t ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= w) continue;
                            acc += x[(c * h + iy) * w + ix] *
                                   kern[((o * ci + c) * kh + ky) * kw + kx];
                        }
                    }
                }
                y[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
}

void conv2d_grad_input(const double* gy, const double* kern, double* gx,
                       int64_t ci, int64_t h, int64_t w,
                       int64_t co, int64_t kh, int64_t kw,
                       int64_t stride, int64_t pad, int64_t oh, int64_t ow) {
    for (int64_t c = 0; c < ci; ++c) {
        for (int64_t iy = 0; iy < h; ++iy) {
            for (int64_t ix = 0; ix < w; ++ix) {
                double acc = 0.0;
                for (int64_t o = 0; o < co; ++o) {
                    for (int64_t ky = 0; ky < kh; ++ky) {
                        const int64_t ny = iy + pad - ky;
                        if (ny < 0 || ny % stride != 0) continue;
                        const int64_t oy = ny / stride;
                        if (oy >= oh) continue;
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            const int64_t nx = ix + pad - kx;
                            if (nx < 0 || nx % stride != 0) continue;
                            const int64_t ox = nx / stride;
                            if (ox >= ow) continue;
                            acc += gy[(o * oh + oy) * ow + ox] *
                                   kern[((o * ci + c) * kh + ky) * kw + kx];
                        }
                    }
                }
                gx[(c * h + iy) * w + ix] += acc;
            }
        }
    }
}

void conv2d_grad_kernel(const double* gy, const double* x, double* gk,
                        int64_t ci, int64_t h, int64_t w,
                        int64_t co, int64_t kh, int64_t kw,
                        int64_t stride, int64_t pad, int64_t oh, int64_t ow) {
    for (int64_t o = 0; o < co; ++o) {
        for (int64_t c = 0; c < ci; ++c) {
            for (int64_t ky = 0; ky < kh; ++ky) {
                for (int64_t kx = 0; kx < kw; ++kx) {
                    double acc = 0.0;
                    for (int64_t oy = 0; oy < oh; ++oy) {
                        const int64_t iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int64_t ox = 0; ox < ow; ++ox) {
                            const int64_t ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= w) continue;
                            acc += gy[(o * oh + oy) * ow + ox] * x[(c * h + iy) * w + ix];
                        }
                    }
                    gk[((o * ci + c) * kh + ky) * kw + kx] += acc;
                }
            }
        }
    }
}

} // namespace serial

// OpenMP forms: one output row (gemm) or output plane (conv) per iteration,
// inner reductions unchanged from the serial forms.

void gemm_nn(const double* a, const double* b, double* c,
             int64_t m, int64_t k, int64_t n, bool accumulate) {
    if (!g_parallel.load()) {
        serial::gemm_nn(a, b, c, m, k, n, accumulate);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            double acc = accumulate ? c[i * n + j] : 0.0;
            for (int64_t p = 0; p < k; ++p) {
                acc += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = acc;
        }
    }
}

void gemm_nt(const double* a, const double* b, double* c,
             int64_t m, int64_t k, int64_t n, bool accumulate) {
    if (!g_parallel.load()) {
        serial::gemm_nt(a, b, c, m, k, n, accumulate);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            double acc = accumulate ? c[i * n + j] : 0.0;
            for (int64_t p = 0; p < k; ++p) {
                acc += a[i * k + p] * b[j * k + p];
            }
            c[i * n + j] = acc;
        }
    }
}

void gemm_tn(const double* a, const double* b, double* c,
             int64_t m, int64_t k, int64_t n, bool accumulate) {
    if (!g_parallel.load()) {
        serial::gemm_tn(a, b, c, m, k, n, accumulate);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            double acc = accumulate ? c[i * n + j] : 0.0;
            for (int64_t p = 0; p < k; ++p) {
                acc += a[p * m + i] * b[p * n + j];
            }
            c[i * n + j] = acc;
        }
    }
}

void conv2d_forward(const double* x, const double* kern, double* y,
                    int64_t ci, int64_t h, int64_t w,
                    int64_t co, int64_t kh, int64_t kw,
                    int64_t stride, int64_t pad, int64_t oh, int64_t ow) {
    if (!g_parallel.load()) {
        serial::conv2d_forward(x, kern, y, ci, h, w, co, kh, kw, stride, pad, oh, ow);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t o = 0; o < co; ++o) {
        for (int64_t oy = 0; oy < oh; ++oy) {
            for (int64_t ox = 0; ox < ow; ++ox) {
                double acc = 0.0;
                for (int64_t c = 0; c < ci; ++c) {
                    for (int64_t ky = 0; ky < kh; ++ky) {
                        const int64_t iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            const int64_t ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= w) continue;
                            acc += x[(c * h + iy) * w + ix] *
                                   kern[((o * ci + c) * kh + ky) * kw + kx];
                        }
                    }
                }
                y[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
}

void conv2d_grad_input(const double* gy, const double* kern, double* gx,
                       int64_t ci, int64_t h, int64_t w,
                       int64_t co, int64_t kh, int64_t kw,
                       int64_t stride, int64_t pad, int64_t oh, int64_t ow) {
    if (!g_parallel.load()) {
        serial::conv2d_grad_input(gy, kern, gx, ci, h, w, co, kh, kw, stride, pad, oh, ow);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < ci; ++c) {
        for (int64_t iy = 0; iy < h; ++iy) {
            for (int64_t ix = 0; ix < w; ++ix) {
                double acc = 0.0;
                for (int64_t o = 0; o < co; ++o) {
                    for (int64_t ky = 0; ky < kh; ++ky) {
                        const int64_t ny = iy + pad - ky;
                        if (ny < 0 || ny % stride != 0) continue;
                        const int64_t oy = ny / stride;
                        if (oy >= oh) continue;
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            const int64_t nx = ix + pad - kx;
                            if (nx < 0 || nx % stride != 0) continue;
                            const int64_t ox = nx / stride;
                            if (ox >= ow) continue;
                            acc += gy[(o * oh + oy) * ow + ox] *
                                   kern[((o * ci + c) * kh + ky) * kw + kx];
                        }
                    }
                }
                gx[(c * h + iy) * w + ix] += acc;
            }
        }
    }
}

void conv2d_grad_kernel(const double* gy, const double* x, double* gk,
                        int64_t ci, int64_t h, int64_t w,
                        int64_t co, int64_t kh, int64_t kw,
                        int64_t stride, int64_t pad, int64_t oh, int64_t ow) {
    if (!g_parallel.load()) {
        serial::conv2d_grad_kernel(gy, x, gk, ci, h, w, co, kh, kw, stride, pad, oh, ow);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t o = 0; o < co; ++o) {
        for (int64_t c = 0; c < ci; ++c) {
            for (int64_t ky = 0; ky < kh; ++ky) {
                for (int64_t kx = 0; kx < kw; ++kx) {
                    double acc = 0.0;
                    for (int64_t oy = 0; oy < oh; ++oy) {
                        const int64_t iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int64_t ox = 0; ox < ow; ++ox) {
                            const int64_t ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= w) continue;
                            acc += gy[(o * oh + oy) * ow + ox] * x[(c * h + iy) * w + ix];
                        }
                    }
                    gk[((o * ci + c) * kh + ky) * kw + kx] += acc;
                }
            }
        }
    }
}

} // namespace capcore::kernels
