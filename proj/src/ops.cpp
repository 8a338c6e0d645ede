#include "capcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "capcore/kernels.hpp"

namespace capcore {

namespace {

constexpr double kGeluC = 0.7978845608028653558799; // sqrt(2/pi)

// Registers `out` on the active tape when any input takes part in
// differentiation. Inputs must be listed in the order the pull function
// expects its parent gradient views.
void maybe_record(Tensor& out, const std::vector<Tensor>& inputs, PullFn pull) {
    GradTape* tape = GradTape::active();
    if (!tape) return;
    bool any = false;
    for (const Tensor& t : inputs) {
        if (tape_should_record(t.impl())) {
            any = true;
            break;
        }
    }
    if (!any) return;
    std::vector<int> parents;
    parents.reserve(inputs.size());
    for (const Tensor& t : inputs) parents.push_back(tape->ensure_recorded(t.impl()));
    tape->record_output(out.impl(), std::move(parents), std::move(pull));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

void require_rank(const Tensor& t, size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         " tensor, got " + shape_str(t.shape()));
    }
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const auto& da = a.data();
    const auto& db = b.data();
    auto& o = out.mutable_data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = da[i] + db[i];
    detail::finalize_forward(out, "add");
    maybe_record(out, {a, b},
                 [](const std::vector<double>& g, const std::vector<std::span<double>>& p) {
                     for (size_t i = 0; i < g.size(); ++i) {
                         p[0][i] += g[i];
                         p[1][i] += g[i];
                     }
                 });
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    const auto& da = a.data();
    const auto& db = b.data();
    auto& o = out.mutable_data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = da[i] - db[i];
    detail::finalize_forward(out, "sub");
    maybe_record(out, {a, b},
                 [](const std::vector<double>& g, const std::vector<std::span<double>>& p) {
                     for (size_t i = 0; i < g.size(); ++i) {
                         p[0][i] += g[i];
                         p[1][i] -= g[i];
                     }
                 });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    const auto& da = a.data();
    const auto& db = b.data();
    auto& o = out.mutable_data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = da[i] * db[i];
    detail::finalize_forward(out, "mul");
    auto ia = a.impl();
    auto ib = b.impl();
    maybe_record(out, {a, b},
                 [ia, ib](const std::vector<double>& g, const std::vector<std::span<double>>& p) {
                     for (size_t i = 0; i < g.size(); ++i) {
                         p[0][i] += g[i] * ib->data[i];
                         p[1][i] += g[i] * ia->data[i];
                     }
                 });
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = Tensor::zeros(a.shape());
    const auto& da = a.data();
    auto& o = out.mutable_data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = da[i] * s;
    detail::finalize_forward(out, "scale");
    maybe_record(out, {a},
                 [s](const std::vector<double>& g, const std::vector<std::span<double>>& p) {
                     for (size_t i = 0; i < g.size(); ++i) p[0][i] += g[i] * s;
                 });
    return out;
}

Tensor add_scalar(const Tensor& a, double s) {
    Tensor out = Tensor::zeros(a.shape());
    const auto& da = a.data();
    auto& o = out.mutable_data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = da[i] + s;
    detail::finalize_forward(out, "add_scalar");
    maybe_record(out, {a},
                 [](const std::vector<double>& g, const std::vector<std::span<double>>& p) {
                     for (size_t i = 0; i < g.size(); ++i) p[0][i] += g[i];
                 });
    return out;
}

Tensor add_rowwise(const Tensor& m, const Tensor& v) {
    require_rank(m, 2, "add_rowwise");
    require_rank(v, 1, "add_rowwise");
    const int64_t rows = m.dim(0), cols = m.dim(1);
    if (v.dim(0) != cols) {
        throw ShapeError("add_rowwise: vector extent " + shape_str(v.shape()) +
                         " does not match columns of " + shape_str(m.shape()));
    }
    Tensor out = Tensor::zeros(m.shape());
    const auto& dm = m.data();
    const auto& dv = v.data();
    auto& o = out.mutable_data();
    for (int64_t i = 0; i < rows; ++i) {
        for (int64_t j = 0; j < cols; ++j) {
            o[static_cast<size_t>(i * cols + j)] =
                dm[static_cast<size_t>(i * cols + j)] + dv[static_cast<size_t>(j)];
        }
    }
    detail::finalize_forward(out, "add_rowwise");
    maybe_record(out, {m, v},
                 [rows, cols](const std::vector<double>& g,
                              const std::vector<std::span<double>>& p) {
                     for (int64_t i = 0; i < rows; ++i) {
                         for (int64_t j = 0; j < cols; ++j) {
                             const double gij = g[static_cast<size_t>(i * cols + j)];
                             p[0][static_cast<size_t>(i * cols + j)] += gij;
                             p[1][static_cast<size_t>(j)] += gij;
                         }
                     }
                 });
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    if (a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
    }
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({m, n});
    kernels::gemm_nn(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n);
    detail::finalize_forward(out, "matmul");
    auto ia = a.impl();
    auto ib = b.impl();
    maybe_record(out, {a, b},
                 [ia, ib, m, k, n](const std::vector<double>& g,
                                   const std::vector<std::span<double>>& p) {
                     // da = g * b^T, db = a^T * g
                     kernels::gemm_nt(g.data(), ib->data.data(), p[0].data(), m, n, k, true);
                     kernels::gemm_tn(ia->data.data(), g.data(), p[1].data(), k, m, n, true);
                 });
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul_nt");
    require_rank(b, 2, "matmul_nt");
    if (a.dim(1) != b.dim(1)) {
        throw ShapeError("matmul_nt: inner extents differ, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()) + "^T");
    }
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor out = Tensor::zeros({m, n});
    kernels::gemm_nt(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n);
    detail::finalize_forward(out, "matmul_nt");
    auto ia = a.impl();
    auto ib = b.impl();
    maybe_record(out, {a, b},
                 [ia, ib, m, k, n](const std::vector<double>& g,
                                   const std::vector<std::span<double>>& p) {
                     // da = g * b, db = g^T * a
                     kernels::gemm_nn(g.data(), ib->data.data(), p[0].data(), m, n, k, true);
                     kernels::gemm_tn(g.data(), ia->data.data(), p[1].data(), n, m, k, true);
                 });
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const auto& dx = x.data();
    auto& o = out.mutable_data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = dx[i] > 0.0 ? dx[i] : 0.0;
    detail::finalize_forward(out, "relu");
    auto ix = x.impl();
    maybe_record(out, {x},
                 [ix](const std::vector<double>& g, const std::vector<std::span<double>>& p) {
                     for (size_t i = 0; i < g.size(); ++i) {
                         if (ix->data[i] > 0.0) p[0][i] += g[i];
                     }
                 });
    return out;
}

Tensor gelu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const auto& dx = x.data();
    auto& o = out.mutable_data();
    for (size_t i = 0; i < o.size(); ++i) {
        const double v = dx[i];
        o[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + 0.044715 * v * v * v)));
    }
    detail::finalize_forward(out, "gelu");
    auto ix = x.impl();
    maybe_record(out, {x},
                 [ix](const std::vector<double>& g, const std::vector<std::span<double>>& p) {
                     for (size_t i = 0; i < g.size(); ++i) {
                         const double v = ix->data[i];
                         const double u = kGeluC * (v + 0.044715 * v * v * v);
                         const double t = std::tanh(u);
                         const double du = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
                         p[0][i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
                     }
                 });
    return out;
}

Tensor softmax(const Tensor& x, int axis) {
    const int rank = static_cast<int>(x.rank());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) {
        throw ShapeError("softmax: axis out of range for " + shape_str(x.shape()));
    }
    const int64_t extent = x.dim(static_cast<size_t>(axis));
    int64_t inner = 1, outer = 1;
    for (int i = axis + 1; i < rank; ++i) inner *= x.dim(static_cast<size_t>(i));
    for (int i = 0; i < axis; ++i) outer *= x.dim(static_cast<size_t>(i));

    Tensor out = Tensor::zeros(x.shape());
    const auto& dx = x.data();
    auto& o = out.mutable_data();
    for (int64_t a = 0; a < outer; ++a) {
        for (int64_t b = 0; b < inner; ++b) {
            const int64_t base = a * extent * inner + b;
            double mx = dx[static_cast<size_t>(base)];
            for (int64_t i = 1; i < extent; ++i) {
                mx = std::max(mx, dx[static_cast<size_t>(base + i * inner)]);
            }
            double s = 0.0;
            for (int64_t i = 0; i < extent; ++i) {
                const double e = std::exp(dx[static_cast<size_t>(base + i * inner)] - mx);
                o[static_cast<size_t>(base + i * inner)] = e;
                s += e;
            }
            for (int64_t i = 0; i < extent; ++i) {
                o[static_cast<size_t>(base + i * inner)] /= s;
            }
        }
    }
    detail::finalize_forward(out, "softmax");
    auto iy = out.impl();
    maybe_record(out, {x},
                 [iy, outer, inner, extent](const std::vector<double>& g,
                                            const std::vector<std::span<double>>& p) {
                     const auto& y = iy->data;
                     for (int64_t a = 0; a < outer; ++a) {
                         for (int64_t b = 0; b < inner; ++b) {
                             const int64_t base = a * extent * inner + b;
                             double dot = 0.0;
                             for (int64_t i = 0; i < extent; ++i) {
                                 const size_t k = static_cast<size_t>(base + i * inner);
                                 dot += g[k] * y[k];
                             }
                             for (int64_t i = 0; i < extent; ++i) {
                                 const size_t k = static_cast<size_t>(base + i * inner);
                                 p[0][k] += y[k] * (g[k] - dot);
                             }
                         }
                     }
                 });
    return out;
}

Tensor masked_softmax_rows(const Tensor& x, const std::vector<uint8_t>& allow) {
    require_rank(x, 2, "masked_softmax_rows");
    const int64_t rows = x.dim(0), cols = x.dim(1);
    if (static_cast<int64_t>(allow.size()) != rows * cols) {
        throw ShapeError("masked_softmax_rows: mask size does not match " + shape_str(x.shape()));
    }
    Tensor out = Tensor::zeros(x.shape());
    const auto& dx = x.data();
    auto& o = out.mutable_data();
    for (int64_t i = 0; i < rows; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t j = 0; j < cols; ++j) {
            if (allow[static_cast<size_t>(i * cols + j)]) {
                mx = std::max(mx, dx[static_cast<size_t>(i * cols + j)]);
            }
        }
        if (!std::isfinite(mx)) {
            throw NumericError("masked_softmax_rows: row " + std::to_string(i) +
                               " has no allowed position");
        }
        double s = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            const size_t k = static_cast<size_t>(i * cols + j);
            if (allow[k]) {
                o[k] = std::exp(dx[k] - mx);
                s += o[k];
            }
        }
        for (int64_t j = 0; j < cols; ++j) {
            const size_t k = static_cast<size_t>(i * cols + j);
            if (allow[k]) o[k] /= s;
        }
    }
    detail::finalize_forward(out, "masked_softmax_rows");
    auto iy = out.impl();
    maybe_record(out, {x},
                 [iy, allow, rows, cols](const std::vector<double>& g,
                                         const std::vector<std::span<double>>& p) {
                     const auto& y = iy->data;
                     for (int64_t i = 0; i < rows; ++i) {
                         double dot = 0.0;
                         for (int64_t j = 0; j < cols; ++j) {
                             const size_t k = static_cast<size_t>(i * cols + j);
                             if (allow[k]) dot += g[k] * y[k];
                         }
                         for (int64_t j = 0; j < cols; ++j) {
                             const size_t k = static_cast<size_t>(i * cols + j);
                             if (allow[k]) p[0][k] += y[k] * (g[k] - dot);
                         }
                     }
                 });
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (eps <= 0.0) throw NumericError("layer_norm: eps must be positive");
    if (x.rank() < 1) throw ShapeError("layer_norm: rank-0 input");
    const int64_t cols = x.shape().back();
    const int64_t rows = x.numel() / cols;
    if (gain.rank() != 1 || gain.dim(0) != cols || bias.rank() != 1 || bias.dim(0) != cols) {
        throw ShapeError("layer_norm: gain/bias must match last axis extent " +
                         std::to_string(cols));
    }
    Tensor out = Tensor::zeros(x.shape());
    std::vector<double> xhat(static_cast<size_t>(rows * cols));
    std::vector<double> inv_std(static_cast<size_t>(rows));
    const auto& dx = x.data();
    const auto& dg = gain.data();
    const auto& db = bias.data();
    auto& o = out.mutable_data();
    for (int64_t i = 0; i < rows; ++i) {
        const size_t base = static_cast<size_t>(i * cols);
        double mean = 0.0;
        for (int64_t j = 0; j < cols; ++j) mean += dx[base + static_cast<size_t>(j)];
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            const double d = dx[base + static_cast<size_t>(j)] - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(i)] = inv;
        for (int64_t j = 0; j < cols; ++j) {
            const size_t k = base + static_cast<size_t>(j);
            xhat[k] = (dx[k] - mean) * inv;
            o[k] = dg[static_cast<size_t>(j)] * xhat[k] + db[static_cast<size_t>(j)];
        }
    }
    detail::finalize_forward(out, "layer_norm");
    auto ig = gain.impl();
    maybe_record(out, {x, gain, bias},
                 [ig, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, cols](
                     const std::vector<double>& g, const std::vector<std::span<double>>& p) {
                     for (int64_t i = 0; i < rows; ++i) {
                         const size_t base = static_cast<size_t>(i * cols);
                         double mean_q = 0.0, mean_qx = 0.0;
                         for (int64_t j = 0; j < cols; ++j) {
                             const size_t k = base + static_cast<size_t>(j);
                             const double q = g[k] * ig->data[static_cast<size_t>(j)];
                             mean_q += q;
                             mean_qx += q * xhat[k];
                         }
                         mean_q /= static_cast<double>(cols);
                         mean_qx /= static_cast<double>(cols);
                         const double inv = inv_std[static_cast<size_t>(i)];
                         for (int64_t j = 0; j < cols; ++j) {
                             const size_t k = base + static_cast<size_t>(j);
                             const double q = g[k] * ig->data[static_cast<size_t>(j)];
                             p[0][k] += inv * (q - mean_q - xhat[k] * mean_qx);
                             p[1][static_cast<size_t>(j)] += g[k] * xhat[k];
                             p[2][static_cast<size_t>(j)] += g[k];
                         }
                     }
                 });
    return out;
}

Tensor conv2d(const Tensor& x, const Tensor& kernels_t, int64_t stride, int64_t pad) {
    require_rank(x, 3, "conv2d");
    require_rank(kernels_t, 4, "conv2d");
    if (stride < 1 || pad < 0) throw ShapeError("conv2d: stride must be >= 1 and pad >= 0");
    const int64_t ci = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int64_t co = kernels_t.dim(0), kh = kernels_t.dim(2), kw = kernels_t.dim(3);
    if (kernels_t.dim(1) != ci) {
        throw ShapeError("conv2d: kernel input channels " + std::to_string(kernels_t.dim(1)) +
                         " vs input channels " + std::to_string(ci));
    }
    if (kh > h + 2 * pad || kw > w + 2 * pad) {
        throw ShapeError("conv2d: kernel larger than padded input");
    }
    const int64_t oh = (h + 2 * pad - kh) / stride + 1;
    const int64_t ow = (w + 2 * pad - kw) / stride + 1;
    if (oh < 1 || ow < 1) throw ShapeError("conv2d: output extent < 1");
    Tensor out = Tensor::zeros({co, oh, ow});
    kernels::conv2d_forward(x.data().data(), kernels_t.data().data(), out.mutable_data().data(),
                            ci, h, w, co, kh, kw, stride, pad, oh, ow);
    detail::finalize_forward(out, "conv2d");
    auto ix = x.impl();
    auto ik = kernels_t.impl();
    maybe_record(out, {x, kernels_t},
                 [ix, ik, ci, h, w, co, kh, kw, stride, pad, oh, ow](
                     const std::vector<double>& g, const std::vector<std::span<double>>& p) {
                     kernels::conv2d_grad_input(g.data(), ik->data.data(), p[0].data(), ci, h, w,
                                                co, kh, kw, stride, pad, oh, ow);
                     kernels::conv2d_grad_kernel(g.data(), ix->data.data(), p[1].data(), ci, h, w,
                                                 co, kh, kw, stride, pad, oh, ow);
                 });
    return out;
}

Tensor global_avg_pool(const Tensor& x) {
    require_rank(x, 3, "global_avg_pool");
    const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor out = Tensor::zeros({c});
    const auto& dx = x.data();
    auto& o = out.mutable_data();
    const double inv = 1.0 / static_cast<double>(h * w);
    for (int64_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        const size_t base = static_cast<size_t>(ch * h * w);
        for (int64_t i = 0; i < h * w; ++i) s += dx[base + static_cast<size_t>(i)];
        o[static_cast<size_t>(ch)] = s * inv;
    }
    detail::finalize_forward(out, "global_avg_pool");
    maybe_record(out, {x},
                 [c, h, w, inv](const std::vector<double>& g,
                                const std::vector<std::span<double>>& p) {
                     for (int64_t ch = 0; ch < c; ++ch) {
                         const double gch = g[static_cast<size_t>(ch)] * inv;
                         const size_t base = static_cast<size_t>(ch * h * w);
                         for (int64_t i = 0; i < h * w; ++i) p[0][base + static_cast<size_t>(i)] += gch;
                     }
                 });
    return out;
}

Tensor batch_norm2d(const Tensor& x, const Tensor& gain, const Tensor& bias,
                    const Tensor& running_mean, const Tensor& running_var, double eps) {
    require_rank(x, 3, "batch_norm2d");
    if (eps <= 0.0) throw NumericError("batch_norm2d: eps must be positive");
    const int64_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    if (gain.numel() != c || bias.numel() != c || running_mean.numel() != c ||
        running_var.numel() != c) {
        throw ShapeError("batch_norm2d: per-channel parameter extent mismatch");
    }
    Tensor out = Tensor::zeros(x.shape());
    const auto& dx = x.data();
    auto& o = out.mutable_data();
    std::vector<double> inv(static_cast<size_t>(c));
    for (int64_t ch = 0; ch < c; ++ch) {
        inv[static_cast<size_t>(ch)] = 1.0 / std::sqrt(running_var(ch) + eps);
        const double m = running_mean(ch);
        const double gch = gain(ch), bch = bias(ch);
        const size_t base = static_cast<size_t>(ch * hw);
        for (int64_t i = 0; i < hw; ++i) {
            const size_t k = base + static_cast<size_t>(i);
            o[k] = gch * (dx[k] - m) * inv[static_cast<size_t>(ch)] + bch;
        }
    }
    detail::finalize_forward(out, "batch_norm2d");
    auto ix = x.impl();
    auto im = running_mean.impl();
    auto ig = gain.impl();
    maybe_record(out, {x, gain, bias},
                 [ix, im, ig, inv = std::move(inv), c, hw](
                     const std::vector<double>& g, const std::vector<std::span<double>>& p) {
                     for (int64_t ch = 0; ch < c; ++ch) {
                         const double ich = inv[static_cast<size_t>(ch)];
                         const double m = im->data[static_cast<size_t>(ch)];
                         const double gch = ig->data[static_cast<size_t>(ch)];
                         const size_t base = static_cast<size_t>(ch * hw);
                         for (int64_t i = 0; i < hw; ++i) {
                             const size_t k = base + static_cast<size_t>(i);
                             p[0][k] += g[k] * gch * ich;
                             p[1][static_cast<size_t>(ch)] += g[k] * (ix->data[k] - m) * ich;
                             p[2][static_cast<size_t>(ch)] += g[k];
                         }
                     }
                 });
    return out;
}

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
    require_rank(table, 2, "embedding_rows");
    const int64_t v = table.dim(0), d = table.dim(1);
    if (ids.empty()) throw ShapeError("embedding_rows: empty id list");
    for (int id : ids) {
        if (id < 0 || id >= v) {
            throw ShapeError("embedding_rows: id " + std::to_string(id) +
                             " out of range for table " + shape_str(table.shape()));
        }
    }
    const int64_t rows = static_cast<int64_t>(ids.size());
    Tensor out = Tensor::zeros({rows, d});
    const auto& dt = table.data();
    auto& o = out.mutable_data();
    for (int64_t i = 0; i < rows; ++i) {
        const size_t src = static_cast<size_t>(ids[static_cast<size_t>(i)]) * static_cast<size_t>(d);
        std::copy(dt.begin() + static_cast<std::ptrdiff_t>(src),
                  dt.begin() + static_cast<std::ptrdiff_t>(src + static_cast<size_t>(d)),
                  o.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    detail::finalize_forward(out, "embedding_rows");
    maybe_record(out, {table},
                 [ids, d](const std::vector<double>& g, const std::vector<std::span<double>>& p) {
                     for (size_t i = 0; i < ids.size(); ++i) {
                         const size_t dst = static_cast<size_t>(ids[i]) * static_cast<size_t>(d);
                         for (int64_t j = 0; j < d; ++j) {
                             p[0][dst + static_cast<size_t>(j)] +=
                                 g[i * static_cast<size_t>(d) + static_cast<size_t>(j)];
                         }
                     }
                 });
    return out;
}

Tensor slice_cols(const Tensor& x, int64_t start, int64_t len) {
    require_rank(x, 2, "slice_cols");
    const int64_t rows = x.dim(0), cols = x.dim(1);
    if (start < 0 || len < 1 || start + len > cols) {
        throw ShapeError("slice_cols: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of " + shape_str(x.shape()));
    }
    Tensor out = Tensor::zeros({rows, len});
    const auto& dx = x.data();
    auto& o = out.mutable_data();
    for (int64_t i = 0; i < rows; ++i) {
        for (int64_t j = 0; j < len; ++j) {
            o[static_cast<size_t>(i * len + j)] = dx[static_cast<size_t>(i * cols + start + j)];
        }
    }
    detail::finalize_forward(out, "slice_cols");
    maybe_record(out, {x},
                 [rows, cols, start, len](const std::vector<double>& g,
                                          const std::vector<std::span<double>>& p) {
                     for (int64_t i = 0; i < rows; ++i) {
                         for (int64_t j = 0; j < len; ++j) {
                             p[0][static_cast<size_t>(i * cols + start + j)] +=
                                 g[static_cast<size_t>(i * len + j)];
                         }
                     }
                 });
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: " + shape_str(x.shape()) + " has " +
                         std::to_string(x.numel()) + " elements, target " + shape_str(shape));
    }
    Tensor out = Tensor::from_data(std::move(shape), x.data());
    detail::finalize_forward(out, "reshape");
    maybe_record(out, {x},
                 [](const std::vector<double>& g, const std::vector<std::span<double>>& p) {
                     for (size_t i = 0; i < g.size(); ++i) p[0][i] += g[i];
                 });
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    const int64_t rows = parts[0].dim(0);
    int64_t total = 0;
    for (const Tensor& t : parts) {
        if (t.rank() != 2 || t.dim(0) != rows) {
            throw ShapeError("concat_cols: parts must share the row extent");
        }
        total += t.dim(1);
    }
    Tensor out = Tensor::zeros({rows, total});
    auto& o = out.mutable_data();
    std::vector<int64_t> offsets;
    int64_t off = 0;
    for (const Tensor& t : parts) {
        const int64_t cols = t.dim(1);
        const auto& dt = t.data();
        for (int64_t i = 0; i < rows; ++i) {
            for (int64_t j = 0; j < cols; ++j) {
                o[static_cast<size_t>(i * total + off + j)] = dt[static_cast<size_t>(i * cols + j)];
            }
        }
        offsets.push_back(off);
        off += cols;
    }
    detail::finalize_forward(out, "concat_cols");
    std::vector<int64_t> widths;
    for (const Tensor& t : parts) widths.push_back(t.dim(1));
    maybe_record(out, parts,
                 [rows, total, offsets, widths](const std::vector<double>& g,
                                                const std::vector<std::span<double>>& p) {
                     for (size_t part = 0; part < widths.size(); ++part) {
                         const int64_t cols = widths[part];
                         const int64_t off = offsets[part];
                         for (int64_t i = 0; i < rows; ++i) {
                             for (int64_t j = 0; j < cols; ++j) {
                                 p[part][static_cast<size_t>(i * cols + j)] +=
                                     g[static_cast<size_t>(i * total + off + j)];
                             }
                         }
                     }
                 });
    return out;
}

Tensor sum(const Tensor& x) {
    Tensor out = Tensor::zeros({1});
    double s = 0.0;
    for (double v : x.data()) s += v;
    out.mutable_data()[0] = s;
    detail::finalize_forward(out, "sum");
    maybe_record(out, {x},
                 [](const std::vector<double>& g, const std::vector<std::span<double>>& p) {
                     for (double& v : p[0]) v += g[0];
                 });
    return out;
}

Tensor sum_squares(const Tensor& x) {
    Tensor out = Tensor::zeros({1});
    double s = 0.0;
    for (double v : x.data()) s += v * v;
    out.mutable_data()[0] = s;
    detail::finalize_forward(out, "sum_squares");
    auto ix = x.impl();
    maybe_record(out, {x},
                 [ix](const std::vector<double>& g, const std::vector<std::span<double>>& p) {
                     for (size_t i = 0; i < p[0].size(); ++i) {
                         p[0][i] += 2.0 * g[0] * ix->data[i];
                     }
                 });
    return out;
}

Tensor nll_sum_rows(const Tensor& logits, const std::vector<int>& targets,
                    const std::vector<uint8_t>& mask) {
    require_rank(logits, 2, "nll_sum_rows");
    const int64_t rows = logits.dim(0), vocab = logits.dim(1);
    if (static_cast<int64_t>(targets.size()) != rows ||
        static_cast<int64_t>(mask.size()) != rows) {
        throw ShapeError("nll_sum_rows: targets/mask length must equal row count");
    }
    const auto& dl = logits.data();
    // Per-row softmax cached for the gradient.
    std::vector<double> probs(static_cast<size_t>(rows * vocab), 0.0);
    double nll = 0.0;
    for (int64_t i = 0; i < rows; ++i) {
        if (!mask[static_cast<size_t>(i)]) continue;
        const int target = targets[static_cast<size_t>(i)];
        if (target < 0 || target >= vocab) {
            throw ShapeError("nll_sum_rows: target id " + std::to_string(target) +
                             " out of vocabulary " + std::to_string(vocab));
        }
        const size_t base = static_cast<size_t>(i * vocab);
        double mx = dl[base];
        for (int64_t j = 1; j < vocab; ++j) mx = std::max(mx, dl[base + static_cast<size_t>(j)]);
        double s = 0.0;
        for (int64_t j = 0; j < vocab; ++j) {
            const double e = std::exp(dl[base + static_cast<size_t>(j)] - mx);
            probs[base + static_cast<size_t>(j)] = e;
            s += e;
        }
        for (int64_t j = 0; j < vocab; ++j) probs[base + static_cast<size_t>(j)] /= s;
        nll += std::log(s) + mx - dl[base + static_cast<size_t>(target)];
    }
    Tensor out = Tensor::scalar(nll);
    detail::finalize_forward(out, "nll_sum_rows");
    maybe_record(out, {logits},
                 [probs = std::move(probs), targets, mask, rows, vocab](
                     const std::vector<double>& g, const std::vector<std::span<double>>& p) {
                     for (int64_t i = 0; i < rows; ++i) {
                         if (!mask[static_cast<size_t>(i)]) continue;
                         const size_t base = static_cast<size_t>(i * vocab);
                         for (int64_t j = 0; j < vocab; ++j) {
                             const double onehot =
                                 (j == targets[static_cast<size_t>(i)]) ? 1.0 : 0.0;
                             p[0][base + static_cast<size_t>(j)] +=
                                 g[0] * (probs[base + static_cast<size_t>(j)] - onehot);
                         }
                     }
                 });
    return out;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step) {
    if (step <= 0.0) throw NumericError("grad_check: step must be positive");
    const bool saved_rg = x.requires_grad();
    std::vector<double> saved_grad = x.impl()->grad;
    x.set_requires_grad(true);
    x.zero_grad();

    std::vector<double> g_ad;
    {
        GradTape tape;
        GradTape::Scope scope(tape);
        Tensor loss = f(x);
        if (loss.numel() != 1) throw ShapeError("grad_check: f must be scalar-valued");
        tape.backward(loss);
        g_ad = x.impl()->grad;
        if (g_ad.empty()) g_ad.assign(x.data().size(), 0.0);
    }

    double max_err = 0.0;
    std::vector<double>& data = x.mutable_data();
    for (size_t i = 0; i < data.size(); ++i) {
        const double saved = data[i];
        data[i] = saved + step;
        const double up = f(x).item();
        data[i] = saved - step;
        const double down = f(x).item();
        data[i] = saved;
        const double g_fd = (up - down) / (2.0 * step);
        const double denom = std::max({std::abs(g_ad[i]), std::abs(g_fd), 1e-8});
        max_err = std::max(max_err, std::abs(g_ad[i] - g_fd) / denom);
    }

    x.set_requires_grad(saved_rg);
    x.impl()->grad = std::move(saved_grad);
    return max_err;
}

} // namespace capcore
