#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "capcore/tensor.hpp"

namespace capcore {

// Differentiable tensor operations. Each op computes its forward value,
// checks finiteness, and (when a tape is recording) registers the gradient
// rule. Reductions run in ascending index order so results are
// bit-reproducible for a fixed input regardless of thread count.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
// m[r x c] + v[c] broadcast over rows.
Tensor add_rowwise(const Tensor& m, const Tensor& v);

// a[m x k] * b[k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// a[m x k] * b[n x k]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& x);
// tanh-form gaussian error linear unit
Tensor gelu(const Tensor& x);

Tensor softmax(const Tensor& x, int axis);

// Row softmax over allowed positions only; forbidden entries are exactly 0
// in the output and receive no gradient. allow.size() == rows*cols,
// nonzero = allowed. A fully forbidden row is an error.
Tensor masked_softmax_rows(const Tensor& x, const std::vector<uint8_t>& allow);

// Per-row normalization over the last axis, then affine by gain/bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// x[ci x h x w] cross-correlated with kernels[co x ci x kh x kw].
Tensor conv2d(const Tensor& x, const Tensor& kernels, int64_t stride, int64_t pad);

// x[c x h x w] -> [c]
Tensor global_avg_pool(const Tensor& x);

// Inference-form batch normalization over channels of x[c x h x w] with
// fixed running statistics.
Tensor batch_norm2d(const Tensor& x, const Tensor& gain, const Tensor& bias,
                    const Tensor& running_mean, const Tensor& running_var,
                    double eps = 1e-5);

// Gather rows of table[v x d] by token id; gradient scatter-adds.
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);

Tensor slice_cols(const Tensor& x, int64_t start, int64_t len);
Tensor concat_cols(const std::vector<Tensor>& parts);

// Same data, new shape (numel must match); gradient is the identity.
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor sum_squares(const Tensor& x);

// Sum over rows with mask != 0 of -log softmax(logits_row)[target_row].
// Rows with mask == 0 contribute nothing regardless of their target id.
Tensor nll_sum_rows(const Tensor& logits, const std::vector<int>& targets,
                    const std::vector<uint8_t>& mask);

// Max over coordinates of |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8), with
// g_fd from central differences of f at the given step. f must be scalar-
// valued and must not mutate x.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double step = 1e-5);

} // namespace capcore
