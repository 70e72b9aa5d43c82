#pragma once

#include <span>

#include "declab/tensor.hpp"

namespace declab {

enum class Activation { gelu, silu };
enum class NormKind { layernorm, rmsnorm };

namespace ops {

// C[m,n] = A[m,k] * op(B); op(B) = B[k,n] or transposed B[n,k].
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_b = false);

// Batched: C[h,m,n] = alpha * A[h,m,k] * op(B[h,...]) per slice.
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b, double alpha);

Tensor add(const Tensor& a, const Tensor& b);    // same shape
Tensor mul(const Tensor& a, const Tensor& b);    // same shape, elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_row_bias(const Tensor& x, const Tensor& bias);  // x[r,c] + bias[c]

Tensor activation(Activation kind, const Tensor& x);

// Row-wise normalization over the last dim of x[r,c]; bias may be null.
Tensor normalize(NormKind kind, const Tensor& x, const Tensor& gain, const Tensor* bias,
                 double eps);

// z[h,n,n] -> probabilities; row i is a softmax over the causal prefix
// j <= i (max-subtracted), entries j > i are exactly zero.
Tensor causal_softmax(const Tensor& z);

// x[h,n,dk]: rotates consecutive coordinate pairs of each position vector by
// pos * base^(-2j/dk). dk must be even.
Tensor rope_rotate(const Tensor& x, double base);

// logits[r,v], targets[r] -> scalar mean cross-entropy (log-sum-exp form).
Tensor cross_entropy_mean(const Tensor& logits, std::span<const int32_t> targets);

// table[v,d], ids[r] -> out[r,d]
Tensor embedding(const Tensor& table, std::span<const int32_t> ids);

// [b*n, d] -> [b*h, n, d/h] and back
Tensor split_heads(const Tensor& x, int64_t batch, int64_t heads);
Tensor merge_heads(const Tensor& x, int64_t batch);

Tensor sum_all(const Tensor& x);  // scalar

// probs[h,n,n] from causal_softmax -> scalar mean over rows i >= 1 of
// row entropy / log(i+1) (so a uniform prefix row scores exactly 1).
Tensor causal_entropy_mean(const Tensor& probs);

// lambda * max(0, h0 - h) for scalar h.
Tensor entropy_floor_penalty(const Tensor& h, double h0, double lambda);

}  // namespace ops

// Runs backward from a scalar loss on the tape that produced it.
void backward(Tensor& loss);

double gelu_exact(double x);
double silu_exact(double x);

}  // namespace declab
