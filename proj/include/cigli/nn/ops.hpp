#pragma once

#include <span>
#include <vector>

#include "cigli/nn/tensor.hpp"

// Differentiable tensor operations. Every op records a backward closure when
// any input requires grad and grad mode is on.
namespace cigli::nn {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor scale(const Tensor& a, double s);

Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.2);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);

// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);
// x [B,in], weight [out,in], bias [out] (may be undefined) -> [B,out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Concatenation / slicing along axis 1 (features for 2-D, channels for 4-D).
Tensor concat(const std::vector<Tensor>& parts);
Tensor slice(const Tensor& a, int start, int length);
Tensor reshape(const Tensor& a, Shape shape);

// x [B,C,H,W], weight [O,C,k,k], bias [O] (may be undefined).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding);
Tensor upsample_nearest2x(const Tensor& x);

// Per-channel affine modulation: gamma[b,c] * x[b,c,h,w] + beta[b,c].
Tensor modulate(const Tensor& x, const Tensor& gamma, const Tensor& beta);
// c [B,D] -> [B,D,H,W] with c copied to every spatial position.
Tensor replicate_spatial(const Tensor& c, int height, int width);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Gathers rows (axis 0) in the given order.
Tensor index_rows(const Tensor& a, std::span<const int> rows);
// table [V,E], ids -> [len(ids), E]
Tensor embedding(const Tensor& table, std::span<const int> ids);
// Row-wise select: mask[b] ? a[b] : b[b]. Shapes must match.
Tensor where_rows(std::span<const char> mask, const Tensor& a, const Tensor& b);

// Row-wise log-softmax over axis 1 of a [B,C] tensor.
Tensor log_softmax(const Tensor& logits);
// Mean negative log-likelihood over rows whose target is not ignore_index.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_index = -1);
// Mean binary cross-entropy; logits hold one value per target.
Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets);

}  // namespace cigli::nn
