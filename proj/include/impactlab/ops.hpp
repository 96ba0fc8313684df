#pragma once

#include "impactlab/tensor.hpp"

// Forward-only numeric ops on tensors. The differentiable versions live in
// graph.hpp and share the kernels behind these functions.
//
// Tap-count convention: a convolution with K+1 taps (indices 0..K) maps a
// length-L signal to length L-K. There is no padding and the stride is 1.
// "K" therefore means "taps minus one" everywhere in this library.
namespace impactlab::tensor {

// Single channel: input (L), taps (K+1) -> (L-K).
// Multi channel: input (B, Cin, L), taps (Cout, Cin, K+1), bias (Cout) or
// empty -> (B, Cout, L-K).
//   out[b, o, j] = bias[o] + sum_{c,k} taps[o, c, k] * input[b, c, k + j]
Tensor conv1d(const Tensor& input, const Tensor& taps, const Tensor& bias = {});

// out = weight * input + bias; weight (rows, cols), input (cols), bias (rows) or empty.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias = {});

// Causal convolution along time. input (T, N), taps (width, H, N), bias (H).
//   out[t, h] = bias[h] + sum_s sum_n taps[s, h, n] * input[t - s, n]
// with input rows before t = 0 treated as zero.
Tensor temporal_conv(const Tensor& input, const Tensor& taps, const Tensor& bias = {});

// Recurrent pooling with a forget gate:
//   c[t] = f[t] * c[t-1] + (1 - f[t]) * z[t],  c[-1] = 0
// z, f: (T, H) -> (T, H).
Tensor forget_pool(const Tensor& candidates, const Tensor& forget);

// GRU recurrence over precomputed input projections.
// xproj (T, 3H) laid out as [reset | update | new], recurrent (3H, H), bias (3H).
//   r = sigmoid(x_r + U_r h + b_r)
//   u = sigmoid(x_u + U_u h + b_u)
//   n = tanh(x_n + r * (U_n h + b_n))
//   h' = (1 - u) * n + u * h
Tensor gru(const Tensor& xproj, const Tensor& recurrent, const Tensor& bias);

Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor softmax(const Tensor& x);

double mse(const Tensor& pred, const Tensor& target);

double sigmoid(double x);

// Unrolled dot product with four independent accumulators; the reduction
// order depends only on n.
double dot(const double* a, const double* b, std::size_t n);
// y += alpha * x
void axpy(double alpha, const double* x, double* y, std::size_t n);

}  // namespace impactlab::tensor
