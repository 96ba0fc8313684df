#pragma once

// Raw forward/backward kernels shared by ops.cpp and graph.cpp.
// Backward kernels accumulate (+=) into their gradient outputs; a null
// gradient pointer means "not needed".

#include <cstddef>

#include "impactlab/tensor.hpp"

namespace impactlab::tensor::kernels {

struct ConvDims {
    std::size_t batch, in_channels, out_channels, length, taps;
    std::size_t out_length() const { return length - taps + 1; }
};

// Validates shapes; accepts (L)x(K+1) or (B,Cin,L)x(Cout,Cin,K+1).
ConvDims conv_dims(const Tensor& input, const Tensor& taps, const Tensor& bias);

void conv1d_forward(const ConvDims& d, const double* in, const double* w, const double* bias, double* out);
void conv1d_backward(const ConvDims& d, const double* in, const double* w, const double* gout, double* gin,
                     double* gw, double* gbias);

struct TemporalDims {
    std::size_t steps, inputs, outputs, width;
};

void temporal_forward(const TemporalDims& d, const double* in, const double* w, const double* bias, double* out);
void temporal_backward(const TemporalDims& d, const double* in, const double* w, const double* gout, double* gin,
                       double* gw, double* gbias);

void forget_pool_forward(std::size_t steps, std::size_t hidden, const double* z, const double* f, double* c);
void forget_pool_backward(std::size_t steps, std::size_t hidden, const double* z, const double* f, const double* c,
                          const double* gc, double* gz, double* gf);

// GRU forward keeps per-step gates in `cache` (steps * 4H: r, u, n, U_n h + b_n).
void gru_forward(std::size_t steps, std::size_t hidden, const double* xproj, const double* u, const double* bias,
                 double* h, double* cache);
void gru_backward(std::size_t steps, std::size_t hidden, const double* u, const double* h, const double* cache,
                  const double* gh, double* gxproj, double* gu, double* gbias);

}  // namespace impactlab::tensor::kernels
