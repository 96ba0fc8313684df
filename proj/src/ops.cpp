#include "impactlab/ops.hpp"

#include <algorithm>
#include <cmath>

#include "impactlab/errors.hpp"
#include "kernels.hpp"

namespace impactlab::tensor {

namespace kernels {

ConvDims conv_dims(const Tensor& input, const Tensor& taps, const Tensor& bias) {
    kernels::ConvDims d{};
    if (input.rank() == 1 && taps.rank() == 1) {
        d = {1, 1, 1, input.dim(0), taps.dim(0)};
    } else if (input.rank() == 3 && taps.rank() == 3) {
        d = {input.dim(0), input.dim(1), taps.dim(0), input.dim(2), taps.dim(2)};
        if (taps.dim(1) != d.in_channels) {
            throw ShapeError("conv1d: taps expect " + std::to_string(taps.dim(1)) + " input channels, input has " +
                             std::to_string(d.in_channels));
        }
    } else {
        throw ShapeError("conv1d: unsupported ranks input " + shape_string(input.shape()) + ", taps " +
                         shape_string(taps.shape()));
    }
    if (d.taps == 0) throw ShapeError("conv1d: at least one tap required");
    if (d.length < d.taps) {
        throw ShapeError("conv1d: input length " + std::to_string(d.length) + " must exceed K=" +
                         std::to_string(d.taps - 1));
    }
    if (!bias.empty() && bias.size() != d.out_channels) throw ShapeError("conv1d: bias size mismatch");
    return d;
}

}  // namespace kernels

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double dot(const double* a, const double* b, std::size_t n) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

Tensor conv1d(const Tensor& input, const Tensor& taps, const Tensor& bias) {
    const auto d = kernels::conv_dims(input, taps, bias);
    Tensor out = input.rank() == 1 ? Tensor({d.out_length()}) : Tensor({d.batch, d.out_channels, d.out_length()});
    kernels::conv1d_forward(d, input.data(), taps.data(), bias.empty() ? nullptr : bias.data(), out.data());
    return out;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 2 || input.size() != weight.dim(1)) {
        throw ShapeError("linear: weight " + shape_string(weight.shape()) + " incompatible with input " +
                         shape_string(input.shape()));
    }
    const std::size_t rows = weight.dim(0), cols = weight.dim(1);
    if (!bias.empty() && bias.size() != rows) throw ShapeError("linear: bias size mismatch");
    Tensor out({rows});
    for (std::size_t r = 0; r < rows; ++r) {
        out[r] = (bias.empty() ? 0.0 : bias[r]) + dot(weight.data() + r * cols, input.data(), cols);
    }
    return out;
}

Tensor temporal_conv(const Tensor& input, const Tensor& taps, const Tensor& bias) {
    if (input.rank() != 2 || taps.rank() != 3 || taps.dim(2) != input.dim(1)) {
        throw ShapeError("temporal_conv: taps " + shape_string(taps.shape()) + " incompatible with input " +
                         shape_string(input.shape()));
    }
    kernels::TemporalDims d{input.dim(0), input.dim(1), taps.dim(1), taps.dim(0)};
    if (!bias.empty() && bias.size() != d.outputs) throw ShapeError("temporal_conv: bias size mismatch");
    Tensor out({d.steps, d.outputs});
    kernels::temporal_forward(d, input.data(), taps.data(), bias.empty() ? nullptr : bias.data(), out.data());
    return out;
}

Tensor forget_pool(const Tensor& candidates, const Tensor& forget) {
    if (candidates.rank() != 2 || candidates.shape() != forget.shape()) {
        throw ShapeError("forget_pool: candidate and gate shapes differ");
    }
    Tensor out(candidates.shape());
    kernels::forget_pool_forward(candidates.dim(0), candidates.dim(1), candidates.data(), forget.data(), out.data());
    return out;
}

Tensor gru(const Tensor& xproj, const Tensor& recurrent, const Tensor& bias) {
    if (recurrent.rank() != 2 || recurrent.dim(0) != 3 * recurrent.dim(1) || xproj.rank() != 2 ||
        xproj.dim(1) != recurrent.dim(0) || bias.size() != recurrent.dim(0)) {
        throw ShapeError("gru: inconsistent shapes");
    }
    const std::size_t steps = xproj.dim(0), hidden = recurrent.dim(1);
    Tensor out({steps, hidden});
    std::vector<double> cache(steps * 4 * hidden);
    kernels::gru_forward(steps, hidden, xproj.data(), recurrent.data(), bias.data(), out.data(), cache.data());
    return out;
}

Tensor tanh(const Tensor& x) {
    Tensor out = x;
    for (auto& v : out.values()) v = std::tanh(v);
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tensor out = x;
    for (auto& v : out.values()) v = sigmoid(v);
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = x;
    for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor softmax(const Tensor& x) {
    Tensor out = x;
    if (out.empty()) return out;
    const double mx = *std::max_element(out.values().begin(), out.values().end());
    double sum = 0.0;
    for (auto& v : out.values()) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (auto& v : out.values()) v /= sum;
    return out;
}

double mse(const Tensor& pred, const Tensor& target) {
    if (pred.size() != target.size()) {
        throw LengthMismatch("mse: prediction has " + std::to_string(pred.size()) + " values, target " +
                             std::to_string(target.size()));
    }
    if (pred.empty()) throw LengthMismatch("mse: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = pred[i] - target[i];
        s += e * e;
    }
    return s / static_cast<double>(pred.size());
}

}  // namespace impactlab::tensor
