#include "kernels.hpp"

#include <cmath>
#include <vector>

#include "impactlab/ops.hpp"

namespace impactlab::tensor::kernels {

void conv1d_forward(const ConvDims& d, const double* in, const double* w, const double* bias, double* out) {
    const std::size_t lo = d.out_length();
    for (std::size_t b = 0; b < d.batch; ++b) {
        for (std::size_t o = 0; o < d.out_channels; ++o) {
            double* row = out + (b * d.out_channels + o) * lo;
            const double b0 = bias ? bias[o] : 0.0;
            for (std::size_t j = 0; j < lo; ++j) row[j] = b0;
            for (std::size_t c = 0; c < d.in_channels; ++c) {
                const double* src = in + (b * d.in_channels + c) * d.length;
                const double* taps = w + (o * d.in_channels + c) * d.taps;
                for (std::size_t k = 0; k < d.taps; ++k) axpy(taps[k], src + k, row, lo);
            }
        }
    }
}

void conv1d_backward(const ConvDims& d, const double* in, const double* w, const double* gout, double* gin,
                     double* gw, double* gbias) {
    const std::size_t lo = d.out_length();
    for (std::size_t b = 0; b < d.batch; ++b) {
        for (std::size_t o = 0; o < d.out_channels; ++o) {
            const double* g = gout + (b * d.out_channels + o) * lo;
            if (gbias) {
                double s = 0.0;
                for (std::size_t j = 0; j < lo; ++j) s += g[j];
                gbias[o] += s;
            }
            for (std::size_t c = 0; c < d.in_channels; ++c) {
                const std::size_t src_off = (b * d.in_channels + c) * d.length;
                const std::size_t tap_off = (o * d.in_channels + c) * d.taps;
                for (std::size_t k = 0; k < d.taps; ++k) {
                    if (gw) gw[tap_off + k] += dot(in + src_off + k, g, lo);
                    if (gin) axpy(w[tap_off + k], g, gin + src_off + k, lo);
                }
            }
        }
    }
}

void temporal_forward(const TemporalDims& d, const double* in, const double* w, const double* bias, double* out) {
    const std::size_t n = d.inputs;
    for (std::size_t t = 0; t < d.steps; ++t) {
        double* row = out + t * d.outputs;
        for (std::size_t h = 0; h < d.outputs; ++h) {
            double acc = bias ? bias[h] : 0.0;
            for (std::size_t s = 0; s < d.width && s <= t; ++s) {
                acc += dot(w + (s * d.outputs + h) * n, in + (t - s) * n, n);
            }
            row[h] = acc;
        }
    }
}

void temporal_backward(const TemporalDims& d, const double* in, const double* w, const double* gout, double* gin,
                       double* gw, double* gbias) {
    const std::size_t n = d.inputs;
    for (std::size_t t = 0; t < d.steps; ++t) {
        const double* g = gout + t * d.outputs;
        if (gbias) {
            for (std::size_t h = 0; h < d.outputs; ++h) gbias[h] += g[h];
        }
        for (std::size_t s = 0; s < d.width && s <= t; ++s) {
            const double* x = in + (t - s) * n;
            for (std::size_t h = 0; h < d.outputs; ++h) {
                const double gh = g[h];
                if (gh == 0.0) continue;
                const std::size_t off = (s * d.outputs + h) * n;
                if (gw) axpy(gh, x, gw + off, n);
                if (gin) axpy(gh, w + off, gin + (t - s) * n, n);
            }
        }
    }
}

void forget_pool_forward(std::size_t steps, std::size_t hidden, const double* z, const double* f, double* c) {
    for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t h = 0; h < hidden; ++h) {
            const std::size_t i = t * hidden + h;
            const double prev = t ? c[i - hidden] : 0.0;
            c[i] = f[i] * prev + (1.0 - f[i]) * z[i];
        }
    }
}

void forget_pool_backward(std::size_t steps, std::size_t hidden, const double* z, const double* f, const double* c,
                          const double* gc, double* gz, double* gf) {
    std::vector<double> carry(hidden, 0.0);
    for (std::size_t t = steps; t-- > 0;) {
        for (std::size_t h = 0; h < hidden; ++h) {
            const std::size_t i = t * hidden + h;
            const double dc = gc[i] + carry[h];
            const double prev = t ? c[i - hidden] : 0.0;
            if (gz) gz[i] += dc * (1.0 - f[i]);
            if (gf) gf[i] += dc * (prev - z[i]);
            carry[h] = dc * f[i];
        }
    }
}

void gru_forward(std::size_t steps, std::size_t hidden, const double* xproj, const double* u, const double* bias,
                 double* h, double* cache) {
    const std::size_t H = hidden;
    std::vector<double> zero(H, 0.0);
    for (std::size_t t = 0; t < steps; ++t) {
        const double* hp = t ? h + (t - 1) * H : zero.data();
        const double* x = xproj + t * 3 * H;
        double* r = cache + t * 4 * H;
        double* ug = r + H;
        double* n = r + 2 * H;
        double* m = r + 3 * H;
        double* out = h + t * H;
        for (std::size_t i = 0; i < H; ++i) {
            r[i] = sigmoid(x[i] + dot(u + i * H, hp, H) + bias[i]);
            ug[i] = sigmoid(x[H + i] + dot(u + (H + i) * H, hp, H) + bias[H + i]);
            m[i] = dot(u + (2 * H + i) * H, hp, H) + bias[2 * H + i];
        }
        for (std::size_t i = 0; i < H; ++i) {
            n[i] = std::tanh(x[2 * H + i] + r[i] * m[i]);
            out[i] = (1.0 - ug[i]) * n[i] + ug[i] * hp[i];
        }
    }
}

void gru_backward(std::size_t steps, std::size_t hidden, const double* u, const double* h, const double* cache,
                  const double* gh, double* gxproj, double* gu, double* gbias) {
    const std::size_t H = hidden;
    std::vector<double> zero(H, 0.0), carry(H, 0.0), dh(H), da(3 * H);
    for (std::size_t t = steps; t-- > 0;) {
        const double* hp = t ? h + (t - 1) * H : zero.data();
        const double* r = cache + t * 4 * H;
        const double* ug = r + H;
        const double* n = r + 2 * H;
        const double* m = r + 3 * H;
        for (std::size_t i = 0; i < H; ++i) dh[i] = gh[t * H + i] + carry[i];
        // da = [d a_r | d a_u | d m]; the new-gate input gradient is written directly.
        for (std::size_t i = 0; i < H; ++i) {
            const double dn = dh[i] * (1.0 - ug[i]);
            const double dan = dn * (1.0 - n[i] * n[i]);
            const double dr = dan * m[i];
            da[i] = dr * r[i] * (1.0 - r[i]);
            da[H + i] = dh[i] * (hp[i] - n[i]) * ug[i] * (1.0 - ug[i]);
            da[2 * H + i] = dan * r[i];
            if (gxproj) {
                gxproj[t * 3 * H + i] += da[i];
                gxproj[t * 3 * H + H + i] += da[H + i];
                gxproj[t * 3 * H + 2 * H + i] += dan;
            }
            carry[i] = dh[i] * ug[i];
        }
        for (std::size_t row = 0; row < 3 * H; ++row) {
            if (gbias) gbias[row] += da[row];
            if (gu) axpy(da[row], hp, gu + row * H, H);
            axpy(da[row], u + row * H, carry.data(), H);
        }
    }
}

}  // namespace impactlab::tensor::kernels
