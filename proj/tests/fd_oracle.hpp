#pragma once

// Central finite-difference oracle for gradient checks. Uses only forward
// evaluation of the loss, never the backward kernels it is checking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "impactlab/graph.hpp"

namespace impactlab::testing {

struct GradCheck {
    double max_rel_err = 0.0;
    int checked = 0;
};

inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
}

// `loss_fn` builds a forward pass on the given graph and returns the scalar loss.
inline GradCheck check_gradients(tensor::ParamStore& params,
                                 const std::function<tensor::Var(tensor::Graph&)>& loss_fn, int coordinates,
                                 std::uint64_t seed, double eps = 1e-5) {
    params.zero_grad();
    {
        tensor::Graph g(params);
        auto loss = loss_fn(g);
        g.backward(loss, params);
    }
    const tensor::Gradients analytic = params.grads();
    auto eval = [&] {
        tensor::Graph g(params);
        return g.value(loss_fn(g))[0];
    };
    std::mt19937_64 rng(seed);
    GradCheck out;
    for (int c = 0; c < coordinates; ++c) {
        const std::size_t p = std::uniform_int_distribution<std::size_t>(0, params.size() - 1)(rng);
        auto& value = params.value(p);
        const std::size_t i = std::uniform_int_distribution<std::size_t>(0, value.size() - 1)(rng);
        const double saved = value[i];
        value[i] = saved + eps;
        const double up = eval();
        value[i] = saved - eps;
        const double down = eval();
        value[i] = saved;
        const double numeric = (up - down) / (2.0 * eps);
        out.max_rel_err = std::max(out.max_rel_err, relative_error(analytic[p][i], numeric));
        ++out.checked;
    }
    params.zero_grad();
    return out;
}

inline tensor::Tensor random_tensor(tensor::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    tensor::Tensor t(std::move(shape));
    for (auto& v : t.values()) v = dist(rng);
    return t;
}

}  // namespace impactlab::testing
