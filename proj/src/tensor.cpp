#include "impactlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "impactlab/errors.hpp"

namespace impactlab::tensor {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ')';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (shape_size(shape_) != data_.size()) {
        throw ShapeError("tensor shape " + shape_string(shape_) + " does not hold " +
                         std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::vector(std::vector<double> values) {
    Shape shape{values.size()};
    return Tensor(std::move(shape), std::move(values));
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Gradients::zero() {
    for (auto& g : grads_) g.fill(0.0);
}

void Gradients::add(const Gradients& other) {
    if (other.size() != size()) throw ShapeError("gradient buffers have different parameter counts");
    for (std::size_t i = 0; i < grads_.size(); ++i) {
        auto dst = grads_[i].values();
        auto src = other.grads_[i].values();
        if (dst.size() != src.size()) throw ShapeError("gradient buffer shape mismatch");
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
}

std::size_t ParamStore::add(std::string name, Tensor value) {
    if (index_.contains(name)) throw ShapeError("duplicate parameter name '" + name + "'");
    const std::size_t idx = values_.size();
    index_.emplace(name, idx);
    names_.push_back(std::move(name));
    grads_.append(Tensor(value.shape()));
    values_.push_back(std::move(value));
    return idx;
}

bool ParamStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t ParamStore::index_of(std::string_view name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ShapeError("unknown parameter '" + std::string(name) + "'");
    return it->second;
}

Gradients ParamStore::make_gradients() const {
    std::vector<Tensor> g;
    g.reserve(values_.size());
    for (const auto& v : values_) g.emplace_back(v.shape());
    return Gradients(std::move(g));
}

void ParamStore::accumulate(const Gradients& g) {
    grads_.add(g);
    populated_ = true;
}

void ParamStore::zero_grad() {
    grads_.zero();
    populated_ = false;
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
}

void sgd_step(ParamStore& params, double lr) {
    if (!params.gradients_populated()) throw GraphStateError("sgd_step called without accumulated gradients");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto w = params.value(i).values();
        auto g = params.grads()[i].values();
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * g[k];
    }
    params.zero_grad();
}

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = dist(rng);
    return t;
}

}  // namespace impactlab::tensor
