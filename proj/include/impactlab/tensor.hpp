#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace impactlab::tensor {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. The shape is fixed at construction;
// element values may be written through values().
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor vector(std::vector<double> values);
    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<const double> values() const noexcept { return data_; }
    std::span<double> values() noexcept { return data_; }
    const double* data() const noexcept { return data_.data(); }
    double* data() noexcept { return data_.data(); }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }

    Tensor reshaped(Shape shape) const;
    void fill(double v);
    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Gradient buffers aligned index-for-index with a ParamStore.
class Gradients {
public:
    Gradients() = default;
    explicit Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}

    std::size_t size() const noexcept { return grads_.size(); }
    Tensor& operator[](std::size_t i) { return grads_[i]; }
    const Tensor& operator[](std::size_t i) const { return grads_[i]; }

    void append(Tensor t) { grads_.push_back(std::move(t)); }
    void zero();
    // this += other, element by element in index order.
    void add(const Gradients& other);

private:
    std::vector<Tensor> grads_;
};

// Named trainable tensors, each paired with a same-shaped gradient.
class ParamStore {
public:
    std::size_t add(std::string name, Tensor value);

    bool contains(std::string_view name) const;
    std::size_t index_of(std::string_view name) const;
    std::size_t size() const noexcept { return values_.size(); }
    const std::string& name(std::size_t i) const { return names_.at(i); }
    const std::vector<std::string>& names() const noexcept { return names_; }

    const Tensor& value(std::size_t i) const { return values_.at(i); }
    Tensor& value(std::size_t i) { return values_.at(i); }
    const Tensor& value(std::string_view name) const { return values_.at(index_of(name)); }
    Tensor& value(std::string_view name) { return values_.at(index_of(name)); }
    const Tensor& grad(std::string_view name) const { return grads_[index_of(name)]; }

    Gradients& grads() noexcept { return grads_; }
    const Gradients& grads() const noexcept { return grads_; }
    // Zero-initialized buffers with the store's shapes.
    Gradients make_gradients() const;

    // Adds to the gradient accumulators and marks them populated.
    void accumulate(const Gradients& g);
    void mark_gradients_populated() noexcept { populated_ = true; }
    bool gradients_populated() const noexcept { return populated_; }
    void zero_grad();

    std::size_t parameter_count() const;

private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
    Gradients grads_;
    std::map<std::string, std::size_t, std::less<>> index_;
    bool populated_ = false;
};

// param <- param - lr * grad, then zero the gradients.
// Throws GraphStateError when no gradients have been accumulated.
void sgd_step(ParamStore& params, double lr);

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

}  // namespace impactlab::tensor
