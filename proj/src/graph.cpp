#include "impactlab/graph.hpp"

#include <cmath>
#include <memory>

#include "impactlab/errors.hpp"
#include "impactlab/ops.hpp"
#include "kernels.hpp"

namespace impactlab::tensor {

namespace {

void require_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) throw NonFiniteError(std::string("non-finite value produced by ") + op);
}

}  // namespace

Graph::Node& Graph::node(Var v) {
    if (!v.valid() || v.id >= nodes_.size()) throw GraphStateError("variable does not belong to this graph");
    return nodes_[v.id];
}

const Graph::Node& Graph::node(Var v) const {
    if (!v.valid() || v.id >= nodes_.size()) throw GraphStateError("variable does not belong to this graph");
    return nodes_[v.id];
}

const Tensor& Graph::val(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
}

Tensor& Graph::grad_of(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(val(id).shape());
    return n.grad;
}

const Tensor& Graph::value(Var v) const {
    node(v);
    return val(v.id);
}

Var Graph::push(Tensor value, bool needs_grad, std::function<void(Graph&, std::size_t)> backward) {
    if (consumed_) throw GraphStateError("graph already consumed by backward()");
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Graph::input(Tensor value) {
    require_finite(value, "input");
    return push(std::move(value), false, nullptr);
}

Var Graph::param(std::string_view name) {
    if (!params_) throw GraphStateError("graph has no parameter store bound");
    const std::size_t idx = params_->index_of(name);
    const Tensor& t = params_->value(idx);
    require_finite(t, "parameter");
    Var v = push(Tensor{}, true, nullptr);
    nodes_[v.id].external = &t;
    nodes_[v.id].param_index = idx;
    return v;
}

Var Graph::conv1d(Var input, Var taps, std::optional<Var> bias) {
    const Tensor& x = value(input);
    const Tensor& w = value(taps);
    const Tensor empty;
    const Tensor& b = bias ? value(*bias) : empty;
    const auto d = kernels::conv_dims(x, w, b);
    Tensor out = x.rank() == 1 ? Tensor({d.out_length()}) : Tensor({d.batch, d.out_channels, d.out_length()});
    kernels::conv1d_forward(d, x.data(), w.data(), b.empty() ? nullptr : b.data(), out.data());
    require_finite(out, "conv1d");
    const bool ng = needs(input) || needs(taps) || (bias && needs(*bias));
    const std::size_t in = input.id, wi = taps.id;
    const std::optional<std::size_t> bi = bias ? std::optional(bias->id) : std::nullopt;
    return push(std::move(out), ng, [d, in, wi, bi](Graph& g, std::size_t self) {
        const Tensor& gout = g.nodes_[self].grad;
        double* gin = g.nodes_[in].needs_grad ? g.grad_of(in).data() : nullptr;
        double* gw = g.nodes_[wi].needs_grad ? g.grad_of(wi).data() : nullptr;
        double* gb = (bi && g.nodes_[*bi].needs_grad) ? g.grad_of(*bi).data() : nullptr;
        kernels::conv1d_backward(d, g.val(in).data(), g.val(wi).data(), gout.data(), gin, gw, gb);
    });
}

Var Graph::temporal_conv(Var input, Var taps, std::optional<Var> bias) {
    const Tensor& x = value(input);
    const Tensor& w = value(taps);
    const Tensor empty;
    const Tensor& b = bias ? value(*bias) : empty;
    Tensor out = tensor::temporal_conv(x, w, b);
    require_finite(out, "temporal_conv");
    const kernels::TemporalDims d{x.dim(0), x.dim(1), w.dim(1), w.dim(0)};
    const bool ng = needs(input) || needs(taps) || (bias && needs(*bias));
    const std::size_t in = input.id, wi = taps.id;
    const std::optional<std::size_t> bi = bias ? std::optional(bias->id) : std::nullopt;
    return push(std::move(out), ng, [d, in, wi, bi](Graph& g, std::size_t self) {
        const Tensor& gout = g.nodes_[self].grad;
        double* gin = g.nodes_[in].needs_grad ? g.grad_of(in).data() : nullptr;
        double* gw = g.nodes_[wi].needs_grad ? g.grad_of(wi).data() : nullptr;
        double* gb = (bi && g.nodes_[*bi].needs_grad) ? g.grad_of(*bi).data() : nullptr;
        kernels::temporal_backward(d, g.val(in).data(), g.val(wi).data(), gout.data(), gin, gw, gb);
    });
}

Var Graph::linear(Var input, Var weight, std::optional<Var> bias) {
    const Tensor empty;
    Tensor out = tensor::linear(value(input), value(weight), bias ? value(*bias) : empty);
    require_finite(out, "linear");
    const bool ng = needs(input) || needs(weight) || (bias && needs(*bias));
    const std::size_t in = input.id, wi = weight.id;
    const std::optional<std::size_t> bi = bias ? std::optional(bias->id) : std::nullopt;
    return push(std::move(out), ng, [in, wi, bi](Graph& g, std::size_t self) {
        const Tensor& gout = g.nodes_[self].grad;
        const Tensor& x = g.val(in);
        const Tensor& w = g.val(wi);
        const std::size_t rows = w.dim(0), cols = w.dim(1);
        if (g.nodes_[wi].needs_grad) {
            double* gw = g.grad_of(wi).data();
            for (std::size_t r = 0; r < rows; ++r) axpy(gout[r], x.data(), gw + r * cols, cols);
        }
        if (g.nodes_[in].needs_grad) {
            double* gx = g.grad_of(in).data();
            for (std::size_t r = 0; r < rows; ++r) axpy(gout[r], w.data() + r * cols, gx, cols);
        }
        if (bi && g.nodes_[*bi].needs_grad) {
            double* gb = g.grad_of(*bi).data();
            for (std::size_t r = 0; r < rows; ++r) gb[r] += gout[r];
        }
    });
}

Var Graph::forget_pool(Var candidates, Var forget) {
    Tensor out = tensor::forget_pool(value(candidates), value(forget));
    require_finite(out, "forget_pool");
    const bool ng = needs(candidates) || needs(forget);
    const std::size_t zi = candidates.id, fi = forget.id;
    return push(std::move(out), ng, [zi, fi](Graph& g, std::size_t self) {
        const Tensor& c = g.val(self);
        const Tensor& z = g.val(zi);
        double* gz = g.nodes_[zi].needs_grad ? g.grad_of(zi).data() : nullptr;
        double* gf = g.nodes_[fi].needs_grad ? g.grad_of(fi).data() : nullptr;
        kernels::forget_pool_backward(z.dim(0), z.dim(1), z.data(), g.val(fi).data(), c.data(),
                                      g.nodes_[self].grad.data(), gz, gf);
    });
}

Var Graph::gru(Var xproj, Var recurrent, Var bias) {
    const Tensor& x = value(xproj);
    const Tensor& u = value(recurrent);
    const Tensor& b = value(bias);
    if (u.rank() != 2 || u.dim(0) != 3 * u.dim(1) || x.rank() != 2 || x.dim(1) != u.dim(0) || b.size() != u.dim(0)) {
        throw ShapeError("gru: inconsistent shapes");
    }
    const std::size_t steps = x.dim(0), hidden = u.dim(1);
    Tensor out({steps, hidden});
    auto cache = std::make_shared<std::vector<double>>(steps * 4 * hidden);
    kernels::gru_forward(steps, hidden, x.data(), u.data(), b.data(), out.data(), cache->data());
    require_finite(out, "gru");
    const bool ng = needs(xproj) || needs(recurrent) || needs(bias);
    const std::size_t xi = xproj.id, ui = recurrent.id, bi = bias.id;
    return push(std::move(out), ng, [steps, hidden, cache, xi, ui, bi](Graph& g, std::size_t self) {
        double* gx = g.nodes_[xi].needs_grad ? g.grad_of(xi).data() : nullptr;
        double* gu = g.nodes_[ui].needs_grad ? g.grad_of(ui).data() : nullptr;
        double* gb = g.nodes_[bi].needs_grad ? g.grad_of(bi).data() : nullptr;
        kernels::gru_backward(steps, hidden, g.val(ui).data(), g.val(self).data(), cache->data(),
                              g.nodes_[self].grad.data(), gx, gu, gb);
    });
}

Var Graph::tanh(Var x) {
    Tensor out = tensor::tanh(value(x));
    const std::size_t xi = x.id;
    return push(std::move(out), needs(x), [xi](Graph& g, std::size_t self) {
        const Tensor& y = g.val(self);
        const Tensor& gy = g.nodes_[self].grad;
        Tensor& gx = g.grad_of(xi);
        for (std::size_t i = 0; i < y.size(); ++i) gx[i] += gy[i] * (1.0 - y[i] * y[i]);
    });
}

Var Graph::sigmoid(Var x) {
    Tensor out = tensor::sigmoid(value(x));
    const std::size_t xi = x.id;
    return push(std::move(out), needs(x), [xi](Graph& g, std::size_t self) {
        const Tensor& y = g.val(self);
        const Tensor& gy = g.nodes_[self].grad;
        Tensor& gx = g.grad_of(xi);
        for (std::size_t i = 0; i < y.size(); ++i) gx[i] += gy[i] * y[i] * (1.0 - y[i]);
    });
}

Var Graph::relu(Var x) {
    Tensor out = tensor::relu(value(x));
    const std::size_t xi = x.id;
    return push(std::move(out), needs(x), [xi](Graph& g, std::size_t self) {
        const Tensor& in = g.val(xi);
        const Tensor& gy = g.nodes_[self].grad;
        Tensor& gx = g.grad_of(xi);
        for (std::size_t i = 0; i < in.size(); ++i) {
            if (in[i] > 0.0) gx[i] += gy[i];
        }
    });
}

Var Graph::softmax(Var x) {
    Tensor out = tensor::softmax(value(x));
    require_finite(out, "softmax");
    const std::size_t xi = x.id;
    return push(std::move(out), needs(x), [xi](Graph& g, std::size_t self) {
        const Tensor& p = g.val(self);
        const Tensor& gp = g.nodes_[self].grad;
        const double s = dot(p.data(), gp.data(), p.size());
        Tensor& gx = g.grad_of(xi);
        for (std::size_t i = 0; i < p.size(); ++i) gx[i] += p[i] * (gp[i] - s);
    });
}

Var Graph::concat_last(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != tb.rank() || ta.rank() == 0) throw ShapeError("concat_last: rank mismatch");
    for (std::size_t i = 0; i + 1 < ta.rank(); ++i) {
        if (ta.dim(i) != tb.dim(i)) {
            throw ShapeError("concat_last: leading dims differ " + shape_string(ta.shape()) + " vs " +
                             shape_string(tb.shape()));
        }
    }
    const std::size_t la = ta.shape().back(), lb = tb.shape().back(), rows = ta.size() / la;
    Shape shape = ta.shape();
    shape.back() = la + lb;
    Tensor out(shape);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(ta.data() + r * la, la, out.data() + r * (la + lb));
        std::copy_n(tb.data() + r * lb, lb, out.data() + r * (la + lb) + la);
    }
    const std::size_t ai = a.id, bi = b.id;
    return push(std::move(out), needs(a) || needs(b), [ai, bi, la, lb, rows](Graph& g, std::size_t self) {
        const Tensor& gy = g.nodes_[self].grad;
        if (g.nodes_[ai].needs_grad) {
            Tensor& ga = g.grad_of(ai);
            for (std::size_t r = 0; r < rows; ++r) axpy(1.0, gy.data() + r * (la + lb), ga.data() + r * la, la);
        }
        if (g.nodes_[bi].needs_grad) {
            Tensor& gb = g.grad_of(bi);
            for (std::size_t r = 0; r < rows; ++r) axpy(1.0, gy.data() + r * (la + lb) + la, gb.data() + r * lb, lb);
        }
    });
}

Var Graph::reshape(Var x, Shape shape) {
    Tensor out = value(x).reshaped(std::move(shape));
    const std::size_t xi = x.id;
    return push(std::move(out), needs(x), [xi](Graph& g, std::size_t self) {
        const Tensor& gy = g.nodes_[self].grad;
        axpy(1.0, gy.data(), g.grad_of(xi).data(), gy.size());
    });
}

Var Graph::last_row(Var x) {
    const Tensor& t = value(x);
    if (t.rank() != 2 || t.dim(0) == 0) throw ShapeError("last_row: expected a non-empty (T, H) tensor");
    const std::size_t h = t.dim(1), off = (t.dim(0) - 1) * h;
    Tensor out({h}, std::vector<double>(t.data() + off, t.data() + off + h));
    const std::size_t xi = x.id;
    return push(std::move(out), needs(x), [xi, off, h](Graph& g, std::size_t self) {
        axpy(1.0, g.nodes_[self].grad.data(), g.grad_of(xi).data() + off, h);
    });
}

Var Graph::pick(Var x, std::size_t i) {
    const Tensor& t = value(x);
    if (i >= t.size()) throw ShapeError("pick: index out of range");
    const std::size_t xi = x.id;
    return push(Tensor::scalar(t[i]), needs(x), [xi, i](Graph& g, std::size_t self) {
        g.grad_of(xi)[i] += g.nodes_[self].grad[0];
    });
}

Var Graph::add(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.shape() != tb.shape()) throw ShapeError("add: shape mismatch");
    Tensor out = ta;
    axpy(1.0, tb.data(), out.data(), out.size());
    require_finite(out, "add");
    const std::size_t ai = a.id, bi = b.id;
    return push(std::move(out), needs(a) || needs(b), [ai, bi](Graph& g, std::size_t self) {
        const Tensor& gy = g.nodes_[self].grad;
        if (g.nodes_[ai].needs_grad) axpy(1.0, gy.data(), g.grad_of(ai).data(), gy.size());
        if (g.nodes_[bi].needs_grad) axpy(1.0, gy.data(), g.grad_of(bi).data(), gy.size());
    });
}

Var Graph::scale(Var x, double factor) {
    Tensor out = value(x);
    for (auto& v : out.values()) v *= factor;
    require_finite(out, "scale");
    const std::size_t xi = x.id;
    return push(std::move(out), needs(x), [xi, factor](Graph& g, std::size_t self) {
        const Tensor& gy = g.nodes_[self].grad;
        axpy(factor, gy.data(), g.grad_of(xi).data(), gy.size());
    });
}

Var Graph::mse(Var pred, Var target) {
    const double loss = tensor::mse(value(pred), value(target));
    Tensor out = Tensor::scalar(loss);
    require_finite(out, "mse");
    const std::size_t pi = pred.id, ti = target.id;
    return push(std::move(out), needs(pred) || needs(target), [pi, ti](Graph& g, std::size_t self) {
        const Tensor& p = g.val(pi);
        const Tensor& t = g.val(ti);
        const double k = 2.0 * g.nodes_[self].grad[0] / static_cast<double>(p.size());
        if (g.nodes_[pi].needs_grad) {
            Tensor& gp = g.grad_of(pi);
            for (std::size_t i = 0; i < p.size(); ++i) gp[i] += k * (p[i] - t[i]);
        }
        if (g.nodes_[ti].needs_grad) {
            Tensor& gt = g.grad_of(ti);
            for (std::size_t i = 0; i < p.size(); ++i) gt[i] -= k * (p[i] - t[i]);
        }
    });
}

Var Graph::nll(Var probs, std::size_t target) {
    const Tensor& p = value(probs);
    if (target >= p.size()) throw ShapeError("nll: class index out of range");
    Tensor out = Tensor::scalar(-std::log(p[target]));
    require_finite(out, "nll");
    const std::size_t pi = probs.id;
    return push(std::move(out), needs(probs), [pi, target](Graph& g, std::size_t self) {
        g.grad_of(pi)[target] -= g.nodes_[self].grad[0] / g.val(pi)[target];
    });
}

void Graph::backward(Var loss, Gradients& into, double seed) {
    if (consumed_) throw GraphStateError("backward() called twice on the same graph");
    if (nodes_.empty() || !loss.valid() || loss.id >= nodes_.size()) {
        throw GraphStateError("backward() called before a forward pass was recorded");
    }
    if (val(loss.id).size() != 1) throw ShapeError("backward() requires a scalar loss");
    if (params_ && into.size() != params_->size()) throw ShapeError("gradient buffer does not match parameter store");
    consumed_ = true;
    nodes_[loss.id].grad = Tensor(val(loss.id).shape(), seed);
    for (std::size_t id = loss.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.needs_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(*this, id);
        if (n.param_index) {
            Tensor& dst = into[*n.param_index];
            axpy(1.0, n.grad.data(), dst.data(), dst.size());
        }
        if (id != loss.id) n.grad = Tensor{};
    }
}

void Graph::backward(Var loss, ParamStore& params, double seed) {
    if (params_ != &params) throw GraphStateError("graph is bound to a different parameter store");
    backward(loss, params.grads(), seed);
    params.mark_gradients_populated();
}

}  // namespace impactlab::tensor
