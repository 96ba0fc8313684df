#include <cmath>
#include <random>

#include "doctest.h"
#include "fd_oracle.hpp"
#include "impactlab/errors.hpp"
#include "impactlab/graph.hpp"
#include "impactlab/ops.hpp"

using namespace impactlab;
using namespace impactlab::tensor;
using impactlab::testing::check_gradients;
using impactlab::testing::random_tensor;

TEST_CASE("conv1d hand examples") {
    auto out = conv1d(Tensor::vector({1, 2, 3, 4}), Tensor::vector({1, 1}));
    CHECK(out == Tensor::vector({3, 5, 7}));

    auto x = Tensor::vector({0.5, -2, 7, 1e3});
    CHECK(conv1d(x, Tensor::vector({1})) == x);

    CHECK_THROWS_AS(conv1d(Tensor::vector({1, 2}), Tensor::vector({1, 1, 1})), ShapeError);
    CHECK_THROWS_AS(conv1d(Tensor::vector({1, 2}), Tensor::vector({1, 1, 1, 1})), ShapeError);
    // L == K + 1 is the smallest admissible input.
    CHECK(conv1d(Tensor::vector({1, 2}), Tensor::vector({1, 1})).size() == 1);
}

TEST_CASE("conv1d length law over random shapes") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t taps = 1 + rng() % 6;
        const std::size_t len = taps + rng() % 20;
        const std::size_t cin = 1 + rng() % 3, cout = 1 + rng() % 3, batch = 1 + rng() % 4;
        auto out = conv1d(Tensor({batch, cin, len}, 1.0), Tensor({cout, cin, taps}, 1.0));
        CHECK(out.dim(2) == len - (taps - 1));
        CHECK(out.dim(1) == cout);
        // all-ones input and taps: every output equals cin * taps
        CHECK(out[0] == doctest::Approx(static_cast<double>(cin * taps)));
    }
}

TEST_CASE("multi-channel conv1d against direct sum") {
    std::mt19937_64 rng(11);
    auto x = random_tensor({2, 3, 9}, rng);
    auto w = random_tensor({4, 3, 3}, rng);
    auto b = random_tensor({4}, rng);
    auto out = conv1d(x, w, b);
    for (std::size_t bb = 0; bb < 2; ++bb)
        for (std::size_t o = 0; o < 4; ++o)
            for (std::size_t j = 0; j < 7; ++j) {
                double s = b[o];
                for (std::size_t c = 0; c < 3; ++c)
                    for (std::size_t k = 0; k < 3; ++k) s += w[(o * 3 + c) * 3 + k] * x[(bb * 3 + c) * 9 + k + j];
                CHECK(out[(bb * 4 + o) * 7 + j] == doctest::Approx(s).epsilon(1e-13));
            }
}

TEST_CASE("linear") {
    auto x = Tensor::vector({1.5, -2.0, 3.0});
    Tensor eye({3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
    CHECK(linear(x, eye, Tensor::vector({0, 0, 0})) == x);
    CHECK(linear(x, Tensor({1, 3}), Tensor::vector({4.25})) == Tensor::vector({4.25}));

    std::mt19937_64 rng(3);
    auto w = random_tensor({3, 2}, rng);
    auto in = random_tensor({2}, rng);
    auto b = random_tensor({3}, rng);
    auto out = linear(in, w, b);
    for (std::size_t r = 0; r < 3; ++r) {
        double s = b[r];
        for (std::size_t c = 0; c < 2; ++c) s += w.at(r, c) * in[c];
        CHECK(out[r] == doctest::Approx(s).epsilon(1e-14));
    }
    CHECK_THROWS_AS(linear(Tensor::vector({1, 2, 3}), w, b), ShapeError);
}

TEST_CASE("activations") {
    CHECK(tensor::tanh(Tensor::vector({0}))[0] == 0.0);
    CHECK(tensor::sigmoid(Tensor::vector({0}))[0] == 0.5);
    CHECK(relu(Tensor::vector({-1}))[0] == 0.0);
    auto sat = tensor::tanh(Tensor::vector({20, -20}));
    CHECK(std::abs(sat[0] - 1.0) < 1e-12);
    CHECK(std::abs(sat[1] + 1.0) < 1e-12);
    auto s = tensor::sigmoid(Tensor::vector({-800, 800, 3}));
    CHECK(s[0] >= 0.0);
    CHECK(s[1] <= 1.0);
    CHECK(s[2] > 0.5);
}

TEST_CASE("mse") {
    auto p = Tensor::vector({1, 2, 3});
    CHECK(mse(p, p) == 0.0);
    CHECK(mse(Tensor::vector({2}), Tensor::vector({0})) == 4.0);
    std::mt19937_64 rng(5);
    auto a = random_tensor({17}, rng), b = random_tensor({17}, rng);
    double hand = 0;
    for (std::size_t i = 0; i < 17; ++i) hand += (a[i] - b[i]) * (a[i] - b[i]);
    CHECK(std::abs(mse(a, b) - hand / 17.0) < 1e-12);
    CHECK_THROWS_AS(mse(Tensor::vector({1, 2}), Tensor::vector({1})), LengthMismatch);
}

TEST_CASE("backward basics") {
    ParamStore ps;
    ps.add("w", Tensor::vector({0.7}));
    {
        Graph g(ps);
        auto loss = g.linear(g.input(Tensor::vector({3.0})), g.reshape(g.param("w"), {1, 1}));
        g.backward(loss, ps);
    }
    CHECK(ps.grad("w")[0] == 3.0);

    SUBCASE("two passes accumulate") {
        ps.zero_grad();
        std::mt19937_64 rng(1);
        ParamStore qs;
        qs.add("a", random_tensor({4}, rng));
        qs.add("b", random_tensor({4}, rng));
        auto build = [](Graph& g) {
            return g.mse(g.tanh(g.param("a")), g.sigmoid(g.param("b")));
        };
        {
            Graph g(qs);
            g.backward(build(g), qs);
        }
        const Gradients single = qs.grads();
        {
            Graph g(qs);
            g.backward(build(g), qs);
        }
        for (std::size_t p = 0; p < qs.size(); ++p)
            for (std::size_t i = 0; i < 4; ++i) CHECK(qs.grads()[p][i] == 2.0 * single[p][i]);
    }

    SUBCASE("graph state errors") {
        Graph empty(ps);
        Gradients buf = ps.make_gradients();
        CHECK_THROWS_AS(empty.backward(Var{}, buf), GraphStateError);
        Graph g(ps);
        auto loss = g.mse(g.param("w"), g.input(Tensor::vector({1.0})));
        g.backward(loss, buf);
        CHECK(g.consumed());
        CHECK_THROWS_AS(g.backward(loss, buf), GraphStateError);
        CHECK_THROWS_AS(g.input(Tensor::vector({1.0})), GraphStateError);
    }
}

TEST_CASE("non-finite values are rejected at layer boundaries") {
    Graph g;
    CHECK_THROWS_AS(g.input(Tensor::vector({1.0, std::nan("")})), NonFiniteError);
    Graph h;
    auto big = h.input(Tensor::vector({1e308}));
    CHECK_THROWS_AS(h.scale(big, 10.0), NonFiniteError);
}

TEST_CASE("sgd_step") {
    ParamStore ps;
    ps.add("w", Tensor::vector({0.0}));
    CHECK_THROWS_AS(sgd_step(ps, 0.1), GraphStateError);

    auto quad = [](Graph& g) { return g.mse(g.param("w"), g.input(Tensor::vector({1.0}))); };
    {
        Graph g(ps);
        g.backward(quad(g), ps);
    }
    sgd_step(ps, 0.0);
    CHECK(ps.value("w")[0] == 0.0);
    CHECK_FALSE(ps.gradients_populated());
    CHECK(ps.grad("w")[0] == 0.0);

    // w_{k+1} = w_k - 0.1 * 2 (w_k - 1): error contracts by 0.8 per step.
    for (int step = 0; step < 100; ++step) {
        Graph g(ps);
        g.backward(quad(g), ps);
        sgd_step(ps, 0.1);
    }
    CHECK(std::abs(ps.value("w")[0] - 1.0) < 1e-6);
    CHECK(std::abs(ps.value("w")[0] - (1.0 - std::pow(0.8, 100))) < 1e-12);
}

TEST_CASE("per-op gradients match central finite differences") {
    std::mt19937_64 rng(2024);
    const double tol = 1e-4;

    SUBCASE("conv1d") {
        ParamStore ps;
        ps.add("x", random_tensor({3, 2, 8}, rng));
        ps.add("w", random_tensor({3, 2, 4}, rng));
        ps.add("b", random_tensor({3}, rng));
        auto target = random_tensor({3, 3, 5}, rng);
        auto r = check_gradients(
            ps, [&](Graph& g) { return g.mse(g.conv1d(g.param("x"), g.param("w"), g.param("b")), g.input(target)); },
            10, 1);
        CHECK(r.max_rel_err < tol);
    }
    SUBCASE("linear") {
        ParamStore ps;
        ps.add("x", random_tensor({6}, rng));
        ps.add("w", random_tensor({3, 6}, rng));
        ps.add("b", random_tensor({3}, rng));
        auto target = random_tensor({3}, rng);
        auto r = check_gradients(
            ps, [&](Graph& g) { return g.mse(g.linear(g.param("x"), g.param("w"), g.param("b")), g.input(target)); },
            10, 2);
        CHECK(r.max_rel_err < tol);
    }
    SUBCASE("activations") {
        ParamStore ps;
        ps.add("x", random_tensor({12}, rng, -2, 2));
        auto target = random_tensor({12}, rng);
        for (int which = 0; which < 3; ++which) {
            auto r = check_gradients(
                ps,
                [&](Graph& g) {
                    auto x = g.param("x");
                    auto y = which == 0 ? g.tanh(x) : which == 1 ? g.sigmoid(x) : g.relu(x);
                    return g.mse(y, g.input(target));
                },
                10, 3 + which);
            CHECK(r.max_rel_err < 1e-6);
        }
    }
    SUBCASE("temporal conv") {
        ParamStore ps;
        ps.add("x", random_tensor({7, 5}, rng));
        ps.add("w", random_tensor({2, 4, 5}, rng));
        ps.add("b", random_tensor({4}, rng));
        auto target = random_tensor({7, 4}, rng);
        auto r = check_gradients(
            ps,
            [&](Graph& g) { return g.mse(g.temporal_conv(g.param("x"), g.param("w"), g.param("b")), g.input(target)); },
            10, 6);
        CHECK(r.max_rel_err < tol);
    }
    SUBCASE("forget pool") {
        ParamStore ps;
        ps.add("z", random_tensor({6, 3}, rng));
        ps.add("f", random_tensor({6, 3}, rng));
        auto target = random_tensor({6, 3}, rng);
        auto r = check_gradients(
            ps,
            [&](Graph& g) {
                return g.mse(g.forget_pool(g.tanh(g.param("z")), g.sigmoid(g.param("f"))), g.input(target));
            },
            10, 7);
        CHECK(r.max_rel_err < tol);
    }
    SUBCASE("gru") {
        ParamStore ps;
        ps.add("x", random_tensor({5, 9}, rng));
        ps.add("u", random_tensor({9, 3}, rng));
        ps.add("b", random_tensor({9}, rng));
        auto target = random_tensor({5, 3}, rng);
        auto r = check_gradients(
            ps, [&](Graph& g) { return g.mse(g.gru(g.param("x"), g.param("u"), g.param("b")), g.input(target)); }, 10,
            8);
        CHECK(r.max_rel_err < tol);
    }
    SUBCASE("softmax and nll") {
        ParamStore ps;
        ps.add("x", random_tensor({5}, rng, -2, 2));
        auto r = check_gradients(ps, [&](Graph& g) { return g.nll(g.softmax(g.param("x")), 2); }, 10, 9);
        CHECK(r.max_rel_err < tol);
    }
    SUBCASE("structural ops") {
        ParamStore ps;
        ps.add("a", random_tensor({2, 3}, rng));
        ps.add("b", random_tensor({2, 2}, rng));
        auto r = check_gradients(
            ps,
            [&](Graph& g) {
                auto c = g.concat_last(g.param("a"), g.param("b"));
                auto last = g.last_row(c);
                auto flat = g.reshape(c, {10});
                auto s = g.add(g.pick(flat, 3), g.scale(g.pick(last, 4), -1.5));
                return g.add(g.mse(s, g.input(Tensor::vector({0.3}))), g.mse(flat, g.input(Tensor({10}, 0.1))));
            },
            10, 10);
        CHECK(r.max_rel_err < tol);
    }
}

TEST_CASE("forward and backward are bit-identical across runs") {
    std::mt19937_64 rng(99);
    ParamStore ps;
    ps.add("x", random_tensor({10, 6}, rng));
    ps.add("w", random_tensor({2, 4, 6}, rng));
    auto run = [&] {
        Graph g(ps);
        auto y = g.forget_pool(g.tanh(g.temporal_conv(g.param("x"), g.param("w"))),
                               g.sigmoid(g.temporal_conv(g.param("x"), g.param("w"))));
        auto loss = g.mse(y, g.input(Tensor({10, 4}, 0.25)));
        Gradients grads = ps.make_gradients();
        const double l = g.value(loss)[0];
        g.backward(loss, grads);
        return std::make_pair(l, grads[1]);
    };
    auto a = run();
    auto b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}
