#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"
#include "fd_oracle.hpp"
#include "impactlab/errors.hpp"
#include "impactlab/model.hpp"
#include "impactlab/ops.hpp"

using namespace impactlab;
using namespace impactlab::model;
using impactlab::testing::check_gradients;
using impactlab::testing::random_tensor;
using synthgen::LabeledSample;

namespace {

LabeledSample random_sample(std::size_t m, std::size_t w, std::uint64_t seed, double ttr = 10.0, double v = 50.0) {
    std::mt19937_64 rng(seed);
    LabeledSample s;
    s.id = seed;
    s.counts.templates = m;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> row;
    for (std::size_t t = 0; t < w; ++t) {
        row.clear();
        for (std::uint32_t i = 0; i < m; ++i)
            if (rng() % 3 == 0) row.emplace_back(i, static_cast<std::uint32_t>(1 + rng() % 4));
        s.counts.push_row(row);
        s.traffic.push_back(std::uniform_real_distribution<double>(-2.0, 2.0)(rng));
    }
    s.ttr_min = ttr;
    s.v_loss = v;
    return s;
}

ModelConfig tiny(Variant v) {
    ModelConfig c;
    c.templates = 12;
    c.window = 5;
    c.k = 2;
    c.channels = 2;
    c.hidden = 3;
    c.variant = v;
    c.activation = Activation::Tanh;
    return c;
}

struct TempFile {
    std::string path;
    explicit TempFile(const char* name) : path((std::filesystem::temp_directory_path() / name).string()) {}
    ~TempFile() { std::filesystem::remove(path); }
};

}  // namespace

TEST_CASE("shape chain for M=100, K=4") {
    ModelConfig c;
    c.templates = 100;
    c.window = 7;
    c.k = 4;
    c.channels = 3;
    c.hidden = 5;
    Model m(c, 1);
    CHECK(c.individual_length() == 97);
    CHECK(c.merge_length() == 93);
    tensor::Graph g(m.params());
    auto [x, y] = m.encode(random_sample(100, 7, 3));
    Var z1 = m.individual_stage(g, g.input(x), g.input(y));
    CHECK(g.value(z1).shape() == tensor::Shape{7, 3, 97});
    Var z2 = m.merge_stage(g, z1);
    CHECK(g.value(z2).shape() == tensor::Shape{7, 3, 93});
    Var z3 = m.temporal_stage(g, g.reshape(z2, {7, 3 * 93}));
    CHECK(g.value(z3).shape() == tensor::Shape{7, 5});

    SUBCASE("ablated shapes") {
        c.variant = Variant::NoMerge;
        CHECK(c.merge_length() == 97);
        c.variant = Variant::NoIndividual;
        CHECK(c.merge_length() == 97);
        CHECK(c.individual_length() == 0);
    }
    SUBCASE("invalid configurations") {
        ModelConfig bad = c;
        bad.k = 0;
        CHECK_THROWS_AS(Model{bad}, ConfigError);
        bad = c;
        bad.templates = 4;
        CHECK_THROWS_AS(Model{bad}, ConfigError);
        bad = c;
        bad.window = 1;
        CHECK_THROWS_AS(Model{bad}, ConfigError);
    }
}

TEST_CASE("individual stage by hand") {
    ModelConfig c;
    c.templates = 6;
    c.window = 1;
    c.k = 2;
    c.channels = 1;
    c.hidden = 1;
    c.qrnn_width = 1;
    c.bias = false;
    c.activation = Activation::Identity;
    Model m(c, 1);
    m.params().value("indiv.syslog.w") = Tensor({1, 1, 3}, {1, 2, 3});
    m.params().value("indiv.traffic.w") = Tensor({1, 1, 1}, {2});
    tensor::Graph g(m.params());
    const Tensor x({1, 1, 6}, {1, 0, 2, 0, 0, 1});
    const Tensor y({1, 1, 1}, {3});
    Var z1 = m.individual_stage(g, g.input(x), g.input(y));
    // out_j = sum_k w_k x_{k+j}
    const std::vector<double> expect{1 + 0 + 6, 0 + 4 + 0, 2 + 0 + 0, 0 + 0 + 3, 6};
    const auto got = g.value(z1).values();
    CHECK(std::vector<double>(got.begin(), got.end()) == expect);

    SUBCASE("zero inputs give zero features without bias") {
        tensor::Graph g2(m.params());
        Var z = m.individual_stage(g2, g2.input(Tensor({1, 1, 6})), g2.input(Tensor({1, 1, 1})));
        for (double v : g2.value(z).values()) CHECK(v == 0.0);
    }
    SUBCASE("traffic features ignore template permutations") {
        const Tensor xp({1, 1, 6}, {0, 1, 0, 2, 1, 0});
        tensor::Graph g2(m.params());
        Var z = m.individual_stage(g2, g2.input(xp), g2.input(y));
        CHECK(g2.value(z)[4] == g.value(z1)[4]);
    }
}

TEST_CASE("traffic path is isolated from template order") {
    ModelConfig c = tiny(Variant::Full);
    Model m(c, 9);
    const auto s = random_sample(12, 5, 4);
    std::vector<std::uint32_t> perm(12);
    std::iota(perm.begin(), perm.end(), 0u);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(2));
    auto permuted = s;
    for (auto& i : permuted.counts.index) i = perm[i];
    tensor::Graph g(m.params());
    auto [x, y] = m.encode(s);
    auto [xp, yp] = m.encode(permuted);
    CHECK(x != xp);
    Var a = m.individual_stage(g, g.input(x), g.input(y));
    Var b = m.individual_stage(g, g.input(xp), g.input(yp));
    const auto& ta = g.value(a);
    const auto& tb = g.value(b);
    const std::size_t len = ta.dim(2);
    for (std::size_t row = 0; row < ta.size() / len; ++row) CHECK(ta[row * len + len - 1] == tb[row * len + len - 1]);
}

TEST_CASE("merge stage toy") {
    ModelConfig c;
    c.templates = 3;
    c.window = 1;
    c.k = 1;
    c.channels = 1;
    c.hidden = 1;
    c.qrnn_width = 1;
    c.bias = false;
    c.activation = Activation::Identity;
    Model m(c, 1);
    m.params().value("merge.w") = Tensor({1, 1, 2}, {1, -1});
    tensor::Graph g(m.params());
    Var z2 = m.merge_stage(g, g.input(Tensor({1, 1, 3}, {1, 2, 3})));
    CHECK(g.value(z2) == Tensor({1, 1, 2}, {-1, -1}));

    SUBCASE("identity taps give a shifted slice") {
        m.params().value("merge.w") = Tensor({1, 1, 2}, {0, 1});
        tensor::Graph g2(m.params());
        Var s = m.merge_stage(g2, g2.input(Tensor({1, 1, 3}, {1, 2, 3})));
        CHECK(g2.value(s) == Tensor({1, 1, 2}, {2, 3}));
    }
    SUBCASE("no-merge bypass") {
        c.variant = Variant::NoMerge;
        Model nm(c, 1);
        CHECK_FALSE(nm.params().contains("merge.w"));
        tensor::Graph g2(nm.params());
        Var in = g2.input(Tensor({1, 1, 3}, {1, 2, 3}));
        CHECK(nm.merge_stage(g2, in).id == in.id);
    }
}

TEST_CASE("qrnn forget gate extremes and recurrence") {
    ModelConfig c = tiny(Variant::Full);
    Model m(c, 5);
    std::mt19937_64 rng(8);
    const std::size_t d = c.slot_features();
    const Tensor z2 = random_tensor({5, d}, rng);

    SUBCASE("f = 1 keeps the zero state") {
        m.params().value("qrnn.f.w").fill(0.0);
        m.params().value("qrnn.f.b").fill(50.0);
        tensor::Graph g(m.params());
        for (double v : g.value(m.temporal_stage(g, g.input(z2))).values()) CHECK(v == 0.0);
    }
    SUBCASE("f = 0 is memoryless") {
        m.params().value("qrnn.f.w").fill(0.0);
        m.params().value("qrnn.f.b").fill(-800.0);
        tensor::Graph g(m.params());
        const auto& out = g.value(m.temporal_stage(g, g.input(z2)));
        const auto cand = tensor::tanh(tensor::temporal_conv(z2, m.params().value("qrnn.z.w"), m.params().value("qrnn.z.b")));
        CHECK(out == cand);
    }
    SUBCASE("unrolled by hand") {
        const auto& zw = m.params().value("qrnn.z.w");
        const auto& zb = m.params().value("qrnn.z.b");
        const auto& fw = m.params().value("qrnn.f.w");
        const auto& fb = m.params().value("qrnn.f.b");
        const std::size_t h = c.hidden;
        std::vector<double> state(h, 0.0);
        tensor::Graph g(m.params());
        const auto& out = g.value(m.temporal_stage(g, g.input(z2)));
        for (std::size_t t = 0; t < 5; ++t) {
            for (std::size_t j = 0; j < h; ++j) {
                double az = zb[j], af = fb[j];
                for (std::size_t s = 0; s < c.qrnn_width && s <= t; ++s)
                    for (std::size_t n = 0; n < d; ++n) {
                        az += zw[(s * h + j) * d + n] * z2[(t - s) * d + n];
                        af += fw[(s * h + j) * d + n] * z2[(t - s) * d + n];
                    }
                const double f = 1.0 / (1.0 + std::exp(-af));
                state[j] = f * state[j] + (1.0 - f) * std::tanh(az);
                CHECK(out[t * h + j] == doctest::Approx(state[j]).epsilon(1e-12));
            }
        }
    }
    SUBCASE("hidden states stay in [-1, 1]") {
        const Tensor big = random_tensor({5, d}, rng, -50.0, 50.0);
        tensor::Graph g(m.params());
        for (double v : g.value(m.temporal_stage(g, g.input(big))).values()) CHECK(std::abs(v) <= 1.0);
    }
}

TEST_CASE("heads") {
    ModelConfig c = tiny(Variant::Full);
    Model m(c, 2);
    m.params().value("head.w").fill(0.0);
    m.params().value("head.b") = Tensor::vector({7.0, 3.0});
    const auto p = m.predict(random_sample(12, 5, 1));
    CHECK(p.ttr == 7.0);
    CHECK(p.v_loss == 3.0);

    SUBCASE("classification probabilities sum to one") {
        c.head = HeadKind::Classification;
        Model cm(c, 3);
        const auto q = cm.predict(random_sample(12, 5, 2));
        REQUIRE(q.class_probs.size() == 4);
        double sum = 0.0;
        for (double v : q.class_probs) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);
        CHECK(q.ttr >= 5.0);
        CHECK(q.ttr <= 120.0);
        CHECK(cm.nearest_class(9.0) == 1);
    }
    SUBCASE("clamped display view") {
        Prediction neg{-1.0, -2.0, {}};
        CHECK(neg.ttr_display() == 0.0);
        CHECK(neg.v_display() == 0.0);
        CHECK(neg.ttr == -1.0);
    }
}

TEST_CASE("end-to-end gradients match finite differences") {
    for (Variant v : {Variant::Full, Variant::NoMerge, Variant::NoIndividual, Variant::GruTemporal}) {
        CAPTURE(variant_name(v));
        for (auto head_input : {HeadInput::Final, HeadInput::Flattened}) {
            ModelConfig c = tiny(v);
            c.head_input = head_input;
            Model m(c, 11);
            m.normalization().log_labels = true;
            const auto s = random_sample(12, 5, 6, 60.0, 900.0);
            auto r = check_gradients(
                m.params(), [&](tensor::Graph& g) { return m.loss(g, s); }, 20, 13);
            CHECK(r.max_rel_err < 1e-4);
        }
    }
    SUBCASE("temporal conv and classification heads") {
        ModelConfig c = tiny(Variant::Full);
        c.temporal = Temporal::Conv;
        c.head = HeadKind::Classification;
        Model m(c, 12);
        const auto s = random_sample(12, 5, 7, 10.0, 40.0);
        auto r = check_gradients(
            m.params(), [&](tensor::Graph& g) { return m.loss(g, s); }, 20, 14);
        CHECK(r.max_rel_err < 1e-4);
    }
}

TEST_CASE("variants have distinct parameter sets and valid forwards") {
    const auto s = random_sample(12, 5, 3);
    Model full(tiny(Variant::Full), 1), nomerge(tiny(Variant::NoMerge), 1);
    CHECK(full.params().parameter_count() != nomerge.params().parameter_count());
    for (Variant v : {Variant::Full, Variant::NoMerge, Variant::NoIndividual, Variant::GruTemporal}) {
        Model m(tiny(v), 4);
        const auto a = m.predict(s);
        const auto b = m.predict(s);
        CHECK(std::isfinite(a.ttr));
        CHECK(a.ttr == b.ttr);
        CHECK(a.v_loss == b.v_loss);
    }
}

TEST_CASE("input dimension checks") {
    Model m(tiny(Variant::Full), 1);
    try {
        m.predict(random_sample(13, 5, 1));
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("M") != std::string::npos);
    }
    CHECK_THROWS_AS(m.predict(random_sample(12, 6, 1)), ShapeError);
}

TEST_CASE("checkpoint round trip") {
    ModelConfig c = tiny(Variant::GruTemporal);
    Model m(c, 21);
    m.normalization() = Normalization{1.5, 2.5, 3.0, 4.0, 5.0, 6.0, true};
    TempFile file("impactlab_test_ckpt.json");
    save_checkpoint(m, file.path);
    const Model back = load_checkpoint(file.path);
    CHECK(back.config().to_json() == c.to_json());
    CHECK(back.normalization() == m.normalization());
    for (std::size_t i = 0; i < m.params().size(); ++i) CHECK(back.params().value(i) == m.params().value(i));
    const auto s = random_sample(12, 5, 8);
    const auto p1 = m.predict(s), p2 = back.predict(s);
    CHECK(p1.ttr == p2.ttr);
    CHECK(p1.v_loss == p2.v_loss);

    SUBCASE("truncated file") {
        std::string text;
        {
            std::ifstream in(file.path);
            text.assign(std::istreambuf_iterator<char>(in), {});
        }
        {
            std::ofstream out(file.path, std::ios::trunc);
            out << text.substr(0, text.size() / 2);
        }
        CHECK_THROWS_AS(load_checkpoint(file.path), CheckpointError);
    }
    SUBCASE("version mismatch") {
        auto j = checkpoint_json(m);
        j["version"] = 2;
        CHECK_THROWS_AS(model_from_checkpoint(j), CheckpointError);
    }
    SUBCASE("wrong weight length") {
        auto j = checkpoint_json(m);
        j["weights"]["head.b"] = std::vector<double>{1.0};
        j.erase("shapes");
        CHECK_THROWS_AS(model_from_checkpoint(j), CheckpointError);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(file.path + ".missing"), CheckpointError); }
    SUBCASE("incompatible M at load time") {
        CHECK_THROWS_AS(back.require_dimensions(100, 5), ShapeError);
    }
}

TEST_CASE("normalization fit") {
    std::vector<LabeledSample> set{random_sample(12, 5, 1, 5.0, 100.0), random_sample(12, 5, 2, 15.0, 300.0)};
    const auto n = Normalization::fit(set);
    CHECK(n.ttr_mean == doctest::Approx(10.0));
    CHECK(n.ttr_std == doctest::Approx(5.0));
    CHECK(n.v_mean == doctest::Approx(200.0));
    CHECK(n.v_std == doctest::Approx(100.0));
    const auto l = Normalization::fit(set, true);
    CHECK(l.ttr_from_model(l.ttr_to_model(15.0)) == doctest::Approx(15.0).epsilon(1e-12));
    CHECK(l.v_from_model(l.v_to_model(300.0)) == doctest::Approx(300.0).epsilon(1e-12));
    CHECK_THROWS_AS(Normalization::fit({}), DatasetError);
}
