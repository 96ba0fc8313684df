#include "impactlab/model.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "impactlab/errors.hpp"
#include "impactlab/ops.hpp"

namespace impactlab::model {

using nlohmann::json;
using tensor::Shape;

namespace {

std::string_view activation_name(Activation a) {
    switch (a) {
        case Activation::Relu: return "relu";
        case Activation::Tanh: return "tanh";
        case Activation::Identity: return "identity";
    }
    return "?";
}

Activation parse_activation(std::string_view s) {
    if (s == "relu") return Activation::Relu;
    if (s == "tanh") return Activation::Tanh;
    if (s == "identity" || s == "none") return Activation::Identity;
    throw ConfigError("unknown activation '" + std::string(s) + "'");
}

Temporal parse_temporal(std::string_view s) {
    if (s == "qrnn") return Temporal::Qrnn;
    if (s == "conv") return Temporal::Conv;
    throw ConfigError("unknown temporal layer '" + std::string(s) + "' (qrnn|conv)");
}

HeadInput parse_head_input(std::string_view s) {
    if (s == "flattened") return HeadInput::Flattened;
    if (s == "final") return HeadInput::Final;
    throw ConfigError("unknown head input '" + std::string(s) + "' (flattened|final)");
}

HeadKind parse_head(std::string_view s) {
    if (s == "regression") return HeadKind::Regression;
    if (s == "classification") return HeadKind::Classification;
    throw ConfigError("unknown head '" + std::string(s) + "' (regression|classification)");
}

double safe_std(double s) { return s > 1e-12 && std::isfinite(s) ? s : 1.0; }

}  // namespace

std::string_view variant_name(Variant v) {
    switch (v) {
        case Variant::Full: return "full";
        case Variant::NoMerge: return "no_merge";
        case Variant::NoIndividual: return "no_individual";
        case Variant::GruTemporal: return "gru_temporal";
    }
    return "?";
}

Variant parse_variant(std::string_view s) {
    if (s == "full") return Variant::Full;
    if (s == "no_merge") return Variant::NoMerge;
    if (s == "no_individual") return Variant::NoIndividual;
    if (s == "gru_temporal" || s == "gru") return Variant::GruTemporal;
    throw ConfigError("unknown variant '" + std::string(s) + "' (full|no_merge|no_individual|gru_temporal)");
}

void ModelConfig::validate() const {
    if (k < 1) throw ConfigError("model.k must be >= 1");
    if (templates <= k) throw ConfigError("model needs M > K (M=" + std::to_string(templates) + ", K=" + std::to_string(k) + ")");
    if (variant != Variant::NoMerge && variant != Variant::NoIndividual && templates + 1 <= 2 * k)
        throw ConfigError("merge stage needs M - K + 1 > K");
    if (channels < 1 || hidden < 1 || qrnn_width < 1) throw ConfigError("channels, hidden and qrnn_width must be >= 1");
    if (window < qrnn_width) throw ConfigError("model needs W >= qrnn kernel width");
    if (head == HeadKind::Classification && class_ttrs.size() < 2)
        throw ConfigError("classification head needs at least two TTR classes");
}

std::size_t ModelConfig::individual_length() const {
    return variant == Variant::NoIndividual ? 0 : templates - k + 1;
}

std::size_t ModelConfig::merge_length() const {
    switch (variant) {
        case Variant::NoMerge: return individual_length();
        case Variant::NoIndividual: return templates + 1 - k;
        default: return individual_length() - k;
    }
}

std::size_t ModelConfig::slot_features() const { return channels * merge_length(); }

std::size_t ModelConfig::head_features() const { return head_input == HeadInput::Flattened ? window * hidden : hidden; }

json ModelConfig::to_json() const {
    return {{"M", templates},
            {"W", window},
            {"K", k},
            {"channels", channels},
            {"hidden", hidden},
            {"qrnn_width", qrnn_width},
            {"variant", variant_name(variant)},
            {"temporal", temporal == Temporal::Qrnn ? "qrnn" : "conv"},
            {"head_input", head_input == HeadInput::Flattened ? "flattened" : "final"},
            {"head", head == HeadKind::Regression ? "regression" : "classification"},
            {"class_ttrs", class_ttrs},
            {"activation", activation_name(activation)},
            {"bias", bias}};
}

ModelConfig ModelConfig::from_json(const json& j) {
    ModelConfig c;
    c.templates = j.at("M").get<std::size_t>();
    c.window = j.at("W").get<std::size_t>();
    c.k = j.at("K").get<std::size_t>();
    c.channels = j.at("channels").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.qrnn_width = j.at("qrnn_width").get<std::size_t>();
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.temporal = parse_temporal(j.at("temporal").get<std::string>());
    c.head_input = parse_head_input(j.at("head_input").get<std::string>());
    c.head = parse_head(j.at("head").get<std::string>());
    c.class_ttrs = j.at("class_ttrs").get<std::vector<double>>();
    c.activation = parse_activation(j.at("activation").get<std::string>());
    c.bias = j.at("bias").get<bool>();
    c.validate();
    return c;
}

ModelConfig model_config_from(const FlatConfig& cfg, ModelConfig base) {
    auto size = [&](const char* key, std::size_t fallback) {
        const auto v = cfg.get_int(key, static_cast<long long>(fallback));
        if (v < 0) throw ConfigError(std::string(key) + " must be >= 0");
        return static_cast<std::size_t>(v);
    };
    base.templates = size("model.M", base.templates);
    base.window = size("gen.window", base.window);
    base.k = size("model.k", base.k);
    base.channels = size("model.channels", base.channels);
    base.hidden = size("model.hidden", base.hidden);
    base.qrnn_width = size("model.qrnn_width", base.qrnn_width);
    if (cfg.has("model.variant")) base.variant = parse_variant(cfg.get_string("model.variant", ""));
    if (cfg.has("model.temporal")) base.temporal = parse_temporal(cfg.get_string("model.temporal", ""));
    if (cfg.has("model.head_input")) base.head_input = parse_head_input(cfg.get_string("model.head_input", ""));
    if (cfg.has("model.head")) base.head = parse_head(cfg.get_string("model.head", ""));
    base.class_ttrs = cfg.get_doubles("model.class_ttrs", base.class_ttrs);
    if (cfg.has("model.activation")) base.activation = parse_activation(cfg.get_string("model.activation", ""));
    base.bias = cfg.get_bool("model.bias", base.bias);
    base.validate();
    return base;
}

double Normalization::ttr_to_model(double ttr) const {
    return ((log_labels ? std::log1p(ttr) : ttr) - ttr_mean) / ttr_std;
}

double Normalization::ttr_from_model(double z) const {
    const double t = z * ttr_std + ttr_mean;
    return log_labels ? std::expm1(t) : t;
}

double Normalization::v_to_model(double v) const { return ((log_labels ? std::log1p(v) : v) - v_mean) / v_std; }

double Normalization::v_from_model(double z) const {
    const double t = z * v_std + v_mean;
    return log_labels ? std::expm1(t) : t;
}

Normalization Normalization::fit(const std::vector<synthgen::LabeledSample>& train, bool log_labels) {
    if (train.empty()) throw DatasetError("cannot fit normalization on an empty training set");
    long double sum = 0, sq = 0, n = 0;
    long double ts = 0, tq = 0, vs = 0, vq = 0;
    for (const auto& s : train) {
        for (double y : s.traffic) {
            sum += y;
            sq += static_cast<long double>(y) * y;
            n += 1;
        }
        const double ttr = log_labels ? std::log1p(s.ttr_min) : s.ttr_min;
        const double v = log_labels ? std::log1p(s.v_loss) : s.v_loss;
        ts += ttr;
        tq += static_cast<long double>(ttr) * ttr;
        vs += v;
        vq += static_cast<long double>(v) * v;
    }
    const long double m = static_cast<long double>(train.size());
    auto stddev = [](long double s, long double q, long double count) {
        const long double mean = s / count;
        const long double var = q / count - mean * mean;
        return static_cast<double>(std::sqrt(std::max<long double>(var, 0)));
    };
    Normalization out;
    out.log_labels = log_labels;
    out.traffic_mean = static_cast<double>(sum / n);
    out.traffic_std = safe_std(stddev(sum, sq, n));
    out.ttr_mean = static_cast<double>(ts / m);
    out.ttr_std = safe_std(stddev(ts, tq, m));
    out.v_mean = static_cast<double>(vs / m);
    out.v_std = safe_std(stddev(vs, vq, m));
    return out;
}

json Normalization::to_json() const {
    return {{"traffic_mean", traffic_mean}, {"traffic_std", traffic_std}, {"ttr_mean", ttr_mean},
            {"ttr_std", ttr_std},           {"v_mean", v_mean},           {"v_std", v_std},
            {"log_labels", log_labels}};
}

Normalization Normalization::from_json(const json& j) {
    Normalization n;
    n.traffic_mean = j.at("traffic_mean").get<double>();
    n.traffic_std = j.at("traffic_std").get<double>();
    n.ttr_mean = j.at("ttr_mean").get<double>();
    n.ttr_std = j.at("ttr_std").get<double>();
    n.v_mean = j.at("v_mean").get<double>();
    n.v_std = j.at("v_std").get<double>();
    n.log_labels = j.value("log_labels", false);
    return n;
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const auto& c = config_;
    const std::size_t taps = c.k + 1;
    auto add_conv = [&](const std::string& name, std::size_t cout, std::size_t cin, std::size_t t) {
        params_.add(name + ".w", tensor::glorot_uniform({cout, cin, t}, cin * t, cout * t, rng));
        if (c.bias) params_.add(name + ".b", Tensor({cout}));
    };
    auto add_temporal = [&](const std::string& name, std::size_t width, std::size_t out, std::size_t in) {
        params_.add(name + ".w", tensor::glorot_uniform({width, out, in}, width * in, out, rng));
        params_.add(name + ".b", Tensor({out}));
    };

    if (c.variant != Variant::NoIndividual) {
        add_conv("indiv.syslog", c.channels, 1, taps);
        add_conv("indiv.traffic", c.channels, 1, 1);
    }
    if (c.variant == Variant::NoIndividual) add_conv("merge", c.channels, 1, taps);
    else if (c.variant != Variant::NoMerge) add_conv("merge", c.channels, c.channels, taps);

    const std::size_t d = c.slot_features();
    if (c.variant == Variant::GruTemporal) {
        add_temporal("gru.in", 1, 3 * c.hidden, d);
        params_.add("gru.rec.w", tensor::glorot_uniform({3 * c.hidden, c.hidden}, c.hidden, 3 * c.hidden, rng));
        params_.add("gru.rec.b", Tensor({3 * c.hidden}));
    } else if (c.temporal == Temporal::Qrnn) {
        add_temporal("qrnn.z", c.qrnn_width, c.hidden, d);
        add_temporal("qrnn.f", c.qrnn_width, c.hidden, d);
    } else {
        add_temporal("tconv", c.qrnn_width, c.hidden, d);
    }

    const std::size_t f = c.head_features();
    if (c.head == HeadKind::Regression) {
        params_.add("head.w", tensor::glorot_uniform({2, f}, f, 2, rng));
        params_.add("head.b", Tensor({2}));
    } else {
        const std::size_t n = c.class_ttrs.size();
        params_.add("head.cls.w", tensor::glorot_uniform({n, f}, f, n, rng));
        params_.add("head.cls.b", Tensor({n}));
        params_.add("head.v.w", tensor::glorot_uniform({1, f}, f, 1, rng));
        params_.add("head.v.b", Tensor({1}));
    }
    params_.zero_grad();
}

void Model::require_dimensions(std::size_t templates, std::size_t window) const {
    if (templates != config_.templates)
        throw ShapeError("template dimension M: model expects " + std::to_string(config_.templates) + ", input has " +
                         std::to_string(templates));
    if (window != config_.window)
        throw ShapeError("window dimension W: model expects " + std::to_string(config_.window) + ", input has " +
                         std::to_string(window));
}

std::pair<Tensor, Tensor> Model::encode(const synthgen::LabeledSample& s) const {
    require_dimensions(s.counts.templates, s.window());
    if (s.counts.slots() != s.window()) throw ShapeError("sample counts and traffic cover different numbers of slots");
    const std::size_t w = config_.window, m = config_.templates;
    Tensor x({w, 1, m});
    for (std::size_t t = 0; t < w; ++t)
        for (auto k = s.counts.row_offsets[t]; k < s.counts.row_offsets[t + 1]; ++k)
            x[t * m + s.counts.index[k]] += std::log1p(static_cast<double>(s.counts.count[k]));
    Tensor y({w, 1, 1});
    for (std::size_t t = 0; t < w; ++t) y[t] = (s.traffic[t] - norm_.traffic_mean) / norm_.traffic_std;
    return {std::move(x), std::move(y)};
}

Var Model::act(Graph& g, Var x) const {
    switch (config_.activation) {
        case Activation::Relu: return g.relu(x);
        case Activation::Tanh: return g.tanh(x);
        case Activation::Identity: return x;
    }
    return x;
}

std::optional<Var> Model::maybe_bias(Graph& g, const char* name) const {
    if (!config_.bias) return std::nullopt;
    return g.param(name);
}

Var Model::individual_stage(Graph& g, Var syslog, Var traffic) const {
    if (config_.variant == Variant::NoIndividual) return g.concat_last(syslog, traffic);
    Var zs = g.conv1d(syslog, g.param("indiv.syslog.w"), maybe_bias(g, "indiv.syslog.b"));
    Var zt = g.conv1d(traffic, g.param("indiv.traffic.w"), maybe_bias(g, "indiv.traffic.b"));
    return act(g, g.concat_last(zs, zt));
}

Var Model::merge_stage(Graph& g, Var z1) const {
    if (config_.variant == Variant::NoMerge) return z1;
    return act(g, g.conv1d(z1, g.param("merge.w"), maybe_bias(g, "merge.b")));
}

Var Model::temporal_stage(Graph& g, Var z2) const {
    if (config_.variant == Variant::GruTemporal) {
        Var xproj = g.temporal_conv(z2, g.param("gru.in.w"), g.param("gru.in.b"));
        return g.gru(xproj, g.param("gru.rec.w"), g.param("gru.rec.b"));
    }
    if (config_.temporal == Temporal::Conv) return g.tanh(g.temporal_conv(z2, g.param("tconv.w"), g.param("tconv.b")));
    Var z = g.tanh(g.temporal_conv(z2, g.param("qrnn.z.w"), g.param("qrnn.z.b")));
    Var f = g.sigmoid(g.temporal_conv(z2, g.param("qrnn.f.w"), g.param("qrnn.f.b")));
    return g.forget_pool(z, f);
}

Outputs Model::heads(Graph& g, Var z3) const {
    Var features = config_.head_input == HeadInput::Flattened ? g.reshape(z3, {config_.head_features()})
                                                              : g.last_row(z3);
    Outputs out;
    if (config_.head == HeadKind::Regression) {
        Var both = g.linear(features, g.param("head.w"), g.param("head.b"));
        out.ttr = g.pick(both, 0);
        out.v = g.pick(both, 1);
    } else {
        out.probs = g.softmax(g.linear(features, g.param("head.cls.w"), g.param("head.cls.b")));
        out.v = g.linear(features, g.param("head.v.w"), g.param("head.v.b"));
    }
    return out;
}

Outputs Model::forward(Graph& g, const synthgen::LabeledSample& sample) const {
    auto [x, y] = encode(sample);
    Var z1 = individual_stage(g, g.input(std::move(x)), g.input(std::move(y)));
    Var z2 = merge_stage(g, z1);
    const auto& shape = g.value(z2).shape();
    Var flat = g.reshape(z2, {shape[0], shape[1] * shape[2]});
    return heads(g, temporal_stage(g, flat));
}

std::size_t Model::nearest_class(double ttr) const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < config_.class_ttrs.size(); ++i)
        if (std::abs(config_.class_ttrs[i] - ttr) < std::abs(config_.class_ttrs[best] - ttr)) best = i;
    return best;
}

Var Model::loss(Graph& g, const synthgen::LabeledSample& sample) const {
    const Outputs out = forward(g, sample);
    const double v_target = norm_.v_to_model(sample.v_loss);
    Var v_loss = g.mse(out.v, g.input(Tensor::scalar(v_target)));
    if (config_.head == HeadKind::Regression) {
        const double ttr_target = norm_.ttr_to_model(sample.ttr_min);
        return g.add(g.mse(out.ttr, g.input(Tensor::scalar(ttr_target))), v_loss);
    }
    return g.add(g.nll(out.probs, nearest_class(sample.ttr_min)), v_loss);
}

Prediction Model::predict(const synthgen::LabeledSample& sample) const {
    Graph g(params_);
    const Outputs out = forward(g, sample);
    Prediction p;
    p.v_loss = norm_.v_from_model(g.value(out.v)[0]);
    if (config_.head == HeadKind::Regression) {
        p.ttr = norm_.ttr_from_model(g.value(out.ttr)[0]);
    } else {
        const auto probs = g.value(out.probs).values();
        p.class_probs.assign(probs.begin(), probs.end());
        for (std::size_t i = 0; i < probs.size(); ++i) p.ttr += probs[i] * config_.class_ttrs[i];
    }
    return p;
}

json checkpoint_json(const Model& model) {
    json weights = json::object(), shapes = json::object();
    const auto& ps = model.params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto v = ps.value(i).values();
        weights[ps.name(i)] = std::vector<double>(v.begin(), v.end());
        shapes[ps.name(i)] = ps.value(i).shape();
    }
    return {{"version", 1},
            {"config", model.config().to_json()},
            {"normalization", model.normalization().to_json()},
            {"weights", std::move(weights)},
            {"shapes", std::move(shapes)}};
}

void save_checkpoint(const Model& model, const std::string& path, const json& meta) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error("cannot open '" + tmp + "' for writing");
        auto j = checkpoint_json(model);
        if (!meta.empty()) j["meta"] = meta;
        out << j.dump() << '\n';
        if (!out.flush()) throw Error("failed writing checkpoint '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

Model model_from_checkpoint(const json& j) {
    try {
        const int version = j.at("version").get<int>();
        if (version != 1) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
        Model m(ModelConfig::from_json(j.at("config")));
        m.normalization() = Normalization::from_json(j.at("normalization"));
        const auto& weights = j.at("weights");
        auto& ps = m.params();
        if (weights.size() != ps.size())
            throw CheckpointError("checkpoint has " + std::to_string(weights.size()) + " weight arrays, config needs " +
                                  std::to_string(ps.size()));
        for (std::size_t i = 0; i < ps.size(); ++i) {
            const auto& name = ps.name(i);
            if (!weights.contains(name)) throw CheckpointError("checkpoint lacks weights '" + name + "'");
            if (j.contains("shapes") && j["shapes"].contains(name) &&
                j["shapes"][name].get<Shape>() != ps.value(i).shape())
                throw CheckpointError("weights '" + name + "' have shape " +
                                      tensor::shape_string(j["shapes"][name].get<Shape>()) + ", config implies " +
                                      tensor::shape_string(ps.value(i).shape()));
            const auto values = weights[name].get<std::vector<double>>();
            if (values.size() != ps.value(i).size())
                throw CheckpointError("weights '" + name + "' hold " + std::to_string(values.size()) +
                                      " values, expected " + std::to_string(ps.value(i).size()));
            std::copy(values.begin(), values.end(), ps.value(i).data());
            if (!ps.value(i).all_finite()) throw CheckpointError("weights '" + name + "' contain non-finite values");
        }
        return m;
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("corrupted checkpoint: ") + e.what());
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
    }
}

json read_checkpoint_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw CheckpointError("checkpoint '" + path + "' is not valid JSON (truncated?): " + e.what());
    }
}

Model load_checkpoint(const std::string& path) { return model_from_checkpoint(read_checkpoint_json(path)); }

}  // namespace impactlab::model
