#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "impactlab/config.hpp"
#include "impactlab/graph.hpp"
#include "impactlab/synthgen.hpp"
#include "impactlab/tensor.hpp"
#include "json.hpp"

namespace impactlab::model {

using tensor::Graph;
using tensor::ParamStore;
using tensor::Tensor;
using tensor::Var;

enum class Variant { Full, NoMerge, NoIndividual, GruTemporal };
enum class Temporal { Qrnn, Conv };
enum class HeadInput { Flattened, Final };
enum class HeadKind { Regression, Classification };
enum class Activation { Relu, Tanh, Identity };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view s);

// Shapes of every stage, per slot:
//   individual  M -> (M-K) syslog + 1 traffic = M-K+1, `channels` filters
//   merge       M-K+1 -> M-2K (NoIndividual: M+1 -> M+1-K)
//   temporal    channels * merge length -> hidden, over W slots
//   heads       W * hidden (Flattened) or hidden (Final) -> TTR, V
struct ModelConfig {
    std::size_t templates = 100;  // M
    std::size_t window = 60;      // W
    std::size_t k = 4;            // taps - 1
    std::size_t channels = 4;
    std::size_t hidden = 16;      // N_h
    std::size_t qrnn_width = 2;
    Variant variant = Variant::Full;
    Temporal temporal = Temporal::Qrnn;
    HeadInput head_input = HeadInput::Final;
    HeadKind head = HeadKind::Regression;
    // Classification head: TTR classes (minutes); the prediction is the
    // probability-weighted TTR and the target is the nearest class.
    std::vector<double> class_ttrs{5, 10, 60, 120};
    Activation activation = Activation::Relu;
    bool bias = true;

    void validate() const;
    std::size_t individual_length() const;  // per channel, 0 for NoIndividual
    std::size_t merge_length() const;       // per channel, after the merge stage (or its bypass)
    std::size_t slot_features() const;      // channels * merge_length
    std::size_t head_features() const;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

// Reads model.* keys over `base`.
ModelConfig model_config_from(const FlatConfig& cfg, ModelConfig base = {});

struct Normalization {
    double traffic_mean = 0.0;
    double traffic_std = 1.0;
    double ttr_mean = 0.0;
    double ttr_std = 1.0;
    double v_mean = 0.0;
    double v_std = 1.0;
    // Labels pass through log1p before standardization.
    bool log_labels = false;

    double ttr_to_model(double ttr) const;
    double ttr_from_model(double z) const;
    double v_to_model(double v) const;
    double v_from_model(double z) const;

    static Normalization fit(const std::vector<synthgen::LabeledSample>& train, bool log_labels = false);
    nlohmann::json to_json() const;
    static Normalization from_json(const nlohmann::json& j);
    friend bool operator==(const Normalization&, const Normalization&) = default;
};

struct Prediction {
    double ttr = 0.0;     // minutes, unclamped
    double v_loss = 0.0;  // volume * minutes, unclamped
    std::vector<double> class_probs;

    double ttr_display() const { return ttr < 0.0 ? 0.0 : ttr; }
    double v_display() const { return v_loss < 0.0 ? 0.0 : v_loss; }
};

struct Outputs {
    Var ttr;    // standardized regression output (Regression head)
    Var v;      // standardized
    Var probs;  // class probabilities (Classification head)
};

class Model {
public:
    explicit Model(ModelConfig config, std::uint64_t seed = 0);

    const ModelConfig& config() const noexcept { return config_; }
    ParamStore& params() noexcept { return params_; }
    const ParamStore& params() const noexcept { return params_; }
    Normalization& normalization() noexcept { return norm_; }
    const Normalization& normalization() const noexcept { return norm_; }

    // Throws ShapeError naming M or W when the input does not fit.
    void require_dimensions(std::size_t templates, std::size_t window) const;

    // Model inputs for one sample: log1p counts (W, 1, M) and standardized
    // traffic (W, 1, 1).
    std::pair<Tensor, Tensor> encode(const synthgen::LabeledSample& sample) const;

    Var individual_stage(Graph& g, Var syslog, Var traffic) const;
    Var merge_stage(Graph& g, Var z1) const;
    Var temporal_stage(Graph& g, Var z2_flat) const;
    Outputs heads(Graph& g, Var z3) const;

    Outputs forward(Graph& g, const synthgen::LabeledSample& sample) const;
    // Joint loss: MSE_TTR + MSE_V on standardized labels (Regression), or
    // NLL over TTR classes + MSE_V (Classification).
    Var loss(Graph& g, const synthgen::LabeledSample& sample) const;
    Prediction predict(const synthgen::LabeledSample& sample) const;

    std::size_t nearest_class(double ttr) const;

private:
    Var act(Graph& g, Var x) const;
    std::optional<Var> maybe_bias(Graph& g, const char* name) const;

    ModelConfig config_;
    ParamStore params_;
    Normalization norm_;
};

// JSON {version:1, config, normalization, weights:{name:[...]}, shapes:{name:[...]}},
// plus an optional free-form "meta" object that loading ignores.
void save_checkpoint(const Model& model, const std::string& path, const nlohmann::json& meta = {});
nlohmann::json checkpoint_json(const Model& model);
// Throws CheckpointError on unreadable, truncated or inconsistent files.
Model load_checkpoint(const std::string& path);
nlohmann::json read_checkpoint_json(const std::string& path);
Model model_from_checkpoint(const nlohmann::json& j);

}  // namespace impactlab::model
