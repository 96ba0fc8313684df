#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "impactlab/config.hpp"
#include "impactlab/model.hpp"
#include "impactlab/synthgen.hpp"

namespace impactlab::pipeline {

using synthgen::LabeledSample;
using synthgen::Pattern;

struct TrainConfig {
    int epochs = 30;
    std::size_t batch_size = 16;
    double lr = 0.05;
    std::uint64_t seed = 0;
    // Epochs without a new best epoch-mean loss before the run counts as stalled.
    int stall_patience = 10;
    // An epoch improves only if it beats the best loss by this relative margin.
    double min_rel_improvement = 1e-6;
    // Fraction of the training set held out (by seeded shuffle) for best-weight selection.
    double val_fraction = 0.0;
    bool standardize_labels = true;
    // log1p labels before standardization; aligns the squared loss with relative error.
    bool log_labels = true;
    unsigned jobs = 1;

    void validate() const;
};

TrainConfig train_config_from(const FlatConfig& cfg, TrainConfig base = {});

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    std::optional<double> val_loss;
};

enum class TrainStatus { Ok, Stalled };

struct TrainResult {
    model::Model model;
    std::vector<EpochRecord> curve;
    TrainStatus status = TrainStatus::Ok;
    int best_epoch = 0;
};

using ProgressFn = std::function<void(const EpochRecord&)>;

// Mini-batch SGD on the joint loss. Per-sample gradients are computed into
// separate buffers (in parallel when jobs > 1) and summed in sample order, so
// results are bit-identical for any job count. Throws TrainingDiverged on a
// non-finite loss.
TrainResult train(const std::vector<LabeledSample>& samples, const model::ModelConfig& model_config,
                  const TrainConfig& config, const ProgressFn& progress = {});

// Mean joint loss over a set, in sample order.
double mean_loss(const model::Model& model, const std::vector<LabeledSample>& samples, unsigned jobs = 1);

void write_loss_curve(const std::string& path, const std::vector<EpochRecord>& curve);

struct SampleResult {
    std::uint64_t id = 0;
    Pattern pattern = Pattern::RampDown;
    double ttr_true = 0, ttr_pred = 0, v_true = 0, v_pred = 0;
    double ttr_rel = 0, v_rel = 0;
    bool ttr_excluded = false, v_excluded = false;  // truth == 0
};

struct MetricSummary {
    std::size_t n = 0;           // samples contributing to the relative error
    double mse = 0.0;
    double rel_err_mean = 0.0;
    double ci95 = 0.0;           // half-width
};

enum class Target { Ttr, V };

struct EvalReport {
    std::vector<SampleResult> samples;
    // Indexed by pattern_index, then Target.
    std::array<std::array<MetricSummary, 2>, 4> per_pattern{};
    std::array<std::size_t, 4> pattern_counts{};
    std::array<MetricSummary, 2> overall{};

    const MetricSummary& at(Pattern p, Target t) const { return per_pattern[synthgen::pattern_index(p)][static_cast<int>(t)]; }
};

// Student-t 95% half-width t_{0.975, n-1} * s / sqrt(n); zero for n < 2.
double t_ci95_halfwidth(std::span<const double> xs);
MetricSummary summarize(std::span<const double> rel_errors, std::span<const double> sq_errors);

EvalReport evaluate(const model::Model& model, const std::vector<LabeledSample>& samples, unsigned jobs = 1);

// CSV rows: pattern,target,variant,seed,mse,rel_err_mean,ci95,n (pattern "all" for overall).
void write_report_csv(std::ostream& out, const EvalReport& report, std::string_view variant, std::string_view seed,
                      bool header = true);
void write_report_csv(const std::string& path, const EvalReport& report, std::string_view variant, std::string_view seed);
nlohmann::json report_json(const EvalReport& report);
void write_predictions_csv(const std::string& path, const EvalReport& report);

struct AblationConfig {
    std::vector<model::Variant> variants{model::Variant::Full, model::Variant::NoMerge, model::Variant::NoIndividual,
                                         model::Variant::GruTemporal};
    std::vector<std::uint64_t> seeds{1, 2, 3};
    model::ModelConfig model;
    TrainConfig train;
};

struct AblationRun {
    model::Variant variant = model::Variant::Full;
    std::uint64_t seed = 0;
    std::string status;  // ok | no_improvement | diverged | error
    std::string detail;
    std::optional<EvalReport> report;
    std::vector<EpochRecord> curve;
    double seconds = 0.0;
};

struct AblationResult {
    std::vector<AblationRun> runs;

    // Mean over seeds with a report of the per-pattern mean relative error.
    std::optional<double> mean_rel_err(model::Variant v, Pattern p, Target t) const;
};

using AblationProgressFn = std::function<void(const AblationRun&)>;

// Trains every variant with every seed on the same data and batch order. A
// failing run is recorded with its status and does not stop the table.
AblationResult run_ablation(const std::vector<LabeledSample>& train_set, const std::vector<LabeledSample>& eval_set,
                            const AblationConfig& config, const AblationProgressFn& progress = {});

// One row per (variant, seed, pattern, target) plus "mean" seed rows, with a status column.
void write_ablation_csv(const std::string& path, const AblationResult& result);
std::string ablation_table(const AblationResult& result, Target target);

struct PredictOutcome {
    model::Prediction prediction;
    std::uint64_t sample_id = 0;
    std::string summary;
};

std::string describe_prediction(const model::Prediction& p);

// `window_file` is a dataset file; `index` selects the sample. When a catalog
// path is given its size must equal the checkpoint's M.
PredictOutcome predict_one(const std::string& window_file, const std::optional<std::string>& catalog_path,
                           const std::string& checkpoint_path, std::size_t index = 0);

}  // namespace impactlab::pipeline
