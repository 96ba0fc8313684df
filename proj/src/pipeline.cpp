#include "impactlab/pipeline.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <algorithm>
#include <chrono>
#include <limits>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "impactlab/errors.hpp"
#include "impactlab/logtemplate.hpp"
#include "impactlab/rng.hpp"
#include "parallel.hpp"

namespace impactlab::pipeline {

using model::Model;
using nlohmann::json;
using tensor::Gradients;
using tensor::Graph;
using tensor::Var;

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    return out;
}

const char* target_name(Target t) { return t == Target::Ttr ? "ttr" : "v"; }

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be > 0");
    if (stall_patience < 1) throw ConfigError("train.stall_patience must be >= 1");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("train.val_fraction must lie in [0, 1)");
    if (!(min_rel_improvement >= 0.0 && min_rel_improvement < 1.0))
        throw ConfigError("train.min_rel_improvement must lie in [0, 1)");
}

TrainConfig train_config_from(const FlatConfig& cfg, TrainConfig base) {
    base.epochs = static_cast<int>(cfg.get_int("train.epochs", base.epochs));
    const auto bs = cfg.get_int("train.batch_size", static_cast<long long>(base.batch_size));
    if (bs < 1) throw ConfigError("train.batch_size must be >= 1");
    base.batch_size = static_cast<std::size_t>(bs);
    base.lr = cfg.get_double("train.lr", base.lr);
    base.seed = cfg.get_u64("train.seed", base.seed);
    base.stall_patience = static_cast<int>(cfg.get_int("train.stall_patience", base.stall_patience));
    base.min_rel_improvement = cfg.get_double("train.min_rel_improvement", base.min_rel_improvement);
    base.val_fraction = cfg.get_double("train.val_fraction", base.val_fraction);
    base.standardize_labels = cfg.get_bool("train.standardize_labels", base.standardize_labels);
    base.log_labels = cfg.get_bool("train.log_labels", base.log_labels);
    base.validate();
    return base;
}

double mean_loss(const Model& model, const std::vector<LabeledSample>& samples, unsigned jobs) {
    if (samples.empty()) throw DatasetError("cannot compute a loss over an empty set");
    std::vector<double> losses(samples.size());
    detail::parallel_for(samples.size(), jobs, [&](std::size_t i) {
        Graph g(model.params());
        losses[i] = g.value(model.loss(g, samples[i]))[0];
    });
    double sum = 0.0;
    for (double l : losses) sum += l;
    return sum / static_cast<double>(samples.size());
}

TrainResult train(const std::vector<LabeledSample>& samples, const model::ModelConfig& model_config,
                  const TrainConfig& config, const ProgressFn& progress) {
    config.validate();
    if (samples.empty()) throw DatasetError("training set is empty");

    std::vector<std::size_t> train_idx(samples.size());
    std::iota(train_idx.begin(), train_idx.end(), 0);
    std::vector<LabeledSample> val_set;
    if (config.val_fraction > 0.0) {
        std::mt19937_64 rng(derive_seed(config.seed, {2}));
        std::shuffle(train_idx.begin(), train_idx.end(), rng);
        const auto n_val = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(config.val_fraction * static_cast<double>(samples.size()))));
        if (n_val >= samples.size()) throw ConfigError("validation split leaves no training samples");
        std::vector<std::size_t> val_idx(train_idx.end() - static_cast<std::ptrdiff_t>(n_val), train_idx.end());
        train_idx.resize(samples.size() - n_val);
        std::sort(train_idx.begin(), train_idx.end());
        std::sort(val_idx.begin(), val_idx.end());
        for (auto i : val_idx) val_set.push_back(samples[i]);
    }

    TrainResult result{Model(model_config, derive_seed(config.seed, {1})), {}, TrainStatus::Ok, 0};
    Model& m = result.model;
    if (val_set.empty()) {
        m.normalization() = model::Normalization::fit(samples, config.log_labels);
    } else {
        std::vector<LabeledSample> fit_set;
        for (auto i : train_idx) fit_set.push_back(samples[i]);
        m.normalization() = model::Normalization::fit(fit_set, config.log_labels);
    }
    if (!config.standardize_labels) {
        auto& n = m.normalization();
        n.ttr_mean = n.v_mean = 0.0;
        n.ttr_std = n.v_std = 1.0;
    }
    m.require_dimensions(samples.front().counts.templates, samples.front().window());

    auto& ps = m.params();
    std::vector<Gradients> buffers;
    std::vector<double> losses;
    Gradients total = ps.make_gradients();
    tensor::ParamStore best_params;
    double best = std::numeric_limits<double>::infinity();
    int last_improvement = 0;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::vector<std::size_t> order = train_idx;
        std::mt19937_64 shuffle_rng(derive_seed(config.seed, {3, static_cast<std::uint64_t>(epoch)}));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double epoch_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t b = std::min(config.batch_size, order.size() - start);
            while (buffers.size() < b) buffers.push_back(ps.make_gradients());
            losses.assign(b, 0.0);
            try {
                detail::parallel_for(b, config.jobs, [&](std::size_t i) {
                    buffers[i].zero();
                    Graph g(ps);
                    const Var l = m.loss(g, samples[order[start + i]]);
                    losses[i] = g.value(l)[0];
                    g.backward(l, buffers[i]);
                });
            } catch (const NonFiniteError& e) {
                throw TrainingDiverged(epoch, e.what());
            }
            total.zero();
            for (std::size_t i = 0; i < b; ++i) {
                if (!std::isfinite(losses[i])) throw TrainingDiverged(epoch, "non-finite loss");
                epoch_sum += losses[i];
                total.add(buffers[i]);
            }
            ps.accumulate(total);
            tensor::sgd_step(ps, config.lr / static_cast<double>(b));
        }

        EpochRecord rec{epoch, epoch_sum / static_cast<double>(order.size()), std::nullopt};
        if (!std::isfinite(rec.train_loss)) throw TrainingDiverged(epoch, "non-finite epoch loss");
        if (!val_set.empty()) {
            try {
                rec.val_loss = mean_loss(m, val_set, config.jobs);
            } catch (const NonFiniteError& e) {
                throw TrainingDiverged(epoch, e.what());
            }
        }
        result.curve.push_back(rec);
        if (progress) progress(rec);

        const double score = rec.val_loss.value_or(rec.train_loss);
        if (score < best - std::abs(best) * config.min_rel_improvement || !std::isfinite(best)) {
            best = score;
            result.best_epoch = epoch;
            last_improvement = epoch;
            if (!val_set.empty()) best_params = ps;
        } else if (epoch - last_improvement >= config.stall_patience) {
            result.status = TrainStatus::Stalled;
            break;
        }
    }
    if (!val_set.empty() && best_params.size() == ps.size()) {
        for (std::size_t i = 0; i < ps.size(); ++i) ps.value(i) = best_params.value(i);
    }
    ps.zero_grad();
    return result;
}

void write_loss_curve(const std::string& path, const std::vector<EpochRecord>& curve) {
    auto out = open_out(path);
    out << "epoch,train_loss,val_loss\n";
    for (const auto& r : curve) out << r.epoch << ',' << fmt(r.train_loss) << ',' << (r.val_loss ? fmt(*r.val_loss) : "") << '\n';
}

double t_ci95_halfwidth(std::span<const double> xs) {
    const std::size_t n = xs.size();
    if (n < 2) return 0.0;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const double s = std::sqrt(ss / static_cast<double>(n - 1));
    const boost::math::students_t dist(static_cast<double>(n - 1));
    return boost::math::quantile(dist, 0.975) * s / std::sqrt(static_cast<double>(n));
}

MetricSummary summarize(std::span<const double> rel_errors, std::span<const double> sq_errors) {
    MetricSummary m;
    m.n = rel_errors.size();
    if (!sq_errors.empty()) m.mse = std::accumulate(sq_errors.begin(), sq_errors.end(), 0.0) / static_cast<double>(sq_errors.size());
    if (m.n) m.rel_err_mean = std::accumulate(rel_errors.begin(), rel_errors.end(), 0.0) / static_cast<double>(m.n);
    m.ci95 = t_ci95_halfwidth(rel_errors);
    return m;
}

EvalReport evaluate(const Model& model, const std::vector<LabeledSample>& samples, unsigned jobs) {
    if (samples.empty()) throw DatasetError("evaluation set is empty");
    EvalReport report;
    report.samples.resize(samples.size());
    detail::parallel_for(samples.size(), jobs, [&](std::size_t i) {
        const auto& s = samples[i];
        const auto p = model.predict(s);
        SampleResult r;
        r.id = s.id;
        r.pattern = s.pattern;
        r.ttr_true = s.ttr_min;
        r.ttr_pred = p.ttr;
        r.v_true = s.v_loss;
        r.v_pred = p.v_loss;
        r.ttr_excluded = s.ttr_min == 0.0;
        r.v_excluded = s.v_loss == 0.0;
        r.ttr_rel = r.ttr_excluded ? 0.0 : std::abs(p.ttr - s.ttr_min) / std::abs(s.ttr_min);
        r.v_rel = r.v_excluded ? 0.0 : std::abs(p.v_loss - s.v_loss) / std::abs(s.v_loss);
        report.samples[i] = r;
    });

    auto collect = [&](std::optional<Pattern> only, Target t) {
        std::vector<double> rel, sq;
        for (const auto& r : report.samples) {
            if (only && r.pattern != *only) continue;
            const bool ttr = t == Target::Ttr;
            const double err = ttr ? r.ttr_pred - r.ttr_true : r.v_pred - r.v_true;
            sq.push_back(err * err);
            if (!(ttr ? r.ttr_excluded : r.v_excluded)) rel.push_back(ttr ? r.ttr_rel : r.v_rel);
        }
        return summarize(rel, sq);
    };
    for (Pattern p : synthgen::kPatterns) {
        const auto i = synthgen::pattern_index(p);
        report.per_pattern[i] = {collect(p, Target::Ttr), collect(p, Target::V)};
        report.pattern_counts[i] = static_cast<std::size_t>(
            std::count_if(report.samples.begin(), report.samples.end(), [&](const SampleResult& r) { return r.pattern == p; }));
    }
    report.overall = {collect(std::nullopt, Target::Ttr), collect(std::nullopt, Target::V)};
    return report;
}

void write_report_csv(std::ostream& out, const EvalReport& report, std::string_view variant, std::string_view seed,
                      bool header) {
    if (header) out << "pattern,target,variant,seed,mse,rel_err_mean,ci95,n\n";
    auto row = [&](std::string_view pattern, Target t, const MetricSummary& m) {
        out << pattern << ',' << target_name(t) << ',' << variant << ',' << seed << ',' << fmt(m.mse) << ','
            << fmt(m.rel_err_mean) << ',' << fmt(m.ci95) << ',' << m.n << '\n';
    };
    for (Pattern p : synthgen::kPatterns)
        for (Target t : {Target::Ttr, Target::V}) row(synthgen::pattern_name(p), t, report.at(p, t));
    for (Target t : {Target::Ttr, Target::V}) row("all", t, report.overall[static_cast<int>(t)]);
}

void write_report_csv(const std::string& path, const EvalReport& report, std::string_view variant, std::string_view seed) {
    auto out = open_out(path);
    write_report_csv(out, report, variant, seed);
}

json report_json(const EvalReport& report) {
    auto metric = [](const MetricSummary& m) {
        return json{{"n", m.n}, {"mse", m.mse}, {"rel_err_mean", m.rel_err_mean}, {"ci95", m.ci95}};
    };
    json patterns = json::object();
    for (Pattern p : synthgen::kPatterns) {
        patterns[std::string(synthgen::pattern_name(p))] = {
            {"count", report.pattern_counts[synthgen::pattern_index(p)]},
            {"ttr", metric(report.at(p, Target::Ttr))},
            {"v", metric(report.at(p, Target::V))}};
    }
    return {{"samples", report.samples.size()},
            {"overall", {{"ttr", metric(report.overall[0])}, {"v", metric(report.overall[1])}}},
            {"patterns", patterns}};
}

void write_predictions_csv(const std::string& path, const EvalReport& report) {
    auto out = open_out(path);
    out << "id,pattern,ttr_true,ttr_pred,ttr_rel_err,v_true,v_pred,v_rel_err\n";
    for (const auto& r : report.samples) {
        out << r.id << ',' << synthgen::pattern_name(r.pattern) << ',' << fmt(r.ttr_true) << ',' << fmt(r.ttr_pred)
            << ',' << (r.ttr_excluded ? "" : fmt(r.ttr_rel)) << ',' << fmt(r.v_true) << ',' << fmt(r.v_pred) << ','
            << (r.v_excluded ? "" : fmt(r.v_rel)) << '\n';
    }
}

std::optional<double> AblationResult::mean_rel_err(model::Variant v, Pattern p, Target t) const {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : runs) {
        if (r.variant != v || !r.report) continue;
        sum += r.report->at(p, t).rel_err_mean;
        ++n;
    }
    if (n == 0) return std::nullopt;
    return sum / n;
}

AblationResult run_ablation(const std::vector<LabeledSample>& train_set, const std::vector<LabeledSample>& eval_set,
                            const AblationConfig& config, const AblationProgressFn& progress) {
    AblationResult result;
    for (auto variant : config.variants) {
        for (auto seed : config.seeds) {
            AblationRun run;
            run.variant = variant;
            run.seed = seed;
            const auto t0 = std::chrono::steady_clock::now();
            try {
                auto mc = config.model;
                mc.variant = variant;
                auto tc = config.train;
                tc.seed = seed;
                auto trained = train(train_set, mc, tc);
                run.curve = trained.curve;
                run.report = evaluate(trained.model, eval_set, tc.jobs);
                run.status = trained.status == TrainStatus::Ok ? "ok" : "no_improvement";
            } catch (const TrainingDiverged& e) {
                run.status = "diverged";
                run.detail = e.what();
            } catch (const Error& e) {
                run.status = "error";
                run.detail = e.what();
            }
            run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            if (progress) progress(run);
            result.runs.push_back(std::move(run));
        }
    }
    return result;
}

void write_ablation_csv(const std::string& path, const AblationResult& result) {
    auto out = open_out(path);
    out << "pattern,target,variant,seed,mse,rel_err_mean,ci95,n,status\n";
    std::vector<model::Variant> variants;
    for (const auto& r : result.runs)
        if (std::find(variants.begin(), variants.end(), r.variant) == variants.end()) variants.push_back(r.variant);
    for (const auto& r : result.runs) {
        const auto variant = model::variant_name(r.variant);
        for (Pattern p : synthgen::kPatterns) {
            for (Target t : {Target::Ttr, Target::V}) {
                out << synthgen::pattern_name(p) << ',' << target_name(t) << ',' << variant << ',' << r.seed << ',';
                if (r.report) {
                    const auto& m = r.report->at(p, t);
                    out << fmt(m.mse) << ',' << fmt(m.rel_err_mean) << ',' << fmt(m.ci95) << ',' << m.n;
                } else {
                    out << ",,,";
                }
                out << ',' << r.status << '\n';
            }
        }
    }
    for (auto v : variants) {
        std::string status = "ok";
        for (const auto& r : result.runs)
            if (r.variant == v && r.status != "ok") status = r.status;
        for (Pattern p : synthgen::kPatterns) {
            for (Target t : {Target::Ttr, Target::V}) {
                const auto mean = result.mean_rel_err(v, p, t);
                out << synthgen::pattern_name(p) << ',' << target_name(t) << ',' << model::variant_name(v)
                    << ",mean,," << (mean ? fmt(*mean) : "") << ",,," << status << '\n';
            }
        }
    }
}

std::string ablation_table(const AblationResult& result, Target target) {
    std::vector<model::Variant> variants;
    for (const auto& r : result.runs)
        if (std::find(variants.begin(), variants.end(), r.variant) == variants.end()) variants.push_back(r.variant);
    std::ostringstream out;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-15s", target == Target::Ttr ? "TTR rel.err" : "V rel.err");
    out << buf;
    for (Pattern p : synthgen::kPatterns) {
        std::snprintf(buf, sizeof buf, "%12s", std::string(synthgen::pattern_name(p)).c_str());
        out << buf;
    }
    out << "  status\n";
    for (auto v : variants) {
        std::snprintf(buf, sizeof buf, "%-15s", std::string(model::variant_name(v)).c_str());
        out << buf;
        for (Pattern p : synthgen::kPatterns) {
            const auto m = result.mean_rel_err(v, p, target);
            if (m) std::snprintf(buf, sizeof buf, "%12.4f", *m);
            else std::snprintf(buf, sizeof buf, "%12s", "n/a");
            out << buf;
        }
        std::string status;
        for (const auto& r : result.runs)
            if (r.variant == v) status += (status.empty() ? "" : ",") + r.status;
        out << "  " << status << '\n';
    }
    return out.str();
}

std::string describe_prediction(const model::Prediction& p) {
    char buf[256];
    const double rate = p.ttr_display() > 0.0 ? p.v_display() / p.ttr_display() : 0.0;
    std::snprintf(buf, sizeof buf,
                  "TTR %.2f min, V %.2f volume*min, average loss rate %.2f volume/min", p.ttr_display(),
                  p.v_display(), rate);
    std::string s = buf;
    if (p.ttr != p.ttr_display() || p.v_loss != p.v_display()) {
        std::snprintf(buf, sizeof buf, " (raw TTR %.4g, raw V %.4g)", p.ttr, p.v_loss);
        s += buf;
    }
    return s;
}

PredictOutcome predict_one(const std::string& window_file, const std::optional<std::string>& catalog_path,
                           const std::string& checkpoint_path, std::size_t index) {
    const auto model = model::load_checkpoint(checkpoint_path);
    const auto data = synthgen::read_dataset(window_file);
    if (catalog_path) {
        const auto catalog = logtemplate::TemplateCatalog::load(*catalog_path);
        if (catalog.size() != model.config().templates)
            throw ShapeError("template dimension M: checkpoint expects " + std::to_string(model.config().templates) +
                             ", catalog has " + std::to_string(catalog.size()));
    }
    model.require_dimensions(data.header.templates, data.header.window);
    if (index >= data.samples.size())
        throw DatasetError("sample index " + std::to_string(index) + " out of range (" +
                           std::to_string(data.samples.size()) + " samples)");
    PredictOutcome out;
    out.sample_id = data.samples[index].id;
    out.prediction = model.predict(data.samples[index]);
    out.summary = describe_prediction(out.prediction);
    return out;
}

}  // namespace impactlab::pipeline
