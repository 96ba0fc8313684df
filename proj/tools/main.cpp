#include <charconv>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "impactlab/config.hpp"
#include "impactlab/errors.hpp"
#include "impactlab/logtemplate.hpp"
#include "impactlab/model.hpp"
#include "impactlab/pipeline.hpp"
#include "impactlab/synthgen.hpp"
#include "manifest.hpp"

namespace {

using namespace impactlab;
namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kSeedEnv = "IMPACTLAB_SEED";

std::string num(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, r.ptr};
}

template <class Range, class Fn>
std::string join(const Range& xs, Fn f) {
    std::string out;
    for (const auto& x : xs) out += (out.empty() ? "" : ",") + f(x);
    return out;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

std::uint64_t parse_seed(const std::string& text, const std::string& what) {
    std::uint64_t v = 0;
    const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
    if (r.ec != std::errc{} || r.ptr != text.data() + text.size())
        throw ConfigError(what + ": expected an unsigned integer seed, got '" + text + "'");
    return v;
}

std::optional<std::string> env_seed() {
    const char* v = std::getenv(kSeedEnv);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
}

// Every key the tool understands, with its default value. --print-config shows
// this merged with --config and --set.
FlatConfig default_config() {
    FlatConfig c;
    const auto profile = synthgen::TrafficProfile::defaults();
    c.set("profile.base", num(profile.base));
    c.set("profile.harmonics", join(profile.harmonics, [](const synthgen::Harmonic& h) {
              return num(h.period_min) + ":" + num(h.amplitude);
          }));
    c.set("profile.peak_minute", "1200");
    c.set("profile.noise_sigma", num(profile.noise_sigma));

    const auto syslog = synthgen::SyslogProcessSpec::defaults();
    c.set("syslog.random_per_day", "400");
    c.set("syslog.periodic_periods", join(syslog.periodic_periods, [](int p) { return std::to_string(p); }));
    c.set("syslog.periodic_emit_prob", num(syslog.periodic_emit_prob));
    c.set("syslog.failure_emit_prob", num(syslog.failure_emit_prob));

    const synthgen::GenConfig gen;
    c.set("gen.days", std::to_string(gen.days));
    c.set("gen.slot_minutes", std::to_string(gen.slot_minutes));
    c.set("gen.window", std::to_string(gen.window));
    c.set("gen.composition", join(gen.composition, [](int w) { return std::to_string(w); }));

    const auto m = model::ModelConfig{}.to_json();
    c.set("model.M", m["M"].dump());
    c.set("model.k", m["K"].dump());
    c.set("model.channels", m["channels"].dump());
    c.set("model.hidden", m["hidden"].dump());
    c.set("model.qrnn_width", m["qrnn_width"].dump());
    for (const char* key : {"variant", "temporal", "head_input", "head", "activation"})
        c.set(std::string("model.") + key, m[key].get<std::string>());
    c.set("model.class_ttrs", join(m["class_ttrs"].get<std::vector<double>>(), num));
    c.set("model.bias", m["bias"].get<bool>() ? "true" : "false");

    const pipeline::TrainConfig t;
    c.set("train.epochs", std::to_string(t.epochs));
    c.set("train.batch_size", std::to_string(t.batch_size));
    c.set("train.lr", num(t.lr));
    c.set("train.seed", std::to_string(t.seed));
    c.set("train.stall_patience", std::to_string(t.stall_patience));
    c.set("train.min_rel_improvement", num(t.min_rel_improvement));
    c.set("train.val_fraction", num(t.val_fraction));
    c.set("train.standardize_labels", t.standardize_labels ? "true" : "false");
    c.set("train.log_labels", t.log_labels ? "true" : "false");

    const pipeline::AblationConfig a;
    c.set("ablation.variants", join(a.variants, [](model::Variant v) { return std::string(model::variant_name(v)); }));
    c.set("ablation.seeds", join(a.seeds, [](std::uint64_t s) { return std::to_string(s); }));
    return c;
}

struct Common {
    std::string config_path;
    std::vector<std::string> sets;
    bool print_config = false;
    unsigned jobs = 1;
    std::optional<std::uint64_t> seed;
    std::string manifest_path;
};

void add_common(CLI::App* sub, Common& c, bool with_seed) {
    sub->add_option("--config", c.config_path, "Config file of 'key = value' lines")->check(CLI::ExistingFile);
    sub->add_option("--set", c.sets, "Override one config key as key=value (repeatable)");
    sub->add_flag("--print-config", c.print_config, "Print the resolved configuration and exit");
    sub->add_option("--jobs", c.jobs, "Worker threads")->check(CLI::Range(1u, 1024u));
    sub->add_option("--manifest", c.manifest_path, "Where to write the run manifest");
    if (with_seed) sub->add_option("--seed", c.seed, std::string("Seed; falls back to $") + kSeedEnv + ", then 0");
}

// Resolved settings and the bookkeeping for the run manifest.
class Run {
public:
    Run(std::string subcommand, const Common& common, std::vector<std::string> argv)
        : common_(common), all_(default_config()), started_(std::chrono::steady_clock::now()) {
        manifest_.subcommand = std::move(subcommand);
        manifest_.argv = std::move(argv);
        manifest_.cwd = fs::current_path().string();
        manifest_.env_seed = env_seed();
        if (!common.config_path.empty()) user_ = FlatConfig::load(common.config_path);
        for (const auto& s : common.sets) user_.set(s);
        for (const auto& [k, v] : user_.values())
            if (!all_.has(k)) throw ConfigError("unknown config key '" + k + "'");
        all_.merge(user_);
    }

    FlatConfig& config() { return all_; }
    bool user_set(const std::string& key) const { return user_.has(key); }
    unsigned jobs() const { return common_.jobs; }

    // --seed, then the config key (if given), then $IMPACTLAB_SEED, then the default.
    std::uint64_t seed(const std::string& name, const std::string& config_key = {}) {
        std::uint64_t s = 0;
        if (common_.seed) s = *common_.seed;
        else if (!config_key.empty() && user_.has(config_key)) s = all_.get_u64(config_key, 0);
        else if (manifest_.env_seed) s = parse_seed(*manifest_.env_seed, kSeedEnv);
        else if (!config_key.empty()) s = all_.get_u64(config_key, 0);
        if (!config_key.empty()) all_.set(config_key, std::to_string(s));
        manifest_.seeds[name] = s;
        return s;
    }

    bool print_config() const {
        if (common_.print_config) std::cout << all_.dump();
        return common_.print_config;
    }

    void input(const std::string& path) { inputs_.push_back(path); }
    void output(const std::string& path) { outputs_.push_back(path); }

    void finish(const std::string& default_manifest) {
        const std::string path = common_.manifest_path.empty() ? default_manifest : common_.manifest_path;
        if (path.empty()) return;
        manifest_.config = all_.values();
        for (const auto& p : inputs_) manifest_.inputs[p] = cli::sha256_file(p);
        for (const auto& p : outputs_) manifest_.outputs[p] = cli::sha256_file(p);
        manifest_.wall_clock_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
        manifest_.write(path);
    }

private:
    const Common& common_;
    FlatConfig all_;
    FlatConfig user_;
    cli::RunManifest manifest_;
    std::vector<std::string> inputs_, outputs_;
    std::chrono::steady_clock::time_point started_;
};

void require(const std::string& value, const char* flag) {
    if (value.empty()) throw ConfigError(std::string(flag) + " is required");
}

synthgen::LoadedDataset load_data(Run& run, const std::string& path) {
    run.input(path);
    return synthgen::read_dataset(path);
}

// Model dimensions follow the dataset unless the user pinned them.
void adopt_dimensions(Run& run, const synthgen::DatasetHeader& h) {
    if (!run.user_set("model.M")) run.config().set("model.M", std::to_string(h.templates));
    if (!run.user_set("gen.window")) run.config().set("gen.window", std::to_string(h.window));
}

void print_report(const pipeline::EvalReport& report) {
    std::printf("%-12s %5s %10s %9s %10s %9s\n", "pattern", "n", "ttr_rel", "ci95", "v_rel", "ci95");
    auto row = [](const char* name, std::size_t n, const pipeline::MetricSummary& t, const pipeline::MetricSummary& v) {
        std::printf("%-12s %5zu %10.4f %9.4f %10.4f %9.4f\n", name, n, t.rel_err_mean, t.ci95, v.rel_err_mean, v.ci95);
    };
    for (auto p : synthgen::kPatterns) {
        const auto i = synthgen::pattern_index(p);
        row(std::string(synthgen::pattern_name(p)).c_str(), report.pattern_counts[i], report.per_pattern[i][0],
            report.per_pattern[i][1]);
    }
    row("all", report.samples.size(), report.overall[0], report.overall[1]);
}

struct TemplatesArgs {
    std::string input, out, extend, counts;
    bool freeze = false;
};

int cmd_templates(Run& run, const TemplatesArgs& a) {
    if (run.print_config()) return 0;
    require(a.input, "--input");
    require(a.out, "--out");
    run.input(a.input);
    std::ifstream in(a.input, std::ios::binary);
    if (!in) throw InputError("cannot open '" + a.input + "'");
    const auto lines = logtemplate::parse_lines(in);

    logtemplate::TemplateCatalog catalog;
    if (!a.extend.empty()) {
        run.input(a.extend);
        catalog = logtemplate::TemplateCatalog::load(a.extend);
    }
    std::vector<std::size_t> ids;
    for (const auto& line : lines) {
        const auto pattern = logtemplate::mask_variables(line);
        ids.push_back(catalog.frozen() ? catalog.lookup(pattern, false) : catalog.assign(pattern));
    }
    if (a.freeze && !catalog.frozen()) catalog.freeze();
    if (lines.empty()) std::cerr << "impactlab: warning: '" << a.input << "' has no log lines; catalog is empty\n";

    catalog.save(a.out);
    run.output(a.out);
    std::cout << "templates " << catalog.size() << '\n';
    for (std::size_t i = 0; i < catalog.size(); ++i) std::cout << i << '\t' << catalog.templates()[i] << '\n';
    for (std::size_t i = 0; i < ids.size(); ++i) std::cout << "line " << i + 1 << " -> " << ids[i] << '\n';

    if (!a.counts.empty()) {
        const int slot = static_cast<int>(run.config().get_int("gen.slot_minutes", 1));
        if (slot < 1) throw ConfigError("gen.slot_minutes must be >= 1");
        std::ofstream out(a.counts, std::ios::binary);
        if (!out) throw Error("cannot write '" + a.counts + "'");
        out << "slot_start,template,count\n";
        if (!lines.empty()) {
            auto lo = lines.front().timestamp, hi = lo;
            for (const auto& l : lines) {
                lo = std::min(lo, l.timestamp);
                hi = std::max(hi, l.timestamp);
            }
            const std::chrono::seconds step(slot * 60);
            const logtemplate::TimeWindow window{logtemplate::Timestamp(lo.time_since_epoch() / step * step),
                                                 logtemplate::Timestamp(hi.time_since_epoch() / step * step + step)};
            const auto vectors = logtemplate::vectorize_slots(catalog, lines, slot, window);
            for (std::size_t t = 0; t < vectors.size(); ++t)
                for (std::size_t i = 0; i < vectors[t].size(); ++i)
                    if (vectors[t][i])
                        out << logtemplate::format_timestamp(window.start + step * static_cast<long>(t)) << ',' << i
                            << ',' << vectors[t][i] << '\n';
        }
        out.close();
        run.output(a.counts);
    }
    run.finish(a.out + ".manifest.json");
    return 0;
}

struct GenArgs {
    std::size_t n_train = 900, n_eval = 100;
    bool full_scale = false;
    std::string out;
};

int cmd_gen(Run& run, const GenArgs& a) {
    const auto seed = run.seed("dataset");
    if (run.print_config()) return 0;
    require(a.out, "--out");
    const auto cfg = synthgen::gen_config_from(run.config());
    const std::size_t n_train = a.full_scale ? 9000 : a.n_train;
    const std::size_t n_eval = a.full_scale ? 1000 : a.n_eval;
    const auto data = synthgen::build_dataset(cfg, n_train, n_eval, seed, run.jobs());
    fs::create_directories(a.out);
    const synthgen::DatasetHeader header{1, cfg.syslog.template_count(), cfg.window, "synthetic"};
    const auto train_path = (fs::path(a.out) / "train.jsonl").string();
    const auto eval_path = (fs::path(a.out) / "eval.jsonl").string();
    synthgen::write_dataset(train_path, header, data.train);
    synthgen::write_dataset(eval_path, header, data.eval);
    run.output(train_path);
    run.output(eval_path);

    std::array<std::size_t, 4> counts{};
    for (const auto& s : data.eval) ++counts[synthgen::pattern_index(s.pattern)];
    std::cout << "wrote " << n_train << " train and " << n_eval << " eval samples (M=" << header.templates
              << ", W=" << header.window << ", seed " << seed << ") to " << a.out << '\n';
    std::cout << "eval composition:";
    for (auto p : synthgen::kPatterns) std::cout << ' ' << synthgen::pattern_name(p) << '=' << counts[synthgen::pattern_index(p)];
    std::cout << '\n';
    run.finish((fs::path(a.out) / "manifest.json").string());
    return 0;
}

struct TrainArgs {
    std::string data, out, curve, variant;
    bool quiet = false;
};

int cmd_train(Run& run, const TrainArgs& a) {
    if (!a.variant.empty()) run.config().set("model.variant", a.variant);
    run.seed("train", "train.seed");
    if (run.print_config()) return 0;
    require(a.data, "--data");
    require(a.out, "--out");
    const auto data = load_data(run, a.data);
    adopt_dimensions(run, data.header);
    const auto mc = model::model_config_from(run.config());
    auto tc = pipeline::train_config_from(run.config());
    tc.jobs = run.jobs();

    auto result = pipeline::train(data.samples, mc, tc, [&](const pipeline::EpochRecord& r) {
        if (a.quiet) return;
        std::fprintf(stderr, "epoch %3d/%d  train_loss %.6g", r.epoch, tc.epochs, r.train_loss);
        if (r.val_loss) std::fprintf(stderr, "  val_loss %.6g", *r.val_loss);
        std::fputc('\n', stderr);
    });
    const bool stalled = result.status == pipeline::TrainStatus::Stalled;
    if (stalled)
        std::cerr << "impactlab: warning: no improvement for " << tc.stall_patience << " epochs; stopped at epoch "
                  << result.curve.size() << '\n';
    model::save_checkpoint(result.model, a.out,
                           {{"train_seed", tc.seed},
                            {"epochs_run", result.curve.size()},
                            {"best_epoch", result.best_epoch},
                            {"status", stalled ? "no_improvement" : "ok"}});
    run.output(a.out);
    if (!a.curve.empty()) {
        pipeline::write_loss_curve(a.curve, result.curve);
        run.output(a.curve);
    }
    std::cout << "trained " << model::variant_name(mc.variant) << " for " << result.curve.size()
              << " epochs, final train loss " << num(result.curve.back().train_loss) << ", checkpoint " << a.out
              << '\n';
    run.finish(a.out + ".manifest.json");
    return 0;
}

struct EvalArgs {
    std::string data, checkpoint, out, json_out, predictions;
};

int cmd_eval(Run& run, const EvalArgs& a) {
    if (run.print_config()) return 0;
    require(a.data, "--data");
    require(a.checkpoint, "--checkpoint");
    require(a.out, "--out");
    run.input(a.checkpoint);
    const auto ckpt = model::read_checkpoint_json(a.checkpoint);
    const auto m = model::model_from_checkpoint(ckpt);
    const auto data = load_data(run, a.data);
    m.require_dimensions(data.header.templates, data.header.window);
    const auto report = pipeline::evaluate(m, data.samples, run.jobs());

    std::string seed;
    if (ckpt.contains("meta") && ckpt["meta"].contains("train_seed")) seed = ckpt["meta"]["train_seed"].dump();
    pipeline::write_report_csv(a.out, report, model::variant_name(m.config().variant), seed);
    run.output(a.out);
    if (!a.json_out.empty()) {
        std::ofstream out(a.json_out, std::ios::binary);
        if (!out) throw Error("cannot write '" + a.json_out + "'");
        out << pipeline::report_json(report).dump(2) << '\n';
        out.close();
        run.output(a.json_out);
    }
    if (!a.predictions.empty()) {
        pipeline::write_predictions_csv(a.predictions, report);
        run.output(a.predictions);
    }
    print_report(report);
    run.finish(a.out + ".manifest.json");
    return 0;
}

struct AblationArgs {
    std::string train_data, eval_data, out, curves;
};

int cmd_ablation(Run& run, const AblationArgs& a) {
    if (run.print_config()) return 0;
    require(a.train_data, "--train-data");
    require(a.eval_data, "--eval-data");
    require(a.out, "--out");
    const auto train = load_data(run, a.train_data);
    const auto eval = load_data(run, a.eval_data);
    if (train.header.templates != eval.header.templates || train.header.window != eval.header.window)
        throw ShapeError("train and eval datasets differ in template dimension M or window dimension W");
    adopt_dimensions(run, train.header);

    pipeline::AblationConfig ac;
    ac.model = model::model_config_from(run.config());
    ac.train = pipeline::train_config_from(run.config());
    ac.train.jobs = run.jobs();
    ac.variants.clear();
    for (const auto& v : split_list(run.config().get_string("ablation.variants", "")))
        ac.variants.push_back(model::parse_variant(v));
    ac.seeds.clear();
    for (const auto& s : split_list(run.config().get_string("ablation.seeds", "")))
        ac.seeds.push_back(parse_seed(s, "ablation.seeds"));
    if (ac.variants.empty() || ac.seeds.empty()) throw ConfigError("ablation needs at least one variant and one seed");

    const auto result = pipeline::run_ablation(train.samples, eval.samples, ac, [](const pipeline::AblationRun& r) {
        std::fprintf(stderr, "%-14s seed %llu: %s (%.1f s)%s%s\n", std::string(model::variant_name(r.variant)).c_str(),
                     static_cast<unsigned long long>(r.seed), r.status.c_str(), r.seconds, r.detail.empty() ? "" : ": ",
                     r.detail.c_str());
    });
    pipeline::write_ablation_csv(a.out, result);
    run.output(a.out);
    if (!a.curves.empty()) {
        fs::create_directories(a.curves);
        for (const auto& r : result.runs) {
            const auto path = (fs::path(a.curves) / (std::string(model::variant_name(r.variant)) + "_seed" +
                                                      std::to_string(r.seed) + ".csv"))
                                  .string();
            pipeline::write_loss_curve(path, r.curve);
            run.output(path);
        }
    }
    std::cout << pipeline::ablation_table(result, pipeline::Target::V) << '\n'
              << pipeline::ablation_table(result, pipeline::Target::Ttr);
    run.finish(a.out + ".manifest.json");
    return 0;
}

struct PredictArgs {
    std::string window, checkpoint, catalog, out;
    std::size_t index = 0;
};

int cmd_predict(Run& run, const PredictArgs& a) {
    if (run.print_config()) return 0;
    require(a.window, "--window");
    require(a.checkpoint, "--checkpoint");
    run.input(a.window);
    run.input(a.checkpoint);
    std::optional<std::string> catalog;
    if (!a.catalog.empty()) {
        catalog = a.catalog;
        run.input(a.catalog);
    }
    const auto r = pipeline::predict_one(a.window, catalog, a.checkpoint, a.index);
    std::cout << "sample " << r.sample_id << ": " << r.summary << '\n';
    if (!a.out.empty()) {
        const auto& p = r.prediction;
        json j{{"sample_id", r.sample_id},
               {"ttr_min", p.ttr_display()},
               {"v_loss", p.v_display()},
               {"avg_loss_rate", p.ttr_display() > 0.0 ? p.v_display() / p.ttr_display() : 0.0},
               {"raw", {{"ttr_min", p.ttr}, {"v_loss", p.v_loss}}}};
        if (!p.class_probs.empty()) j["class_probs"] = p.class_probs;
        std::ofstream out(a.out, std::ios::binary);
        if (!out) throw Error("cannot write '" + a.out + "'");
        out << j.dump(2) << '\n';
        out.close();
        run.output(a.out);
    }
    run.finish(a.out.empty() ? std::string() : a.out + ".manifest.json");
    return 0;
}

int run_args(const std::vector<std::string>& args);

int cmd_replay(const std::string& manifest_path) {
    const auto m = cli::RunManifest::read(manifest_path);
    fs::current_path(m.cwd);
    for (const auto& [path, sha] : m.inputs)
        if (cli::sha256_file(path) != sha) throw InputError("input '" + path + "' changed since the recorded run");
    if (m.env_seed) ::setenv(kSeedEnv, m.env_seed->c_str(), 1);
    else ::unsetenv(kSeedEnv);
    std::cout << "replaying: impactlab";
    for (const auto& arg : m.argv) std::cout << ' ' << arg;
    std::cout << std::endl;
    const int rc = run_args(m.argv);
    if (rc != 0) return rc;
    bool same = true;
    for (const auto& [path, sha] : m.outputs) {
        const bool ok = fs::exists(path) && cli::sha256_file(path) == sha;
        std::cout << (ok ? "identical  " : "DIFFERENT  ") << path << '\n';
        same = same && ok;
    }
    return same ? 0 : 1;
}

int run_args(const std::vector<std::string>& args) {
    CLI::App app{"Service impact prediction from syslog and traffic"};
    app.name("impactlab");
    app.require_subcommand(1);

    std::function<int()> action;
    Common common;
    auto with_run = [&](const char* name, auto fn) {
        return [&, name, fn] {
            action = [&, name, fn] {
                Run run(name, common, args);
                return fn(run);
            };
        };
    };

    TemplatesArgs ta;
    auto* templates = app.add_subcommand("templates", "Build a template catalog from a raw syslog file");
    templates->add_option("--input", ta.input, "Syslog file of 'timestamp, host, message' lines");
    templates->add_option("--out", ta.out, "Catalog JSON to write");
    templates->add_option("--extend", ta.extend, "Existing catalog to extend")->check(CLI::ExistingFile);
    templates->add_option("--counts", ta.counts, "Also write per-slot template counts as CSV");
    templates->add_flag("--freeze", ta.freeze, "Freeze the catalog (adds the overflow template)");
    add_common(templates, common, false);
    templates->callback(with_run("templates", [&](Run& r) { return cmd_templates(r, ta); }));

    GenArgs ga;
    auto* gen = app.add_subcommand("gen", "Generate a labeled synthetic dataset");
    gen->add_option("--train", ga.n_train, "Training samples")->check(CLI::Range(std::size_t{1}, std::size_t{10000000}));
    gen->add_option("--eval", ga.n_eval, "Evaluation samples")->check(CLI::Range(std::size_t{1}, std::size_t{10000000}));
    gen->add_flag("--full-scale", ga.full_scale, "9000 train / 1000 eval");
    gen->add_option("--out", ga.out, "Output directory (train.jsonl, eval.jsonl, manifest.json)");
    add_common(gen, common, true);
    gen->callback(with_run("gen", [&](Run& r) { return cmd_gen(r, ga); }));

    TrainArgs tra;
    auto* train = app.add_subcommand("train", "Train a model on a dataset file");
    train->add_option("--data", tra.data, "Training dataset (JSON lines)");
    train->add_option("--out", tra.out, "Checkpoint to write");
    train->add_option("--curve", tra.curve, "Loss curve CSV to write");
    train->add_option("--variant", tra.variant, "full | no_merge | no_individual | gru_temporal");
    train->add_flag("--quiet", tra.quiet, "No per-epoch progress");
    add_common(train, common, true);
    train->callback(with_run("train", [&](Run& r) { return cmd_train(r, tra); }));

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset file");
    eval->add_option("--data", ea.data, "Evaluation dataset");
    eval->add_option("--checkpoint", ea.checkpoint, "Checkpoint");
    eval->add_option("--out", ea.out, "Report CSV to write");
    eval->add_option("--json", ea.json_out, "Report JSON summary to write");
    eval->add_option("--predictions", ea.predictions, "Per-sample prediction CSV to write");
    add_common(eval, common, false);
    eval->callback(with_run("eval", [&](Run& r) { return cmd_eval(r, ea); }));

    AblationArgs aa;
    auto* ablation = app.add_subcommand("ablation", "Train and compare all variants over several seeds");
    ablation->add_option("--train-data", aa.train_data, "Training dataset");
    ablation->add_option("--eval-data", aa.eval_data, "Evaluation dataset");
    ablation->add_option("--out", aa.out, "Ablation CSV to write");
    ablation->add_option("--curves", aa.curves, "Directory for per-run loss curves");
    add_common(ablation, common, false);
    ablation->callback(with_run("ablation", [&](Run& r) { return cmd_ablation(r, aa); }));

    PredictArgs pa;
    auto* predict = app.add_subcommand("predict", "Predict TTR and V for one stored window");
    predict->add_option("--window", pa.window, "Dataset file holding the window");
    predict->add_option("--checkpoint", pa.checkpoint, "Checkpoint");
    predict->add_option("--catalog", pa.catalog, "Template catalog; its size must equal the model's M");
    predict->add_option("--index", pa.index, "Sample index within the file");
    predict->add_option("--out", pa.out, "Prediction JSON to write");
    add_common(predict, common, false);
    predict->callback(with_run("predict", [&](Run& r) { return cmd_predict(r, pa); }));

    std::string manifest;
    auto* replay = app.add_subcommand("replay", "Re-run a command from its manifest and compare outputs");
    replay->add_option("manifest", manifest, "Manifest JSON")->required()->check(CLI::ExistingFile);
    replay->callback([&] { action = [&] { return cmd_replay(manifest); }; });

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }
    try {
        return action();
    } catch (const InputError& e) {
        std::cerr << "impactlab: error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "impactlab: error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) { return run_args(std::vector<std::string>(argv + 1, argv + argc)); }
