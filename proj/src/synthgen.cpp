#include "impactlab/synthgen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <random>
#include <thread>

#include "impactlab/errors.hpp"
#include "impactlab/rng.hpp"

namespace impactlab::synthgen {

namespace {

constexpr std::size_t kPeriodicTemplates = 10;
constexpr std::size_t kRandomTemplates = 30;
constexpr std::size_t kFailureTemplates = 20;

struct BackgroundState {
    std::vector<int> offsets;  // minutes, one per periodic template
    std::vector<double> rates;  // per minute, one per random template
};

BackgroundState draw_state(const SyslogProcessSpec& spec, std::mt19937_64& rng) {
    BackgroundState s;
    for (int p : spec.periodic_periods) s.offsets.push_back(std::uniform_int_distribution<int>(0, p - 1)(rng));
    s.rates = spec.random_rates;
    return s;
}

// Writes background counts into slots [t0, t1); the columns are assumed zero.
void fill_background(const SyslogProcessSpec& spec, const BackgroundState& state, SyslogSeries& out, std::size_t t0,
                     std::size_t t1, int slot_minutes, std::mt19937_64& rng) {
    const long long begin_min = static_cast<long long>(t0) * slot_minutes;
    const long long end_min = static_cast<long long>(t1) * slot_minutes;
    std::bernoulli_distribution keep(spec.periodic_emit_prob);
    for (std::size_t m = 0; m < spec.periodic_count(); ++m) {
        const long long p = spec.periodic_periods[m];
        const long long off = state.offsets[m];
        // First event at or after begin_min.
        long long e = off + ((begin_min - off + p - 1) / p) * p;
        for (; e < end_min; e += p)
            if (keep(rng)) ++out.at(static_cast<std::size_t>(e / slot_minutes), m);
    }

    double total = 0.0;
    for (double r : state.rates) total += r;
    if (total <= 0.0) return;
    std::poisson_distribution<unsigned> events(total * slot_minutes);
    std::discrete_distribution<std::size_t> which(state.rates.begin(), state.rates.end());
    const std::size_t base = spec.periodic_count();
    for (std::size_t t = t0; t < t1; ++t) {
        const unsigned n = events(rng);
        for (unsigned i = 0; i < n; ++i) ++out.at(t, base + which(rng));
    }
}

}  // namespace

std::string_view pattern_name(Pattern p) {
    switch (p) {
        case Pattern::RampDown: return "ramp_down";
        case Pattern::Spike: return "spike";
        case Pattern::LevelShift: return "level_shift";
        case Pattern::LongDown: return "long_down";
    }
    return "?";
}

Pattern parse_pattern(std::string_view name) {
    if (name == "ramp_down" || name == "ramp") return Pattern::RampDown;
    if (name == "spike") return Pattern::Spike;
    if (name == "level_shift" || name == "level") return Pattern::LevelShift;
    if (name == "long_down" || name == "long") return Pattern::LongDown;
    throw ConfigError("unknown degradation pattern '" + std::string(name) + "'");
}

double TrafficProfile::waveform(double minute) const {
    double y = base;
    for (const auto& h : harmonics) y += h.amplitude * std::sin(2.0 * std::numbers::pi * minute / h.period_min + h.phase);
    return y;
}

void TrafficProfile::validate() const {
    if (!std::isfinite(base)) throw ConfigError("profile.base must be finite");
    if (!(noise_sigma >= 0.0)) throw ConfigError("profile.noise_sigma must be >= 0");
    bool daily = false;
    for (const auto& h : harmonics) {
        if (!(h.period_min > 0.0)) throw ConfigError("harmonic periods must be positive");
        if (!std::isfinite(h.amplitude) || !std::isfinite(h.phase)) throw ConfigError("harmonic values must be finite");
        daily = daily || h.period_min == 1440.0;
    }
    if (!daily) throw ConfigError("traffic profile needs a harmonic with period 1440 min");
}

TrafficProfile TrafficProfile::defaults() { return with_peak(100.0, {{1440, 40}, {720, 15}, {240, 5}}, 1200.0, 3.0); }

TrafficProfile TrafficProfile::with_peak(double base, const std::vector<std::pair<double, double>>& harmonics,
                                         double peak_minute, double noise_sigma) {
    TrafficProfile p;
    p.base = base;
    p.noise_sigma = noise_sigma;
    for (auto [period, amplitude] : harmonics)
        p.harmonics.push_back({period, amplitude, std::numbers::pi / 2 - 2.0 * std::numbers::pi * peak_minute / period});
    return p;
}

std::size_t SyslogProcessSpec::failure_base(Pattern p) const {
    switch (p) {
        case Pattern::Spike: return background_count();
        case Pattern::LevelShift: return background_count() + failure_templates_per_class;
        case Pattern::LongDown: return background_count() + 2 * failure_templates_per_class;
        case Pattern::RampDown: break;
    }
    throw std::logic_error("ramp-down has no failure templates");
}

double SyslogProcessSpec::expected_daily_volume() const {
    double v = 0.0;
    for (int p : periodic_periods) v += periodic_emit_prob * 1440.0 / p;
    for (double r : random_rates) v += r * 1440.0;
    return v;
}

void SyslogProcessSpec::validate() const {
    if (periodic_periods.size() != kPeriodicTemplates)
        throw ConfigError("syslog spec needs exactly 10 periodic templates");
    if (random_rates.size() != kRandomTemplates) throw ConfigError("syslog spec needs exactly 30 random templates");
    if (failure_templates_per_class != kFailureTemplates)
        throw ConfigError("syslog spec needs exactly 20 templates per failure class");
    for (int p : periodic_periods)
        if (p < 1) throw ConfigError("periodic periods must be >= 1 minute");
    for (double r : random_rates)
        if (!(r >= 0.0) || !std::isfinite(r)) throw ConfigError("random rates must be finite and >= 0");
    if (!(periodic_emit_prob >= 0.0 && periodic_emit_prob <= 1.0))
        throw ConfigError("syslog.periodic_emit_prob must lie in [0, 1]");
    if (!(failure_emit_prob >= 0.0 && failure_emit_prob <= 1.0))
        throw ConfigError("syslog.failure_emit_prob must lie in [0, 1]");
}

SyslogProcessSpec SyslogProcessSpec::defaults(double random_per_day) {
    SyslogProcessSpec s;
    double norm = 0.0;
    for (std::size_t i = 0; i < kRandomTemplates; ++i) norm += 1.0 / std::sqrt(i + 1.0);
    for (std::size_t i = 0; i < kRandomTemplates; ++i)
        s.random_rates.push_back(random_per_day / 1440.0 * (1.0 / std::sqrt(i + 1.0)) / norm);
    return s;
}

std::uint64_t SyslogSeries::total() const {
    std::uint64_t s = 0;
    for (auto c : counts_) s += c;
    return s;
}

void SparseCounts::push_row(std::span<const std::pair<std::uint32_t, std::uint32_t>> entries) {
    for (auto [i, c] : entries) {
        if (i >= templates) throw ShapeError("template index " + std::to_string(i) + " >= M=" + std::to_string(templates));
        if (c == 0) continue;
        index.push_back(i);
        count.push_back(c);
    }
    row_offsets.push_back(static_cast<std::uint32_t>(index.size()));
}

SparseCounts SparseCounts::from_dense(const SyslogSeries& dense, std::size_t first_slot, std::size_t n_slots) {
    SparseCounts s;
    s.templates = dense.templates();
    for (std::size_t t = first_slot; t < first_slot + n_slots; ++t) {
        const auto row = dense.slot(t);
        for (std::size_t m = 0; m < row.size(); ++m) {
            if (row[m] == 0) continue;
            s.index.push_back(static_cast<std::uint32_t>(m));
            s.count.push_back(row[m]);
        }
        s.row_offsets.push_back(static_cast<std::uint32_t>(s.index.size()));
    }
    return s;
}

SyslogSeries SparseCounts::to_dense() const {
    SyslogSeries d(slots(), templates);
    for (std::size_t t = 0; t < slots(); ++t)
        for (auto k = row_offsets[t]; k < row_offsets[t + 1]; ++k) d.at(t, index[k]) += count[k];
    return d;
}

double recovery_minutes(Pattern p) {
    switch (p) {
        case Pattern::Spike: return 5.0;
        case Pattern::LevelShift: return 10.0;
        case Pattern::RampDown: return 60.0;
        case Pattern::LongDown: return 120.0;
    }
    return 0.0;
}

double FailureScenario::reduction(double elapsed_min) const {
    if (elapsed_min < 0.0 || elapsed_min >= ttr_min) return 0.0;
    switch (pattern) {
        case Pattern::Spike:
        case Pattern::LongDown: return 1.0;
        case Pattern::LevelShift: return 0.5;
        case Pattern::RampDown: return std::min(1.0, 0.01 * (elapsed_min + 1.0));
    }
    return 0.0;
}

std::size_t FailureScenario::affected_slots(int slot_minutes) const {
    return static_cast<std::size_t>(std::ceil(ttr_min / slot_minutes));
}

FailureScenario FailureScenario::make(Pattern p, std::size_t onset) { return {p, onset, recovery_minutes(p)}; }

void GenConfig::validate() const {
    profile.validate();
    syslog.validate();
    if (slot_minutes < 1 || 1440 % slot_minutes != 0) throw ConfigError("gen.slot_minutes must divide 1440");
    if (days < 2) throw ConfigError("gen.days must be >= 2");
    if (window < 1) throw ConfigError("gen.window must be >= 1");
    const std::size_t history = static_cast<std::size_t>(days - 1) * slots_per_day() + 1;
    if (window > history)
        throw WindowTooLong("window of " + std::to_string(window) + " slots exceeds the " + std::to_string(history) +
                            " slots available before the earliest onset");
    int total = 0;
    for (int w : composition) {
        if (w < 0) throw ConfigError("gen.composition weights must be >= 0");
        total += w;
    }
    if (total <= 0) throw ConfigError("gen.composition must have a positive weight");
}

std::vector<double> gen_normal_traffic(const TrafficProfile& profile, std::size_t duration, std::uint64_t seed,
                                       int slot_minutes) {
    profile.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, profile.noise_sigma > 0 ? profile.noise_sigma : 1.0);
    std::vector<double> y(duration);
    for (std::size_t t = 0; t < duration; ++t) {
        double v = profile.waveform(static_cast<double>(t) * slot_minutes);
        if (profile.noise_sigma > 0) v += noise(rng);
        y[t] = std::max(0.0, v);
    }
    return y;
}

SyslogSeries gen_normal_syslog(const SyslogProcessSpec& spec, std::size_t duration, std::uint64_t seed,
                               int slot_minutes) {
    spec.validate();
    std::mt19937_64 rng(seed);
    SyslogSeries out(duration, spec.template_count());
    const auto state = draw_state(spec, rng);
    fill_background(spec, state, out, 0, duration, slot_minutes, rng);
    return out;
}

InjectedSeries inject_failure(const std::vector<double>& traffic, const SyslogSeries& syslog,
                              const FailureScenario& scenario, const SyslogProcessSpec& spec, std::uint64_t seed,
                              int slot_minutes) {
    if (syslog.slots() != traffic.size())
        throw LengthMismatch("traffic has " + std::to_string(traffic.size()) + " slots, syslog has " +
                             std::to_string(syslog.slots()));
    if (syslog.templates() != spec.template_count())
        throw LengthMismatch("syslog has " + std::to_string(syslog.templates()) + " templates, spec expects " +
                             std::to_string(spec.template_count()));
    const std::size_t n = scenario.affected_slots(slot_minutes);
    if (scenario.onset >= traffic.size() || scenario.onset + n > traffic.size())
        throw ScenarioOutOfRange("failure interval [" + std::to_string(scenario.onset) + ", " +
                                 std::to_string(scenario.onset + n) + ") exceeds " + std::to_string(traffic.size()) +
                                 " slots");

    InjectedSeries out{traffic, syslog, traffic};
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t t = scenario.onset + k;
        out.traffic[t] = traffic[t] * (1.0 - scenario.reduction(static_cast<double>(k) * slot_minutes));
    }

    std::mt19937_64 rng(seed);
    if (scenario.pattern == Pattern::RampDown) {
        auto state = draw_state(spec, rng);
        std::uniform_real_distribution<double> scale(0.2, 3.0);
        for (auto& r : state.rates) r *= scale(rng);
        for (std::size_t t = scenario.onset; t < out.syslog.slots(); ++t)
            for (std::size_t m = 0; m < spec.background_count(); ++m) out.syslog.at(t, m) = 0;
        fill_background(spec, state, out.syslog, scenario.onset, out.syslog.slots(), slot_minutes, rng);
    } else {
        const std::size_t base = spec.failure_base(scenario.pattern);
        std::bernoulli_distribution emit(spec.failure_emit_prob);
        bool any = false;
        for (std::size_t i = 0; i < spec.failure_templates_per_class; ++i) {
            if (emit(rng)) {
                ++out.syslog.at(scenario.onset, base + i);
                any = true;
            }
        }
        if (!any) {
            const auto i = std::uniform_int_distribution<std::size_t>(0, spec.failure_templates_per_class - 1)(rng);
            ++out.syslog.at(scenario.onset, base + i);
        }
    }
    return out;
}

double ground_truth_loss(std::span<const double> counterfactual, std::span<const double> degraded, std::size_t onset,
                         double ttr_min, int slot_minutes) {
    if (counterfactual.size() != degraded.size())
        throw LengthMismatch("counterfactual has " + std::to_string(counterfactual.size()) +
                             " slots, degraded has " + std::to_string(degraded.size()));
    const auto n = static_cast<std::size_t>(std::ceil(ttr_min / slot_minutes));
    if (onset + n > counterfactual.size())
        throw LengthMismatch("loss interval ends at slot " + std::to_string(onset + n) + " beyond " +
                             std::to_string(counterfactual.size()));
    double v = 0.0;
    for (std::size_t t = onset; t < onset + n; ++t) v += (counterfactual[t] - degraded[t]) * slot_minutes;
    return v;
}

Pattern pattern_for_sample(const GenConfig& config, std::uint64_t id) {
    std::uint64_t total = 0;
    for (int w : config.composition) total += static_cast<std::uint64_t>(w);
    std::uint64_t r = id % total;
    for (std::size_t i = 0; i < kPatterns.size(); ++i) {
        const auto w = static_cast<std::uint64_t>(config.composition[i]);
        if (r < w) return kPatterns[i];
        r -= w;
    }
    return kPatterns.back();
}

GeneratedSample generate_sample(const GenConfig& config, std::uint64_t id, std::uint64_t seed) {
    config.validate();
    const std::uint64_t s = derive_seed(seed, {id});
    const Pattern pattern = pattern_for_sample(config, id);
    const std::size_t spd = config.slots_per_day();
    const std::size_t slots = static_cast<std::size_t>(config.days) * spd;

    auto traffic = gen_normal_traffic(config.profile, slots, derive_seed(s, {1}), config.slot_minutes);
    auto syslog = gen_normal_syslog(config.syslog, slots, derive_seed(s, {2}), config.slot_minutes);

    auto scenario = FailureScenario::make(pattern, 0);
    const std::size_t n = scenario.affected_slots(config.slot_minutes);
    if (n > spd) throw ConfigError("failure interval does not fit in one day");
    std::mt19937_64 onset_rng(derive_seed(s, {3}));
    scenario.onset = std::uniform_int_distribution<std::size_t>(slots - spd, slots - n)(onset_rng);

    auto injected = inject_failure(traffic, syslog, scenario, config.syslog, derive_seed(s, {4}), config.slot_minutes);

    GeneratedSample g;
    g.scenario = scenario;
    const std::size_t first = scenario.onset + 1 - config.window;
    g.sample.id = id;
    g.sample.pattern = pattern;
    g.sample.slot_minutes = config.slot_minutes;
    g.sample.traffic.assign(injected.traffic.begin() + static_cast<std::ptrdiff_t>(first),
                            injected.traffic.begin() + static_cast<std::ptrdiff_t>(scenario.onset + 1));
    g.sample.counts = SparseCounts::from_dense(injected.syslog, first, config.window);
    g.sample.ttr_min = scenario.ttr_min;
    g.sample.v_loss =
        ground_truth_loss(injected.counterfactual, injected.traffic, scenario.onset, scenario.ttr_min, config.slot_minutes);
    g.counterfactual = std::move(injected.counterfactual);
    g.degraded = std::move(injected.traffic);
    g.syslog = std::move(injected.syslog);
    return g;
}

Dataset build_dataset(const GenConfig& config, std::size_t n_train, std::size_t n_eval, std::uint64_t seed,
                      unsigned jobs) {
    if (n_train < 1 || n_eval < 1) throw ConfigError("n_train and n_eval must be >= 1");
    config.validate();
    const std::size_t total = n_train + n_eval;
    std::vector<LabeledSample> all(total);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&] {
        try {
            for (std::size_t i = next++; i < total; i = next++) all[i] = generate_sample(config, i, seed).sample;
        } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next = total;
        }
    };
    jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(total)));
    if (jobs == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(work);
    }
    if (failure) std::rethrow_exception(failure);
    Dataset d;
    d.train.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.begin() + n_train));
    d.eval.assign(std::make_move_iterator(all.begin() + n_train), std::make_move_iterator(all.end()));
    return d;
}

}  // namespace impactlab::synthgen
