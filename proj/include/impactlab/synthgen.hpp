#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "impactlab/config.hpp"

namespace impactlab::synthgen {

// Enumerator order is the composition order ramp:spike:level:long.
enum class Pattern { RampDown, Spike, LevelShift, LongDown };
inline constexpr std::array<Pattern, 4> kPatterns{Pattern::RampDown, Pattern::Spike, Pattern::LevelShift,
                                                  Pattern::LongDown};

std::string_view pattern_name(Pattern p);
Pattern parse_pattern(std::string_view name);
inline std::size_t pattern_index(Pattern p) { return static_cast<std::size_t>(p); }

struct Harmonic {
    double period_min;
    double amplitude;
    double phase;  // radians
};

struct TrafficProfile {
    double base = 100.0;
    std::vector<Harmonic> harmonics;
    double noise_sigma = 3.0;

    // Noise-free level at `minute` (minute 0 = midnight of day 1), before clamping.
    double waveform(double minute) const;
    void validate() const;

    // Harmonics (1440, 40), (720, 15), (240, 5) all cresting at 20:00.
    static TrafficProfile defaults();
    // Each (period, amplitude) harmonic is phased to crest at `peak_minute`.
    static TrafficProfile with_peak(double base, const std::vector<std::pair<double, double>>& harmonics,
                                    double peak_minute, double noise_sigma);
};

// Template id layout: [periodic | random | spike | level-shift | long-down].
struct SyslogProcessSpec {
    std::vector<int> periodic_periods{2, 3, 5, 10, 30, 60, 120, 300, 720, 1440};
    // Probability that a scheduled periodic event is logged.
    double periodic_emit_prob = 0.35;
    // Poisson rate per minute for each random template.
    std::vector<double> random_rates;
    std::size_t failure_templates_per_class = 20;
    // Per-template probability of a failure message at onset (at least one is forced).
    double failure_emit_prob = 0.5;

    std::size_t periodic_count() const { return periodic_periods.size(); }
    std::size_t random_count() const { return random_rates.size(); }
    std::size_t background_count() const { return periodic_count() + random_count(); }
    std::size_t template_count() const { return background_count() + 3 * failure_templates_per_class; }
    // First id of the failure templates for a non-ramp pattern.
    std::size_t failure_base(Pattern p) const;
    double expected_daily_volume() const;
    void validate() const;

    // 30 random templates with a 1/sqrt(i+1) rate spread totalling
    // `random_per_day` messages per day.
    static SyslogProcessSpec defaults(double random_per_day = 400.0);
};

// Dense per-slot template counts, row-major (slots x templates).
class SyslogSeries {
public:
    SyslogSeries() = default;
    SyslogSeries(std::size_t slots, std::size_t templates) : templates_(templates), counts_(slots * templates, 0) {}

    std::size_t slots() const noexcept { return templates_ ? counts_.size() / templates_ : 0; }
    std::size_t templates() const noexcept { return templates_; }
    std::span<const std::uint32_t> slot(std::size_t t) const { return {counts_.data() + t * templates_, templates_}; }
    std::span<std::uint32_t> slot(std::size_t t) { return {counts_.data() + t * templates_, templates_}; }
    std::uint32_t& at(std::size_t t, std::size_t m) { return counts_[t * templates_ + m]; }
    std::uint32_t at(std::size_t t, std::size_t m) const { return counts_[t * templates_ + m]; }
    std::uint64_t total() const;

    friend bool operator==(const SyslogSeries&, const SyslogSeries&) = default;

private:
    std::size_t templates_ = 0;
    std::vector<std::uint32_t> counts_;
};

// Compressed sparse rows of per-slot counts; the storage form inside samples.
struct SparseCounts {
    std::size_t templates = 0;
    std::vector<std::uint32_t> row_offsets{0};
    std::vector<std::uint32_t> index;
    std::vector<std::uint32_t> count;

    std::size_t slots() const { return row_offsets.size() - 1; }
    void push_row(std::span<const std::pair<std::uint32_t, std::uint32_t>> entries);
    static SparseCounts from_dense(const SyslogSeries& dense, std::size_t first_slot, std::size_t n_slots);
    SyslogSeries to_dense() const;

    friend bool operator==(const SparseCounts&, const SparseCounts&) = default;
};

struct FailureScenario {
    Pattern pattern;
    std::size_t onset;  // slot T
    double ttr_min;

    // Fraction of the counterfactual removed `elapsed_min` minutes after onset.
    double reduction(double elapsed_min) const;
    std::size_t affected_slots(int slot_minutes) const;

    static FailureScenario make(Pattern p, std::size_t onset);
};

double recovery_minutes(Pattern p);

struct LabeledSample {
    std::uint64_t id = 0;
    Pattern pattern = Pattern::RampDown;
    int slot_minutes = 1;
    std::vector<double> traffic;  // observed (degraded) traffic, W slots ending at T
    SparseCounts counts;          // W slots ending at T
    double ttr_min = 0.0;
    double v_loss = 0.0;

    std::size_t window() const { return traffic.size(); }
    friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

struct GenConfig {
    TrafficProfile profile = TrafficProfile::defaults();
    SyslogProcessSpec syslog = SyslogProcessSpec::defaults();
    int days = 6;
    int slot_minutes = 1;
    std::size_t window = 60;
    // Weights for ramp:spike:level:long; sample id mod sum(weights) selects
    // the pattern by cumulative ranges.
    std::array<int, 4> composition{40, 20, 20, 20};

    std::size_t slots_per_day() const { return static_cast<std::size_t>(1440 / slot_minutes); }
    void validate() const;
};

std::vector<double> gen_normal_traffic(const TrafficProfile& profile, std::size_t duration, std::uint64_t seed,
                                       int slot_minutes = 1);

SyslogSeries gen_normal_syslog(const SyslogProcessSpec& spec, std::size_t duration, std::uint64_t seed,
                               int slot_minutes = 1);

struct InjectedSeries {
    std::vector<double> traffic;  // degraded
    SyslogSeries syslog;          // degraded
    std::vector<double> counterfactual;
};

// Throws ScenarioOutOfRange when [T, T + ttr) does not fit the series.
InjectedSeries inject_failure(const std::vector<double>& traffic, const SyslogSeries& syslog,
                              const FailureScenario& scenario, const SyslogProcessSpec& spec, std::uint64_t seed,
                              int slot_minutes = 1);

// sum_{t=T}^{T+n-1} (counterfactual_t - degraded_t) * slot_minutes,
// n = ceil(ttr / slot_minutes). Throws LengthMismatch on misaligned input.
double ground_truth_loss(std::span<const double> counterfactual, std::span<const double> degraded, std::size_t onset,
                         double ttr_min, int slot_minutes = 1);

Pattern pattern_for_sample(const GenConfig& config, std::uint64_t id);

// Full output of one generation, before the window is cut.
struct GeneratedSample {
    LabeledSample sample;
    FailureScenario scenario;
    std::vector<double> counterfactual;
    std::vector<double> degraded;
    SyslogSeries syslog;
};

GeneratedSample generate_sample(const GenConfig& config, std::uint64_t id, std::uint64_t seed);

struct Dataset {
    std::vector<LabeledSample> train;
    std::vector<LabeledSample> eval;
};

// Train ids are 0..n_train-1 and eval ids follow; each sample is generated
// from its own substream so the result does not depend on `jobs`.
Dataset build_dataset(const GenConfig& config, std::size_t n_train, std::size_t n_eval, std::uint64_t seed,
                      unsigned jobs = 1);

// Reads profile.*, syslog.* and gen.* keys over `base`.
GenConfig gen_config_from(const FlatConfig& cfg, GenConfig base = {});

struct DatasetHeader {
    int version = 1;
    std::size_t templates = 0;  // M
    std::size_t window = 0;     // W
    std::string catalog_ref;
};

// JSON lines: one header line, then one sample per line.
void write_dataset(const std::string& path, const DatasetHeader& header, const std::vector<LabeledSample>& samples);
void write_dataset(std::ostream& out, const DatasetHeader& header, const std::vector<LabeledSample>& samples);

struct LoadedDataset {
    DatasetHeader header;
    std::vector<LabeledSample> samples;
};

// Throws DatasetError naming the line on any malformed or inconsistent entry.
LoadedDataset read_dataset(const std::string& path);
LoadedDataset read_dataset(std::istream& in, const std::string& origin = "<dataset>");

}  // namespace impactlab::synthgen
