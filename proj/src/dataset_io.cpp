#include <fstream>
#include <sstream>

#include "impactlab/errors.hpp"
#include "impactlab/synthgen.hpp"
#include "json.hpp"

namespace impactlab::synthgen {

using nlohmann::json;

namespace {

std::vector<std::pair<double, double>> parse_harmonics(const std::string& text) {
    std::vector<std::pair<double, double>> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw ConfigError("profile.harmonics entries are period:amplitude, got '" + item + "'");
        try {
            out.emplace_back(std::stod(item.substr(0, colon)), std::stod(item.substr(colon + 1)));
        } catch (const std::logic_error&) {
            throw ConfigError("profile.harmonics: cannot parse '" + item + "'");
        }
    }
    return out;
}

json sample_to_json(const LabeledSample& s) {
    json window = json::array();
    for (std::size_t t = 0; t < s.window(); ++t) {
        json counts = json::array();
        for (auto k = s.counts.row_offsets[t]; k < s.counts.row_offsets[t + 1]; ++k)
            counts.push_back({s.counts.index[k], s.counts.count[k]});
        window.push_back({{"traffic", s.traffic[t]}, {"counts", std::move(counts)}});
    }
    return {{"id", s.id},
            {"pattern", pattern_name(s.pattern)},
            {"slot_minutes", s.slot_minutes},
            {"window", std::move(window)},
            {"label", {{"ttr_min", s.ttr_min}, {"v_loss", s.v_loss}}}};
}

LabeledSample sample_from_json(const json& j, const DatasetHeader& h) {
    LabeledSample s;
    s.id = j.at("id").get<std::uint64_t>();
    s.pattern = parse_pattern(j.at("pattern").get<std::string>());
    s.slot_minutes = j.at("slot_minutes").get<int>();
    if (s.slot_minutes < 1) throw DatasetError("slot_minutes must be >= 1");
    const auto& window = j.at("window");
    if (window.size() != h.window)
        throw DatasetError("window has " + std::to_string(window.size()) + " slots, header says W=" +
                           std::to_string(h.window));
    s.counts.templates = h.templates;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> row;
    for (const auto& slot : window) {
        s.traffic.push_back(slot.at("traffic").get<double>());
        row.clear();
        for (const auto& pair : slot.at("counts")) {
            if (!pair.is_array() || pair.size() != 2) throw DatasetError("counts entries are [template_idx, count]");
            row.emplace_back(pair[0].get<std::uint32_t>(), pair[1].get<std::uint32_t>());
        }
        s.counts.push_row(row);
    }
    const auto& label = j.at("label");
    s.ttr_min = label.at("ttr_min").get<double>();
    s.v_loss = label.at("v_loss").get<double>();
    if (!(s.ttr_min > 0.0)) throw DatasetError("ttr label must be > 0");
    if (!(s.v_loss >= 0.0)) throw DatasetError("loss label must be >= 0");
    return s;
}

}  // namespace

GenConfig gen_config_from(const FlatConfig& cfg, GenConfig base) {
    const bool profile_keys = cfg.has("profile.base") || cfg.has("profile.harmonics") ||
                              cfg.has("profile.peak_minute") || cfg.has("profile.noise_sigma");
    if (profile_keys) {
        base.profile = TrafficProfile::with_peak(
            cfg.get_double("profile.base", 100.0),
            parse_harmonics(cfg.get_string("profile.harmonics", "1440:40,720:15,240:5")),
            cfg.get_double("profile.peak_minute", 1200.0), cfg.get_double("profile.noise_sigma", 3.0));
    }
    if (cfg.has("syslog.random_per_day")) {
        const auto keep = base.syslog;
        base.syslog = SyslogProcessSpec::defaults(cfg.get_double("syslog.random_per_day", 400.0));
        base.syslog.periodic_periods = keep.periodic_periods;
        base.syslog.periodic_emit_prob = keep.periodic_emit_prob;
        base.syslog.failure_emit_prob = keep.failure_emit_prob;
    }
    if (cfg.has("syslog.periodic_periods")) {
        base.syslog.periodic_periods.clear();
        for (double p : cfg.get_doubles("syslog.periodic_periods", {})) base.syslog.periodic_periods.push_back(static_cast<int>(p));
    }
    base.syslog.periodic_emit_prob = cfg.get_double("syslog.periodic_emit_prob", base.syslog.periodic_emit_prob);
    base.syslog.failure_emit_prob = cfg.get_double("syslog.failure_emit_prob", base.syslog.failure_emit_prob);
    base.days = static_cast<int>(cfg.get_int("gen.days", base.days));
    base.slot_minutes = static_cast<int>(cfg.get_int("gen.slot_minutes", base.slot_minutes));
    const auto window = cfg.get_int("gen.window", static_cast<long long>(base.window));
    if (window < 1) throw ConfigError("gen.window must be >= 1");
    base.window = static_cast<std::size_t>(window);
    if (cfg.has("gen.composition")) {
        const auto w = cfg.get_doubles("gen.composition", {});
        if (w.size() != 4) throw ConfigError("gen.composition needs 4 weights ramp,spike,level,long");
        for (std::size_t i = 0; i < 4; ++i) base.composition[i] = static_cast<int>(w[i]);
    }
    base.validate();
    return base;
}

void write_dataset(std::ostream& out, const DatasetHeader& header, const std::vector<LabeledSample>& samples) {
    out << json{{"version", header.version}, {"M", header.templates}, {"W", header.window},
                {"catalog_ref", header.catalog_ref}}
               .dump()
        << '\n';
    for (const auto& s : samples) {
        if (s.window() != header.window || s.counts.slots() != header.window || s.counts.templates != header.templates)
            throw ShapeError("sample " + std::to_string(s.id) + " does not match dataset header shape");
        out << sample_to_json(s).dump() << '\n';
    }
}

void write_dataset(const std::string& path, const DatasetHeader& header, const std::vector<LabeledSample>& samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    write_dataset(out, header, samples);
    if (!out.flush()) throw Error("failed writing '" + path + "'");
}

LoadedDataset read_dataset(std::istream& in, const std::string& origin) {
    LoadedDataset d;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = json::parse(line);
            if (!have_header) {
                d.header.version = j.at("version").get<int>();
                if (d.header.version != 1)
                    throw DatasetError("unsupported dataset version " + std::to_string(d.header.version));
                d.header.templates = j.at("M").get<std::size_t>();
                d.header.window = j.at("W").get<std::size_t>();
                d.header.catalog_ref = j.value("catalog_ref", "");
                if (d.header.templates == 0 || d.header.window == 0) throw DatasetError("header needs M, W >= 1");
                have_header = true;
            } else {
                d.samples.push_back(sample_from_json(j, d.header));
            }
        } catch (const json::exception& e) {
            throw DatasetError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const InputError& e) {
            throw DatasetError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!have_header) throw DatasetError(origin + ": missing dataset header line");
    return d;
}

LoadedDataset read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("cannot open dataset '" + path + "'");
    return read_dataset(in, path);
}

}  // namespace impactlab::synthgen
