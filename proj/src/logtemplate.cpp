#include "impactlab/logtemplate.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <utility>

#include "impactlab/errors.hpp"

namespace impactlab::logtemplate {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

bool all_digits(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

bool read_int(std::string_view s, int& out) {
    if (!all_digits(s)) return false;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size();
}

bool is_number(std::string_view s) {
    if (!s.empty() && (s.front() == '-' || s.front() == '+')) s.remove_prefix(1);
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        return std::all_of(s.begin() + 2, s.end(), [](char c) { return std::isxdigit(static_cast<unsigned char>(c)); });
    }
    const auto dot = s.find('.');
    if (dot == std::string_view::npos) return all_digits(s);
    return all_digits(s.substr(0, dot)) && all_digits(s.substr(dot + 1));
}

// 0/0/1, 1/2
bool is_slash_index(std::string_view s) {
    if (s.find('/') == std::string_view::npos) return false;
    std::size_t start = 0;
    while (true) {
        const auto slash = s.find('/', start);
        if (!all_digits(s.substr(start, slash - start))) return false;
        if (slash == std::string_view::npos) return true;
        start = slash + 1;
    }
}

// 10.0.0.1, optionally followed by /prefix or :port
bool is_ipv4(std::string_view s) {
    const auto suffix = s.find_first_of("/:");
    if (suffix != std::string_view::npos) {
        if (!all_digits(s.substr(suffix + 1))) return false;
        s = s.substr(0, suffix);
    }
    int groups = 0;
    std::size_t start = 0;
    while (true) {
        const auto dot = s.find('.', start);
        const auto part = s.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start);
        int v = 0;
        if (part.size() > 3 || !read_int(part, v) || v > 255) return false;
        ++groups;
        if (dot == std::string_view::npos) break;
        start = dot + 1;
    }
    return groups == 4;
}

// user:B, session:0x1f
bool is_key_value(std::string_view s) {
    const auto colon = s.find(':');
    if (colon == std::string_view::npos || colon == 0 || colon + 1 >= s.size()) return false;
    const auto key = s.substr(0, colon);
    if (!std::isalpha(static_cast<unsigned char>(key.front())) && key.front() != '_') return false;
    return std::all_of(key.begin(), key.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
    });
}

bool is_variable(std::string_view core) {
    if (core.empty() || core == kPlaceholder) return false;
    return is_number(core) || is_slash_index(core) || is_ipv4(core) || is_key_value(core);
}

std::string mask_token(std::string_view token) {
    constexpr std::string_view lead = "([<\"'";
    constexpr std::string_view trail = ",;.)]>\"'";
    std::size_t b = 0, e = token.size();
    while (b < e && lead.find(token[b]) != std::string_view::npos) ++b;
    while (e > b && trail.find(token[e - 1]) != std::string_view::npos) --e;
    const auto core = token.substr(b, e - b);
    if (!is_variable(core)) return std::string(token);
    std::string out(token.substr(0, b));
    out += kPlaceholder;
    out += token.substr(e);
    return out;
}

bool has_control_bytes(std::string_view s) {
    return std::any_of(s.begin(), s.end(), [](char c) {
        const auto u = static_cast<unsigned char>(c);
        return (u < 0x20 && c != '\t') || u == 0x7f;
    });
}

struct Fields {
    std::string_view stamp, host, body;
};

Fields split_fields(std::string_view text) {
    const auto c1 = text.find(',');
    if (c1 == std::string_view::npos) throw MalformedLine(std::string(text));
    const auto c2 = text.find(',', c1 + 1);
    if (c2 == std::string_view::npos) throw MalformedLine(std::string(text));
    Fields f{trim(text.substr(0, c1)), trim(text.substr(c1 + 1, c2 - c1 - 1)), trim(text.substr(c2 + 1))};
    if (f.host.empty() || f.body.empty()) throw MalformedLine(std::string(text));
    return f;
}

}  // namespace

std::optional<Timestamp> parse_timestamp(std::string_view text) {
    text = trim(text);
    // YYYY/MM/DD HH:MM:SS
    if (text.size() != 19) return std::nullopt;
    const char ds = text[4];
    if ((ds != '/' && ds != '-') || text[7] != ds || (text[10] != ' ' && text[10] != 'T') || text[13] != ':' ||
        text[16] != ':') {
        return std::nullopt;
    }
    int y, mo, d, h, mi, s;
    if (!read_int(text.substr(0, 4), y) || !read_int(text.substr(5, 2), mo) || !read_int(text.substr(8, 2), d) ||
        !read_int(text.substr(11, 2), h) || !read_int(text.substr(14, 2), mi) || !read_int(text.substr(17, 2), s)) {
        return std::nullopt;
    }
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(mo)},
                                          std::chrono::day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || s > 59) return std::nullopt;
    return std::chrono::sys_days{ymd} + std::chrono::hours{h} + std::chrono::minutes{mi} + std::chrono::seconds{s};
}

std::string format_timestamp(Timestamp ts) {
    const auto days = std::chrono::floor<std::chrono::days>(ts);
    const std::chrono::year_month_day ymd{days};
    const std::chrono::hh_mm_ss hms{ts - days};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d/%02u/%02u %02d:%02d:%02d", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                  static_cast<int>(hms.seconds().count()));
    return buf;
}

RawLogLine parse_line(std::string_view text) {
    if (has_control_bytes(text)) throw MalformedLine(std::string(text));
    const auto f = split_fields(text);
    const auto ts = parse_timestamp(f.stamp);
    if (!ts) throw MalformedLine(std::string(text));
    return RawLogLine{*ts, std::string(f.host), std::string(f.body)};
}

std::vector<RawLogLine> parse_lines(std::istream& in) {
    std::vector<RawLogLine> lines;
    std::string buf;
    while (std::getline(in, buf)) {
        if (!buf.empty() && buf.back() == '\r') buf.pop_back();
        if (trim(buf).empty()) continue;
        lines.push_back(parse_line(buf));
    }
    return lines;
}

std::string mask_body(std::string_view body) {
    std::string out;
    out.reserve(body.size());
    std::size_t start = 0;
    while (start <= body.size()) {
        const auto sp = body.find(' ', start);
        const auto token = body.substr(start, sp == std::string_view::npos ? std::string_view::npos : sp - start);
        out += mask_token(token);
        if (sp == std::string_view::npos) break;
        out += ' ';
        start = sp + 1;
    }
    return out;
}

std::string mask_variables(const RawLogLine& line) {
    if (line.body.empty()) throw MalformedLine(line.host + ", <empty body>");
    std::string out(kPlaceholder);
    out += ", ";
    out += line.host;
    out += ", ";
    out += mask_body(line.body);
    return out;
}

std::string mask_text(std::string_view text) {
    if (has_control_bytes(text)) throw MalformedLine(std::string(text));
    const auto f = split_fields(text);
    if (f.stamp != kPlaceholder && !parse_timestamp(f.stamp)) throw MalformedLine(std::string(text));
    return std::string(kPlaceholder) + ", " + std::string(f.host) + ", " + mask_body(f.body);
}

std::size_t TemplateCatalog::assign(const std::string& pattern) {
    if (frozen_) throw std::logic_error("cannot assign templates on a frozen catalog");
    if (auto it = index_.find(pattern); it != index_.end()) return it->second;
    const std::size_t id = templates_.size();
    templates_.push_back(pattern);
    index_.emplace(pattern, id);
    return id;
}

std::optional<std::size_t> TemplateCatalog::find(const std::string& pattern) const {
    if (auto it = index_.find(pattern); it != index_.end()) return it->second;
    return std::nullopt;
}

std::size_t TemplateCatalog::lookup(const std::string& pattern, bool strict) const {
    if (auto id = find(pattern)) return *id;
    if (strict || !frozen_) throw UnknownTemplate("unknown template: '" + pattern + "'");
    return templates_.size() - 1;
}

void TemplateCatalog::freeze() {
    if (frozen_) return;
    // Not entered in index_: only lookup() misses resolve to it.
    templates_.emplace_back(kOverflowPattern);
    frozen_ = true;
}

std::optional<std::size_t> TemplateCatalog::overflow_id() const {
    if (!frozen_) return std::nullopt;
    return templates_.size() - 1;
}

nlohmann::json TemplateCatalog::to_json() const {
    return {{"version", 1}, {"templates", templates_}, {"frozen", frozen_}};
}

TemplateCatalog TemplateCatalog::from_json(const nlohmann::json& j) {
    try {
        if (j.at("version").get<int>() != 1) throw ConfigError("unsupported catalog version");
        TemplateCatalog c;
        const auto templates = j.at("templates").get<std::vector<std::string>>();
        const bool frozen = j.value("frozen", false);
        const std::size_t real = frozen ? templates.size() - 1 : templates.size();
        if (frozen && (templates.empty() || templates.back() != kOverflowPattern)) {
            throw ConfigError("frozen catalog lacks its overflow template");
        }
        for (std::size_t i = 0; i < real; ++i) {
            if (c.index_.contains(templates[i])) throw ConfigError("duplicate template in catalog: " + templates[i]);
            c.assign(templates[i]);
        }
        if (frozen) c.freeze();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid catalog document: ") + e.what());
    }
}

void TemplateCatalog::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write catalog to " + path);
    out << to_json().dump(2) << '\n';
}

TemplateCatalog TemplateCatalog::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read catalog " + path);
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("invalid catalog " + path + ": " + e.what());
    }
}

namespace {

std::size_t slot_count(int slot_minutes, TimeWindow window) {
    if (slot_minutes <= 0) throw ConfigError("slot duration must be positive");
    if (window.end <= window.start) throw EmptyWindow("window end must be after its start");
    const auto span = (window.end - window.start).count();
    const long slot = slot_minutes * 60L;
    return static_cast<std::size_t>((span + slot - 1) / slot);
}

std::optional<std::size_t> slot_of(const RawLogLine& line, int slot_minutes, TimeWindow window) {
    if (line.timestamp < window.start || line.timestamp >= window.end) return std::nullopt;
    return static_cast<std::size_t>((line.timestamp - window.start).count() / (slot_minutes * 60L));
}

}  // namespace

std::vector<SyslogCountVector> vectorize_slots(const TemplateCatalog& frozen_catalog,
                                               const std::vector<RawLogLine>& lines, int slot_minutes,
                                               TimeWindow window, VectorizeOptions options) {
    if (!frozen_catalog.frozen()) throw std::logic_error("read-only vectorization requires a frozen catalog");
    const std::size_t slots = slot_count(slot_minutes, window);
    std::vector<SyslogCountVector> out(slots, SyslogCountVector(frozen_catalog.size(), 0));
    for (const auto& line : lines) {
        if (auto s = slot_of(line, slot_minutes, window)) {
            ++out[*s][frozen_catalog.lookup(mask_variables(line), options.strict)];
        }
    }
    return out;
}

std::vector<SyslogCountVector> vectorize_slots(TemplateCatalog& catalog, const std::vector<RawLogLine>& lines,
                                               int slot_minutes, TimeWindow window, VectorizeOptions options) {
    if (catalog.frozen()) return vectorize_slots(std::as_const(catalog), lines, slot_minutes, window, options);
    const std::size_t slots = slot_count(slot_minutes, window);
    std::vector<std::pair<std::size_t, std::size_t>> hits;  // (slot, id)
    for (const auto& line : lines) {
        if (auto s = slot_of(line, slot_minutes, window)) hits.emplace_back(*s, catalog.assign(mask_variables(line)));
    }
    std::vector<SyslogCountVector> out(slots, SyslogCountVector(catalog.size(), 0));
    for (auto [s, id] : hits) ++out[s][id];
    return out;
}

}  // namespace impactlab::logtemplate
