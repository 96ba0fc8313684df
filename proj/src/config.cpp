#include "impactlab/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "impactlab/errors.hpp"

namespace impactlab {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc{} || ptr != end)
        throw ConfigError("config key '" + key + "': cannot parse '" + text + "' as a number");
    return v;
}

}  // namespace

FlatConfig FlatConfig::parse(std::istream& in, const std::string& origin) {
    FlatConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        const auto text = trim(line);
        if (text.empty()) continue;
        const auto eq = text.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        const auto key = trim(std::string_view(text).substr(0, eq));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        cfg.values_[key] = trim(std::string_view(text).substr(eq + 1));
    }
    return cfg;
}

FlatConfig FlatConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return parse(in, path);
}

void FlatConfig::set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
    const auto key = trim(std::string_view(assignment).substr(0, eq));
    if (key.empty()) throw ConfigError("empty key in '" + assignment + "'");
    set(key, trim(std::string_view(assignment).substr(eq + 1)));
}

void FlatConfig::set(const std::string& key, const std::string& value) { values_[key] = value; }

void FlatConfig::merge(const FlatConfig& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
}

const std::string* FlatConfig::raw(const std::string& key) const {
    read_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? nullptr : &it->second;
}

std::string FlatConfig::get_string(const std::string& key, const std::string& fallback) const {
    const auto* v = raw(key);
    return v ? *v : fallback;
}

double FlatConfig::get_double(const std::string& key, double fallback) const {
    const auto* v = raw(key);
    return v ? parse_number<double>(key, *v) : fallback;
}

long long FlatConfig::get_int(const std::string& key, long long fallback) const {
    const auto* v = raw(key);
    return v ? parse_number<long long>(key, *v) : fallback;
}

std::uint64_t FlatConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
    const auto* v = raw(key);
    return v ? parse_number<std::uint64_t>(key, *v) : fallback;
}

bool FlatConfig::get_bool(const std::string& key, bool fallback) const {
    const auto* v = raw(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + *v + "'");
}

std::vector<double> FlatConfig::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
    const auto* v = raw(key);
    if (!v) return fallback;
    std::vector<double> out;
    std::stringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number<double>(key, trim(item)));
    return out;
}

std::vector<std::string> FlatConfig::unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : values_)
        if (!read_.contains(k)) out.push_back(k);
    return out;
}

std::string FlatConfig::dump() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
}

}  // namespace impactlab
