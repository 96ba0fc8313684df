#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace impactlab {

// Flat "section.key = value" settings. '#' starts a comment. Later entries
// override earlier ones, so files can be layered and patched with set().
class FlatConfig {
public:
    static FlatConfig parse(std::istream& in, const std::string& origin = "<config>");
    static FlatConfig load(const std::string& path);

    // "key=value"; throws ConfigError when there is no '='.
    void set(const std::string& assignment);
    void set(const std::string& key, const std::string& value);
    void merge(const FlatConfig& other);

    bool has(const std::string& key) const { return values_.contains(key); }
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    // Comma-separated list of doubles.
    std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;

    // Keys never read through a getter; the CLI rejects them as typos.
    std::vector<std::string> unused_keys() const;
    const std::map<std::string, std::string>& values() const noexcept { return values_; }
    std::string dump() const;

private:
    const std::string* raw(const std::string& key) const;

    std::map<std::string, std::string> values_;
    mutable std::set<std::string> read_;
};

}  // namespace impactlab
