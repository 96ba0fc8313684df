#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace impactlab::logtemplate {

using Timestamp = std::chrono::sys_seconds;

inline constexpr std::string_view kPlaceholder = "XXX";
inline constexpr std::string_view kOverflowPattern = "<overflow>";

struct RawLogLine {
    Timestamp timestamp;
    std::string host;
    std::string body;
};

// "YYYY/MM/DD HH:MM:SS" (or with '-' date separators).
std::optional<Timestamp> parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp ts);

// Parses "timestamp, host, body". Throws MalformedLine.
RawLogLine parse_line(std::string_view text);
std::vector<RawLogLine> parse_lines(std::istream& in);

// Replaces variable tokens of the body (numbers, interface indices such as
// 0/0/1, key:value identifiers such as user:B, IPv4 addresses) and the
// timestamp with "XXX"; the host is kept verbatim.
std::string mask_variables(const RawLogLine& line);
// Same masking applied to raw text. The first field may be a timestamp or an
// already masked "XXX", which makes masking idempotent.
std::string mask_text(std::string_view text);
std::string mask_body(std::string_view body);

// Append-only mapping from masked patterns to dense ids in first-seen order.
// freeze() appends the overflow template that absorbs unseen patterns; a
// frozen catalog is immutable and may be shared across threads.
class TemplateCatalog {
public:
    std::size_t assign(const std::string& pattern);
    // Frozen lookup. Unknown patterns map to the overflow id, or throw
    // UnknownTemplate when strict.
    std::size_t lookup(const std::string& pattern, bool strict) const;
    std::optional<std::size_t> find(const std::string& pattern) const;

    void freeze();
    bool frozen() const noexcept { return frozen_; }
    std::optional<std::size_t> overflow_id() const;

    std::size_t size() const noexcept { return templates_.size(); }
    const std::vector<std::string>& templates() const noexcept { return templates_; }

    nlohmann::json to_json() const;
    static TemplateCatalog from_json(const nlohmann::json& j);
    void save(const std::string& path) const;
    static TemplateCatalog load(const std::string& path);

private:
    std::vector<std::string> templates_;
    std::unordered_map<std::string, std::size_t> index_;
    bool frozen_ = false;
};

using SyslogCountVector = std::vector<std::uint32_t>;

struct TimeWindow {
    Timestamp start;
    Timestamp end;  // exclusive
};

struct VectorizeOptions {
    bool strict = false;
};

// One count vector per slot of `slot_minutes` covering [start, end). Lines
// outside the window are ignored. An unfrozen catalog grows with new
// patterns (all vectors get the final M); a frozen one is only read.
std::vector<SyslogCountVector> vectorize_slots(TemplateCatalog& catalog, const std::vector<RawLogLine>& lines,
                                               int slot_minutes, TimeWindow window, VectorizeOptions options = {});
std::vector<SyslogCountVector> vectorize_slots(const TemplateCatalog& frozen_catalog,
                                               const std::vector<RawLogLine>& lines, int slot_minutes,
                                               TimeWindow window, VectorizeOptions options = {});

}  // namespace impactlab::logtemplate
