#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace impactlab::cli {

// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::string& path);

struct RunManifest {
    std::string subcommand;
    std::vector<std::string> argv;  // arguments after the program name
    std::string cwd;
    std::map<std::string, std::string> config;
    std::map<std::string, std::uint64_t> seeds;
    std::optional<std::string> env_seed;  // IMPACTLAB_SEED at run time
    std::map<std::string, std::string> inputs;   // path -> sha256
    std::map<std::string, std::string> outputs;  // path -> sha256
    double wall_clock_seconds = 0.0;

    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
    void write(const std::string& path) const;
    static RunManifest read(const std::string& path);
};

}  // namespace impactlab::cli
