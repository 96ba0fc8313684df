#include "manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <memory>

#include "impactlab/errors.hpp"

namespace impactlab::cli {

using nlohmann::json;

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read '" + path + "' for hashing");
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256 init failed");
    std::array<char, 1 << 16> buf;
    while (in) {
        in.read(buf.data(), buf.size());
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md, &len);
    std::string hex;
    char byte[3];
    for (unsigned i = 0; i < len; ++i) {
        std::snprintf(byte, sizeof byte, "%02x", md[i]);
        hex += byte;
    }
    return hex;
}

json RunManifest::to_json() const {
    return {{"format", 1},
            {"subcommand", subcommand},
            {"argv", argv},
            {"cwd", cwd},
            {"config", config},
            {"seeds", seeds},
            {"env_seed", env_seed ? json(*env_seed) : json(nullptr)},
            {"inputs", inputs},
            {"outputs", outputs},
            {"wall_clock_seconds", wall_clock_seconds}};
}

RunManifest RunManifest::from_json(const json& j) {
    try {
        if (j.at("format").get<int>() != 1) throw InputError("unsupported manifest format");
        RunManifest m;
        m.subcommand = j.at("subcommand").get<std::string>();
        m.argv = j.at("argv").get<std::vector<std::string>>();
        m.cwd = j.at("cwd").get<std::string>();
        m.config = j.at("config").get<std::map<std::string, std::string>>();
        m.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
        if (!j.at("env_seed").is_null()) m.env_seed = j["env_seed"].get<std::string>();
        m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
        m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
        m.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
        return m;
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed manifest: ") + e.what());
    }
}

void RunManifest::write(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write manifest '" + path + "'");
    out << to_json().dump(2) << '\n';
}

RunManifest RunManifest::read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open manifest '" + path + "'");
    try {
        return from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw InputError("manifest '" + path + "' is not valid JSON: " + e.what());
    }
}

}  // namespace impactlab::cli
