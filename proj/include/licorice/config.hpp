#pragma once

// Run configuration as flat `key = value` text. Lines starting with '#' are
// comments. Every key is listed by RunConfig::entries().

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "licorice/licorice.hpp"
#include "licorice/oracles.hpp"

namespace licorice {

struct RunConfig {
    EnvKind env = EnvKind::DoorKey;
    Algorithm algo = Algorithm::Licorice;
    LicoriceConfig lic;
    OracleSpec oracle;
    std::uint64_t seed = 123;
    std::uint64_t projection_seed = 0;
    std::string out;
    int eval_episodes = 100;
    std::uint64_t eval_seed = 42;
    double human_timeout_s = 3600;
    std::string vlm_model = "gpt-4o";
    std::string vlm_api_key_env = "OPENAI_API_KEY";

    static RunConfig defaults(EnvKind env);

    /// Throws Error naming the key on unknown keys or malformed values.
    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;

    /// Every key with its current value, in a fixed order.
    std::vector<std::pair<std::string, std::string>> entries() const;
    std::string to_text() const;
    std::uint64_t hash() const;
};

/// key/value pairs of a config file, in file order.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);
std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path);

/// Defaults for the env named in `pairs` (DoorKey when absent), then the other pairs in order.
RunConfig build_config(const std::vector<std::pair<std::string, std::string>>& pairs);

}  // namespace licorice
