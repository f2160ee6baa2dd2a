#include "licorice/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace licorice {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const char* first = v.data();
    const char* last = v.data() + v.size();
    if constexpr (std::is_floating_point_v<T>) {
        try {
            std::size_t pos = 0;
            out = static_cast<T>(std::stod(v, &pos));
            if (pos != v.size()) throw Error("");
            return out;
        } catch (const std::exception&) {
            throw Error("config: " + key + " expects a number, got '" + v + "'");
        }
    } else {
        auto [p, ec] = std::from_chars(first, last, out);
        if (ec != std::errc() || p != last) throw Error("config: " + key + " expects an integer, got '" + v + "'");
        return out;
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw Error("config: " + key + " expects true or false, got '" + v + "'");
}

std::string num(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::vector<int> split_ints(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
    if (out.empty()) throw Error("config: " + key + " expects a comma-separated list of sizes");
    return out;
}

const std::vector<std::string>& keys() {
    static const std::vector<std::string> k = {
        "env", "algo", "budget", "iterations", "oracle", "seed", "projection_seed", "timesteps", "out",
        "acceptance", "pool_ratio", "query_batch", "ensemble", "val_fraction",
        "concept_epochs", "concept_batch", "concept_lr", "early_stopping", "patience_first", "patience_last",
        "concept_encoding", "extractor_hidden", "action_hidden", "value_hidden",
        "ppo_horizon", "ppo_num_envs", "ppo_epochs", "ppo_minibatch", "ppo_lr", "ppo_clip", "ppo_gamma",
        "ppo_gae_lambda", "ppo_ent_coef", "ppo_vf_coef", "ppo_max_grad_norm",
        "cpm_lambda", "random_q_retrain_every",
        "eval_episodes", "eval_seed", "human_timeout_s", "vlm_model", "vlm_api_key_env",
    };
    return k;
}

}  // namespace

RunConfig RunConfig::defaults(EnvKind env) {
    RunConfig c;
    c.env = env;
    c.lic = LicoriceConfig::defaults(env);
    return c;
}

void RunConfig::set(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    auto& L = lic;
    auto& P = lic.ppo;
    if (key == "env") {
        const EnvKind k = parse_env_kind(v);
        if (k != env) {
            // A new environment brings its own defaults; keep the run identity.
            RunConfig fresh = defaults(k);
            fresh.algo = algo;
            fresh.oracle = oracle;
            fresh.seed = seed;
            fresh.out = out;
            *this = fresh;
        }
    } else if (key == "algo") algo = parse_algorithm(v);
    else if (key == "budget") L.budget = parse_number<long>(key, v);
    else if (key == "iterations") L.iterations = parse_number<int>(key, v);
    else if (key == "oracle") oracle = OracleSpec::parse(v);
    else if (key == "seed") seed = parse_number<std::uint64_t>(key, v);
    else if (key == "projection_seed") projection_seed = parse_number<std::uint64_t>(key, v);
    else if (key == "timesteps") L.timesteps = parse_number<long>(key, v);
    else if (key == "out") out = v;
    else if (key == "acceptance") L.acceptance = parse_number<double>(key, v);
    else if (key == "pool_ratio") L.pool_ratio = parse_number<double>(key, v);
    else if (key == "query_batch") L.query_batch = parse_number<int>(key, v);
    else if (key == "ensemble") L.ensemble = parse_number<int>(key, v);
    else if (key == "val_fraction") L.val_fraction = parse_number<double>(key, v);
    else if (key == "concept_epochs") L.concept_training.max_epochs = parse_number<int>(key, v);
    else if (key == "concept_batch") L.concept_training.minibatch = parse_number<int>(key, v);
    else if (key == "concept_lr") L.concept_training.lr = parse_number<double>(key, v);
    else if (key == "early_stopping") L.concept_training.early_stopping = parse_bool(key, v);
    else if (key == "patience_first") L.patience_first = parse_number<int>(key, v);
    else if (key == "patience_last") L.patience_last = parse_number<int>(key, v);
    else if (key == "concept_encoding") {
        if (v == "onehot") L.arch.encoding = ConceptEncoding::OneHot;
        else if (v == "normalized") L.arch.encoding = ConceptEncoding::Normalized;
        else throw Error("config: concept_encoding expects onehot or normalized, got '" + v + "'");
    } else if (key == "extractor_hidden") L.arch.extractor_hidden = split_ints(key, v);
    else if (key == "action_hidden") L.arch.action_hidden = split_ints(key, v);
    else if (key == "value_hidden") L.arch.value_hidden = split_ints(key, v);
    else if (key == "ppo_horizon") P.horizon = parse_number<int>(key, v);
    else if (key == "ppo_num_envs") P.num_envs = parse_number<int>(key, v);
    else if (key == "ppo_epochs") P.epochs = parse_number<int>(key, v);
    else if (key == "ppo_minibatch") P.minibatch = parse_number<int>(key, v);
    else if (key == "ppo_lr") P.lr = parse_number<double>(key, v);
    else if (key == "ppo_clip") P.clip = parse_number<double>(key, v);
    else if (key == "ppo_gamma") P.gamma = parse_number<double>(key, v);
    else if (key == "ppo_gae_lambda") P.gae_lambda = parse_number<double>(key, v);
    else if (key == "ppo_ent_coef") P.ent_coef = parse_number<double>(key, v);
    else if (key == "ppo_vf_coef") P.vf_coef = parse_number<double>(key, v);
    else if (key == "ppo_max_grad_norm") P.max_grad_norm = parse_number<double>(key, v);
    else if (key == "cpm_lambda") L.cpm_lambda = parse_number<double>(key, v);
    else if (key == "random_q_retrain_every") L.random_q_retrain_every = parse_number<int>(key, v);
    else if (key == "eval_episodes") eval_episodes = parse_number<int>(key, v);
    else if (key == "eval_seed") eval_seed = parse_number<std::uint64_t>(key, v);
    else if (key == "human_timeout_s") human_timeout_s = parse_number<double>(key, v);
    else if (key == "vlm_model") vlm_model = v;
    else if (key == "vlm_api_key_env") vlm_api_key_env = v;
    else throw Error("config: unknown key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
    const auto& L = lic;
    const auto& P = lic.ppo;
    return {
        {"env", to_string(env)},
        {"algo", to_string(algo)},
        {"budget", std::to_string(L.budget)},
        {"iterations", std::to_string(L.iterations)},
        {"oracle", oracle.str()},
        {"seed", std::to_string(seed)},
        {"projection_seed", std::to_string(projection_seed)},
        {"timesteps", std::to_string(L.timesteps)},
        {"out", out},
        {"acceptance", num(L.acceptance)},
        {"pool_ratio", num(L.pool_ratio)},
        {"query_batch", std::to_string(L.query_batch)},
        {"ensemble", std::to_string(L.ensemble)},
        {"val_fraction", num(L.val_fraction)},
        {"concept_epochs", std::to_string(L.concept_training.max_epochs)},
        {"concept_batch", std::to_string(L.concept_training.minibatch)},
        {"concept_lr", num(L.concept_training.lr)},
        {"early_stopping", L.concept_training.early_stopping ? "true" : "false"},
        {"patience_first", std::to_string(L.patience_first)},
        {"patience_last", std::to_string(L.patience_last)},
        {"concept_encoding", L.arch.encoding == ConceptEncoding::OneHot ? "onehot" : "normalized"},
        {"extractor_hidden", join_ints(L.arch.extractor_hidden)},
        {"action_hidden", join_ints(L.arch.action_hidden)},
        {"value_hidden", join_ints(L.arch.value_hidden)},
        {"ppo_horizon", std::to_string(P.horizon)},
        {"ppo_num_envs", std::to_string(P.num_envs)},
        {"ppo_epochs", std::to_string(P.epochs)},
        {"ppo_minibatch", std::to_string(P.minibatch)},
        {"ppo_lr", num(P.lr)},
        {"ppo_clip", num(P.clip)},
        {"ppo_gamma", num(P.gamma)},
        {"ppo_gae_lambda", num(P.gae_lambda)},
        {"ppo_ent_coef", num(P.ent_coef)},
        {"ppo_vf_coef", num(P.vf_coef)},
        {"ppo_max_grad_norm", num(P.max_grad_norm)},
        {"cpm_lambda", num(L.cpm_lambda)},
        {"random_q_retrain_every", std::to_string(L.random_q_retrain_every)},
        {"eval_episodes", std::to_string(eval_episodes)},
        {"eval_seed", std::to_string(eval_seed)},
        {"human_timeout_s", num(human_timeout_s)},
        {"vlm_model", vlm_model},
        {"vlm_api_key_env", vlm_api_key_env},
    };
}

std::string RunConfig::get(const std::string& key) const {
    for (const auto& [k, v] : entries())
        if (k == key) return v;
    throw Error("config: unknown key '" + key + "'");
}

std::string RunConfig::to_text() const {
    std::string s;
    for (const auto& [k, v] : entries()) s += k + " = " + v + "\n";
    return s;
}

std::uint64_t RunConfig::hash() const {
    // The output directory does not change what a run computes.
    std::string s;
    for (const auto& [k, v] : entries())
        if (k != "out") s += k + "=" + v + "\n";
    return fnv1a(s);
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw Error("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(t.substr(0, eq));
        if (std::find(keys().begin(), keys().end(), key) == keys().end())
            throw Error("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        out.emplace_back(key, trim(t.substr(eq + 1)));
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot read config file " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str());
}

RunConfig build_config(const std::vector<std::pair<std::string, std::string>>& pairs) {
    EnvKind env = EnvKind::DoorKey;
    for (const auto& [k, v] : pairs)
        if (k == "env") env = parse_env_kind(trim(v));
    RunConfig c = RunConfig::defaults(env);
    for (const auto& [k, v] : pairs)
        if (k != "env") c.set(k, v);
    return c;
}

}  // namespace licorice
