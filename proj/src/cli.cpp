#include "licorice/cli.hpp"

#include <atomic>
#include <cmath>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

namespace licorice {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void write_file(const std::string& path, const std::string& content) {
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path);
    os << content;
}

json report_json(const EvalReport& r, const RunConfig& c, long queries_spent) {
    json j = to_json(r);
    j["algo"] = to_string(c.algo);
    j["seed"] = c.seed;
    j["budget"] = c.algo == Algorithm::Cpm ? json(nullptr) : json(c.lic.budget);
    j["queries_spent"] = queries_spent;
    char hash[17];
    std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(c.hash()));
    j["config_hash"] = hash;
    return j;
}

std::unique_ptr<Oracle> make_oracle(const RunConfig& cfg, const std::string& dir,
                                    std::unique_ptr<AnnotationService>& service, const Logger& log) {
    switch (cfg.oracle.kind) {
        case OracleSpec::Kind::GroundTruth: return std::make_unique<GroundTruthOracle>();
        case OracleSpec::Kind::Noisy:
            return std::make_unique<NoisyOracle>(cfg.oracle.epsilon, cfg.oracle.sigma, derive_seed(cfg.seed, 0x6e));
        case OracleSpec::Kind::Human: {
            service = std::make_unique<AnnotationService>(dir + "/annotations.json");
            const int port = service->start("0.0.0.0", cfg.oracle.port);
            if (log) log("annotation service listening on port " + std::to_string(port));
            return std::make_unique<HumanOracle>(
                *service, std::chrono::milliseconds(static_cast<long>(cfg.human_timeout_s * 1000)));
        }
        case OracleSpec::Kind::Vlm: {
            VlmConfig vc;
            vc.base_url = cfg.oracle.endpoint;
            vc.model = cfg.vlm_model;
            vc.api_key_env = cfg.vlm_api_key_env;
            return std::make_unique<VlmOracle>(vc);
        }
    }
    throw Error("unknown oracle kind");
}

std::string default_run_dir(const RunConfig& c) {
    return "runs/" + to_string(c.env) + "-" + to_string(c.algo) + "-s" + std::to_string(c.seed);
}

}  // namespace

TrainOutcome train_run(const RunConfig& config, const Logger& log) {
    RunConfig cfg = config;
    if (cfg.out.empty()) cfg.out = default_run_dir(cfg);
    fs::create_directories(cfg.out);
    // The snapshot goes first so a crashed run can be diagnosed and replayed.
    write_file(cfg.out + "/config.txt", cfg.to_text());
    effective_config(cfg.algo, cfg.lic).validate();

    const Environment env(cfg.env, cfg.projection_seed);
    std::unique_ptr<AnnotationService> service;
    std::unique_ptr<Oracle> inner = make_oracle(cfg, cfg.out, service, log);
    CountingOracle oracle(*inner);

    RunContext ctx;
    ctx.run_dir = cfg.out;
    ctx.log = log;
    if (service)
        ctx.on_progress = [&](int iteration, const BudgetLedger& l) {
            service->set_progress(iteration, l.total(), l.spent());
        };
    RunResult res = run_algorithm(cfg.algo, cfg.lic, env, oracle, cfg.seed, ctx);
    if (service) service->stop();

    Checkpoint meta;
    meta.env = cfg.env;
    meta.projection_seed = cfg.projection_seed;
    meta.arch = cfg.lic.arch;
    meta.freeze = res.policy.freeze_mode();
    json snapshot = json::object();
    for (const auto& [k, v] : cfg.entries()) snapshot[k] = v;
    meta.config = snapshot;
    save_checkpoint(cfg.out + "/checkpoints/final", res.policy, meta);

    TrainOutcome out;
    out.run_dir = cfg.out;
    out.queries_spent = oracle.queries();
    out.report = evaluate(res.policy, env, cfg.eval_episodes, cfg.eval_seed);
    out.report_json = report_json(out.report, cfg, out.queries_spent);
    write_file(cfg.out + "/report.json", out.report_json.dump(2) + "\n");
    return out;
}

EvalReport eval_checkpoint(const std::string& dir, std::optional<EnvKind> expect_env, int episodes,
                           std::uint64_t eval_seed) {
    auto [policy, meta] = load_checkpoint(dir);
    if (expect_env && *expect_env != meta.env)
        throw Error("checkpoint " + dir + " was trained on " + to_string(meta.env) + ", not " +
                    to_string(*expect_env));
    const Environment env(meta.env, meta.projection_seed);
    return evaluate(policy, env, episodes, eval_seed);
}

nlohmann::json oracle_error_run(const std::string& checkpoint, const RunConfig& cfg, int samples,
                                const Logger& log) {
    if (samples < 1) throw Error("oracle-error: samples must be >= 1");
    auto [policy, meta] = load_checkpoint(checkpoint);
    const Environment env(meta.env, meta.projection_seed);
    Rng rng(derive_seed(cfg.seed, 0x0e));
    const Pool pool = collect_pool(policy, env, cfg.lic.acceptance, static_cast<std::size_t>(samples), rng);
    std::vector<LabelQuery> batch;
    for (std::size_t i = 0; i < pool.entries.size(); ++i) {
        LabelQuery q;
        q.id = i;
        q.env = &env;
        q.state = pool.entries[i].state;
        q.observation = pool.entries[i].observation;
        batch.push_back(std::move(q));
    }
    std::unique_ptr<AnnotationService> service;
    const auto oracle = make_oracle(cfg, checkpoint, service, log);
    const LabelingError e = labeling_error(*oracle, batch);
    if (service) service->stop();
    json per = json::object();
    for (std::size_t v = 0; v < e.per_concept.size(); ++v) per[env.schema().specs()[v].name] = e.per_concept[v];
    return {{"env", to_string(meta.env)}, {"oracle", cfg.oracle.str()}, {"samples", e.samples},
            {"seed", cfg.seed},           {"labeling_error", e.mean}, {"per_concept_errors", per},
            {"flagged", e.flagged}};
}

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

struct UsageError : Error {
    using Error::Error;
};

std::vector<std::pair<std::string, std::string>> gather_pairs(const std::string& config_file,
                                                              const std::vector<std::string>& sets) {
    std::vector<std::pair<std::string, std::string>> pairs;
    if (!config_file.empty()) pairs = read_config_file(config_file);
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
        pairs.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    return pairs;
}

bool has_key(const std::vector<std::pair<std::string, std::string>>& pairs, const std::string& key) {
    for (const auto& [k, v] : pairs)
        if (k == key) return true;
    return false;
}

/// Mean, sample std (empty below 2 values) and bootstrap CI (omitted below 2 values).
struct Summary {
    std::size_t n = 0;
    double mean = 0;
    std::optional<double> sd;
    std::optional<std::pair<double, double>> ci;
};

Summary summarize(const std::vector<double>& v) {
    Summary s;
    s.n = v.size();
    if (v.empty()) return s;
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() >= 2) {
        double ss = 0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
        s.ci = bootstrap_ci(v, 1000, 0.95, 0);
    }
    return s;
}

std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

std::string cell(const Summary& s) {
    if (s.n == 0) return "-";
    std::string out = fmt4(s.mean);
    if (s.sd) out += " ± " + fmt4(*s.sd);
    if (s.ci) out += " [" + fmt4(s.ci->first) + ", " + fmt4(s.ci->second) + "]";
    return out;
}

json summary_json(const Summary& s) {
    json j{{"n", s.n}, {"mean", s.mean}};
    j["std"] = s.sd ? json(*s.sd) : json(nullptr);
    j["ci95"] = s.ci ? json::array({s.ci->first, s.ci->second}) : json(nullptr);
    return j;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::string& what) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            if constexpr (std::is_same_v<T, std::string>)
                out.push_back(item);
            else
                out.push_back(static_cast<T>(std::stoll(item)));
        } catch (const std::exception&) {
            throw UsageError("bad " + what + " list '" + text + "'");
        }
    }
    if (out.empty()) throw UsageError("empty " + what + " list");
    return out;
}

int cmd_train(const std::string& config_file, const std::vector<std::string>& sets, const CLI::App& sub,
              const std::map<std::string, std::string>& flags, bool quiet) {
    auto pairs = gather_pairs(config_file, sets);
    for (const auto& [k, v] : flags)
        if (!v.empty()) pairs.emplace_back(k, v);
    if (!has_key(pairs, "env")) throw UsageError("--env is required (or env in the config file)");
    RunConfig cfg = build_config(pairs);
    if (cfg.algo == Algorithm::Cpm && sub.count("--budget") > 0)
        throw UsageError("cpm is budget-unlimited; --budget cannot be combined with --algo cpm");
    const Logger log = quiet ? Logger{} : Logger([](const std::string& m) { std::cerr << m << '\n'; });
    const TrainOutcome out = train_run(cfg, log);
    std::cout << out.report_json.dump(2) << '\n';
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& env_name, int episodes, std::uint64_t eval_seed,
             const std::string& out_path) {
    std::optional<EnvKind> expect;
    if (!env_name.empty()) expect = parse_env_kind(env_name);
    const EvalReport r = eval_checkpoint(checkpoint, expect, episodes, eval_seed);
    const std::string text = to_json(r).dump(2) + "\n";
    write_file(out_path.empty() ? checkpoint + "/eval.json" : out_path, text);
    std::cout << text;
    return 0;
}

int cmd_oracle_error(const std::string& checkpoint, const std::string& oracle, int samples, std::uint64_t seed,
                     const std::vector<std::string>& sets, const std::string& out_path) {
    const auto meta = load_checkpoint(checkpoint).second;
    std::vector<std::pair<std::string, std::string>> pairs{
        {"env", to_string(meta.env)}, {"oracle", oracle}, {"seed", std::to_string(seed)}};
    for (const auto& [k, v] : gather_pairs("", sets)) pairs.emplace_back(k, v);
    const RunConfig cfg = build_config(pairs);
    const json r = oracle_error_run(checkpoint, cfg, samples, [](const std::string& m) { std::cerr << m << '\n'; });
    const std::string text = r.dump(2) + "\n";
    write_file(out_path.empty() ? checkpoint + "/oracle_error.json" : out_path, text);
    std::cout << text;
    return 0;
}

int cmd_serve(int port, const std::string& run_dir, const std::string& ui_dir) {
    std::string state;
    if (!run_dir.empty()) {
        fs::create_directories(run_dir);
        state = run_dir + "/annotations.json";
    }
    AnnotationService service(state);
    if (!ui_dir.empty()) service.set_static_dir(ui_dir);
    const int bound = service.start("0.0.0.0", port);
    std::cerr << "serving /api/v1 on port " << bound << " (" << service.pending_count() << " pending)\n";
    g_stop = false;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    service.stop();
    std::cerr << "stopped; pending state saved\n";
    return 0;
}

int cmd_sweep(const std::string& config_file, const std::vector<std::string>& sets,
              const std::map<std::string, std::string>& flags, const std::string& seeds_text,
              const std::string& budgets_text, const std::string& algos_text, std::string root, int jobs,
              bool quiet) {
    auto pairs = gather_pairs(config_file, sets);
    for (const auto& [k, v] : flags)
        if (!v.empty()) pairs.emplace_back(k, v);
    if (!has_key(pairs, "env")) throw UsageError("--env is required (or env in the config file)");
    const RunConfig base = build_config(pairs);
    const auto seeds = parse_list<std::uint64_t>(seeds_text, "seed");
    const auto algos = algos_text.empty() ? std::vector<std::string>{to_string(base.algo)}
                                          : parse_list<std::string>(algos_text, "algorithm");
    const auto budgets = budgets_text.empty() ? std::vector<long>{base.lic.budget}
                                              : parse_list<long>(budgets_text, "budget");
    if (root.empty()) root = "sweeps/" + to_string(base.env);
    fs::create_directories(root);
    for (const auto& a : algos) parse_algorithm(a);

    struct Cell {
        std::string algo;
        long budget;
        std::vector<double> reward, error;
        std::vector<std::string> failures;
    };
    std::vector<Cell> cells;
    std::mutex mu;
    for (const auto& a : algos)
        for (long b : budgets) {
            Cell c{a, b, {}, {}, {}};
            std::vector<std::function<void()>> tasks;
            for (auto seed : seeds) {
                RunConfig cfg = base;
                cfg.algo = parse_algorithm(a);
                cfg.lic.budget = b;
                cfg.seed = seed;
                cfg.out = root + "/" + a + (cfg.algo == Algorithm::Cpm ? "" : "-B" + std::to_string(b)) + "/seed" +
                          std::to_string(seed);
                tasks.push_back([cfg, &c, &mu, quiet] {
                    try {
                        const TrainOutcome o = train_run(cfg);
                        std::lock_guard lock(mu);
                        c.reward.push_back(o.report.reward_ratio);
                        c.error.push_back(o.report.concept_error);
                        if (!quiet)
                            std::cerr << cfg.out << ": reward ratio " << fmt4(o.report.reward_ratio)
                                      << ", concept error " << fmt4(o.report.concept_error) << '\n';
                    } catch (const std::exception& e) {
                        std::lock_guard lock(mu);
                        c.failures.push_back("seed " + std::to_string(cfg.seed) + ": " + e.what());
                        std::cerr << cfg.out << ": FAILED: " << e.what() << '\n';
                    }
                });
            }
            for (std::size_t i = 0; i < tasks.size(); i += static_cast<std::size_t>(jobs)) {
                std::vector<std::future<void>> running;
                for (std::size_t j = i; j < std::min(tasks.size(), i + static_cast<std::size_t>(jobs)); ++j)
                    running.push_back(std::async(std::launch::async, tasks[j]));
                for (auto& f : running) f.get();
            }
            cells.push_back(std::move(c));
        }

    std::ostringstream md;
    md << "| env | algorithm | B | seeds | reward ratio | concept error | failures |\n";
    md << "|---|---|---|---|---|---|---|\n";
    json rows = json::array();
    for (const auto& c : cells) {
        const Summary r = summarize(c.reward), e = summarize(c.error);
        const bool cpm = c.algo == "cpm";
        md << "| " << to_string(base.env) << " | " << c.algo << " | " << (cpm ? "inf" : std::to_string(c.budget))
           << " | " << c.reward.size() << " | " << cell(r) << " | " << cell(e) << " | " << c.failures.size()
           << " |\n";
        rows.push_back({{"env", to_string(base.env)},
                        {"algo", c.algo},
                        {"budget", cpm ? json(nullptr) : json(c.budget)},
                        {"reward_ratio", summary_json(r)},
                        {"concept_error", summary_json(e)},
                        {"failures", c.failures}});
    }
    write_file(root + "/sweep.md", md.str());
    write_file(root + "/sweep.json", json{{"seeds", seeds}, {"rows", rows}}.dump(2) + "\n");
    std::cout << md.str();
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"Budget-constrained concept-bottleneck reinforcement learning"};
    app.require_subcommand(1);

    std::string config_file, env_name, algo, oracle, out, timesteps, budget, iterations, seed;
    std::vector<std::string> sets;
    bool quiet = false;
    auto add_run_options = [&](CLI::App* sub) {
        sub->add_option("--config", config_file, "Flat key = value config file");
        sub->add_option("--env", env_name, "cartpole | doorkey | dynobs");
        sub->add_option("--algo", algo,
                        "licorice | licorice-it | licorice-de | licorice-ac | sequential-q | disagreement-q | "
                        "random-q | cpm");
        sub->add_option("--budget", budget, "Label budget B");
        sub->add_option("--iterations", iterations, "Iterations M");
        sub->add_option("--oracle", oracle, "env | noisy:<eps>[:<sigma>] | human:<port> | vlm:<base url>");
        sub->add_option("--timesteps", timesteps, "Total RL timesteps");
        sub->add_option("--set", sets, "Override any config key: key=value (repeatable)");
        sub->add_flag("--quiet", quiet, "Only print the final report");
    };

    auto* train = app.add_subcommand("train", "Train one run and write its run directory");
    add_run_options(train);
    train->add_option("--seed", seed, "Run seed");
    train->add_option("--out", out, "Run directory");

    std::string checkpoint, eval_out;
    int episodes = 100;
    std::uint64_t eval_seed = 42;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint directory");
    eval->add_option("--checkpoint", checkpoint, "Checkpoint directory (contains meta.json)")->required();
    eval->add_option("--env", env_name, "Expected environment; a mismatch is an error");
    eval->add_option("--episodes", episodes, "Evaluation episodes")->check(CLI::PositiveNumber);
    eval->add_option("--eval-seed", eval_seed, "Seed of episode 0");
    eval->add_option("--out", eval_out, "Report path (default <checkpoint>/eval.json)");

    int port = 8080;
    std::string run_dir, ui_dir;
    auto* serve = app.add_subcommand("serve-annotator", "Serve the annotation protocol for a run directory");
    serve->add_option("--port", port, "TCP port")->check(CLI::Range(0, 65535));
    serve->add_option("--run-dir", run_dir, "Run directory holding annotations.json");
    serve->add_option("--ui-dir", ui_dir, "Built annotation console bundle to serve at /");

    std::string oe_oracle = "env", oe_out;
    int oe_samples = 50;
    std::uint64_t oe_seed = 0;
    auto* oerr = app.add_subcommand("oracle-error", "Label sampled rollout states with an oracle and score them");
    oerr->add_option("--checkpoint", checkpoint, "Checkpoint whose policy generates the rollouts")->required();
    oerr->add_option("--oracle", oe_oracle, "env | noisy:<eps>[:<sigma>] | human:<port> | vlm:<base url>");
    oerr->add_option("--samples", oe_samples, "Number of sampled states")->check(CLI::PositiveNumber);
    oerr->add_option("--seed", oe_seed, "Sampling seed");
    oerr->add_option("--set", sets, "Override a config key such as vlm_model or acceptance");
    oerr->add_option("--out", oe_out, "Report path (default <checkpoint>/oracle_error.json)");

    std::string seeds_text = "123,456,789,1011,1213", budgets_text, algos_text, sweep_root;
    int jobs = 1;
    auto* sweep = app.add_subcommand("sweep", "Run seeds x budgets x algorithms and tabulate");
    add_run_options(sweep);
    sweep->add_option("--seeds", seeds_text, "Comma-separated seeds");
    sweep->add_option("--budgets", budgets_text, "Comma-separated budgets (default: the config budget)");
    sweep->add_option("--algos", algos_text, "Comma-separated algorithms (default: --algo)");
    sweep->add_option("--out", sweep_root, "Sweep root directory");
    sweep->add_option("--jobs", jobs, "Runs in parallel")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n" << app.help();
        return 2;
    }

    std::map<std::string, std::string> flags{{"env", env_name},   {"algo", algo},          {"budget", budget},
                                             {"iterations", iterations}, {"oracle", oracle}, {"timesteps", timesteps},
                                             {"seed", seed},      {"out", out}};
    try {
        try {
            if (*train) return cmd_train(config_file, sets, *train, flags, quiet);
            if (*eval) return cmd_eval(checkpoint, env_name, episodes, eval_seed, eval_out);
            if (*serve) return cmd_serve(port, run_dir, ui_dir);
            if (*oerr) return cmd_oracle_error(checkpoint, oe_oracle, oe_samples, oe_seed, sets, oe_out);
            if (*sweep) {
                flags.erase("seed");
                flags.erase("out");
                return cmd_sweep(config_file, sets, flags, seeds_text, budgets_text, algos_text, sweep_root, jobs,
                                 quiet);
            }
        } catch (const UsageError&) {
            throw;
        } catch (const Error& e) {
            // Config mistakes are usage errors; everything else is a runtime failure.
            const std::string what = e.what();
            if (what.rfind("config", 0) == 0 || what.rfind("unknown ", 0) == 0 || what.rfind("bad oracle", 0) == 0)
                throw UsageError(what);
            throw;
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace licorice
