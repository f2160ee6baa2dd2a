#include "licorice/licorice.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace licorice {

namespace fs = std::filesystem;
using json = nlohmann::json;

Algorithm parse_algorithm(std::string_view name) {
    if (name == "licorice") return Algorithm::Licorice;
    if (name == "licorice-it") return Algorithm::LicoriceIT;
    if (name == "licorice-de") return Algorithm::LicoriceDE;
    if (name == "licorice-ac") return Algorithm::LicoriceAC;
    if (name == "sequential-q") return Algorithm::SequentialQ;
    if (name == "disagreement-q") return Algorithm::DisagreementQ;
    if (name == "random-q") return Algorithm::RandomQ;
    if (name == "cpm") return Algorithm::Cpm;
    throw Error("unknown algorithm '" + std::string(name) +
                "' (expected licorice, licorice-it, licorice-de, licorice-ac, sequential-q, disagreement-q, "
                "random-q or cpm)");
}

std::string to_string(Algorithm a) {
    switch (a) {
        case Algorithm::Licorice: return "licorice";
        case Algorithm::LicoriceIT: return "licorice-it";
        case Algorithm::LicoriceDE: return "licorice-de";
        case Algorithm::LicoriceAC: return "licorice-ac";
        case Algorithm::SequentialQ: return "sequential-q";
        case Algorithm::DisagreementQ: return "disagreement-q";
        case Algorithm::RandomQ: return "random-q";
        case Algorithm::Cpm: return "cpm";
    }
    return "?";
}

// --- ledger ----------------------------------------------------------------------

BudgetLedger::BudgetLedger(long total, int iterations) : total_(total) {
    if (total < 0) throw Error("budget must be >= 0");
    if (iterations < 1) throw Error("iterations must be >= 1");
    const long base = total / iterations, extra = total % iterations;
    for (int m = 0; m < iterations; ++m) allocation_.push_back(base + (m < extra ? 1 : 0));
    spent_per_.assign(static_cast<std::size_t>(iterations), 0);
}

long BudgetLedger::allocation(int iteration) const {
    if (iteration < 1 || iteration > iterations()) throw Error("ledger: iteration out of range");
    return allocation_[static_cast<std::size_t>(iteration - 1)];
}

long BudgetLedger::spent_in(int iteration) const {
    if (iteration < 1 || iteration > iterations()) throw Error("ledger: iteration out of range");
    return spent_per_[static_cast<std::size_t>(iteration - 1)];
}

void BudgetLedger::charge(int iteration, long n) {
    if (n < 0) throw Error("ledger: negative charge");
    if (spent_in(iteration) + n > allocation(iteration) || spent_ + n > total_)
        throw Error("ledger: charge of " + std::to_string(n) + " would exceed the budget");
    spent_per_[static_cast<std::size_t>(iteration - 1)] += n;
    spent_ += n;
}

json BudgetLedger::to_json() const {
    return {{"total", total_}, {"allocation", allocation_}, {"spent", spent_}, {"spent_per_iteration", spent_per_}};
}

// --- config ----------------------------------------------------------------------

void LicoriceConfig::validate() const {
    if (budget < 0) throw Error("budget must be >= 0");
    if (iterations < 1) throw Error("iterations (M) must be >= 1");
    if (!(acceptance > 0 && acceptance <= 1)) throw Error("acceptance probability p must be in (0, 1]");
    if (!(pool_ratio >= 1)) throw Error("pool ratio tau must be >= 1");
    if (query_batch < 1) throw Error("query batch b must be >= 1");
    if (active && ensemble < 2) throw Error("ensemble size N must be >= 2");
    if (!(val_fraction >= 0 && val_fraction < 1)) throw Error("val_fraction must be in [0, 1)");
    if (timesteps < 0) throw Error("timesteps must be >= 0");
    if (patience_first < 1 || patience_last < patience_first) throw Error("patience schedule must satisfy 1 <= first <= last");
    if (random_q_retrain_every < 1) throw Error("random-q retrain cadence must be >= 1");
    if (cpm_lambda < 0) throw Error("cpm lambda must be >= 0");
    EarlyStopConfig stop = concept_training;
    stop.patience = 1;  // set per iteration from the schedule
    stop.validate();
    ppo.validate();
}

LicoriceConfig LicoriceConfig::defaults(EnvKind kind) {
    LicoriceConfig c;
    switch (kind) {
        case EnvKind::CartPole:
            c.budget = 500;
            c.iterations = 4;
            c.timesteps = 300000;
            c.concept_training.max_epochs = 100;
            c.concept_training.early_stopping = false;
            break;
        case EnvKind::DoorKey:
            c.budget = 300;
            c.iterations = 2;
            c.timesteps = 400000;
            c.concept_training.max_epochs = 50;
            c.concept_training.lr = 3e-3;
            break;
        case EnvKind::DynamicObstacles:
            c.budget = 300;
            c.iterations = 2;
            c.timesteps = 300000;
            c.concept_training.max_epochs = 50;
            c.concept_training.lr = 3e-3;
            break;
    }
    c.concept_training.minibatch = 32;
    return c;
}

LicoriceConfig effective_config(Algorithm algo, LicoriceConfig c) {
    switch (algo) {
        case Algorithm::Licorice: break;
        case Algorithm::LicoriceIT: c.iterations = 1; c.iterative = false; break;
        case Algorithm::LicoriceDE: c.acceptance = 1.0; c.decorrelate = false; break;
        case Algorithm::LicoriceAC: c.active = false; break;
        case Algorithm::SequentialQ:
            // The first B states of the initial policy, one training of g, one PPO phase.
            c.iterations = 1;
            c.iterative = false;
            c.acceptance = 1.0;
            c.decorrelate = false;
            c.active = false;
            c.pool_ratio = 1;
            break;
        case Algorithm::DisagreementQ:
            c.iterations = 1;
            c.iterative = false;
            c.acceptance = 1.0;
            c.decorrelate = false;
            break;
        case Algorithm::RandomQ:
        case Algorithm::Cpm: c.iterations = 1; break;
    }
    if (!c.decorrelate) c.acceptance = 1.0;
    if (!c.iterative) c.iterations = 1;
    return c;
}

std::vector<long> split_timesteps(long total, int phases, int num_envs) {
    if (phases < 1 || num_envs < 1) throw Error("split_timesteps: bad arguments");
    if (total % num_envs != 0)
        throw Error("timesteps (" + std::to_string(total) + ") must be a multiple of num_envs (" +
                    std::to_string(num_envs) + ")");
    const long share = total / phases / num_envs * num_envs;
    std::vector<long> out(static_cast<std::size_t>(phases), share);
    out.back() = total - share * (phases - 1);
    return out;
}

// --- pool --------------------------------------------------------------------------

Pool collect_pool(const Policy& policy, const Environment& env, double p, std::size_t target, Rng& rng,
                  long step_cap) {
    if (!(p > 0 && p <= 1)) throw Error("collect_pool: p must be in (0, 1]");
    if (target < 1) throw Error("collect_pool: target must be >= 1");
    Pool pool;
    pool.entries.reserve(target);
    auto [state, obs] = env.reset(rng());
    while (pool.entries.size() < target) {
        if (pool.env_steps >= step_cap)
            throw Error("collect_pool: " + std::to_string(step_cap) + " environment steps without filling the pool");
        if (p >= 1 || uniform01(rng) < p) pool.entries.push_back({obs, state, pool.env_steps});
        const PolicyOutput<float> out = policy.forward(observation_matrix<float>({obs}));
        const int action = sample_action<float>(out.action_probs.col(0), rng).first;
        StepResult r = env.step(state, action);
        ++pool.env_steps;
        if (r.terminated || r.truncated) {
            std::tie(state, obs) = env.reset(rng());
        } else {
            obs = std::move(r.observation);
        }
    }
    return pool;
}

// --- checkpoints ---------------------------------------------------------------

namespace {

const char* encoding_name(ConceptEncoding e) { return e == ConceptEncoding::OneHot ? "onehot" : "normalized"; }

}  // namespace

void save_checkpoint(const std::string& dir, const Policy& policy, const Checkpoint& meta) {
    fs::create_directories(dir);
    nn::save_params(policy.g.params, dir + "/g.params");
    nn::save_params(policy.fv, dir + "/fv.params");
    json j{{"env", to_string(meta.env)},
           {"projection_seed", meta.projection_seed},
           {"schema_hash", policy.schema().hash()},
           {"concept_encoding", encoding_name(meta.arch.encoding)},
           {"extractor_hidden", meta.arch.extractor_hidden},
           {"action_hidden", meta.arch.action_hidden},
           {"value_hidden", meta.arch.value_hidden},
           {"freeze", meta.freeze == FreezeMode::GFrozen ? "g-frozen" : "g-trainable"},
           {"config", meta.config}};
    std::ofstream os(dir + "/meta.json");
    if (!os) throw Error("cannot write " + dir + "/meta.json");
    os << j.dump(2) << '\n';
}

std::pair<Policy, Checkpoint> load_checkpoint(const std::string& dir) {
    std::ifstream is(dir + "/meta.json");
    if (!is) throw Error("no checkpoint at " + dir + " (missing meta.json)");
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw Error("corrupt checkpoint meta " + dir + "/meta.json: " + e.what());
    }
    Checkpoint c;
    c.env = parse_env_kind(j.at("env").get<std::string>());
    c.projection_seed = j.at("projection_seed").get<std::uint64_t>();
    c.arch.encoding =
        j.at("concept_encoding").get<std::string>() == "onehot" ? ConceptEncoding::OneHot : ConceptEncoding::Normalized;
    c.arch.extractor_hidden = j.at("extractor_hidden").get<std::vector<int>>();
    c.arch.action_hidden = j.at("action_hidden").get<std::vector<int>>();
    c.arch.value_hidden = j.at("value_hidden").get<std::vector<int>>();
    c.freeze = j.at("freeze").get<std::string>() == "g-frozen" ? FreezeMode::GFrozen : FreezeMode::GTrainable;
    c.config = j.value("config", json::object());
    const Environment env(c.env, c.projection_seed);
    if (j.at("schema_hash").get<std::uint64_t>() != env.schema().hash())
        throw Error("checkpoint " + dir + ": concept schema does not match " + to_string(c.env));
    Policy policy(env.schema(), env.observation_dim(), env.num_actions(), c.arch);
    nn::load_params(policy.g.params, dir + "/g.params");
    nn::load_params(policy.fv, dir + "/fv.params");
    policy.set_freeze(c.freeze);
    return {std::move(policy), c};
}

// --- runner ------------------------------------------------------------------------

namespace {

std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::uint64_t g_hash(const Policy& p) { return fnv1a(nn::serialize_params(p.g.params)); }

class Runner {
public:
    Runner(const LicoriceConfig& cfg, const Environment& env, Oracle& oracle, std::uint64_t seed,
           const RunContext& ctx, long budget, int iterations)
        : cfg_(cfg), env_(env), oracle_(oracle), seed_(seed), ctx_(ctx), split_rng_(derive_seed(seed, 0x5971)) {
        res.policy = Policy(env.schema(), env.observation_dim(), env.num_actions(), cfg.arch);
        Rng init_rng(derive_seed(seed, 0x1417));
        res.policy.init(init_rng);
        res.dataset = LabelDataset(env.schema());
        staging = LabelDataset(env.schema());
        res.ledger = BudgetLedger(budget, iterations);
        if (!ctx_.run_dir.empty()) {
            fs::create_directories(ctx_.run_dir);
            metrics_.open(ctx_.run_dir + "/metrics.csv");
            if (!metrics_) throw Error("cannot write " + ctx_.run_dir + "/metrics.csv");
            metrics_ << "step,phase,mean_rollout_reward,concept_val_loss,budget_spent\n";
        }
    }

    RunResult res;

    void log(const std::string& msg) const {
        if (ctx_.log) ctx_.log(msg);
    }

    void emit(MetricsRow row) {
        row.budget_spent = charge_ledger_ ? res.ledger.spent() : res.counters.oracle_queries;
        if (metrics_.is_open()) {
            metrics_ << row.step << ',' << row.phase << ','
                     << (row.mean_rollout_reward ? fmt_double(*row.mean_rollout_reward) : "") << ','
                     << (row.concept_val_loss ? fmt_double(*row.concept_val_loss) : "") << ',' << row.budget_spent
                     << '\n';
            metrics_.flush();
        }
        res.metrics.push_back(std::move(row));
    }

    /// Labels of the current iteration, not yet aggregated into res.dataset.
    LabelDataset staging;

    void aggregate() {
        res.dataset.merge(staging);
        staging = LabelDataset(res.dataset.schema());
    }

    void persist() const {
        if (ctx_.run_dir.empty()) return;
        LabelDataset all = res.dataset;
        all.merge(staging);
        all.save_jsonl(ctx_.run_dir + "/labels.jsonl");
        std::ofstream os(ctx_.run_dir + "/ledger.json");
        json j = res.ledger.to_json();
        j["oracle_queries"] = res.counters.oracle_queries;
        os << j.dump(2) << '\n';
    }

    /// Queries the oracle for the given states, charging the ledger.
    std::vector<LabeledExample> query(const std::vector<const PoolEntry*>& entries, int iteration) {
        std::vector<LabelQuery> batch;
        for (const auto* e : entries) {
            LabelQuery q;
            q.id = next_id_++;
            q.env = &env_;
            q.state = e->state;
            q.observation = e->observation;
            batch.push_back(std::move(q));
        }
        std::vector<LabelResponse> responses;
        std::optional<PartialLabelError> partial;
        try {
            responses = oracle_.label(batch);
        } catch (PartialLabelError& e) {
            responses = e.completed;
            partial = e;
        }
        std::vector<LabeledExample> out;
        for (const auto& r : responses) {
            const auto it = std::find_if(batch.begin(), batch.end(), [&](const LabelQuery& q) { return q.id == r.id; });
            if (it == batch.end()) throw OracleError("oracle answered unknown query " + std::to_string(r.id));
            if (auto why = env_.schema().check(r.concepts))
                throw OracleError("oracle " + oracle_.name() + " returned an invalid label: " + *why);
            LabeledExample ex;
            ex.observation = it->observation;
            ex.concepts = r.concepts;
            ex.meta = {iteration, r.annotator, now_ms()};
            out.push_back(std::move(ex));
            res.queried_ids.push_back(r.id);
            res.queried_observations.push_back(it->observation);
        }
        res.counters.oracle_queries += static_cast<long>(out.size());
        if (charge_ledger_) res.ledger.charge(iteration, static_cast<long>(out.size()));
        if (ctx_.on_progress) ctx_.on_progress(iteration, res.ledger);
        if (partial) {
            if (!out.empty()) staging.split_and_add(out, cfg_.val_fraction, split_rng_);
            persist();
            throw *partial;
        }
        return out;
    }

    EarlyStopConfig stop_config(int iteration, int iterations) const {
        EarlyStopConfig c = cfg_.concept_training;
        c.patience = std::min(c.max_epochs, patience_for_iteration(iteration, iterations, cfg_.patience_first,
                                                                   cfg_.patience_last));
        return c;
    }

    void train_g(int iteration, int iterations, const std::string& phase) {
        if (res.dataset.train().empty()) {
            log("no labels yet; g keeps its initial parameters");
            return;
        }
        Policy& p = res.policy;
        p.set_freeze(FreezeMode::GTrainable);
        Rng rng(derive_seed(seed_, 0x9000 + static_cast<std::uint64_t>(res.counters.concept_trainings)));
        const ConceptTrainResult tr = train_concept_net(p.g, res.dataset, stop_config(iteration, iterations), true, rng);
        p.set_freeze(FreezeMode::GFrozen);
        ++res.counters.concept_trainings;
        MetricsRow row;
        row.step = trainer_ ? trainer_->timesteps() : 0;
        row.phase = phase;
        row.concept_val_loss = tr.best_val_loss;
        emit(row);
        log(phase + ": " + std::to_string(res.dataset.train().size()) + " train / " +
            std::to_string(res.dataset.val().size()) + " val labels, best epoch " + std::to_string(tr.best_epoch) +
            ", val loss " + fmt_double(tr.best_val_loss));
    }

    PpoTrainer& trainer(const PpoConfig& ppo) {
        if (!trainer_) trainer_.emplace(res.policy, env_, ppo, derive_seed(seed_, 0x7770));
        return *trainer_;
    }

    /// One RL phase. With check_freeze, g's bytes are compared after every update.
    void ppo_phase(const PpoConfig& ppo, long steps, const std::string& phase, bool check_freeze,
                   const StateLabeler& labeler = {}, const std::function<void()>& after_update = {}) {
        PpoTrainer& t = trainer(ppo);
        const std::uint64_t before = g_hash(res.policy);
        res.counters.g_hash_before.push_back(before);
        t.learn(
            steps,
            [&](const PpoMetricsRow& r) {
                if (check_freeze && g_hash(res.policy) != before) res.counters.g_constant_within_phases = false;
                MetricsRow row;
                row.step = r.step;
                row.phase = phase;
                if (r.has_reward) row.mean_rollout_reward = r.mean_rollout_reward;
                emit(row);
                if (ctx_.on_ppo_update) ctx_.on_ppo_update(res.policy, r);
                if (after_update) after_update();
            },
            labeler);
        res.counters.g_hash_after.push_back(g_hash(res.policy));
        ++res.counters.ppo_phases;
        res.counters.rl_timesteps = t.timesteps();
        log(phase + ": " + std::to_string(t.timesteps()) + " RL steps so far");
    }

    void checkpoint(const std::string& name) const {
        if (ctx_.run_dir.empty()) return;
        Checkpoint c;
        c.env = env_.kind();
        c.projection_seed = env_.projection_seed();
        c.arch = cfg_.arch;
        c.freeze = res.policy.freeze_mode();
        save_checkpoint(ctx_.run_dir + "/checkpoints/" + name, res.policy, c);
    }

    void set_charge_ledger(bool on) { charge_ledger_ = on; }
    Rng& split_rng() { return split_rng_; }
    std::uint64_t next_id() { return next_id_++; }

private:
    const LicoriceConfig& cfg_;
    const Environment& env_;
    Oracle& oracle_;
    std::uint64_t seed_;
    const RunContext& ctx_;
    Rng split_rng_;
    std::uint64_t next_id_ = 1;
    bool charge_ledger_ = true;
    std::ofstream metrics_;
    std::optional<PpoTrainer> trainer_;
};

RunResult run_random_q(const LicoriceConfig& cfg, const Environment& env, Oracle& oracle, std::uint64_t seed,
                       const RunContext& ctx) {
    Runner run(cfg, env, oracle, seed, ctx, cfg.budget, 1);
    run.res.policy.set_freeze(FreezeMode::GFrozen);
    const double q = cfg.timesteps > 0 ? std::min(1.0, static_cast<double>(cfg.budget) / cfg.timesteps) : 0.0;
    Rng label_rng(derive_seed(seed, 0x4a4d));
    std::vector<LabeledExample> fresh;
    std::vector<PoolEntry> scratch;
    const StateLabeler labeler = [&](const Environment&, std::span<const EnvState> states) {
        scratch.clear();
        for (const auto& s : states) {
            const bool take = uniform01(label_rng) < q;
            if (take && run.res.ledger.remaining() > static_cast<long>(scratch.size()))
                scratch.push_back({env.encode(s), s, 0});
        }
        if (!scratch.empty()) {
            std::vector<const PoolEntry*> ptrs;
            for (const auto& e : scratch) ptrs.push_back(&e);
            auto got = run.query(ptrs, 1);
            fresh.insert(fresh.end(), std::make_move_iterator(got.begin()), std::make_move_iterator(got.end()));
        }
        return std::vector<ConceptVector>{};
    };
    const auto retrain = [&] {
        if (static_cast<int>(fresh.size()) < cfg.random_q_retrain_every) return;
        run.staging.split_and_add(std::move(fresh), cfg.val_fraction, run.split_rng());
        fresh.clear();
        run.aggregate();
        run.persist();
        run.train_g(1, 1, "concept/1");
    };
    run.ppo_phase(cfg.ppo, cfg.timesteps, "ppo/1", false, labeler, retrain);
    if (!fresh.empty()) run.staging.split_and_add(std::move(fresh), cfg.val_fraction, run.split_rng());
    run.aggregate();
    run.persist();
    run.checkpoint("iter_1");
    return std::move(run.res);
}

RunResult run_cpm(const LicoriceConfig& cfg, const Environment& env, Oracle& oracle, std::uint64_t seed,
                  const RunContext& ctx) {
    Runner run(cfg, env, oracle, seed, ctx, 0, 1);
    run.set_charge_ledger(false);
    run.res.policy.set_freeze(FreezeMode::GTrainable);
    PpoConfig ppo = cfg.ppo;
    ppo.concept_coef = cfg.cpm_lambda;
    ppo.concept_input = ConceptInput::Predicted;
    std::vector<PoolEntry> scratch;
    const StateLabeler labeler = [&](const Environment&, std::span<const EnvState> states) {
        scratch.clear();
        for (const auto& s : states) scratch.push_back({env.encode(s), s, 0});
        std::vector<const PoolEntry*> ptrs;
        for (const auto& e : scratch) ptrs.push_back(&e);
        std::vector<ConceptVector> labels;
        for (auto& ex : run.query(ptrs, 1)) labels.push_back(std::move(ex.concepts));
        return labels;
    };
    run.ppo_phase(ppo, cfg.timesteps, "ppo/1", false, labeler);
    run.persist();
    run.checkpoint("iter_1");
    return std::move(run.res);
}

}  // namespace

RunResult run_licorice(const LicoriceConfig& cfg, const Environment& env, Oracle& oracle, std::uint64_t seed,
                       const RunContext& ctx) {
    cfg.validate();
    const int M = cfg.iterations;
    Runner run(cfg, env, oracle, seed, ctx, cfg.budget, M);
    Policy& policy = run.res.policy;
    policy.set_freeze(FreezeMode::GFrozen);
    const std::vector<long> phase_steps = split_timesteps(cfg.timesteps, M, cfg.ppo.num_envs);
    ConceptEnsemble ensemble(env.schema(), env.observation_dim(), cfg.arch.extractor_hidden,
                             cfg.active ? cfg.ensemble : 2);

    for (int m = 1; m <= M; ++m) {
        const long b_m = run.res.ledger.allocation(m);
        const std::string tag = std::to_string(m);
        if (b_m > 0) {
            const auto target = static_cast<std::size_t>(std::ceil(cfg.pool_ratio * static_cast<double>(b_m)));
            Rng pool_rng(derive_seed(seed, 0x9001 + static_cast<std::uint64_t>(m)));
            const Pool pool = collect_pool(policy, env, cfg.acceptance, target, pool_rng, cfg.pool_step_cap);
            run.res.counters.pool_env_steps += pool.env_steps;
            for (const auto& e : pool.entries) run.res.counters.accepted_steps.push_back(e.step);
            run.log("iteration " + tag + ": pool of " + std::to_string(pool.entries.size()) + " states from " +
                    std::to_string(pool.env_steps) + " steps");

            std::vector<std::size_t> remaining(pool.entries.size());
            std::iota(remaining.begin(), remaining.end(), std::size_t{0});
            int round = 0;
            while (run.res.ledger.remaining_in(m) > 0) {
                if (remaining.empty()) {
                    run.log("warning: pool exhausted with " + std::to_string(run.res.ledger.remaining_in(m)) +
                            " queries unspent in iteration " + tag);
                    break;
                }
                const auto want = static_cast<std::size_t>(
                    std::min<long>(cfg.query_batch, run.res.ledger.remaining_in(m)));
                std::vector<std::size_t> chosen;  // positions in `remaining`
                if (cfg.active) {
                    const std::uint64_t es = derive_seed(seed, 0xe000 + 1000 * static_cast<std::uint64_t>(m) +
                                                                   static_cast<std::uint64_t>(round));
                    LabelDataset combined = run.res.dataset;
                    combined.merge(run.staging);
                    if (combined.train().empty()) {
                        ensemble.init(es);
                    } else {
                        ensemble.train(combined, run.stop_config(m, M), es);
                        run.res.counters.ensemble_trainings += static_cast<long>(ensemble.size());
                    }
                    std::vector<Observation> obs;
                    for (auto i : remaining) obs.push_back(pool.entries[i].observation);
                    const std::vector<double> scores = ensemble.score(observation_matrix<float>(obs));
                    chosen = select_batch(scores, want);
                    ++run.res.counters.acquisition_rounds;
                } else {
                    for (std::size_t i = 0; i < std::min(want, remaining.size()); ++i) chosen.push_back(i);
                }
                std::vector<const PoolEntry*> picked;
                for (auto c : chosen) picked.push_back(&pool.entries[remaining[c]]);
                std::vector<LabeledExample> got = run.query(picked, m);
                run.staging.split_and_add(std::move(got), cfg.val_fraction, run.split_rng());
                std::sort(chosen.begin(), chosen.end(), std::greater<>());
                for (auto c : chosen) remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(c));
                ++round;
                run.persist();
            }
            run.aggregate();
            run.persist();
        }
        run.train_g(m, M, "concept/" + tag);
        run.ppo_phase(cfg.ppo, phase_steps[static_cast<std::size_t>(m - 1)], "ppo/" + tag, true);
        run.checkpoint("iter_" + tag);
    }
    return std::move(run.res);
}

RunResult run_algorithm(Algorithm algo, const LicoriceConfig& config, const Environment& env, Oracle& oracle,
                        std::uint64_t seed, const RunContext& ctx) {
    const LicoriceConfig cfg = effective_config(algo, config);
    cfg.validate();
    switch (algo) {
        case Algorithm::RandomQ: return run_random_q(cfg, env, oracle, seed, ctx);
        case Algorithm::Cpm: return run_cpm(cfg, env, oracle, seed, ctx);
        default: return run_licorice(cfg, env, oracle, seed, ctx);
    }
}

}  // namespace licorice
