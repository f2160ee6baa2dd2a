#pragma once

// The iterative label-efficient training loop, the comparison algorithms and
// the ablations, all built from the same pieces.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "licorice/concepts.hpp"
#include "licorice/envs.hpp"
#include "licorice/oracles.hpp"
#include "licorice/ppo.hpp"

namespace licorice {

enum class Algorithm { Licorice, LicoriceIT, LicoriceDE, LicoriceAC, SequentialQ, DisagreementQ, RandomQ, Cpm };

Algorithm parse_algorithm(std::string_view name);
std::string to_string(Algorithm a);

/// Spend accounting. Allocation B_m = floor(B / M), the remainder going one
/// each to the earliest iterations.
class BudgetLedger {
public:
    BudgetLedger(long total, int iterations);

    long total() const { return total_; }
    int iterations() const { return static_cast<int>(allocation_.size()); }
    long allocation(int iteration) const;  // 1-based
    const std::vector<long>& allocations() const { return allocation_; }
    long spent() const { return spent_; }
    long spent_in(int iteration) const;
    long remaining() const { return total_ - spent_; }
    long remaining_in(int iteration) const { return allocation(iteration) - spent_in(iteration); }

    /// Throws rather than overspend either the iteration or the total.
    void charge(int iteration, long n);

    nlohmann::json to_json() const;

private:
    long total_;
    std::vector<long> allocation_;
    std::vector<long> spent_per_;
    long spent_ = 0;
};

struct LicoriceConfig {
    long budget = 300;
    int iterations = 2;
    double acceptance = 0.05;
    double pool_ratio = 10;
    int query_batch = 20;
    int ensemble = 5;
    long timesteps = 150000;  // RL steps over the whole run, split equally across iterations
    bool iterative = true;
    bool decorrelate = true;
    bool active = true;
    double val_fraction = 0.2;
    EarlyStopConfig concept_training;  // patience is overwritten per iteration
    int patience_first = 10;
    int patience_last = 20;
    PpoConfig ppo;
    PolicyArch arch;
    double cpm_lambda = 0.5;
    int random_q_retrain_every = 50;
    long pool_step_cap = 10'000'000;

    void validate() const;
    static LicoriceConfig defaults(EnvKind kind);
};

struct PoolEntry {
    Observation observation;
    EnvState state;
    long step = 0;  // index of the visited state within the pool rollout
};

struct Pool {
    std::vector<PoolEntry> entries;
    long env_steps = 0;
};

/// Rolls out the policy (sampled actions, one environment, sequential
/// episodes) and accepts each visited state with probability p until target
/// states are held.
Pool collect_pool(const Policy& policy, const Environment& env, double p, std::size_t target, Rng& rng,
                  long step_cap = 10'000'000);

struct Instrumentation {
    long ensemble_trainings = 0;  // ensemble-member trainings
    long acquisition_rounds = 0;
    long concept_trainings = 0;   // trainings of g itself
    long ppo_phases = 0;
    long pool_env_steps = 0;
    long rl_timesteps = 0;
    long oracle_queries = 0;
    std::vector<long> accepted_steps;          // pool step indices of accepted states, all iterations
    std::vector<std::uint64_t> g_hash_before;  // per PPO phase: hash of g's bytes at phase start
    std::vector<std::uint64_t> g_hash_after;
    bool g_constant_within_phases = true;  // checked after every PPO update
};

struct MetricsRow {
    long step = 0;
    std::string phase;
    std::optional<double> mean_rollout_reward;
    std::optional<double> concept_val_loss;
    long budget_spent = 0;
};

/// Where and how a run reports. All fields optional.
struct RunContext {
    std::string run_dir;  // checkpoints/, metrics.csv, labels.jsonl, ledger.json
    std::function<void(const std::string&)> log;
    std::function<void(int iteration, const BudgetLedger&)> on_progress;
    /// Called after every PPO update with the live policy.
    std::function<void(const Policy&, const PpoMetricsRow&)> on_ppo_update;
};

struct RunResult {
    Policy policy;
    LabelDataset dataset;
    BudgetLedger ledger{0, 1};
    Instrumentation counters;
    std::vector<MetricsRow> metrics;
    std::vector<std::uint64_t> queried_ids;
    std::vector<Observation> queried_observations;
};

/// Algorithm `algo` with env, oracle and seed. Ablations and baselines use
/// config as a base and override the relevant switches.
RunResult run_algorithm(Algorithm algo, const LicoriceConfig& config, const Environment& env, Oracle& oracle,
                        std::uint64_t seed, const RunContext& ctx = {});

RunResult run_licorice(const LicoriceConfig& config, const Environment& env, Oracle& oracle, std::uint64_t seed,
                       const RunContext& ctx = {});

/// The config an algorithm actually runs with (ablation switches applied).
LicoriceConfig effective_config(Algorithm algo, LicoriceConfig config);

/// Phase lengths: equal shares of total, each a multiple of num_envs; the last
/// takes the remainder.
std::vector<long> split_timesteps(long total, int phases, int num_envs);

// --- checkpoints ---------------------------------------------------------------

struct Checkpoint {
    EnvKind env = EnvKind::DoorKey;
    std::uint64_t projection_seed = 0;
    PolicyArch arch;
    FreezeMode freeze = FreezeMode::GFrozen;
    nlohmann::json config;  // snapshot, informational
};

/// Writes <dir>/g.params, <dir>/fv.params and <dir>/meta.json.
void save_checkpoint(const std::string& dir, const Policy& policy, const Checkpoint& meta);
std::pair<Policy, Checkpoint> load_checkpoint(const std::string& dir);

}  // namespace licorice
