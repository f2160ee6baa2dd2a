#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "licorice/licorice.hpp"

using namespace licorice;

namespace {

LicoriceConfig tiny(EnvKind kind, long budget, int iterations) {
    LicoriceConfig c = LicoriceConfig::defaults(kind);
    c.budget = budget;
    c.iterations = iterations;
    c.timesteps = 256;
    c.ppo.horizon = 16;
    c.ppo.num_envs = 4;
    c.ppo.minibatch = 32;
    c.ppo.epochs = 2;
    c.arch.extractor_hidden = {16};
    c.arch.action_hidden = {8};
    c.arch.value_hidden = {8};
    c.ensemble = 3;
    c.concept_training.max_epochs = 3;
    c.patience_first = 2;
    c.patience_last = 3;
    return c;
}

}  // namespace

TEST_CASE("budget allocation splits evenly with the remainder up front") {
    BudgetLedger a(300, 2);
    CHECK(a.allocations() == std::vector<long>{150, 150});
    BudgetLedger b(500, 4);
    CHECK(b.allocations() == std::vector<long>{125, 125, 125, 125});
    BudgetLedger c(10, 4);
    CHECK(c.allocations() == std::vector<long>{3, 3, 2, 2});
    BudgetLedger d(1, 3);
    CHECK(d.allocations() == std::vector<long>{1, 0, 0});
}

TEST_CASE("the ledger refuses to overspend") {
    BudgetLedger l(10, 2);
    l.charge(1, 5);
    CHECK(l.remaining_in(1) == 0);
    CHECK_THROWS_AS(l.charge(1, 1), Error);
    l.charge(2, 4);
    CHECK(l.spent() == 9);
    CHECK(l.remaining() == 1);
    CHECK_THROWS_AS(l.charge(2, 2), Error);
    CHECK(l.spent() == 9);
}

TEST_CASE("phase lengths are multiples of num_envs summing to the total") {
    const auto s = split_timesteps(1000, 3, 8);
    CHECK(std::accumulate(s.begin(), s.end(), 0L) == 1000);
    for (std::size_t i = 0; i + 1 < s.size(); ++i) CHECK(s[i] % 8 == 0);
    CHECK_THROWS_AS(split_timesteps(1001, 3, 8), Error);
}

TEST_CASE("algorithm names round-trip") {
    for (const char* n :
         {"licorice", "licorice-it", "licorice-de", "licorice-ac", "sequential-q", "disagreement-q", "random-q", "cpm"})
        CHECK(to_string(parse_algorithm(n)) == n);
    CHECK_THROWS(parse_algorithm("nope"));
}

TEST_CASE("licorice spends exactly the budget, split across iterations") {
    const Environment env(EnvKind::DynamicObstacles);
    GroundTruthOracle gt;
    CountingOracle oracle(gt);
    const auto cfg = tiny(EnvKind::DynamicObstacles, 40, 2);
    const RunResult r = run_algorithm(Algorithm::Licorice, cfg, env, oracle, 1);
    CHECK(oracle.queries() == 40);
    CHECK(r.ledger.spent_in(1) == 20);
    CHECK(r.ledger.spent_in(2) == 20);
    CHECK(r.dataset.size() == 40);
    CHECK(r.counters.ppo_phases == 2);
    CHECK(r.counters.concept_trainings == 2);
    CHECK(r.counters.rl_timesteps == 256);
    CHECK(r.counters.g_constant_within_phases);
    // query batch 20: one acquisition round per iteration
    CHECK(r.counters.acquisition_rounds == 2);
    CHECK(r.counters.ensemble_trainings == 3);  // the first round scores with an untrained ensemble
}

TEST_CASE("sequential-q labels the first B visited states") {
    const Environment env(EnvKind::DoorKey);
    GroundTruthOracle gt;
    CountingOracle oracle(gt);
    const auto cfg = tiny(EnvKind::DoorKey, 30, 2);
    const RunResult r = run_algorithm(Algorithm::SequentialQ, cfg, env, oracle, 2);
    CHECK(oracle.queries() == 30);
    std::vector<long> expect(30);
    std::iota(expect.begin(), expect.end(), 0L);
    CHECK(r.counters.accepted_steps == expect);
    CHECK(r.counters.ensemble_trainings == 0);
    CHECK(r.counters.ppo_phases == 1);
}

TEST_CASE("the active-learning ablation never trains an ensemble") {
    const Environment env(EnvKind::DynamicObstacles);
    GroundTruthOracle oracle;
    const RunResult r = run_algorithm(Algorithm::LicoriceAC, tiny(EnvKind::DynamicObstacles, 40, 2), env, oracle, 3);
    CHECK(r.counters.ensemble_trainings == 0);
    CHECK(r.counters.acquisition_rounds == 0);
    CHECK(r.ledger.spent() == 40);
}

TEST_CASE("the decorrelation ablation pools consecutive states") {
    const Environment env(EnvKind::DynamicObstacles);
    GroundTruthOracle oracle;
    const auto cfg = tiny(EnvKind::DynamicObstacles, 20, 1);
    const RunResult r = run_algorithm(Algorithm::LicoriceDE, cfg, env, oracle, 4);
    const auto& s = r.counters.accepted_steps;
    REQUIRE(s.size() == 200);  // pool ratio 10
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i] == static_cast<long>(i));
}

TEST_CASE("with acceptance p the pool is spread out") {
    const Environment env(EnvKind::DynamicObstacles);
    GroundTruthOracle oracle;
    const RunResult r = run_algorithm(Algorithm::Licorice, tiny(EnvKind::DynamicObstacles, 20, 1), env, oracle, 5);
    const auto& s = r.counters.accepted_steps;
    REQUIRE(s.size() == 200);
    CHECK(s.back() > 1000);
    CHECK(std::is_sorted(s.begin(), s.end()));
}

TEST_CASE("runs are reproducible") {
    const Environment env(EnvKind::DoorKey);
    auto run = [&] {
        GroundTruthOracle oracle;
        return run_algorithm(Algorithm::Licorice, tiny(EnvKind::DoorKey, 20, 2), env, oracle, 6);
    };
    const RunResult a = run(), b = run();
    CHECK(nn::serialize_params(a.policy.g.params) == nn::serialize_params(b.policy.g.params));
    CHECK(nn::serialize_params(a.policy.fv) == nn::serialize_params(b.policy.fv));
    CHECK(a.queried_ids == b.queried_ids);
    CHECK(a.counters.accepted_steps == b.counters.accepted_steps);
}

TEST_CASE("random-q stays within budget") {
    const Environment env(EnvKind::DynamicObstacles);
    GroundTruthOracle gt;
    CountingOracle oracle(gt);
    auto cfg = tiny(EnvKind::DynamicObstacles, 30, 1);
    cfg.random_q_retrain_every = 5;
    const RunResult r = run_algorithm(Algorithm::RandomQ, cfg, env, oracle, 7);
    CHECK(oracle.queries() <= 30);
    CHECK(oracle.queries() > 0);
    CHECK(r.ledger.spent() == oracle.queries());
}

TEST_CASE("cpm labels every visited state, past any budget") {
    const Environment env(EnvKind::DynamicObstacles);
    GroundTruthOracle gt;
    CountingOracle oracle(gt);
    const auto cfg = tiny(EnvKind::DynamicObstacles, 30, 1);
    const RunResult r = run_algorithm(Algorithm::Cpm, cfg, env, oracle, 8);
    CHECK(oracle.queries() == 256);
    CHECK(oracle.queries() > cfg.budget);
    CHECK(r.policy.freeze_mode() == FreezeMode::GTrainable);
}

TEST_CASE("checkpoints round-trip") {
    const Environment env(EnvKind::DoorKey);
    GroundTruthOracle oracle;
    const auto cfg = tiny(EnvKind::DoorKey, 20, 1);
    const RunResult r = run_algorithm(Algorithm::Licorice, cfg, env, oracle, 9);
    const auto dir = (std::filesystem::temp_directory_path() / "licorice_ckpt_test").string();
    std::filesystem::remove_all(dir);
    Checkpoint meta;
    meta.env = EnvKind::DoorKey;
    meta.arch = cfg.arch;
    save_checkpoint(dir, r.policy, meta);
    auto [p, m] = load_checkpoint(dir);
    CHECK(m.env == EnvKind::DoorKey);
    CHECK(nn::serialize_params(p.g.params) == nn::serialize_params(r.policy.g.params));
    CHECK(nn::serialize_params(p.fv) == nn::serialize_params(r.policy.fv));
    std::filesystem::remove_all(dir);
}

TEST_CASE("config validation rejects nonsense") {
    auto c = tiny(EnvKind::DoorKey, 20, 2);
    c.acceptance = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = tiny(EnvKind::DoorKey, 20, 2);
    c.iterations = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = tiny(EnvKind::DoorKey, 20, 2);
    c.ensemble = 1;
    CHECK_THROWS_AS(c.validate(), Error);
}
