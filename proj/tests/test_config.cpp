#include "doctest.h"
#include "licorice/config.hpp"

using namespace licorice;

TEST_CASE("DoorKey defaults") {
    const RunConfig c = RunConfig::defaults(EnvKind::DoorKey);
    const auto& L = c.lic;
    CHECK(L.budget == 300);
    CHECK(L.iterations == 2);
    CHECK(L.timesteps == 400000);
    CHECK(L.acceptance == 0.05);
    CHECK(L.pool_ratio == 10);
    CHECK(L.query_batch == 20);
    CHECK(L.ensemble == 5);
    CHECK(L.val_fraction == 0.2);
    CHECK(L.concept_training.max_epochs == 50);
    CHECK(L.concept_training.minibatch == 32);
    CHECK(L.concept_training.lr == 3e-3);
    CHECK(L.concept_training.early_stopping);
    CHECK(L.patience_first == 10);
    CHECK(L.patience_last == 20);
    CHECK(L.arch.encoding == ConceptEncoding::OneHot);
    CHECK(L.arch.extractor_hidden == std::vector<int>{128, 128});
    CHECK(L.arch.action_hidden == std::vector<int>{64, 64});
    CHECK(L.arch.value_hidden == std::vector<int>{64, 64});
    const auto& P = L.ppo;
    CHECK(P.horizon == 4096);
    CHECK(P.num_envs == 8);
    CHECK(P.epochs == 10);
    CHECK(P.minibatch == 512);
    CHECK(P.lr == 3e-4);
    CHECK(P.clip == 0.2);
    CHECK(P.gamma == 0.99);
    CHECK(P.gae_lambda == 0.95);
    CHECK(P.ent_coef == 0.01);
    CHECK(P.vf_coef == 1.0);
    CHECK(c.seed == 123);
    CHECK(c.eval_episodes == 100);
    CHECK(c.eval_seed == 42);
    CHECK(c.oracle.kind == OracleSpec::Kind::GroundTruth);
}

TEST_CASE("per-environment defaults") {
    const RunConfig cp = RunConfig::defaults(EnvKind::CartPole);
    CHECK(cp.lic.budget == 500);
    CHECK(cp.lic.iterations == 4);
    CHECK(cp.lic.timesteps == 300000);
    CHECK(cp.lic.concept_training.max_epochs == 100);
    CHECK_FALSE(cp.lic.concept_training.early_stopping);
    CHECK(cp.lic.concept_training.lr == 3e-4);
    const RunConfig dyn = RunConfig::defaults(EnvKind::DynamicObstacles);
    CHECK(dyn.lic.budget == 300);
    CHECK(dyn.lic.iterations == 2);
    CHECK(dyn.lic.timesteps == 300000);
    CHECK(dyn.lic.concept_training.lr == 3e-3);
}

TEST_CASE("config text round-trips") {
    RunConfig c = RunConfig::defaults(EnvKind::DynamicObstacles);
    c.set("budget", "123");
    c.set("concept_lr", "0.001");
    c.set("oracle", "noisy:0.1");
    c.set("extractor_hidden", "32,16");
    const RunConfig d = build_config(parse_config_text(c.to_text()));
    CHECK(d.to_text() == c.to_text());
    CHECK(d.hash() == c.hash());
    CHECK(d.lic.budget == 123);
    CHECK(d.lic.arch.extractor_hidden == std::vector<int>{32, 16});
    CHECK(d.get("concept_lr") == "0.001");
}

TEST_CASE("every listed key can be read and written back") {
    RunConfig c = RunConfig::defaults(EnvKind::DoorKey);
    for (const auto& [k, v] : c.entries()) {
        CHECK(c.get(k) == v);
        c.set(k, v);
    }
    CHECK(c.to_text() == RunConfig::defaults(EnvKind::DoorKey).to_text());
}

TEST_CASE("unknown keys and malformed values are errors naming the key") {
    RunConfig c;
    try {
        c.set("no_such_key", "1");
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("no_such_key") != std::string::npos);
    }
    try {
        c.set("budget", "lots");
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("budget") != std::string::npos);
    }
    CHECK_THROWS(c.set("env", "pong"));
}

TEST_CASE("env in a config selects that env's defaults before other keys apply") {
    const RunConfig c = build_config({{"budget", "77"}, {"env", "cartpole"}});
    CHECK(c.env == EnvKind::CartPole);
    CHECK(c.lic.iterations == 4);
    CHECK(c.lic.budget == 77);
}

TEST_CASE("comments and blank lines are ignored") {
    const auto pairs = parse_config_text("# a comment\n\nbudget = 5\n  seed=9  \n");
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0] == std::pair<std::string, std::string>{"budget", "5"});
    CHECK(pairs[1] == std::pair<std::string, std::string>{"seed", "9"});
    CHECK_THROWS(parse_config_text("no equals sign here\n"));
}
