#include <algorithm>

#include "doctest.h"
#include "licorice/envs.hpp"

using namespace licorice;

namespace {

constexpr int kLeft = 0, kRight = 1, kForward = 2, kPickup = 3;

GridState& grid(EnvState& s) { return std::get<GridState>(s); }

int concept_index(const Environment& env, const std::string& name) {
    const auto& specs = env.schema().specs();
    for (std::size_t i = 0; i < specs.size(); ++i)
        if (specs[i].name == name) return static_cast<int>(i);
    FAIL("no concept " << name);
    return -1;
}

Pos find_cell(const GridState& s, Cell c) {
    for (int y = 0; y < s.size; ++y)
        for (int x = 0; x < s.size; ++x)
            if (s.at({x, y}) == c) return {x, y};
    return {-1, -1};
}

}  // namespace

TEST_CASE("schemas have the documented sizes") {
    CHECK(Environment(EnvKind::CartPole).schema().size() == 4);
    CHECK(Environment(EnvKind::CartPole).schema().is_continuous());
    CHECK(Environment(EnvKind::DoorKey).schema().size() == 12);
    CHECK(Environment(EnvKind::DoorKey).schema().is_categorical());
    CHECK(Environment(EnvKind::DynamicObstacles).schema().size() == 11);
    CHECK(Environment(EnvKind::DynamicObstacles).schema().is_categorical());
    CHECK(Environment(EnvKind::CartPole).num_actions() == 2);
    CHECK(Environment(EnvKind::DoorKey).num_actions() == 5);
    CHECK(Environment(EnvKind::DynamicObstacles).num_actions() == 3);
    CHECK(Environment(EnvKind::CartPole).observation_dim() == 130);
}

TEST_CASE("env names parse") {
    CHECK(parse_env_kind("cartpole") == EnvKind::CartPole);
    CHECK(parse_env_kind("doorkey") == EnvKind::DoorKey);
    CHECK(parse_env_kind("dynobs") == EnvKind::DynamicObstacles);
    CHECK_THROWS_AS(parse_env_kind("pong"), Error);
}

TEST_CASE("reset is deterministic per seed") {
    const Environment env(EnvKind::DoorKey);
    CHECK(env.reset(42).second == env.reset(42).second);
    bool any_diff = false;
    for (std::uint64_t s = 0; s < 20 && !any_diff; ++s) any_diff = env.reset(s).second != env.reset(42).second;
    CHECK(any_diff);
}

TEST_CASE("trajectories are bit-reproducible under a fixed action sequence") {
    for (auto kind : {EnvKind::CartPole, EnvKind::DoorKey, EnvKind::DynamicObstacles}) {
        const Environment env(kind, 3);
        auto run = [&] {
            auto [s, obs] = env.reset(7);
            std::vector<Observation> out{obs};
            Rng actions(11);
            for (int t = 0; t < 60; ++t) {
                const auto r = env.step(s, uniform_int(actions, 0, env.num_actions()));
                out.push_back(r.observation);
                if (r.terminated || r.truncated) break;
            }
            return out;
        };
        CHECK(run() == run());
    }
}

TEST_CASE("cartpole reset draws physics from [-0.05, 0.05] and reports them as concepts") {
    const Environment env(EnvKind::CartPole);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        auto [s, obs] = env.reset(seed);
        const auto& cp = std::get<CartPoleState>(s);
        for (double v : {cp.x, cp.x_dot, cp.theta, cp.theta_dot}) CHECK(std::abs(v) <= 0.05);
        CHECK(env.true_concepts(s) == ConceptVector{cp.x, cp.x_dot, cp.theta, cp.theta_dot});
        for (const auto& f : cp.frames) CHECK(f == cp.frames[0]);
    }
}

TEST_CASE("cartpole frame slots are equal at reset") {
    const Environment env(EnvKind::CartPole);
    const auto obs = env.reset(5).second;
    const int d = Environment::kCartPoleFrameDim;
    for (int f = 1; f < 4; ++f)
        CHECK(std::equal(obs.begin(), obs.begin() + d, obs.begin() + f * d));
}

TEST_CASE("cartpole observations ignore velocities") {
    const Environment env(EnvKind::CartPole);
    auto [a, obs] = env.reset(9);
    EnvState b = a;
    std::get<CartPoleState>(b).x_dot += 1.0;
    std::get<CartPoleState>(b).theta_dot -= 0.5;
    CHECK(env.encode(a) == env.encode(b));
    CHECK(env.true_concepts(a) != env.true_concepts(b));
}

TEST_CASE("cartpole pays +1 per surviving step and keeps concepts in range") {
    const Environment env(EnvKind::CartPole);
    Rng rng(1);
    for (int ep = 0; ep < 20; ++ep) {
        auto [s, obs] = env.reset(static_cast<std::uint64_t>(ep));
        for (;;) {
            const auto r = env.step(s, uniform_int(rng, 0, 2));
            if (!r.terminated) {
                CHECK(r.reward == 1.0);
                CHECK(std::abs(r.concepts[0]) < 2.4);
                CHECK(std::abs(r.concepts[2]) < 0.2095);
            }
            if (r.terminated || r.truncated) break;
        }
    }
}

TEST_CASE("dynamic obstacles start layout") {
    const Environment env(EnvKind::DynamicObstacles);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto [s, obs] = env.reset(seed);
        const auto& g = grid(s);
        CHECK(g.size == 5);
        CHECK(g.agent == Pos{1, 1});
        CHECK(g.at({3, 3}) == Cell::Goal);
        CHECK(g.obstacles.size() == 2);
        CHECK(g.max_steps == 100);
        const auto c = env.true_concepts(s);
        CHECK(c[0] == 0);  // 1-indexed (1, 1) is class 0
        CHECK(c[1] == 0);
    }
}

TEST_CASE("walking into an obstacle costs -1 and ends the episode") {
    const Environment env(EnvKind::DynamicObstacles);
    auto [s, obs] = env.reset(3);
    auto& g = grid(s);
    for (auto& o : g.obstacles) g.at(o) = Cell::Empty;
    g.obstacles = {{2, 1}, {3, 2}};
    for (const auto& o : g.obstacles) g.at(o) = Cell::Obstacle;
    g.dir = 0;
    const auto r = env.step(s, kForward);
    CHECK(r.reward == -1.0);
    CHECK(r.terminated);
    CHECK_THROWS_AS(env.step(s, kForward), Error);
}

TEST_CASE("doorkey goal reward at step 100 of 490") {
    const Environment env(EnvKind::DoorKey);
    auto [s, obs] = env.reset(1);
    auto& g = grid(s);
    CHECK(g.max_steps == 490);
    const Pos goal = find_cell(g, Cell::Goal);
    g.agent = {goal.x, goal.y - 1};
    g.at(g.agent) = Cell::Empty;
    g.dir = 1;
    g.steps = 99;
    const auto r = env.step(s, kForward);
    CHECK(r.terminated);
    CHECK(r.reward == doctest::Approx(0.8163265306).epsilon(1e-9));
}

TEST_CASE("doorkey top-left cell facing up cannot move up or left") {
    const Environment env(EnvKind::DoorKey);
    auto [s, obs] = env.reset(2);
    auto& g = grid(s);
    g.agent = {1, 1};
    g.dir = 3;
    const auto c = env.true_concepts(s);
    CHECK(c[concept_index(env, "movable_up")] == 0);
    CHECK(c[concept_index(env, "movable_left")] == 0);
}

TEST_CASE("picking up the key reports the key at (0, 0)") {
    const Environment env(EnvKind::DoorKey);
    auto [s, obs] = env.reset(4);
    auto& g = grid(s);
    const Pos key = find_cell(g, Cell::Key);
    // Stand on a free neighbour and face the key.
    bool placed = false;
    for (int d = 0; d < 4 && !placed; ++d) {
        const Pos o = direction_offset(d);
        const Pos p{key.x - o.x, key.y - o.y};
        if (g.usable(p) && g.at(p) == Cell::Empty) {
            g.agent = p;
            g.dir = d;
            placed = true;
        }
    }
    REQUIRE(placed);
    const auto before = env.true_concepts(s);
    CHECK(before[concept_index(env, "key_x")] == key.x);
    const auto r = env.step(s, kPickup);
    CHECK(r.concepts[concept_index(env, "key_x")] == 0);
    CHECK(r.concepts[concept_index(env, "key_y")] == 0);
}

TEST_CASE("doorkey movable flags match a cell-by-cell check on reachable states") {
    const Environment env(EnvKind::DoorKey);
    Rng rng(77);
    long checked = 0;
    for (int ep = 0; ep < 40; ++ep) {
        auto [s, obs] = env.reset(static_cast<std::uint64_t>(ep));
        for (int t = 0; t < 200; ++t) {
            const auto& g = grid(s);
            const auto c = env.true_concepts(s);
            for (int d = 0; d < 4; ++d) {
                const Pos o = direction_offset(d);
                const Pos p{g.agent.x + o.x, g.agent.y + o.y};
                bool expected = p.x >= 1 && p.y >= 1 && p.x <= g.size - 2 && p.y <= g.size - 2;
                if (expected) {
                    const Cell cell = g.at(p);
                    if (cell == Cell::Wall || cell == Cell::Key) expected = false;
                    if (cell == Cell::Door && g.door_state != DoorState::Open) expected = false;
                }
                CHECK(c[static_cast<std::size_t>(8 + d)] == (expected ? 1 : 0));
                ++checked;
            }
            const auto r = env.step(s, uniform_int(rng, 0, 5));
            if (r.terminated || r.truncated) break;
        }
    }
    CHECK(checked > 1000);
}

TEST_CASE("changing only the agent direction changes only direction channels") {
    const Environment env(EnvKind::DoorKey);
    auto [a, obs] = env.reset(8);
    EnvState b = a;
    grid(b).dir = (grid(a).dir + 1) % 4;
    const auto oa = env.encode(a), ob = env.encode(b);
    const auto& g = grid(a);
    const int inner = g.size - 2;
    const std::size_t base =
        static_cast<std::size_t>(((g.agent.y - 1) * inner + (g.agent.x - 1)) * Environment::kGridChannels);
    for (std::size_t i = 0; i < oa.size(); ++i) {
        const bool dir_channel = i >= base + 10 && i < base + 14;
        if (!dir_channel) CHECK(oa[i] == ob[i]);
    }
    CHECK(oa != ob);
}

TEST_CASE("no episode exceeds max steps") {
    for (auto kind : {EnvKind::DoorKey, EnvKind::DynamicObstacles}) {
        const Environment env(kind);
        for (int ep = 0; ep < 10; ++ep) {
            auto [s, obs] = env.reset(static_cast<std::uint64_t>(ep));
            int steps = 0;
            for (;;) {
                // turning in place never ends an episode early
                const auto r = env.step(s, kLeft);
                ++steps;
                if (r.terminated || r.truncated) {
                    CHECK(r.truncated);
                    break;
                }
            }
            CHECK(steps == env.max_steps());
        }
    }
}

TEST_CASE("invalid actions are rejected") {
    const Environment env(EnvKind::DynamicObstacles);
    auto [s, obs] = env.reset(1);
    CHECK_THROWS_AS(env.step(s, 3), Error);
    CHECK_THROWS_AS(env.step(s, -1), Error);
}

TEST_CASE("renders") {
    const Environment dk(EnvKind::DoorKey), dyn(EnvKind::DynamicObstacles), cp(EnvKind::CartPole);
    auto [s, obs] = dk.reset(3);
    const std::string text = dk.render(s, RenderFormat::Text);
    int agents = 0;
    for (char c : text) agents += c == '>' || c == 'v' || c == '<' || c == '^';
    CHECK(agents == 1);
    CHECK(text == dk.render(s, RenderFormat::Text));

    auto [d, dobs] = dyn.reset(3);
    const std::string svg = dyn.render(d, RenderFormat::Svg);
    std::size_t count = 0;
    for (auto pos = svg.find("class=\"obstacle\""); pos != std::string::npos;
         pos = svg.find("class=\"obstacle\"", pos + 1))
        ++count;
    CHECK(count == 2);

    auto [c, cobs] = cp.reset(3);
    CHECK(cp.render(c, RenderFormat::Text).find("cart_position=") != std::string::npos);
    CHECK(cp.render(c, RenderFormat::Svg).find("<svg") == 0);
    CHECK_THROWS_AS(parse_render_format("png"), Error);
}

TEST_CASE("dynamic obstacles turning in place never collides") {
    const Environment env(EnvKind::DynamicObstacles);
    auto [s, obs] = env.reset(12);
    for (int t = 0; t < 50; ++t) CHECK(env.step(s, t % 2 ? kLeft : kRight).reward == 0.0);
}
