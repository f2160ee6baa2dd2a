#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "licorice/common.hpp"

namespace licorice {

enum class EnvKind { CartPole, DoorKey, DynamicObstacles };

EnvKind parse_env_kind(std::string_view name);
std::string to_string(EnvKind kind);

struct ConceptSpec {
    enum class Kind { Categorical, Continuous };

    std::string name;
    Kind kind = Kind::Categorical;
    int cardinality = 2;  // categorical only
    double lower = -std::numeric_limits<double>::infinity();
    double upper = std::numeric_limits<double>::infinity();
    std::string group;

    static ConceptSpec categorical(std::string name, int k, std::string group);
    static ConceptSpec continuous(std::string name, double lo, double hi, std::string group);

    bool bounded() const { return std::isfinite(lower) && std::isfinite(upper); }
};

/// Entries are class indices (stored as exact integers) or real values.
using ConceptVector = std::vector<double>;
using Observation = std::vector<float>;

class ConceptSchema {
public:
    ConceptSchema() = default;
    explicit ConceptSchema(std::vector<ConceptSpec> specs);

    std::size_t size() const { return specs_.size(); }
    const ConceptSpec& operator[](std::size_t i) const { return specs_[i]; }
    const std::vector<ConceptSpec>& specs() const { return specs_; }

    /// True when every concept is categorical (classification schema).
    bool is_categorical() const;
    /// True when every concept is continuous (regression schema).
    bool is_continuous() const;
    std::vector<int> cardinalities() const;

    /// Empty when valid, otherwise a human-readable reason.
    std::optional<std::string> check(const ConceptVector& c) const;
    void validate(const ConceptVector& c) const;

    /// Stable identity over names, kinds and ranges.
    std::uint64_t hash() const;

    bool operator==(const ConceptSchema& other) const { return hash() == other.hash(); }

private:
    std::vector<ConceptSpec> specs_;
};

// --- states ----------------------------------------------------------------

struct CartPoleState {
    double x = 0, x_dot = 0, theta = 0, theta_dot = 0;
    std::array<std::array<double, 2>, 4> frames{};  // oldest first: (cart position, pole angle)
    int last_action = -1;
    int steps = 0;
    bool done = false;
    Rng rng;
};

enum class Cell : std::uint8_t { Empty, Wall, Key, Door, Goal, Obstacle };
enum class DoorState : std::uint8_t { Locked, Closed, Open };

struct Pos {
    int x = 0, y = 0;
    auto operator<=>(const Pos&) const = default;
};

/// Shared by DoorKey and DynamicObstacles. Coordinates are absolute grid
/// indices; the border ring is wall, so usable cells are 1..size-2 and match
/// the 1-indexed coordinates annotators see.
struct GridState {
    EnvKind kind = EnvKind::DoorKey;
    int size = 7;
    std::vector<Cell> cells;
    Pos agent;
    int dir = 0;  // 0 right, 1 down, 2 left, 3 up
    bool carrying_key = false;
    Pos door;
    DoorState door_state = DoorState::Locked;
    std::vector<Pos> obstacles;
    int steps = 0;
    int max_steps = 0;
    bool done = false;
    Rng rng;

    Cell at(Pos p) const { return cells[static_cast<std::size_t>(p.y * size + p.x)]; }
    Cell& at(Pos p) { return cells[static_cast<std::size_t>(p.y * size + p.x)]; }
    bool usable(Pos p) const { return p.x >= 1 && p.y >= 1 && p.x <= size - 2 && p.y <= size - 2; }
};

using EnvState = std::variant<CartPoleState, GridState>;

struct StepResult {
    Observation observation;
    double reward = 0;
    bool terminated = false;
    bool truncated = false;
    ConceptVector concepts;  // ground truth; never fed to the policy
};

enum class RenderFormat { Text, Svg };

RenderFormat parse_render_format(std::string_view name);

Pos direction_offset(int dir);

/// One environment kind plus its fixed observation encoder. Methods are const;
/// all episode state lives in EnvState values.
class Environment {
public:
    static constexpr int kCartPoleFrameDim = 32;
    static constexpr int kGridChannels = 14;

    explicit Environment(EnvKind kind, std::uint64_t projection_seed = 0);

    EnvKind kind() const { return kind_; }
    const ConceptSchema& schema() const { return schema_; }
    int num_actions() const;
    int observation_dim() const;
    int max_steps() const;
    /// Ground-truth-concept reward upper bound used for reward ratios.
    double reward_upper_bound() const;
    std::uint64_t projection_seed() const { return projection_seed_; }

    std::pair<EnvState, Observation> reset(std::uint64_t seed) const;
    StepResult step(EnvState& state, int action) const;
    ConceptVector true_concepts(const EnvState& state) const;
    Observation encode(const EnvState& state) const;
    std::string render(const EnvState& state, RenderFormat format) const;

    /// The frame embedding tanh(W [cart position, pole angle] + b).
    Eigen::VectorXd embed_frame(double cart_position, double pole_angle) const;

private:
    StepResult step_cartpole(CartPoleState& s, int action) const;
    StepResult step_grid(GridState& s, int action) const;

    EnvKind kind_;
    std::uint64_t projection_seed_;
    ConceptSchema schema_;
    Eigen::MatrixXd proj_w_;
    Eigen::VectorXd proj_b_;
};

ConceptSchema make_schema(EnvKind kind);

}  // namespace licorice
