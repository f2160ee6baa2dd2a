#include "licorice/envs.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

namespace licorice {

namespace {

// Classic control constants.
constexpr double kGravity = 9.8;
constexpr double kCartMass = 1.0;
constexpr double kPoleMass = 0.1;
constexpr double kTotalMass = kCartMass + kPoleMass;
constexpr double kHalfLength = 0.5;
constexpr double kPoleMassLength = kPoleMass * kHalfLength;
constexpr double kForce = 10.0;
constexpr double kTau = 0.02;
constexpr double kXThreshold = 2.4;
constexpr double kThetaThreshold = 12.0 * 2.0 * 3.14159265358979323846 / 360.0;  // 0.2095
constexpr int kCartPoleMaxSteps = 500;

constexpr int kDoorKeySize = 7;
constexpr int kDynObsSize = 5;

enum GridAction { kLeft = 0, kRight = 1, kForward = 2, kPickup = 3, kToggle = 4 };

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

}  // namespace

EnvKind parse_env_kind(std::string_view name) {
    if (name == "cartpole" || name == "pixelcartpole") return EnvKind::CartPole;
    if (name == "doorkey") return EnvKind::DoorKey;
    if (name == "dynobs" || name == "dynamicobstacles") return EnvKind::DynamicObstacles;
    throw Error("unknown environment '" + std::string(name) + "' (expected cartpole, doorkey or dynobs)");
}

std::string to_string(EnvKind kind) {
    switch (kind) {
        case EnvKind::CartPole: return "cartpole";
        case EnvKind::DoorKey: return "doorkey";
        case EnvKind::DynamicObstacles: return "dynobs";
    }
    return "?";
}

RenderFormat parse_render_format(std::string_view name) {
    if (name == "text") return RenderFormat::Text;
    if (name == "svg") return RenderFormat::Svg;
    throw Error("unsupported render format '" + std::string(name) + "'");
}

Pos direction_offset(int dir) {
    static constexpr Pos offsets[4] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
    return offsets[dir & 3];
}

// --- schema ------------------------------------------------------------------

ConceptSpec ConceptSpec::categorical(std::string name, int k, std::string group) {
    ConceptSpec s;
    s.name = std::move(name);
    s.kind = Kind::Categorical;
    s.cardinality = k;
    s.group = std::move(group);
    return s;
}

ConceptSpec ConceptSpec::continuous(std::string name, double lo, double hi, std::string group) {
    ConceptSpec s;
    s.name = std::move(name);
    s.kind = Kind::Continuous;
    s.cardinality = 0;
    s.lower = lo;
    s.upper = hi;
    s.group = std::move(group);
    return s;
}

ConceptSchema::ConceptSchema(std::vector<ConceptSpec> specs) : specs_(std::move(specs)) {
    std::set<std::string> names;
    for (const auto& s : specs_) {
        if (!names.insert(s.name).second) throw Error("duplicate concept name '" + s.name + "'");
        if (s.kind == ConceptSpec::Kind::Categorical && s.cardinality < 2)
            throw Error("concept '" + s.name + "' needs cardinality >= 2");
        if (s.kind == ConceptSpec::Kind::Continuous && s.bounded() && !(s.lower < s.upper))
            throw Error("concept '" + s.name + "' has an empty range");
    }
}

bool ConceptSchema::is_categorical() const {
    return !specs_.empty() && std::all_of(specs_.begin(), specs_.end(), [](const auto& s) {
        return s.kind == ConceptSpec::Kind::Categorical;
    });
}

bool ConceptSchema::is_continuous() const {
    return !specs_.empty() && std::all_of(specs_.begin(), specs_.end(), [](const auto& s) {
        return s.kind == ConceptSpec::Kind::Continuous;
    });
}

std::vector<int> ConceptSchema::cardinalities() const {
    std::vector<int> out;
    for (const auto& s : specs_) out.push_back(s.cardinality);
    return out;
}

std::optional<std::string> ConceptSchema::check(const ConceptVector& c) const {
    if (c.size() != specs_.size())
        return "expected " + std::to_string(specs_.size()) + " values, got " + std::to_string(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
        const auto& s = specs_[i];
        const double v = c[i];
        if (!std::isfinite(v)) return s.name + ": value is not finite";
        if (s.kind == ConceptSpec::Kind::Categorical) {
            if (v != std::floor(v)) return s.name + ": class index must be an integer";
            if (v < 0 || v >= s.cardinality)
                return s.name + ": class " + fmt("%g", v) + " outside [0, " + std::to_string(s.cardinality) + ")";
        } else {
            if ((std::isfinite(s.lower) && v < s.lower) || (std::isfinite(s.upper) && v > s.upper))
                return s.name + ": value " + fmt("%g", v) + " outside declared range";
        }
    }
    return std::nullopt;
}

void ConceptSchema::validate(const ConceptVector& c) const {
    if (auto err = check(c)) throw Error("invalid concept vector: " + *err);
}

std::uint64_t ConceptSchema::hash() const {
    std::uint64_t h = fnv1a("concept-schema");
    for (const auto& s : specs_) {
        h = fnv1a(s.name, h);
        const double nums[4] = {static_cast<double>(s.kind), static_cast<double>(s.cardinality), s.lower, s.upper};
        h = fnv1a(nums, sizeof(nums), h);
    }
    return h;
}

ConceptSchema make_schema(EnvKind kind) {
    using CS = ConceptSpec;
    switch (kind) {
        case EnvKind::CartPole:
            return ConceptSchema({
                CS::continuous("cart_position", -kXThreshold, kXThreshold, "cart_position"),
                CS::continuous("cart_velocity", -std::numeric_limits<double>::infinity(),
                               std::numeric_limits<double>::infinity(), "cart_velocity"),
                CS::continuous("pole_angle", -kThetaThreshold, kThetaThreshold, "pole_angle"),
                CS::continuous("pole_angular_velocity", -std::numeric_limits<double>::infinity(),
                               std::numeric_limits<double>::infinity(), "pole_angular_velocity"),
            });
        case EnvKind::DoorKey:
            return ConceptSchema({
                CS::categorical("agent_x", 5, "agent_position"),
                CS::categorical("agent_y", 5, "agent_position"),
                CS::categorical("agent_direction", 4, "agent_direction"),
                CS::categorical("key_x", 6, "key_position"),
                CS::categorical("key_y", 6, "key_position"),
                CS::categorical("door_x", 5, "door_position"),
                CS::categorical("door_y", 5, "door_position"),
                CS::categorical("door_open", 2, "door_open"),
                CS::categorical("movable_right", 2, "direction_movable"),
                CS::categorical("movable_down", 2, "direction_movable"),
                CS::categorical("movable_left", 2, "direction_movable"),
                CS::categorical("movable_up", 2, "direction_movable"),
            });
        case EnvKind::DynamicObstacles:
            return ConceptSchema({
                CS::categorical("agent_x", 3, "agent_position"),
                CS::categorical("agent_y", 3, "agent_position"),
                CS::categorical("agent_direction", 4, "agent_direction"),
                CS::categorical("obstacle1_x", 3, "obstacle1_position"),
                CS::categorical("obstacle1_y", 3, "obstacle1_position"),
                CS::categorical("obstacle2_x", 3, "obstacle2_position"),
                CS::categorical("obstacle2_y", 3, "obstacle2_position"),
                CS::categorical("movable_right", 2, "direction_movable"),
                CS::categorical("movable_down", 2, "direction_movable"),
                CS::categorical("movable_left", 2, "direction_movable"),
                CS::categorical("movable_up", 2, "direction_movable"),
            });
    }
    throw Error("make_schema: unknown kind");
}

// --- environment -------------------------------------------------------------

Environment::Environment(EnvKind kind, std::uint64_t projection_seed)
    : kind_(kind), projection_seed_(projection_seed), schema_(make_schema(kind)) {
    if (kind_ == EnvKind::CartPole) {
        Rng rng(derive_seed(projection_seed_, 0xca27));
        std::normal_distribution<double> normal(0.0, 1.0);
        proj_w_.resize(kCartPoleFrameDim, 2);
        proj_b_.resize(kCartPoleFrameDim);
        for (int i = 0; i < kCartPoleFrameDim; ++i) {
            // Scaled so both inputs span the non-saturated part of tanh.
            proj_w_(i, 0) = normal(rng) / kXThreshold;
            proj_w_(i, 1) = normal(rng) / kThetaThreshold;
            proj_b_(i) = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
        }
    }
}

int Environment::num_actions() const {
    switch (kind_) {
        case EnvKind::CartPole: return 2;
        case EnvKind::DoorKey: return 5;
        case EnvKind::DynamicObstacles: return 3;
    }
    return 0;
}

int Environment::observation_dim() const {
    switch (kind_) {
        case EnvKind::CartPole: return 4 * kCartPoleFrameDim + 2;
        case EnvKind::DoorKey: return (kDoorKeySize - 2) * (kDoorKeySize - 2) * kGridChannels;
        case EnvKind::DynamicObstacles: return (kDynObsSize - 2) * (kDynObsSize - 2) * kGridChannels;
    }
    return 0;
}

int Environment::max_steps() const {
    switch (kind_) {
        case EnvKind::CartPole: return kCartPoleMaxSteps;
        case EnvKind::DoorKey: return 10 * kDoorKeySize * kDoorKeySize;
        case EnvKind::DynamicObstacles: return 4 * kDynObsSize * kDynObsSize;
    }
    return 0;
}

double Environment::reward_upper_bound() const {
    switch (kind_) {
        case EnvKind::CartPole: return 500.0;
        case EnvKind::DoorKey: return 0.97;
        case EnvKind::DynamicObstacles: return 0.91;
    }
    return 1.0;
}

Eigen::VectorXd Environment::embed_frame(double cart_position, double pole_angle) const {
    Eigen::Vector2d in(cart_position, pole_angle);
    return (proj_w_ * in + proj_b_).array().tanh().matrix();
}

namespace {

Pos random_empty_cell(GridState& s, Pos top, Pos extent) {
    for (int tries = 0; tries < 10000; ++tries) {
        Pos p{top.x + uniform_int(s.rng, 0, extent.x), top.y + uniform_int(s.rng, 0, extent.y)};
        if (p.x < 0 || p.y < 0 || p.x >= s.size || p.y >= s.size) continue;
        if (s.at(p) != Cell::Empty || p == s.agent) continue;
        return p;
    }
    throw Error("grid generation failed to find an empty cell");
}

GridState make_grid(EnvKind kind, int size, int max_steps, std::uint64_t seed) {
    GridState s;
    s.kind = kind;
    s.size = size;
    s.max_steps = max_steps;
    s.rng.seed(seed);
    s.cells.assign(static_cast<std::size_t>(size * size), Cell::Empty);
    for (int i = 0; i < size; ++i) {
        s.at({i, 0}) = s.at({i, size - 1}) = Cell::Wall;
        s.at({0, i}) = s.at({size - 1, i}) = Cell::Wall;
    }
    s.at({size - 2, size - 2}) = Cell::Goal;
    return s;
}

GridState reset_doorkey(std::uint64_t seed, int max_steps) {
    GridState s = make_grid(EnvKind::DoorKey, kDoorKeySize, max_steps, seed);
    const int split = uniform_int(s.rng, 2, kDoorKeySize - 2);
    for (int y = 0; y < kDoorKeySize; ++y) s.at({split, y}) = Cell::Wall;
    s.agent = {-1, -1};
    s.agent = random_empty_cell(s, {0, 0}, {split, kDoorKeySize});
    s.dir = uniform_int(s.rng, 0, 4);
    const int door_y = uniform_int(s.rng, 1, kDoorKeySize - 2);
    s.door = {split, door_y};
    s.at(s.door) = Cell::Door;
    s.door_state = DoorState::Locked;
    const Pos key = random_empty_cell(s, {0, 0}, {split, kDoorKeySize});
    s.at(key) = Cell::Key;
    return s;
}

GridState reset_dynobs(std::uint64_t seed, int max_steps) {
    GridState s = make_grid(EnvKind::DynamicObstacles, kDynObsSize, max_steps, seed);
    s.agent = {1, 1};
    s.dir = 0;
    s.door = {0, 0};
    s.door_state = DoorState::Open;
    for (int i = 0; i < 2; ++i) {
        const Pos p = random_empty_cell(s, {0, 0}, {kDynObsSize, kDynObsSize});
        s.at(p) = Cell::Obstacle;
        s.obstacles.push_back(p);
    }
    return s;
}

}  // namespace

std::pair<EnvState, Observation> Environment::reset(std::uint64_t seed) const {
    EnvState state;
    switch (kind_) {
        case EnvKind::CartPole: {
            CartPoleState s;
            s.rng.seed(seed);
            std::uniform_real_distribution<double> u(-0.05, 0.05);
            s.x = u(s.rng);
            s.x_dot = u(s.rng);
            s.theta = u(s.rng);
            s.theta_dot = u(s.rng);
            for (auto& f : s.frames) f = {s.x, s.theta};
            state = std::move(s);
            break;
        }
        case EnvKind::DoorKey: state = reset_doorkey(seed, max_steps()); break;
        case EnvKind::DynamicObstacles: state = reset_dynobs(seed, max_steps()); break;
    }
    Observation obs = encode(state);
    return {std::move(state), std::move(obs)};
}

StepResult Environment::step(EnvState& state, int action) const {
    if (action < 0 || action >= num_actions())
        throw Error("invalid action " + std::to_string(action) + " for " + to_string(kind_));
    if (auto* cp = std::get_if<CartPoleState>(&state)) {
        if (kind_ != EnvKind::CartPole) throw Error("state does not belong to " + to_string(kind_));
        return step_cartpole(*cp, action);
    }
    auto& grid = std::get<GridState>(state);
    if (grid.kind != kind_) throw Error("state does not belong to " + to_string(kind_));
    return step_grid(grid, action);
}

StepResult Environment::step_cartpole(CartPoleState& s, int action) const {
    if (s.done) throw Error("step called on a finished episode");
    const double force = action == 1 ? kForce : -kForce;
    const double cos_t = std::cos(s.theta), sin_t = std::sin(s.theta);
    const double temp = (force + kPoleMassLength * s.theta_dot * s.theta_dot * sin_t) / kTotalMass;
    const double theta_acc =
        (kGravity * sin_t - cos_t * temp) / (kHalfLength * (4.0 / 3.0 - kPoleMass * cos_t * cos_t / kTotalMass));
    const double x_acc = temp - kPoleMassLength * theta_acc * cos_t / kTotalMass;
    s.x += kTau * s.x_dot;
    s.x_dot += kTau * x_acc;
    s.theta += kTau * s.theta_dot;
    s.theta_dot += kTau * theta_acc;
    ++s.steps;
    s.last_action = action;
    std::rotate(s.frames.begin(), s.frames.begin() + 1, s.frames.end());
    s.frames.back() = {s.x, s.theta};

    StepResult r;
    r.reward = 1.0;
    r.terminated = s.x < -kXThreshold || s.x > kXThreshold || s.theta < -kThetaThreshold || s.theta > kThetaThreshold;
    r.truncated = !r.terminated && s.steps >= kCartPoleMaxSteps;
    s.done = r.terminated || r.truncated;
    r.observation = encode(s);
    r.concepts = {s.x, s.x_dot, s.theta, s.theta_dot};
    return r;
}

StepResult Environment::step_grid(GridState& s, int action) const {
    if (s.done) throw Error("step called on a finished episode");
    ++s.steps;
    StepResult r;
    const Pos front{s.agent.x + direction_offset(s.dir).x, s.agent.y + direction_offset(s.dir).y};

    bool blocked_forward = false;
    if (kind_ == EnvKind::DynamicObstacles) {
        const Cell fc = s.at(front);
        blocked_forward = fc != Cell::Empty && fc != Cell::Goal;
        // Each obstacle hops to a uniformly chosen free cell of its 3x3
        // neighbourhood, or stays when none is free.
        for (auto& ob : s.obstacles) {
            std::vector<Pos> free;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const Pos p{ob.x + dx, ob.y + dy};
                    if (p.x < 0 || p.y < 0 || p.x >= s.size || p.y >= s.size) continue;
                    if (s.at(p) != Cell::Empty || p == s.agent) continue;
                    free.push_back(p);
                }
            if (free.empty()) continue;
            const Pos to = free[static_cast<std::size_t>(uniform_int(s.rng, 0, static_cast<int>(free.size())))];
            s.at(ob) = Cell::Empty;
            s.at(to) = Cell::Obstacle;
            ob = to;
        }
    }

    switch (action) {
        case kLeft: s.dir = (s.dir + 3) % 4; break;
        case kRight: s.dir = (s.dir + 1) % 4; break;
        case kForward: {
            const Cell fc = s.at(front);
            const bool passable =
                fc == Cell::Empty || fc == Cell::Goal || (fc == Cell::Door && s.door_state == DoorState::Open);
            if (passable) s.agent = front;
            if (fc == Cell::Goal) {
                r.terminated = true;
                r.reward = 1.0 - 0.9 * static_cast<double>(s.steps) / static_cast<double>(s.max_steps);
            }
            break;
        }
        case kPickup:
            if (s.at(front) == Cell::Key && !s.carrying_key) {
                s.carrying_key = true;
                s.at(front) = Cell::Empty;
            }
            break;
        case kToggle:
            if (s.at(front) == Cell::Door) {
                if (s.door_state == DoorState::Locked) {
                    if (s.carrying_key) s.door_state = DoorState::Open;
                } else {
                    s.door_state = s.door_state == DoorState::Open ? DoorState::Closed : DoorState::Open;
                }
            }
            break;
        default: break;
    }

    if (kind_ == EnvKind::DynamicObstacles && action == kForward && blocked_forward) {
        r.reward = -1.0;
        r.terminated = true;
    }
    r.truncated = !r.terminated && s.steps >= s.max_steps;
    s.done = r.terminated || r.truncated;
    r.observation = encode(s);
    r.concepts = true_concepts(s);
    return r;
}

namespace {

bool grid_movable(const GridState& s, int dir) {
    const Pos o = direction_offset(dir);
    const Pos p{s.agent.x + o.x, s.agent.y + o.y};
    if (!s.usable(p)) return false;
    switch (s.at(p)) {
        case Cell::Wall:
        case Cell::Key:
        case Cell::Obstacle: return false;
        case Cell::Door: return s.door_state == DoorState::Open;
        default: return true;
    }
}

}  // namespace

ConceptVector Environment::true_concepts(const EnvState& state) const {
    if (const auto* cp = std::get_if<CartPoleState>(&state)) return {cp->x, cp->x_dot, cp->theta, cp->theta_dot};
    const auto& s = std::get<GridState>(state);
    ConceptVector c;
    c.push_back(s.agent.x - 1);
    c.push_back(s.agent.y - 1);
    c.push_back(s.dir);
    if (s.kind == EnvKind::DoorKey) {
        Pos key{0, 0};
        for (int y = 0; y < s.size; ++y)
            for (int x = 0; x < s.size; ++x)
                if (s.at({x, y}) == Cell::Key) key = {x, y};
        c.push_back(key.x);
        c.push_back(key.y);
        c.push_back(s.door.x - 1);
        c.push_back(s.door.y - 1);
        c.push_back(s.door_state == DoorState::Open ? 1 : 0);
    } else {
        auto obs = s.obstacles;
        std::sort(obs.begin(), obs.end());  // by x, then y
        for (const auto& o : obs) {
            c.push_back(o.x - 1);
            c.push_back(o.y - 1);
        }
    }
    for (int d = 0; d < 4; ++d) c.push_back(grid_movable(s, d) ? 1 : 0);
    return c;
}

Observation Environment::encode(const EnvState& state) const {
    Observation obs(static_cast<std::size_t>(observation_dim()), 0.0f);
    if (const auto* cp = std::get_if<CartPoleState>(&state)) {
        for (std::size_t f = 0; f < cp->frames.size(); ++f) {
            const Eigen::VectorXd e = embed_frame(cp->frames[f][0], cp->frames[f][1]);
            for (int i = 0; i < kCartPoleFrameDim; ++i)
                obs[f * kCartPoleFrameDim + static_cast<std::size_t>(i)] = static_cast<float>(e(i));
        }
        if (cp->last_action >= 0) obs[4 * kCartPoleFrameDim + static_cast<std::size_t>(cp->last_action)] = 1.0f;
        return obs;
    }
    const auto& s = std::get<GridState>(state);
    const int inner = s.size - 2;
    for (int y = 1; y <= inner; ++y)
        for (int x = 1; x <= inner; ++x) {
            const std::size_t base = static_cast<std::size_t>(((y - 1) * inner + (x - 1)) * kGridChannels);
            const Cell c = s.at({x, y});
            obs[base + static_cast<std::size_t>(c)] = 1.0f;
            if (c == Cell::Door) obs[base + 6 + static_cast<std::size_t>(s.door_state)] = 1.0f;
            if (s.agent == Pos{x, y}) {
                obs[base + 9] = 1.0f;
                obs[base + 10 + static_cast<std::size_t>(s.dir)] = 1.0f;
            }
        }
    return obs;
}

namespace {

constexpr char kAgentGlyph[4] = {'>', 'v', '<', '^'};

char cell_glyph(const GridState& s, Pos p) {
    switch (s.at(p)) {
        case Cell::Empty: return '.';
        case Cell::Wall: return '#';
        case Cell::Key: return 'K';
        case Cell::Goal: return 'G';
        case Cell::Obstacle: return 'o';
        case Cell::Door:
            switch (s.door_state) {
                case DoorState::Locked: return 'L';
                case DoorState::Closed: return 'D';
                case DoorState::Open: return '_';
            }
    }
    return '?';
}

std::string render_grid_text(const GridState& s) {
    std::ostringstream os;
    os << to_string(s.kind) << ' ' << s.size << 'x' << s.size << " step=" << s.steps << '\n';
    for (int y = 0; y < s.size; ++y) {
        for (int x = 0; x < s.size; ++x) {
            os << cell_glyph(s, {x, y});
            os << (s.agent == Pos{x, y} ? kAgentGlyph[s.dir] : ' ');
        }
        os << '\n';
    }
    return os.str();
}

std::string render_grid_svg(const GridState& s) {
    constexpr int kCell = 32;
    const int px = s.size * kCell;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << px << "\" height=\"" << px << "\" viewBox=\"0 0 "
       << px << ' ' << px << "\">\n";
    for (int y = 0; y < s.size; ++y)
        for (int x = 0; x < s.size; ++x) {
            const int cx = x * kCell, cy = y * kCell;
            const Cell c = s.at({x, y});
            const char* fill = c == Cell::Wall ? "#7f7f7f" : "#000000";
            os << "<rect x=\"" << cx << "\" y=\"" << cy << "\" width=\"" << kCell << "\" height=\"" << kCell
               << "\" fill=\"" << fill << "\" stroke=\"#404040\"/>\n";
            if (c == Cell::Goal)
                os << "<rect class=\"goal\" x=\"" << cx + 1 << "\" y=\"" << cy + 1 << "\" width=\"" << kCell - 2
                   << "\" height=\"" << kCell - 2 << "\" fill=\"#00ff00\"/>\n";
            if (c == Cell::Door) {
                if (s.door_state == DoorState::Open)
                    os << "<rect class=\"door open\" x=\"" << cx + 1 << "\" y=\"" << cy + 1 << "\" width=\""
                       << kCell - 2 << "\" height=\"" << kCell - 2 << "\" fill=\"none\" stroke=\"#ffff00\"/>\n";
                else
                    os << "<rect class=\"door " << (s.door_state == DoorState::Locked ? "locked" : "closed")
                       << "\" x=\"" << cx + 1 << "\" y=\"" << cy + 1 << "\" width=\"" << kCell - 2
                       << "\" height=\"" << kCell - 2 << "\" fill=\"#ffff00\"/>\n";
            }
            if (c == Cell::Key)
                os << "<polygon class=\"key\" points=\"" << cx + 8 << ',' << cy + 14 << ' ' << cx + 24 << ','
                   << cy + 14 << ' ' << cx + 24 << ',' << cy + 18 << ' ' << cx + 8 << ',' << cy + 18
                   << "\" fill=\"#ffff00\"/>\n";
            if (c == Cell::Obstacle)
                os << "<circle class=\"obstacle\" cx=\"" << cx + kCell / 2 << "\" cy=\"" << cy + kCell / 2
                   << "\" r=\"" << kCell / 2 - 4 << "\" fill=\"#0000ff\"/>\n";
        }
    // Agent triangle, tip pointing along dir.
    const double cx = (s.agent.x + 0.5) * kCell, cy = (s.agent.y + 0.5) * kCell, r = kCell * 0.4;
    const Pos o = direction_offset(s.dir);
    const double tx = cx + o.x * r, ty = cy + o.y * r;
    const double bx = cx - o.x * r, by = cy - o.y * r;
    const double px_ = -o.y * r * 0.8, py_ = o.x * r * 0.8;
    os << "<polygon class=\"agent\" points=\"" << tx << ',' << ty << ' ' << bx + px_ << ',' << by + py_ << ' '
       << bx - px_ << ',' << by - py_ << "\" fill=\"#ff0000\"/>\n";
    os << "</svg>\n";
    return os.str();
}

std::string render_cartpole_text(const CartPoleState& s) {
    std::ostringstream os;
    os << "cartpole step=" << s.steps
       << " last_action=" << (s.last_action < 0 ? "none" : (s.last_action == 1 ? "right" : "left")) << '\n';
    for (std::size_t f = 0; f < s.frames.size(); ++f) {
        os << "frame t-" << (s.frames.size() - 1 - f) << ": cart_position=" << fmt("%+.5f", s.frames[f][0])
           << " pole_angle=" << fmt("%+.5f", s.frames[f][1]) << '\n';
    }
    return os.str();
}

std::string render_cartpole_svg(const CartPoleState& s) {
    constexpr int kWidth = 600, kHeight = 400;
    constexpr double kScale = kWidth / (2 * kXThreshold);
    constexpr double kCartY = 300, kPoleLen = kScale * 2 * kHalfLength;
    const double cart_x = s.x * kScale + kWidth / 2.0;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n";
    os << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"#ffffff\"/>\n";
    os << "<line x1=\"0\" y1=\"" << kCartY << "\" x2=\"" << kWidth << "\" y2=\"" << kCartY
       << "\" stroke=\"#000000\"/>\n";
    os << "<rect class=\"cart\" x=\"" << fmt("%.2f", cart_x - 25) << "\" y=\"" << kCartY - 15
       << "\" width=\"50\" height=\"30\" fill=\"#000000\"/>\n";
    const double tip_x = cart_x + kPoleLen * std::sin(s.theta), tip_y = kCartY - kPoleLen * std::cos(s.theta);
    os << "<line class=\"pole\" x1=\"" << fmt("%.2f", cart_x) << "\" y1=\"" << kCartY << "\" x2=\""
       << fmt("%.2f", tip_x) << "\" y2=\"" << fmt("%.2f", tip_y) << "\" stroke=\"#ca9865\" stroke-width=\"10\"/>\n";
    os << "</svg>\n";
    return os.str();
}

}  // namespace

std::string Environment::render(const EnvState& state, RenderFormat format) const {
    if (const auto* cp = std::get_if<CartPoleState>(&state))
        return format == RenderFormat::Text ? render_cartpole_text(*cp) : render_cartpole_svg(*cp);
    const auto& s = std::get<GridState>(state);
    return format == RenderFormat::Text ? render_grid_text(s) : render_grid_svg(s);
}

}  // namespace licorice
