#include "licorice/oracles.hpp"

#include <algorithm>
#include <numeric>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include <httplib.h>

namespace licorice {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double elapsed_ms(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

EnvKind LabelQuery::kind() const {
    if (!env) throw OracleError("query " + std::to_string(id) + ": no environment attached");
    return env->kind();
}

const ConceptSchema& LabelQuery::schema() const {
    if (!env) throw OracleError("query " + std::to_string(id) + ": no environment attached");
    return env->schema();
}

std::string LabelQuery::render_text() const { return env->render(state, RenderFormat::Text); }
std::string LabelQuery::render_svg() const { return env->render(state, RenderFormat::Svg); }

// --- ground truth / noisy ------------------------------------------------------

std::vector<LabelResponse> GroundTruthOracle::label(std::span<const LabelQuery> batch) {
    std::vector<LabelResponse> out;
    out.reserve(batch.size());
    for (const auto& q : batch) {
        const auto t0 = Clock::now();
        if (!q.env) throw OracleError("stale query " + std::to_string(q.id) + ": no environment");
        const bool cart = std::holds_alternative<CartPoleState>(q.state);
        if (cart != (q.env->kind() == EnvKind::CartPole))
            throw OracleError("stale query " + std::to_string(q.id) + ": state does not belong to " +
                              to_string(q.env->kind()));
        if (const auto* g = std::get_if<GridState>(&q.state); g && g->kind != q.env->kind())
            throw OracleError("stale query " + std::to_string(q.id) + ": state does not belong to " +
                              to_string(q.env->kind()));
        LabelResponse r;
        r.id = q.id;
        r.concepts = q.env->true_concepts(q.state);
        r.annotator = name();
        r.latency_ms = elapsed_ms(t0);
        out.push_back(std::move(r));
    }
    return out;
}

NoisyOracle::NoisyOracle(double epsilon, double sigma, std::uint64_t seed)
    : epsilon_(epsilon), sigma_(sigma), rng_(derive_seed(seed, 0x0015e)) {
    if (!(epsilon >= 0 && epsilon <= 1)) throw Error("noisy oracle: epsilon must be in [0, 1]");
    if (!(sigma >= 0)) throw Error("noisy oracle: sigma must be >= 0");
}

std::string NoisyOracle::name() const {
    std::ostringstream os;
    os << "noisy:" << epsilon_;
    if (sigma_ > 0) os << ':' << sigma_;
    return os.str();
}

std::vector<LabelResponse> NoisyOracle::label(std::span<const LabelQuery> batch) {
    GroundTruthOracle truth;
    std::vector<LabelResponse> out = truth.label(batch);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const ConceptSchema& schema = batch[i].schema();
        auto& c = out[i].concepts;
        for (std::size_t v = 0; v < c.size(); ++v) {
            const ConceptSpec& s = schema[v];
            if (s.kind == ConceptSpec::Kind::Categorical) {
                if (s.cardinality > 1 && uniform01(rng_) < epsilon_) {
                    int other = uniform_int(rng_, 0, s.cardinality - 1);
                    if (other >= static_cast<int>(c[v])) ++other;
                    c[v] = other;
                }
            } else if (sigma_ > 0) {
                c[v] = std::clamp(c[v] + sigma_ * gauss(rng_), s.lower, s.upper);
            }
        }
        out[i].annotator = name();
    }
    return out;
}

// --- counting ----------------------------------------------------------------

void CountingOracle::check(std::span<const LabelQuery> batch, const std::vector<LabelResponse>& out) const {
    for (const auto& r : out) {
        const auto it = std::find_if(batch.begin(), batch.end(), [&](const LabelQuery& q) { return q.id == r.id; });
        if (it == batch.end()) throw OracleError("oracle answered unknown query " + std::to_string(r.id));
        if (auto why = it->schema().check(r.concepts))
            throw OracleError("oracle " + inner_->name() + " returned an invalid label for query " +
                              std::to_string(r.id) + ": " + *why);
    }
}

std::vector<LabelResponse> CountingOracle::label(std::span<const LabelQuery> batch) {
    try {
        std::vector<LabelResponse> out = inner_->label(batch);
        if (out.size() != batch.size())
            throw OracleError("oracle " + inner_->name() + " answered " + std::to_string(out.size()) + " of " +
                              std::to_string(batch.size()) + " queries");
        check(batch, out);
        queries_ += static_cast<long>(out.size());
        ++batches_;
        return out;
    } catch (PartialLabelError& e) {
        check(batch, e.completed);
        queries_ += static_cast<long>(e.completed.size());
        ++batches_;
        throw;
    }
}

// --- annotation service ----------------------------------------------------------

namespace {

const char* kDefaultUi = R"(<!doctype html>
<html><head><meta charset="utf-8"><title>Annotation console</title></head>
<body>
<h1>Annotation console</h1>
<p>Pending queries: <a href="/api/v1/queries?status=pending">/api/v1/queries?status=pending</a></p>
<p>Status: <a href="/api/v1/status">/api/v1/status</a></p>
</body></html>
)";

json schema_descriptor(const ConceptSchema& schema) {
    json out = json::array();
    for (const auto& s : schema.specs()) {
        json j{{"name", s.name}, {"group", s.group}};
        if (s.kind == ConceptSpec::Kind::Categorical) {
            j["kind"] = "categorical";
            j["cardinality"] = s.cardinality;
        } else {
            j["kind"] = "continuous";
            j["lower"] = std::isfinite(s.lower) ? json(s.lower) : json(nullptr);
            j["upper"] = std::isfinite(s.upper) ? json(s.upper) : json(nullptr);
        }
        out.push_back(std::move(j));
    }
    return out;
}

}  // namespace

AnnotationService::AnnotationService(std::string state_path) : state_path_(std::move(state_path)), ui_html_(kDefaultUi) {
    if (!state_path_.empty() && std::filesystem::exists(state_path_)) restore();
}

AnnotationService::~AnnotationService() { stop(); }

json AnnotationService::record_json(const Record& r, bool with_label) {
    json j{{"id", r.id},
           {"env", to_string(r.kind)},
           {"schema", schema_descriptor(make_schema(r.kind))},
           {"render_text", r.render_text},
           {"render_svg", r.render_svg}};
    if (with_label) {
        j["status"] = r.labeled ? "labeled" : "pending";
        if (r.labeled) j["values"] = r.values;
    }
    return j;
}

void AnnotationService::persist_locked() const {
    if (state_path_.empty()) return;
    json j{{"iteration", iteration_}, {"budget_total", budget_total_}, {"budget_spent", budget_spent_}};
    json recs = json::array();
    for (const auto& [id, r] : records_) recs.push_back(record_json(r, true));
    j["records"] = std::move(recs);
    const std::string tmp = state_path_ + ".tmp";
    {
        std::ofstream os(tmp);
        if (!os) throw Error("cannot write annotation state " + tmp);
        os << j.dump() << '\n';
    }
    std::filesystem::rename(tmp, state_path_);
}

void AnnotationService::restore() {
    std::ifstream is(state_path_);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw Error("corrupt annotation state " + state_path_ + ": " + e.what());
    }
    iteration_ = j.value("iteration", 0);
    budget_total_ = j.value("budget_total", 0L);
    budget_spent_ = j.value("budget_spent", 0L);
    for (const auto& rj : j.at("records")) {
        Record r;
        r.id = rj.at("id").get<std::uint64_t>();
        r.kind = parse_env_kind(rj.at("env").get<std::string>());
        r.render_text = rj.at("render_text").get<std::string>();
        r.render_svg = rj.at("render_svg").get<std::string>();
        r.labeled = rj.at("status").get<std::string>() == "labeled";
        if (r.labeled) r.values = rj.at("values").get<ConceptVector>();
        records_[r.id] = std::move(r);
    }
}

void AnnotationService::enqueue(std::span<const LabelQuery> batch) {
    std::lock_guard lock(mu_);
    for (const auto& q : batch)
        if (records_.count(q.id)) throw Error("annotation service: duplicate query id " + std::to_string(q.id));
    for (const auto& q : batch) {
        Record r;
        r.id = q.id;
        r.kind = q.kind();
        r.render_text = q.render_text();
        r.render_svg = q.render_svg();
        records_[q.id] = std::move(r);
    }
    persist_locked();
}

AnnotationService::Reply AnnotationService::submit(std::uint64_t id, const json& body) {
    std::lock_guard lock(mu_);
    auto it = records_.find(id);
    if (it == records_.end()) return {404, {{"error", "unknown query " + std::to_string(id)}}};
    if (it->second.labeled) return {409, {{"error", "query " + std::to_string(id) + " is already labeled"}}};
    if (!body.is_object() || !body.contains("values") || !body["values"].is_array())
        return {422, {{"error", "body must be {\"values\": [...]}"}}};
    ConceptVector values;
    for (const auto& v : body["values"]) {
        if (v.is_boolean()) {
            values.push_back(v.get<bool>() ? 1.0 : 0.0);
        } else if (v.is_number()) {
            values.push_back(v.get<double>());
        } else {
            return {422, {{"error", "values must be numbers"}}};
        }
    }
    if (auto why = make_schema(it->second.kind).check(values)) return {422, {{"error", *why}}};
    it->second.labeled = true;
    it->second.values = std::move(values);
    persist_locked();
    cv_.notify_all();
    return {200, {{"id", id}, {"status", "labeled"}}};
}

json AnnotationService::pending() const {
    std::lock_guard lock(mu_);
    json out = json::array();
    for (const auto& [id, r] : records_)
        if (!r.labeled) out.push_back(record_json(r, false));
    return out;
}

std::size_t AnnotationService::pending_count() const {
    std::lock_guard lock(mu_);
    return static_cast<std::size_t>(
        std::count_if(records_.begin(), records_.end(), [](const auto& kv) { return !kv.second.labeled; }));
}

json AnnotationService::status() const {
    const std::size_t pend = pending_count();
    std::lock_guard lock(mu_);
    return {{"iteration", iteration_},
            {"budget_total", budget_total_},
            {"budget_spent", budget_spent_},
            {"pending_count", pend}};
}

std::optional<ConceptVector> AnnotationService::label_of(std::uint64_t id) const {
    std::lock_guard lock(mu_);
    auto it = records_.find(id);
    if (it == records_.end() || !it->second.labeled) return std::nullopt;
    return it->second.values;
}

bool AnnotationService::wait_for(std::span<const std::uint64_t> ids, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mu_);
    return cv_.wait_for(lock, timeout, [&] {
        for (auto id : ids) {
            auto it = records_.find(id);
            if (it == records_.end() || !it->second.labeled) return false;
        }
        return true;
    });
}

void AnnotationService::set_progress(int iteration, long budget_total, long budget_spent) {
    std::lock_guard lock(mu_);
    iteration_ = iteration;
    budget_total_ = budget_total;
    budget_spent_ = budget_spent;
    persist_locked();
}

void AnnotationService::set_ui_html(std::string html) {
    std::lock_guard lock(mu_);
    ui_html_ = std::move(html);
}

int AnnotationService::start(const std::string& host, int port) {
    if (server_) throw Error("annotation service already running");
    server_ = std::make_unique<httplib::Server>();
    auto& srv = *server_;
    auto send_json = [](httplib::Response& res, int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    };
    if (!static_dir_.empty() && !srv.set_mount_point("/", static_dir_))
        throw Error("annotation service: UI directory " + static_dir_ + " does not exist");
    srv.Get("/", [this](const httplib::Request&, httplib::Response& res) {
        std::lock_guard lock(mu_);
        res.set_content(ui_html_, "text/html");
    });
    srv.Get("/api/v1/queries", [this, send_json](const httplib::Request& req, httplib::Response& res) {
        const std::string st = req.has_param("status") ? req.get_param_value("status") : "pending";
        if (st != "pending") return send_json(res, 400, {{"error", "only status=pending is supported"}});
        send_json(res, 200, pending());
    });
    srv.Post(R"(/api/v1/queries/(\d+)/label)", [this, send_json](const httplib::Request& req, httplib::Response& res) {
        std::uint64_t id = 0;
        try {
            id = std::stoull(req.matches[1].str());
        } catch (const std::exception&) {
            return send_json(res, 404, {{"error", "unknown query"}});
        }
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::exception&) {
            return send_json(res, 422, {{"error", "body is not JSON"}});
        }
        const Reply r = submit(id, body);
        send_json(res, r.status, r.body);
    });
    srv.Get("/api/v1/status", [this, send_json](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, status());
    });

    port_ = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
    if (port_ <= 0) {
        server_.reset();
        port_ = 0;
        throw Error("annotation service: cannot bind " + host + ":" + std::to_string(port) + " (port in use?)");
    }
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port_;
}

void AnnotationService::stop() {
    if (server_) {
        server_->stop();
        if (thread_.joinable()) thread_.join();
        server_.reset();
    }
    std::lock_guard lock(mu_);
    if (!state_path_.empty()) persist_locked();
}

std::vector<LabelResponse> HumanOracle::label(std::span<const LabelQuery> batch) {
    const auto t0 = Clock::now();
    service_->enqueue(batch);
    std::vector<std::uint64_t> ids;
    for (const auto& q : batch) ids.push_back(q.id);
    const bool all = service_->wait_for(ids, timeout_);
    std::vector<LabelResponse> out;
    for (const auto& q : batch) {
        auto v = service_->label_of(q.id);
        if (!v) continue;
        LabelResponse r;
        r.id = q.id;
        r.concepts = std::move(*v);
        r.annotator = name();
        r.latency_ms = elapsed_ms(t0);
        out.push_back(std::move(r));
    }
    if (!all)
        throw PartialLabelError("human oracle: timed out with " + std::to_string(out.size()) + " of " +
                                    std::to_string(batch.size()) + " labels",
                                std::move(out));
    return out;
}

// --- text render parsing -------------------------------------------------------

ConceptVector parse_text_render(const std::string& text) {
    std::istringstream is(text);
    std::string header;
    std::getline(is, header);
    std::istringstream hs(header);
    std::string kind_name;
    hs >> kind_name;
    const EnvKind kind = parse_env_kind(kind_name);

    if (kind == EnvKind::CartPole) {
        static const std::regex frame_re(R"(cart_position=([-+0-9.eE]+) pole_angle=([-+0-9.eE]+))");
        std::vector<std::pair<double, double>> frames;
        std::string line;
        while (std::getline(is, line)) {
            std::smatch m;
            if (std::regex_search(line, m, frame_re)) frames.emplace_back(std::stod(m[1]), std::stod(m[2]));
        }
        if (frames.size() < 2) throw Error("cartpole render: expected at least two frames");
        const auto& cur = frames.back();
        const auto& prev = frames[frames.size() - 2];
        constexpr double kTau = 0.02;
        return {cur.first, (cur.first - prev.first) / kTau, cur.second, (cur.second - prev.second) / kTau};
    }

    std::vector<std::string> rows;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) rows.push_back(line);
    const int size = static_cast<int>(rows.size());
    auto glyph = [&](int x, int y) -> char {
        const auto& r = rows[static_cast<std::size_t>(y)];
        const auto i = static_cast<std::size_t>(2 * x);
        if (i >= r.size()) throw Error("grid render: short row " + std::to_string(y));
        return r[i];
    };
    auto agent_glyph = [&](int x, int y) -> char {
        const auto& r = rows[static_cast<std::size_t>(y)];
        const auto i = static_cast<std::size_t>(2 * x + 1);
        return i < r.size() ? r[i] : ' ';
    };
    Pos agent{-1, -1}, key{0, 0}, door{-1, -1};
    int dir = -1;
    bool door_open = false;
    std::vector<Pos> obstacles;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const char c = glyph(x, y);
            const char a = agent_glyph(x, y);
            if (a != ' ') {
                agent = {x, y};
                dir = static_cast<int>(std::string(">v<^").find(a));
            }
            if (c == 'K') key = {x, y};
            if (c == 'L' || c == 'D' || c == '_') {
                door = {x, y};
                door_open = c == '_';
            }
            if (c == 'o') obstacles.push_back({x, y});
        }
    if (dir < 0) throw Error("grid render: no agent");
    auto movable = [&](int d) {
        const Pos o = direction_offset(d);
        const Pos p{agent.x + o.x, agent.y + o.y};
        if (p.x < 1 || p.y < 1 || p.x > size - 2 || p.y > size - 2) return 0.0;
        const char c = glyph(p.x, p.y);
        return (c == '.' || c == 'G' || c == '_') ? 1.0 : 0.0;
    };
    ConceptVector out{double(agent.x - 1), double(agent.y - 1), double(dir)};
    if (kind == EnvKind::DoorKey) {
        if (door.x < 0) throw Error("doorkey render: no door");
        out.insert(out.end(), {double(key.x), double(key.y), double(door.x - 1), double(door.y - 1),
                               door_open ? 1.0 : 0.0});
    } else {
        std::sort(obstacles.begin(), obstacles.end());
        for (const auto& o : obstacles) {
            out.push_back(o.x - 1);
            out.push_back(o.y - 1);
        }
    }
    for (int d = 0; d < 4; ++d) out.push_back(movable(d));
    return out;
}

ScriptedAnnotator::ScriptedAnnotator(std::string host, int port) : host_(std::move(host)), port_(port) {}

ScriptedAnnotator::~ScriptedAnnotator() { stop(); }

int ScriptedAnnotator::run_once() {
    httplib::Client cli(host_, port_);
    cli.set_read_timeout(5, 0);
    auto res = cli.Get("/api/v1/queries?status=pending");
    if (!res) throw Error("scripted annotator: service unreachable");
    if (res->status != 200) throw Error("scripted annotator: GET pending returned " + std::to_string(res->status));
    const json pending = json::parse(res->body);
    int accepted = 0;
    for (const auto& q : pending) {
        const ConceptVector values = parse_text_render(q.at("render_text").get<std::string>());
        const std::string path = "/api/v1/queries/" + std::to_string(q.at("id").get<std::uint64_t>()) + "/label";
        auto r = cli.Post(path, json{{"values", values}}.dump(), "application/json");
        if (r && r->status == 200) ++accepted;
    }
    labeled_ += accepted;
    return accepted;
}

void ScriptedAnnotator::start(std::chrono::milliseconds poll) {
    if (running_.exchange(true)) return;
    thread_ = std::thread([this, poll] {
        while (running_) {
            try {
                run_once();
            } catch (const std::exception&) {
                // service not up yet; keep polling
            }
            std::this_thread::sleep_for(poll);
        }
    });
}

void ScriptedAnnotator::stop() {
    running_ = false;
    if (thread_.joinable()) thread_.join();
}

// --- VLM -----------------------------------------------------------------------

namespace {

constexpr const char* kCartPolePrompt =
    R"(Here are the past 4 rendered frames from the CartPole environment. Please use these images to estimate the following values in the latest frame (the last one):
- Cart Position, within the range (-2.4, 2.4)
- Cart Velocity
- Pole Angle, within the range (-0.2095, 0.2095)
- Pole Angular Velocity
Additionally, please note that the last action taken was [last action].

Please carefully determine the following values and give concise answers one by one. Make sure to return an estimated value for each parameter, even if the task may look challenging.

Follow the reporting format:
- Cart Position: estimated_value
- Cart Velocity: estimated_value
- Pole Angle: estimated_value
- Pole Angular Velocity: estimated_value)";

constexpr const char* kDoorKeyPrompt =
    R"(Here is an image of a 4x4 grid composed of black cells, with each cell either empty or containing an object. Each cell is defined by an integer-valued coordinate system starting at (1, 1) for the top-left cell. The coordinates increase rightward along the x-axis and downward along the y-axis. Within this grid, there is a red isosceles triangle representing the agent, a yellow cell representing the door (which may visually disappear if the door is open), a yellow key icon representing the key (which may disappear), and one green square representing the goal. Carefully analyze the grid and report on the following attributes, focusing only on the black cells as the gray cells are excluded from the active black area.

Detailed Instructions:
1. Agent Position: Identify and report the coordinates (x, y) of the red triangle (agent). Ensure the accuracy by double-checking the agent's exact location within the grid.
2. Agent Direction: Specify the direction the red triangle is facing, which is the orientation of the vertex (pointy corner) of the isosceles triangle. Choose from 'right', 'down', 'left', or 'up'. Clarify that this direction is independent of movement options.
3. Key Position: Provide the coordinates (x, y) where the key is located. If the key is absent, report as (0, 0). Verify visually that the key is present or not before reporting.
4. Door Position:
- Position: Determine and report the coordinates (x, y) of the door.
- Status: Assess whether the door is open or closed (closed means the door is visible as a whole yellow cell, while open means the door disappears visually). Report as 'true' for open and 'false' for closed. Double-check the door's appearance to confirm if it is open or closed.
5. Direction Movable: Evaluate and report whether the agent can move one cell in each specified direction, namely, the neighboring cell in that direction is active and empty (not key, closed door, or grey inactive cell):
- Right (x + 1): Check the cell to the right.
- Down (y + 1): Check the cell below.
- Left (x - 1): Check the cell to the left.
- Up (y - 1): Check the cell above.
Each direction's feasibility should be reported as 'true' if clear and within the grid, and 'false' otherwise.

Reporting Format:
Carefully report each piece of information sequentially, following the format 'name: answer'. Ensure each response is precise and reflects careful verification of the grid details as viewed.)";

constexpr const char* kDynObsPrompt =
    R"(Here is an image of a 3x3 grid composed of black cells, with each cell either empty or containing an object.
Each cell is defined by an integer-valued coordinate system starting at (1, 1) for the top-left cell.
The coordinates increase rightward along the x-axis and downward along the y-axis.
Within this grid, there is a red isosceles triangle representing the agent, two blue balls representing obstacles, and one green square representing the goal.
Please carefully determine the following values and give concise answers one by one:
1. Agent Position: Identify and report the coordinates (x, y) of the red triangle (agent). Ensure the accuracy by double-checking the agent's exact location within the grid.
2. Agent Direction: Specify the direction the red triangle is facing, which is the orientation of the vertex (pointy corner) of the isosceles triangle. Choose from 'right', 'down', 'left', or 'up'. Clarify that this direction is independent of movement options.
3. Obstacle Position: Identify and report the coordinates of the two obstacles in ascending order. Compare the coordinates by their x-values first. If the x-values are equal, compare by their y-values.
 (a) First Obstacle: Provide the coordinates (x, y) of the first blue ball.
 (b) Second Obstacle: Provide the coordinates (x, y) of the second blue ball.
4. Direction Movable: Evaluate and report whether the agent can move one cell in each specified direction, namely, the neighboring cell in that direction is active and empty (not obstacle or out of bounds):
- Right (x + 1): Check the cell to the right.
- Down (y + 1): Check the cell below.
- Left (x - 1): Check the cell to the left.
- Up (y - 1): Check the cell above.
Each direction's feasibility should be reported as 'true' if clear and within the grid, and 'false' otherwise.

Reporting Format: Carefully report each piece of information sequentially, following the format 'name: answer'.
Ensure each response is precise and reflects careful verification of the grid details as viewed.)";

std::string lower_trim(std::string s) {
    for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    const auto b = s.find_first_not_of(" \t\r*`");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r*`.");
    return s.substr(b, e - b + 1);
}

/// Field name with list markers, emphasis and parentheticals removed.
std::string normalize_name(std::string s) {
    s = std::regex_replace(s, std::regex(R"(\([^)]*\))"), "");
    s = lower_trim(s);
    s = std::regex_replace(s, std::regex(R"(^([-*•]|\d+[.)]|\(?[a-z][.)])\s*)"), "");
    s = std::regex_replace(s, std::regex(R"([_*`])"), " ");
    s = std::regex_replace(s, std::regex(R"(\s+)"), " ");
    return lower_trim(s);
}

std::optional<std::pair<int, int>> parse_pair(const std::string& v) {
    static const std::regex re(R"((-?\d+)\s*,\s*(-?\d+))");
    std::smatch m;
    if (!std::regex_search(v, m, re)) return std::nullopt;
    return std::make_pair(std::stoi(m[1]), std::stoi(m[2]));
}

std::optional<int> parse_direction(const std::string& v) {
    const std::string s = lower_trim(v);
    static const char* names[4] = {"right", "down", "left", "up"};
    for (int d = 0; d < 4; ++d)
        if (s.find(names[d]) != std::string::npos) return d;
    return std::nullopt;
}

std::optional<int> parse_bool(const std::string& v) {
    const std::string s = lower_trim(v);
    if (s.rfind("true", 0) == 0 || s.rfind("yes", 0) == 0 || s.rfind("open", 0) == 0) return 1;
    if (s.rfind("false", 0) == 0 || s.rfind("no", 0) == 0 || s.rfind("closed", 0) == 0) return 0;
    return std::nullopt;
}

std::optional<double> parse_real(const std::string& v) {
    static const std::regex re(R"([-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?)");
    std::smatch m;
    if (!std::regex_search(v, m, re)) return std::nullopt;
    return std::stod(m[0]);
}

}  // namespace

std::string vlm_instructions(EnvKind kind, int last_action) {
    switch (kind) {
        case EnvKind::CartPole: {
            std::string p = kCartPolePrompt;
            const std::string action = last_action < 0 ? "none" : (last_action == 1 ? "right" : "left");
            p.replace(p.find("[last action]"), std::string("[last action]").size(), action);
            return p;
        }
        case EnvKind::DoorKey: return kDoorKeyPrompt;
        case EnvKind::DynamicObstacles: return kDynObsPrompt;
    }
    throw Error("vlm_instructions: unknown kind");
}

std::string vlm_prompt(const LabelQuery& q) {
    int last_action = -1;
    if (const auto* cp = std::get_if<CartPoleState>(&q.state)) last_action = cp->last_action;
    return vlm_instructions(q.kind(), last_action) + "\n\nState:\n" + q.render_text();
}

bool ParsedAnswer::complete() const {
    return std::all_of(present.begin(), present.end(), [](bool b) { return b; });
}

ParsedAnswer parse_vlm_answer(EnvKind kind, const std::string& text) {
    const ConceptSchema schema = make_schema(kind);
    ParsedAnswer out;
    out.values.assign(schema.size(), 0.0);
    out.present.assign(schema.size(), false);
    auto set = [&](std::size_t i, double v) {
        const ConceptSpec& s = schema[i];
        if (s.kind == ConceptSpec::Kind::Categorical) {
            if (v < 0 || v >= s.cardinality) return;
        } else if (!(v >= s.lower && v <= s.upper)) {
            return;
        }
        out.values[i] = v;
        out.present[i] = true;
    };
    auto set_pair = [&](std::size_t i, const std::string& v, int offset) {
        if (auto p = parse_pair(v)) {
            set(i, p->first + offset);
            set(i + 1, p->second + offset);
        }
    };
    auto set_bool = [&](std::size_t i, const std::string& v) {
        if (auto b = parse_bool(v)) set(i, *b);
    };

    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        const std::string name = normalize_name(line.substr(0, colon));
        const std::string value = line.substr(colon + 1);
        if (kind == EnvKind::CartPole) {
            static const char* names[4] = {"cart position", "cart velocity", "pole angle", "pole angular velocity"};
            for (std::size_t i = 0; i < 4; ++i)
                if (name == names[i])
                    if (auto r = parse_real(value)) set(i, *r);
            continue;
        }
        if (name == "agent position") {
            set_pair(0, value, -1);
        } else if (name == "agent direction") {
            if (auto d = parse_direction(value)) set(2, *d);
        } else if (kind == EnvKind::DoorKey && name == "key position") {
            set_pair(3, value, 0);
        } else if (kind == EnvKind::DoorKey && (name == "door position" || name == "position")) {
            set_pair(5, value, -1);
        } else if (kind == EnvKind::DoorKey && (name == "status" || name == "door status" || name == "door open")) {
            set_bool(7, value);
        } else if (kind == EnvKind::DynamicObstacles && name == "first obstacle") {
            set_pair(3, value, -1);
        } else if (kind == EnvKind::DynamicObstacles && name == "second obstacle") {
            set_pair(5, value, -1);
        } else {
            static const char* dirs[4] = {"right", "down", "left", "up"};
            const std::size_t base = schema.size() - 4;
            for (std::size_t d = 0; d < 4; ++d)
                if (name == dirs[d] || name == std::string("movable ") + dirs[d] ||
                    name == std::string("direction movable ") + dirs[d])
                    set_bool(base + d, value);
        }
    }
    return out;
}

ConceptVector fallback_concepts(const ConceptSchema& schema) {
    ConceptVector out;
    for (const auto& s : schema.specs()) {
        if (s.kind == ConceptSpec::Kind::Categorical)
            out.push_back(0);
        else
            out.push_back(s.bounded() ? 0.5 * (s.lower + s.upper) : 0.0);
    }
    return out;
}

ChatTransport http_transport() {
    return [](const std::string& url, const std::string& body,
              const std::vector<std::pair<std::string, std::string>>& headers, double timeout_s) {
        static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
        std::smatch m;
        if (!std::regex_match(url, m, re)) throw OracleError("vlm: malformed endpoint URL " + url);
        httplib::Client cli(m[1].str());
        const auto secs = static_cast<time_t>(timeout_s);
        const auto usecs = static_cast<time_t>((timeout_s - static_cast<double>(secs)) * 1e6);
        cli.set_connection_timeout(secs, usecs);
        cli.set_read_timeout(secs, usecs);
        httplib::Headers h;
        for (const auto& [k, v] : headers) h.emplace(k, v);
        auto res = cli.Post(m[2].matched ? m[2].str() : "/", h, body, "application/json");
        HttpReply r;
        if (res) {
            r.status = res->status;
            r.body = res->body;
        }
        return r;
    };
}

VlmOracle::VlmOracle(VlmConfig config, ChatTransport transport)
    : config_(std::move(config)), transport_(transport ? std::move(transport) : http_transport()) {
    if (config_.base_url.empty()) throw Error("vlm oracle: empty endpoint");
    if (config_.max_attempts < 1) throw Error("vlm oracle: max_attempts must be >= 1");
}

std::string VlmOracle::complete(const std::string& prompt) {
    std::string base = config_.base_url;
    while (!base.empty() && base.back() == '/') base.pop_back();
    const std::string url = base + "/chat/completions";
    const json body{{"model", config_.model},
                    {"temperature", 0},
                    {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})}};
    std::vector<std::pair<std::string, std::string>> headers;
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key)
        headers.emplace_back("Authorization", std::string("Bearer ") + key);

    std::string last_error;
    for (int attempt = 0; attempt < config_.max_attempts; ++attempt) {
        if (attempt > 0)
            std::this_thread::sleep_for(std::chrono::duration<double>(config_.backoff_s * (1 << (attempt - 1))));
        ++requests_;
        const HttpReply r = transport_(url, body.dump(), headers, config_.timeout_s);
        if (r.status == 401 || r.status == 403)
            throw OracleError("vlm: authentication failed (HTTP " + std::to_string(r.status) + "); check $" +
                              config_.api_key_env);
        if (r.status == 200) {
            try {
                return json::parse(r.body).at("choices").at(0).at("message").at("content").get<std::string>();
            } catch (const json::exception& e) {
                throw OracleError(std::string("vlm: malformed completion: ") + e.what());
            }
        }
        last_error = r.status < 0 ? "no response" : "HTTP " + std::to_string(r.status);
        if (r.status >= 400 && r.status < 500 && r.status != 429)
            throw OracleError("vlm: request rejected (" + last_error + "): " + r.body.substr(0, 200));
    }
    throw OracleError("vlm: giving up after " + std::to_string(config_.max_attempts) + " attempts (" + last_error +
                      ")");
}

std::vector<LabelResponse> VlmOracle::label(std::span<const LabelQuery> batch) {
    std::vector<LabelResponse> out;
    for (const auto& q : batch) {
        const auto t0 = Clock::now();
        const std::string prompt = vlm_prompt(q);
        ParsedAnswer a = parse_vlm_answer(q.kind(), complete(prompt));
        if (!a.complete()) {
            const ParsedAnswer retry = parse_vlm_answer(q.kind(), complete(prompt));
            for (std::size_t i = 0; i < a.values.size(); ++i)
                if (retry.present[i]) {
                    a.values[i] = retry.values[i];
                    a.present[i] = true;
                }
        }
        LabelResponse r;
        r.id = q.id;
        r.annotator = name() + ":" + config_.model;
        const ConceptVector fb = fallback_concepts(q.schema());
        r.concepts = a.values;
        for (std::size_t i = 0; i < r.concepts.size(); ++i)
            if (!a.present[i]) {
                r.concepts[i] = fb[i];
                r.flagged = true;
            }
        r.latency_ms = elapsed_ms(t0);
        out.push_back(std::move(r));
    }
    return out;
}

LabelingError labeling_error(Oracle& oracle, std::span<const LabelQuery> batch) {
    if (batch.empty()) throw OracleError("labeling_error: empty batch");
    const ConceptSchema& schema = batch.front().schema();
    const bool categorical = schema.is_categorical();
    LabelingError out;
    out.per_concept.assign(schema.size(), 0.0);
    out.samples = static_cast<long>(batch.size());
    const auto responses = oracle.label(batch);
    if (responses.size() != batch.size()) throw OracleError("labeling_error: oracle answered a different batch size");
    for (const auto& r : responses) {
        const auto it = std::find_if(batch.begin(), batch.end(), [&](const LabelQuery& q) { return q.id == r.id; });
        if (it == batch.end()) throw OracleError("labeling_error: unknown response id " + std::to_string(r.id));
        const ConceptVector truth = it->env->true_concepts(it->state);
        for (std::size_t v = 0; v < truth.size(); ++v) {
            const double d = r.concepts[v] - truth[v];
            out.per_concept[v] += categorical ? (d == 0 ? 0.0 : 1.0) : d * d;
        }
        if (r.flagged) ++out.flagged;
    }
    for (auto& e : out.per_concept) e /= static_cast<double>(batch.size());
    out.mean = std::accumulate(out.per_concept.begin(), out.per_concept.end(), 0.0) /
               static_cast<double>(out.per_concept.size());
    return out;
}

// --- oracle specs ---------------------------------------------------------------

OracleSpec OracleSpec::parse(const std::string& text) {
    OracleSpec s;
    if (text == "env" || text == "truth") return s;
    const auto colon = text.find(':');
    const std::string head = text.substr(0, colon);
    const std::string rest = colon == std::string::npos ? "" : text.substr(colon + 1);
    try {
        if (head == "noisy") {
            s.kind = Kind::Noisy;
            const auto c2 = rest.find(':');
            s.epsilon = std::stod(rest.substr(0, c2));
            if (c2 != std::string::npos) s.sigma = std::stod(rest.substr(c2 + 1));
            if (!(s.epsilon >= 0 && s.epsilon <= 1) || !(s.sigma >= 0)) throw Error("");
            return s;
        }
        if (head == "human") {
            s.kind = Kind::Human;
            s.port = rest.empty() ? 8080 : std::stoi(rest);
            if (s.port < 0 || s.port > 65535) throw Error("");
            return s;
        }
        if (head == "vlm" && !rest.empty()) {
            s.kind = Kind::Vlm;
            s.endpoint = rest;
            return s;
        }
    } catch (const std::exception&) {
    }
    throw Error("bad oracle spec '" + text + "' (expected env, noisy:<eps>[:<sigma>], human:<port> or vlm:<url>)");
}

std::string OracleSpec::str() const {
    std::ostringstream os;
    switch (kind) {
        case Kind::GroundTruth: return "env";
        case Kind::Noisy:
            os << "noisy:" << epsilon;
            if (sigma > 0) os << ':' << sigma;
            return os.str();
        case Kind::Human: return "human:" + std::to_string(port);
        case Kind::Vlm: return "vlm:" + endpoint;
    }
    return "env";
}

}  // namespace licorice
