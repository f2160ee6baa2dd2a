#pragma once

// Label oracles. Every oracle answers a batch of queries with concept vectors;
// the counting wrapper audits spend and rejects anything outside the schema.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "licorice/envs.hpp"

namespace httplib {
class Server;
}

namespace licorice {

struct LabelQuery {
    std::uint64_t id = 0;
    const Environment* env = nullptr;
    EnvState state;
    Observation observation;

    EnvKind kind() const;
    const ConceptSchema& schema() const;
    std::string render_text() const;
    std::string render_svg() const;
};

struct LabelResponse {
    std::uint64_t id = 0;
    ConceptVector concepts;
    std::string annotator;
    double latency_ms = 0;
    bool flagged = false;  // some field holds a fallback value
};

class OracleError : public Error {
public:
    using Error::Error;
};

/// Only part of a batch came back. `completed` holds the labeled subset.
class PartialLabelError : public OracleError {
public:
    PartialLabelError(const std::string& what, std::vector<LabelResponse> done)
        : OracleError(what), completed(std::move(done)) {}
    std::vector<LabelResponse> completed;
};

class Oracle {
public:
    virtual ~Oracle() = default;
    virtual std::string name() const = 0;
    /// Responses come back in batch order.
    virtual std::vector<LabelResponse> label(std::span<const LabelQuery> batch) = 0;
};

class GroundTruthOracle : public Oracle {
public:
    std::string name() const override { return "env"; }
    std::vector<LabelResponse> label(std::span<const LabelQuery> batch) override;
};

/// Categorical: each variable is replaced by a uniformly drawn other class
/// with probability epsilon. Continuous: adds N(0, sigma^2), clipped to range.
class NoisyOracle : public Oracle {
public:
    NoisyOracle(double epsilon, double sigma, std::uint64_t seed);
    std::string name() const override;
    std::vector<LabelResponse> label(std::span<const LabelQuery> batch) override;

private:
    double epsilon_, sigma_;
    Rng rng_;
};

/// Counts answered queries and validates each response before it leaves.
class CountingOracle : public Oracle {
public:
    explicit CountingOracle(Oracle& inner) : inner_(&inner) {}
    std::string name() const override { return inner_->name(); }
    std::vector<LabelResponse> label(std::span<const LabelQuery> batch) override;
    long queries() const { return queries_; }
    long batches() const { return batches_; }

private:
    void check(std::span<const LabelQuery> batch, const std::vector<LabelResponse>& out) const;

    Oracle* inner_;
    long queries_ = 0;
    long batches_ = 0;
};

// --- human annotation service ---------------------------------------------------

/// Holds queries for human annotators and serves the /api/v1 protocol.
/// Records are append-only; a label is immutable once accepted. With a state
/// path, every change is persisted and a restart restores the records.
class AnnotationService {
public:
    explicit AnnotationService(std::string state_path = "");
    ~AnnotationService();
    AnnotationService(const AnnotationService&) = delete;
    AnnotationService& operator=(const AnnotationService&) = delete;

    /// Binds and serves in a background thread. port 0 picks a free port.
    int start(const std::string& host = "127.0.0.1", int port = 0);
    void stop();
    int port() const { return port_; }

    void enqueue(std::span<const LabelQuery> batch);

    struct Reply {
        int status = 200;
        nlohmann::json body;
    };
    /// Body {"values": [...]}: 200, 404 unknown id, 409 already labeled, 422 invalid.
    Reply submit(std::uint64_t id, const nlohmann::json& body);

    nlohmann::json pending() const;
    nlohmann::json status() const;
    std::optional<ConceptVector> label_of(std::uint64_t id) const;
    std::size_t pending_count() const;

    /// Blocks until every id is labeled or the timeout passes; true when all are.
    bool wait_for(std::span<const std::uint64_t> ids, std::chrono::milliseconds timeout) const;

    void set_progress(int iteration, long budget_total, long budget_spent);
    void set_ui_html(std::string html);
    /// Serves a built UI bundle from dir (index.html at /). Call before start().
    void set_static_dir(std::string dir) { static_dir_ = std::move(dir); }

private:
    struct Record {
        std::uint64_t id = 0;
        EnvKind kind = EnvKind::DoorKey;
        std::string render_text, render_svg;
        bool labeled = false;
        ConceptVector values;
    };
    static nlohmann::json record_json(const Record& r, bool with_label);
    void persist_locked() const;
    void restore();

    std::string state_path_;
    mutable std::mutex mu_;
    mutable std::condition_variable cv_;
    std::map<std::uint64_t, Record> records_;
    int iteration_ = 0;
    long budget_total_ = 0, budget_spent_ = 0;
    std::string ui_html_;
    std::string static_dir_;

    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    int port_ = 0;
};

/// Blocks on the annotation service until every query of the batch is labeled.
class HumanOracle : public Oracle {
public:
    HumanOracle(AnnotationService& service, std::chrono::milliseconds timeout)
        : service_(&service), timeout_(timeout) {}
    std::string name() const override { return "human"; }
    std::vector<LabelResponse> label(std::span<const LabelQuery> batch) override;

private:
    AnnotationService* service_;
    std::chrono::milliseconds timeout_;
};

/// Reads concept values back out of a text render. CartPole velocities are
/// finite differences of the last two frames, so only approximate.
ConceptVector parse_text_render(const std::string& text);

/// Headless protocol client: polls the pending list and answers every query
/// with the concepts parsed from its text render.
class ScriptedAnnotator {
public:
    ScriptedAnnotator(std::string host, int port);
    ~ScriptedAnnotator();

    /// Labels everything currently pending; returns the number accepted.
    int run_once();
    void start(std::chrono::milliseconds poll = std::chrono::milliseconds(20));
    void stop();
    int labeled() const { return labeled_; }

private:
    std::string host_;
    int port_;
    std::atomic<bool> running_{false};
    std::atomic<int> labeled_{0};
    std::thread thread_;
};

// --- VLM -------------------------------------------------------------------------

struct VlmConfig {
    std::string base_url;  // e.g. https://api.openai.com/v1
    std::string model = "gpt-4o";
    std::string api_key_env = "OPENAI_API_KEY";
    double timeout_s = 60;
    int max_attempts = 3;
    double backoff_s = 1.0;
};

struct HttpReply {
    int status = -1;  // -1: no response
    std::string body;
};

/// POSTs a JSON body to url with the given headers.
using ChatTransport =
    std::function<HttpReply(const std::string& url, const std::string& body,
                            const std::vector<std::pair<std::string, std::string>>& headers, double timeout_s)>;

ChatTransport http_transport();

/// The per-environment instruction text followed by the state's text render.
std::string vlm_prompt(const LabelQuery& query);
std::string vlm_instructions(EnvKind kind, int last_action);

struct ParsedAnswer {
    ConceptVector values;
    std::vector<bool> present;
    bool complete() const;
};

/// Line-oriented "name: answer" parser.
ParsedAnswer parse_vlm_answer(EnvKind kind, const std::string& text);

/// Modal class 0 for categorical concepts, range midpoint (0 if unbounded) for continuous ones.
ConceptVector fallback_concepts(const ConceptSchema& schema);

class VlmOracle : public Oracle {
public:
    explicit VlmOracle(VlmConfig config, ChatTransport transport = {});
    std::string name() const override { return "vlm"; }
    std::vector<LabelResponse> label(std::span<const LabelQuery> batch) override;

    long requests() const { return requests_; }

private:
    std::string complete(const std::string& prompt);

    VlmConfig config_;
    ChatTransport transport_;
    long requests_ = 0;
};

struct LabelingError {
    double mean = 0;  // over concept variables
    std::vector<double> per_concept;
    long flagged = 0;
    long samples = 0;
};

/// Labels the batch once and scores it against the environment's ground truth:
/// 0/1 disagreement for categorical variables, squared error for continuous ones.
LabelingError labeling_error(Oracle& oracle, std::span<const LabelQuery> batch);

/// "env" | "noisy:<eps>" | "noisy:<eps>:<sigma>" | "human:<port>" | "vlm:<base url>"
struct OracleSpec {
    enum class Kind { GroundTruth, Noisy, Human, Vlm };
    Kind kind = Kind::GroundTruth;
    double epsilon = 0, sigma = 0;
    int port = 0;
    std::string endpoint;

    static OracleSpec parse(const std::string& text);
    std::string str() const;
};

}  // namespace licorice
