#include "licorice/concepts.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

#include <nlohmann/json.hpp>

namespace licorice {

using nlohmann::json;

// --- dataset -----------------------------------------------------------------

void LabelDataset::add_train(LabeledExample e) {
    schema_.validate(e.concepts);
    train_.push_back(std::move(e));
}

void LabelDataset::add_val(LabeledExample e) {
    schema_.validate(e.concepts);
    val_.push_back(std::move(e));
}

void LabelDataset::split_and_add(std::vector<LabeledExample> examples, double val_fraction, Rng& rng) {
    if (examples.empty()) throw Error("split_and_add: no examples");
    if (val_fraction < 0 || val_fraction >= 1) throw Error("split_and_add: val_fraction must be in [0, 1)");
    for (const auto& e : examples) schema_.validate(e.concepts);
    const std::size_t n = examples.size();
    std::size_t n_val = 0;
    if (n >= 2) {
        n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_fraction));
        n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> to_val(n, false);
    for (std::size_t i = 0; i < n_val; ++i) to_val[order[i]] = true;
    for (std::size_t i = 0; i < n; ++i) (to_val[i] ? val_ : train_).push_back(std::move(examples[i]));
}

void LabelDataset::merge(const LabelDataset& other) {
    if (!(other.schema_ == schema_)) throw Error("merge: schema mismatch");
    train_.insert(train_.end(), other.train_.begin(), other.train_.end());
    val_.insert(val_.end(), other.val_.begin(), other.val_.end());
}

namespace {

json bound_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double bound_from_json(const json& j, double inf) { return j.is_null() ? inf : j.get<double>(); }

json schema_json(const ConceptSchema& schema) {
    json specs = json::array();
    for (const auto& s : schema.specs()) {
        json o;
        o["name"] = s.name;
        o["group"] = s.group;
        if (s.kind == ConceptSpec::Kind::Categorical) {
            o["kind"] = "categorical";
            o["cardinality"] = s.cardinality;
        } else {
            o["kind"] = "continuous";
            o["lower"] = bound_json(s.lower);
            o["upper"] = bound_json(s.upper);
        }
        specs.push_back(o);
    }
    return json{{"schema", specs}};
}

ConceptSchema schema_from_json(const json& j) {
    std::vector<ConceptSpec> specs;
    const double inf = std::numeric_limits<double>::infinity();
    for (const auto& o : j.at("schema")) {
        if (o.at("kind") == "categorical")
            specs.push_back(ConceptSpec::categorical(o.at("name"), o.at("cardinality"), o.value("group", "")));
        else
            specs.push_back(ConceptSpec::continuous(o.at("name"), bound_from_json(o.at("lower"), -inf),
                                                    bound_from_json(o.at("upper"), inf), o.value("group", "")));
    }
    return ConceptSchema(std::move(specs));
}

}  // namespace

void LabelDataset::save_jsonl(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error("cannot write dataset '" + path + "'");
    os << schema_json(schema_).dump() << '\n';
    auto write = [&](const LabeledExample& e, const char* split) {
        json o;
        o["obs"] = e.observation;
        o["concepts"] = e.concepts;
        o["meta"] = {{"iteration", e.meta.iteration}, {"source", e.meta.source}, {"timestamp", e.meta.timestamp_ms}};
        o["split"] = split;
        os << o.dump() << '\n';
    };
    for (const auto& e : train_) write(e, "train");
    for (const auto& e : val_) write(e, "val");
}

LabelDataset LabelDataset::load_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot read dataset '" + path + "'");
    std::string line;
    if (!std::getline(is, line)) throw Error("dataset '" + path + "' is empty");
    LabelDataset ds(schema_from_json(json::parse(line)));
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const json o = json::parse(line);
        LabeledExample e;
        e.observation = o.at("obs").get<Observation>();
        e.concepts = o.at("concepts").get<ConceptVector>();
        const auto& m = o.at("meta");
        e.meta.iteration = m.value("iteration", 0);
        e.meta.source = m.value("source", "");
        e.meta.timestamp_ms = m.value("timestamp", std::int64_t{0});
        const std::string split = o.at("split");
        if (split == "train")
            ds.add_train(std::move(e));
        else if (split == "val")
            ds.add_val(std::move(e));
        else
            throw Error("dataset line has unknown split '" + split + "'");
    }
    return ds;
}

// --- training ----------------------------------------------------------------

void EarlyStopConfig::validate() const {
    if (max_epochs < 1) throw Error("EarlyStopConfig: max_epochs must be >= 1");
    if (early_stopping && (patience < 1 || patience > max_epochs))
        throw Error("EarlyStopConfig: patience must be in [1, max_epochs]");
    if (minibatch < 1) throw Error("EarlyStopConfig: minibatch must be >= 1");
}

int patience_for_iteration(int iteration, int iterations, int first, int last) {
    if (iterations <= 1) return first;
    const double frac = static_cast<double>(iteration - 1) / static_cast<double>(iterations - 1);
    return static_cast<int>(std::lround(first + (last - first) * std::clamp(frac, 0.0, 1.0)));
}

namespace {

struct Batch {
    Matrix<float> obs;
    Matrix<float> targets;
};

Batch gather(const std::vector<LabeledExample>& examples, std::span<const std::size_t> idx) {
    Batch b;
    const auto m = static_cast<Eigen::Index>(idx.size());
    b.obs.resize(static_cast<Eigen::Index>(examples[idx[0]].observation.size()), m);
    b.targets.resize(static_cast<Eigen::Index>(examples[idx[0]].concepts.size()), m);
    for (Eigen::Index j = 0; j < m; ++j) {
        const auto& e = examples[idx[static_cast<std::size_t>(j)]];
        for (std::size_t r = 0; r < e.observation.size(); ++r) b.obs(static_cast<Eigen::Index>(r), j) = e.observation[r];
        for (std::size_t r = 0; r < e.concepts.size(); ++r)
            b.targets(static_cast<Eigen::Index>(r), j) = static_cast<float>(e.concepts[r]);
    }
    return b;
}

}  // namespace

double concept_loss(const ConceptNet<float>& net, const std::vector<LabeledExample>& examples) {
    if (examples.empty()) return 0.0;
    std::vector<std::size_t> idx(examples.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const Batch b = gather(examples, idx);
    return static_cast<double>(net.loss(b.obs, b.targets));
}

ConceptTrainResult train_concept_net(ConceptNet<float>& net, const LabelDataset& data, const EarlyStopConfig& cfg,
                                     bool warm_start, Rng& rng) {
    cfg.validate();
    const auto& train = data.train();
    if (train.empty()) throw Error("train_concept_net: empty training set");
    if (!net.params.any_trainable()) throw Error("train_concept_net: concept network is frozen");
    if (!warm_start) net.init(rng);

    // Without a validation partition the training loss drives early stopping.
    const auto& monitor = data.val().empty() ? train : data.val();
    const std::size_t batches_per_epoch = (train.size() + static_cast<std::size_t>(cfg.minibatch) - 1) /
                                          static_cast<std::size_t>(cfg.minibatch);
    nn::AdamConfig ac;
    ac.lr = nn::LrSchedule{cfg.lr, static_cast<long>(batches_per_epoch) * cfg.max_epochs};
    nn::Adam<float> adam(net.params, ac);

    ConceptTrainResult res;
    double best = concept_loss(net, monitor);
    if (!std::isfinite(best)) throw Error("train_concept_net: non-finite validation loss");
    res.val_losses.push_back(best);
    nn::ParamSet<float> best_params = net.params;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.minibatch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.minibatch));
            const Batch b = gather(train, std::span<const std::size_t>(order).subspan(start, end - start));
            auto grads = net.params.zero_gradients();
            const float l = net.loss(b.obs, b.targets, &grads);
            if (!std::isfinite(l)) throw Error("train_concept_net: non-finite training loss");
            adam.step(net.params, grads);
        }
        const double v = concept_loss(net, monitor);
        if (!std::isfinite(v)) throw Error("train_concept_net: non-finite validation loss");
        res.val_losses.push_back(v);
        res.epochs_run = epoch;
        if (v < best) {
            best = v;
            res.best_epoch = epoch;
            best_params = net.params;
        } else if (cfg.early_stopping && epoch - res.best_epoch >= cfg.patience) {
            break;
        }
    }
    net.params = std::move(best_params);
    res.best_val_loss = best;
    return res;
}

// --- acquisition -------------------------------------------------------------

double variation_ratio(const std::vector<std::vector<int>>& votes) {
    if (votes.empty() || votes.front().empty()) throw Error("variation_ratio: empty votes");
    const std::size_t n_models = votes.size(), n_vars = votes.front().size();
    double total = 0;
    std::map<int, int> counts;
    for (std::size_t v = 0; v < n_vars; ++v) {
        counts.clear();
        int modal = 0;
        for (std::size_t m = 0; m < n_models; ++m) modal = std::max(modal, ++counts[votes[m].at(v)]);
        total += 1.0 - static_cast<double>(modal) / static_cast<double>(n_models);
    }
    return total / static_cast<double>(n_vars);
}

double prediction_variance(const std::vector<std::vector<double>>& preds) {
    if (preds.size() < 2) throw Error("prediction_variance: needs at least 2 models");
    const std::size_t n_models = preds.size(), n_vars = preds.front().size();
    if (n_vars == 0) throw Error("prediction_variance: no variables");
    double total = 0;
    for (std::size_t v = 0; v < n_vars; ++v) {
        double mean = 0;
        for (std::size_t m = 0; m < n_models; ++m) mean += preds[m].at(v);
        mean /= static_cast<double>(n_models);
        double ss = 0;
        for (std::size_t m = 0; m < n_models; ++m) ss += (preds[m][v] - mean) * (preds[m][v] - mean);
        total += ss / static_cast<double>(n_models - 1);
    }
    return total / static_cast<double>(n_vars);
}

std::vector<std::size_t> select_batch(std::span<const double> scores, std::size_t b) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const std::size_t k = std::min(b, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t c) { return scores[a] > scores[c] || (scores[a] == scores[c] && a < c); });
    idx.resize(k);
    return idx;
}

ConceptEnsemble::ConceptEnsemble(ConceptSchema schema, int obs_dim, std::vector<int> hidden, int members)
    : schema_(std::move(schema)) {
    if (members < 2) throw Error("ConceptEnsemble: needs at least 2 members");
    for (int i = 0; i < members; ++i) members_.emplace_back(schema_, obs_dim, hidden);
}

void ConceptEnsemble::train(const LabelDataset& data, const EarlyStopConfig& cfg, std::uint64_t seed) {
    for (std::size_t i = 0; i < members_.size(); ++i) {
        Rng rng(derive_seed(seed, i));
        train_concept_net(members_[i], data, cfg, false, rng);
    }
}

void ConceptEnsemble::init(std::uint64_t seed) {
    for (std::size_t i = 0; i < members_.size(); ++i) {
        Rng rng(derive_seed(seed, i));
        members_[i].init(rng);
    }
}

std::vector<double> ConceptEnsemble::score(const Matrix<float>& observations) const {
    const auto pool = observations.cols();
    std::vector<Matrix<float>> preds;
    for (const auto& m : members_) preds.push_back(m.predict(observations));
    const std::size_t n_vars = schema_.size();
    std::vector<double> scores(static_cast<std::size_t>(pool));
    for (Eigen::Index c = 0; c < pool; ++c) {
        if (schema_.is_categorical()) {
            std::vector<std::vector<int>> votes(members_.size(), std::vector<int>(n_vars));
            for (std::size_t m = 0; m < members_.size(); ++m)
                for (std::size_t v = 0; v < n_vars; ++v)
                    votes[m][v] = static_cast<int>(preds[m](static_cast<Eigen::Index>(v), c));
            scores[static_cast<std::size_t>(c)] = variation_ratio(votes);
        } else {
            std::vector<std::vector<double>> vals(members_.size(), std::vector<double>(n_vars));
            for (std::size_t m = 0; m < members_.size(); ++m)
                for (std::size_t v = 0; v < n_vars; ++v)
                    vals[m][v] = static_cast<double>(preds[m](static_cast<Eigen::Index>(v), c));
            scores[static_cast<std::size_t>(c)] = prediction_variance(vals);
        }
    }
    return scores;
}

void ConceptEnsemble::permute(std::span<const std::size_t> order) {
    if (order.size() != members_.size()) throw Error("permute: wrong length");
    std::vector<ConceptNet<float>> next;
    for (auto i : order) next.push_back(members_.at(i));
    members_ = std::move(next);
}

}  // namespace licorice
