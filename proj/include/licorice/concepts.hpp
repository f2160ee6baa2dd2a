#pragma once

// Labeled concept data, concept-network training with early stopping,
// ensembles and the disagreement acquisition functions.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "licorice/envs.hpp"
#include "licorice/policy.hpp"

namespace licorice {

struct LabelMeta {
    int iteration = 0;
    std::string source;
    std::int64_t timestamp_ms = 0;
};

struct LabeledExample {
    Observation observation;
    ConceptVector concepts;
    LabelMeta meta;
};

class LabelDataset {
public:
    LabelDataset() = default;
    explicit LabelDataset(ConceptSchema schema) : schema_(std::move(schema)) {}

    const ConceptSchema& schema() const { return schema_; }
    const std::vector<LabeledExample>& train() const { return train_; }
    const std::vector<LabeledExample>& val() const { return val_; }
    std::size_t size() const { return train_.size() + val_.size(); }

    /// Random train/validation split of a new batch, appended to the
    /// partitions. A singleton goes to train; otherwise both sides get >= 1.
    void split_and_add(std::vector<LabeledExample> examples, double val_fraction, Rng& rng);

    /// Appends every example of other (same schema) to the matching partition.
    void merge(const LabelDataset& other);

    void add_train(LabeledExample e);
    void add_val(LabeledExample e);

    /// First line: schema descriptor; then one example per line.
    void save_jsonl(const std::string& path) const;
    static LabelDataset load_jsonl(const std::string& path);

private:
    ConceptSchema schema_;
    std::vector<LabeledExample> train_;
    std::vector<LabeledExample> val_;
};

struct EarlyStopConfig {
    int max_epochs = 50;
    int patience = 10;
    int minibatch = 32;
    double lr = 3e-4;  // decays linearly to 0 over the run
    bool early_stopping = true;

    void validate() const;
};

/// Patience interpolated linearly from `first` (iteration 1) to `last` (iteration M).
int patience_for_iteration(int iteration, int iterations, int first = 10, int last = 20);

struct ConceptTrainResult {
    double best_val_loss = 0;
    int best_epoch = 0;  // 0 = parameters before any update
    int epochs_run = 0;
    std::vector<double> val_losses;  // index = epoch
};

/// Trains g (or an ensemble member) on the train partition with validation
/// early stopping; returns with the best-validation parameters loaded.
/// warm_start=false re-initializes the parameters from rng first.
ConceptTrainResult train_concept_net(ConceptNet<float>& net, const LabelDataset& data, const EarlyStopConfig& cfg,
                                     bool warm_start, Rng& rng);

/// Mean concept loss of net over a set of examples.
double concept_loss(const ConceptNet<float>& net, const std::vector<LabeledExample>& examples);

// --- acquisition -------------------------------------------------------------

/// votes[model][variable] = predicted class. Mean over variables of
/// 1 - (modal vote count / N).
double variation_ratio(const std::vector<std::vector<int>>& votes);

/// preds[model][variable]. Mean over variables of the Bessel-corrected sample
/// variance across models. Needs N >= 2.
double prediction_variance(const std::vector<std::vector<double>>& preds);

/// Indices of the min(b, |scores|) largest scores; ties go to the lower index.
std::vector<std::size_t> select_batch(std::span<const double> scores, std::size_t b);

class ConceptEnsemble {
public:
    ConceptEnsemble(ConceptSchema schema, int obs_dim, std::vector<int> hidden, int members);

    std::size_t size() const { return members_.size(); }
    const ConceptNet<float>& operator[](std::size_t i) const { return members_[i]; }
    ConceptNet<float>& operator[](std::size_t i) { return members_[i]; }
    const ConceptSchema& schema() const { return schema_; }

    /// Every member retrained from scratch with its own init/shuffle seed.
    void train(const LabelDataset& data, const EarlyStopConfig& cfg, std::uint64_t seed);
    /// Fresh initialization only, for scoring before any label exists.
    void init(std::uint64_t seed);

    /// Disagreement score per pool column (observations: obs_dim x pool).
    std::vector<double> score(const Matrix<float>& observations) const;

    /// Permutes member order; scores must not change.
    void permute(std::span<const std::size_t> order);

private:
    ConceptSchema schema_;
    std::vector<ConceptNet<float>> members_;
};

}  // namespace licorice
