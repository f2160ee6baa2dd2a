#pragma once

// Concept-bottleneck actor-critic. The concept encoder g is a shared feature
// extractor plus concept head; the action head f reads only the predicted
// concept vector; the value head reads the extractor features.

#include <cmath>
#include <string>
#include <vector>

#include "licorice/envs.hpp"
#include "licorice/nn.hpp"

namespace licorice {

using nn::Matrix;

/// How decoded categorical concepts are presented to the action head.
enum class ConceptEncoding {
    Normalized,  // class / (k - 1), one input per concept
    OneHot,      // k inputs per concept
};

struct PolicyArch {
    ConceptEncoding encoding = ConceptEncoding::OneHot;
    std::vector<int> extractor_hidden{128, 128};
    std::vector<int> action_hidden{64, 64};
    std::vector<int> value_hidden{64, 64};
};

enum class FreezeMode { GFrozen, GTrainable };

/// Concept targets, concepts x batch. Categorical entries hold class indices.
template <typename S>
Matrix<S> concept_matrix(const std::vector<ConceptVector>& rows) {
    if (rows.empty()) return {};
    Matrix<S> m(static_cast<Eigen::Index>(rows.front().size()), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t c = 0; c < rows.size(); ++c)
        for (std::size_t r = 0; r < rows[c].size(); ++r)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = static_cast<S>(rows[c][r]);
    return m;
}

template <typename S>
Matrix<S> observation_matrix(const std::vector<Observation>& rows) {
    if (rows.empty()) return {};
    Matrix<S> m(static_cast<Eigen::Index>(rows.front().size()), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t c = 0; c < rows.size(); ++c)
        for (std::size_t r = 0; r < rows[c].size(); ++r)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = static_cast<S>(rows[c][r]);
    return m;
}

/// g: observation -> concepts. Also the architecture of every ensemble member.
template <typename S>
class ConceptNet {
public:
    struct Cache {
        nn::MlpCache<S> extractor, head;
        Matrix<S> features;
    };

    ConceptNet() = default;
    ConceptNet(ConceptSchema schema, int obs_dim, const std::vector<int>& hidden)
        : schema_(std::move(schema)),
          extractor_(nn::MlpSpec::features(obs_dim, hidden), params, "g.extractor"),
          head_(schema_.is_categorical()
                    ? nn::MlpSpec::softmax_heads(hidden.back(), {}, schema_.cardinalities())
                    : nn::MlpSpec::linear(hidden.back(), {}, static_cast<int>(schema_.size())),
                params, "g.concepts") {
        if (!schema_.is_categorical() && !schema_.is_continuous())
            throw Error("mixed categorical/continuous schemas are not supported");
    }

    nn::ParamSet<S> params;

    const ConceptSchema& schema() const { return schema_; }
    bool categorical() const { return schema_.is_categorical(); }
    int input_dim() const { return extractor_.input_dim(); }
    int feature_dim() const { return extractor_.output_dim(); }

    void init(Rng& rng) {
        extractor_.init(params, rng, std::sqrt(2.0), std::sqrt(2.0));
        head_.init(params, rng, std::sqrt(2.0), 1.0);
    }

    Matrix<S> features(const Matrix<S>& obs, nn::MlpCache<S>* cache = nullptr) const {
        return extractor_.forward(params, obs, cache);
    }

    /// Head output from features: concatenated logits or regression values.
    Matrix<S> head_output(const Matrix<S>& features, nn::MlpCache<S>* cache = nullptr) const {
        return head_.forward(params, features, cache);
    }

    Matrix<S> forward(const Matrix<S>& obs, Cache* cache = nullptr) const {
        if (cache) {
            cache->features = features(obs, &cache->extractor);
            return head_output(cache->features, &cache->head);
        }
        return head_output(features(obs));
    }

    /// Predicted concept values (class indices or reals), concepts x batch.
    Matrix<S> predict(const Matrix<S>& obs) const { return decode(forward(obs)); }

    Matrix<S> decode(const Matrix<S>& out) const {
        if (!categorical()) return out;
        return nn::argmax_heads(out, schema_.cardinalities()).template cast<S>();
    }

    /// Cross-entropy summed over heads (categorical) or MSE averaged over
    /// variables (continuous); both averaged over the batch. With grads set,
    /// accumulates scale * dloss/dparams.
    S loss_from_output(const Matrix<S>& out, const Matrix<S>& targets, Matrix<S>* d_out, S scale = S(1)) const {
        if (categorical())
            return nn::cross_entropy_heads(out, targets.template cast<int>(), schema_.cardinalities(), d_out, scale);
        return nn::mean_squared_error(out, targets, d_out, scale);
    }

    S loss(const Matrix<S>& obs, const Matrix<S>& targets, nn::Gradients<S>* grads = nullptr,
           S scale = S(1)) const {
        Cache cache;
        const Matrix<S> out = forward(obs, grads ? &cache : nullptr);
        if (!grads) return loss_from_output(out, targets, nullptr);
        Matrix<S> d_out;
        const S l = loss_from_output(out, targets, &d_out, scale);
        backward(cache, d_out, *grads);
        return l;
    }

    /// Backpropagates a head-output gradient (and optionally an extra feature
    /// gradient) into the g parameters.
    void backward(const Cache& cache, const Matrix<S>& d_out, nn::Gradients<S>& grads,
                  const Matrix<S>* d_features_extra = nullptr) const {
        Matrix<S> d_feat = head_.backward(params, cache.head, d_out, grads, true);
        if (d_features_extra) d_feat += *d_features_extra;
        extractor_.backward(params, cache.extractor, d_feat, grads, false);
    }

    void backward_features(const nn::MlpCache<S>& extractor_cache, const Matrix<S>& d_features,
                           nn::Gradients<S>& grads) const {
        extractor_.backward(params, extractor_cache, d_features, grads, false);
    }

private:
    ConceptSchema schema_;
    nn::Mlp<S> extractor_;
    nn::Mlp<S> head_;
};

template <typename S>
struct PolicyOutput {
    Matrix<S> features;        // extractor output
    Matrix<S> concept_output;  // logits or regression values
    Matrix<S> concepts;        // decoded: class indices or reals
    Matrix<S> f_input;         // what the action head actually sees
    Matrix<S> action_logits;
    Matrix<S> action_probs;
    Matrix<S> values;  // 1 x batch
};

template <typename S>
class BottleneckPolicy {
    PolicyArch arch_;  // first: g's construction reads it

public:
    BottleneckPolicy() = default;
    BottleneckPolicy(ConceptSchema schema, int obs_dim, int num_actions, PolicyArch arch = {})
        : arch_(std::move(arch)),
          g(std::move(schema), obs_dim, arch_.extractor_hidden),
          action_net_(nn::MlpSpec::linear(encoded_dim(g.schema(), arch_.encoding), arch_.action_hidden, num_actions),
                      fv, "f.action"),
          value_net_(nn::MlpSpec::linear(g.feature_dim(), arch_.value_hidden, 1), fv, "value") {}

    ConceptNet<S> g;
    nn::ParamSet<S> fv;  // action head f and value head

    const ConceptSchema& schema() const { return g.schema(); }
    const PolicyArch& arch() const { return arch_; }
    int num_actions() const { return action_net_.output_dim(); }
    int observation_dim() const { return g.input_dim(); }
    FreezeMode freeze_mode() const { return freeze_; }

    void init(Rng& rng) {
        g.init(rng);
        action_net_.init(fv, rng, std::sqrt(2.0), 0.01);
        value_net_.init(fv, rng, std::sqrt(2.0), 1.0);
    }

    /// g-frozen marks extractor and concept head non-trainable. f and the value
    /// head stay trainable in both modes.
    void set_freeze(FreezeMode mode) {
        freeze_ = mode;
        g.params.set_trainable(mode == FreezeMode::GTrainable);
        fv.set_trainable(true);
    }

    /// Maps decoded concepts to the action head's input: a one-hot block (or
    /// class / (k - 1)) per categorical concept, raw values for continuous ones.
    Matrix<S> f_input_from_concepts(const Matrix<S>& concepts) const {
        if (!g.categorical()) return concepts;
        const auto& s = schema();
        if (arch_.encoding == ConceptEncoding::OneHot) {
            Matrix<S> out = Matrix<S>::Zero(encoded_dim(s, arch_.encoding), concepts.cols());
            int offset = 0;
            for (std::size_t i = 0; i < s.size(); ++i) {
                for (Eigen::Index c = 0; c < concepts.cols(); ++c)
                    out(offset + static_cast<int>(concepts(static_cast<Eigen::Index>(i), c)), c) = S(1);
                offset += s[i].cardinality;
            }
            return out;
        }
        Matrix<S> out = concepts;
        for (std::size_t i = 0; i < s.size(); ++i)
            out.row(static_cast<Eigen::Index>(i)) /= static_cast<S>(s[i].cardinality - 1);
        return out;
    }

    int f_input_dim() const { return encoded_dim(schema(), arch_.encoding); }

    static int encoded_dim(const ConceptSchema& s, ConceptEncoding enc) {
        if (!s.is_categorical() || enc == ConceptEncoding::Normalized) return static_cast<int>(s.size());
        int n = 0;
        for (const auto& c : s.specs()) n += c.cardinality;
        return n;
    }

    /// With true_concepts given, f reads them in place of g's predictions.
    PolicyOutput<S> forward(const Matrix<S>& obs, const Matrix<S>* true_concepts = nullptr) const {
        PolicyOutput<S> out;
        out.features = g.features(obs);
        out.concept_output = g.head_output(out.features);
        out.concepts = g.decode(out.concept_output);
        out.f_input = f_input_from_concepts(true_concepts ? *true_concepts : out.concepts);
        out.action_logits = action_net_.forward(fv, out.f_input);
        out.action_probs = nn::softmax_heads(out.action_logits, {num_actions()});
        out.values = value_net_.forward(fv, out.features);
        return out;
    }

    Matrix<S> action_logits(const Matrix<S>& f_input, nn::MlpCache<S>* cache = nullptr) const {
        return action_net_.forward(fv, f_input, cache);
    }
    Matrix<S> values(const Matrix<S>& features, nn::MlpCache<S>* cache = nullptr) const {
        return value_net_.forward(fv, features, cache);
    }
    Matrix<S> action_backward(const nn::MlpCache<S>& cache, const Matrix<S>& d_logits, nn::Gradients<S>& grads,
                              bool need_input_grad) const {
        return action_net_.backward(fv, cache, d_logits, grads, need_input_grad);
    }
    Matrix<S> value_backward(const nn::MlpCache<S>& cache, const Matrix<S>& d_values, nn::Gradients<S>& grads,
                             bool need_input_grad) const {
        return value_net_.backward(fv, cache, d_values, grads, need_input_grad);
    }

    template <typename T>
    BottleneckPolicy<T> cast() const {
        BottleneckPolicy<T> out(schema(), observation_dim(), num_actions(), arch_);
        out.g.params.copy_values_from(g.params.template cast<T>());
        out.fv.copy_values_from(fv.template cast<T>());
        out.set_freeze(freeze_);
        return out;
    }

private:
    nn::Mlp<S> action_net_;
    nn::Mlp<S> value_net_;
    FreezeMode freeze_ = FreezeMode::GTrainable;
};

/// Draws an action from a probability vector; returns (action, log-probability).
template <typename S>
std::pair<int, double> sample_action(const Eigen::Ref<const Eigen::Matrix<S, Eigen::Dynamic, 1>>& probs, Rng& rng) {
    double total = 0;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
        const double p = static_cast<double>(probs(i));
        if (!std::isfinite(p) || p < 0) throw Error("sample_action: degenerate action distribution");
        total += p;
    }
    if (!(total > 0)) throw Error("sample_action: degenerate action distribution");
    const double u = uniform01(rng) * total;
    double acc = 0;
    int action = static_cast<int>(probs.size()) - 1;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
        acc += static_cast<double>(probs(i));
        if (u < acc && probs(i) > 0) {
            action = static_cast<int>(i);
            break;
        }
    }
    while (probs(action) <= 0) --action;
    return {action, std::log(static_cast<double>(probs(action)) / total)};
}

template <typename S>
int argmax_action(const Eigen::Ref<const Eigen::Matrix<S, Eigen::Dynamic, 1>>& probs) {
    Eigen::Index best = 0;
    probs.maxCoeff(&best);
    return static_cast<int>(best);
}

}  // namespace licorice
