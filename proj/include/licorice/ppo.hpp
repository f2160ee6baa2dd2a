#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "licorice/envs.hpp"
#include "licorice/policy.hpp"

namespace licorice {

using Policy = BottleneckPolicy<float>;

/// What the action head reads during training.
enum class ConceptInput {
    Predicted,  // g's decoded output (the bottleneck proper)
    Truth,      // ground-truth concepts (upper-bound construction)
};

struct PpoConfig {
    int horizon = 4096;
    int num_envs = 8;
    int epochs = 10;
    int minibatch = 512;
    double lr = 3e-4;
    double clip = 0.2;
    double gamma = 0.99;
    double gae_lambda = 0.95;
    double ent_coef = 0.01;
    double vf_coef = 1.0;
    double max_grad_norm = 0.5;
    double adam_eps = 1e-5;
    bool normalize_advantage = true;
    ConceptInput concept_input = ConceptInput::Predicted;
    /// Weight of the concept loss added to every update (joint training). 0 disables it.
    double concept_coef = 0.0;

    void validate() const;
};

/// On-policy transitions, step-major: index = t * num_envs + env.
struct RolloutBuffer {
    int num_envs = 0;
    int horizon = 0;
    Matrix<float> observations;    // obs_dim x N
    Matrix<float> features;        // extractor output at collection time
    Matrix<float> f_input;         // action-head input at collection time
    Matrix<float> concept_labels;  // concepts x N (ground truth or oracle labels)
    std::vector<int> actions;
    std::vector<double> rewards;  // truncation-bootstrapped
    std::vector<std::uint8_t> dones;
    std::vector<double> values;
    std::vector<double> log_probs;
    std::vector<double> advantages;
    std::vector<double> returns;
    std::vector<double> episode_rewards;  // completed episodes during collection
    bool advantages_ready = false;

    std::size_t size() const { return actions.size(); }
};

/// Generalized advantage estimation over one env's sequence. dones[t] marks an
/// episode ending after step t; last_value bootstraps the sequence end.
void compute_gae(std::span<const double> rewards, std::span<const double> values,
                 std::span<const std::uint8_t> dones, double last_value, double gamma, double lambda,
                 std::span<double> advantages, std::span<double> returns);

/// Labels a batch of states; used by joint training that needs labels for
/// every visited state. An empty result stores zero labels.
using StateLabeler = std::function<std::vector<ConceptVector>(const Environment&, std::span<const EnvState>)>;

/// k environment instances with a fixed instance -> seed mapping and auto-reset.
class VecEnv {
public:
    VecEnv(const Environment& env, int num_envs, std::uint64_t seed);

    const Environment& env() const { return *env_; }
    int size() const { return static_cast<int>(states_.size()); }
    const std::vector<EnvState>& states() const { return states_; }
    const std::vector<Observation>& observations() const { return obs_; }
    std::vector<ConceptVector> true_concepts() const;

    struct Transition {
        double reward = 0;
        bool terminated = false;
        bool truncated = false;
        Observation final_observation;  // pre-reset observation when the episode ended
        std::optional<double> episode_reward;
    };
    Transition step(int index, int action);
    long total_steps() const { return total_steps_; }

private:
    void reset_instance(int index);

    const Environment* env_;
    std::uint64_t seed_;
    std::vector<EnvState> states_;
    std::vector<Observation> obs_;
    std::vector<long> episodes_;
    std::vector<double> running_reward_;
    long total_steps_ = 0;
};

RolloutBuffer collect_rollout(const Policy& policy, VecEnv& envs, const PpoConfig& config, int horizon, Rng& rng,
                              const StateLabeler& labeler = {});

struct PpoLossStats {
    double policy_loss = 0;
    double value_loss = 0;
    double entropy = 0;
    double concept_loss = 0;
    double total = 0;
    double clip_fraction = 0;
    double max_ratio_deviation = 0;  // max |ratio - 1|
};

template <typename S>
struct PpoMinibatch {
    Matrix<S> observations;
    Matrix<S> features;
    Matrix<S> f_input;
    Matrix<S> concept_labels;
    std::vector<int> actions;
    std::vector<S> old_log_probs;
    std::vector<S> advantages;
    std::vector<S> returns;
};

/// Clipped-surrogate PPO loss (plus weighted value loss, entropy bonus and an
/// optional concept loss) with gradients for every trainable tensor. When g is
/// frozen the cached features and action-head inputs are used as-is.
template <typename S>
PpoLossStats ppo_loss(const BottleneckPolicy<S>& policy, const PpoMinibatch<S>& mb, const PpoConfig& cfg,
                      nn::Gradients<S>* grads_g, nn::Gradients<S>* grads_fv) {
    const auto batch = static_cast<Eigen::Index>(mb.actions.size());
    const S n = static_cast<S>(batch);
    const bool g_live = policy.g.params.any_trainable();

    typename ConceptNet<S>::Cache g_cache;
    Matrix<S> features, concept_out, f_input;
    if (g_live) {
        concept_out = policy.g.forward(mb.observations, &g_cache);
        features = g_cache.features;
        f_input = cfg.concept_input == ConceptInput::Truth ? policy.f_input_from_concepts(mb.concept_labels)
                                                           : policy.f_input_from_concepts(policy.g.decode(concept_out));
    } else {
        features = mb.features;
        f_input = mb.f_input;
    }

    nn::MlpCache<S> action_cache, value_cache;
    const Matrix<S> logits = policy.action_logits(f_input, &action_cache);
    const Matrix<S> probs = nn::softmax_heads(logits, {policy.num_actions()});
    const Matrix<S> values = policy.values(features, &value_cache);

    std::vector<S> adv = mb.advantages;
    if (cfg.normalize_advantage && batch > 1) {
        S mean = 0;
        for (S a : adv) mean += a;
        mean /= n;
        S var = 0;
        for (S a : adv) var += (a - mean) * (a - mean);
        const S sd = std::sqrt(var / (n - S(1)));
        for (S& a : adv) a = (a - mean) / (sd + S(1e-8));
    }

    PpoLossStats st;
    Matrix<S> d_logits = Matrix<S>::Zero(logits.rows(), batch);
    Matrix<S> d_values = Matrix<S>::Zero(1, batch);
    const S clip = static_cast<S>(cfg.clip);
    const S ent_coef = static_cast<S>(cfg.ent_coef);
    const S vf_coef = static_cast<S>(cfg.vf_coef);
    S pg_sum = 0, v_sum = 0, ent_sum = 0;
    int clipped = 0;
    for (Eigen::Index i = 0; i < batch; ++i) {
        const int a = mb.actions[static_cast<std::size_t>(i)];
        const auto p = probs.col(i);
        const S logp = std::log(std::max(p(a), std::numeric_limits<S>::min()));
        const S ratio = std::exp(logp - mb.old_log_probs[static_cast<std::size_t>(i)]);
        const S A = adv[static_cast<std::size_t>(i)];
        const S unclipped = ratio * A;
        const S clipped_ratio = std::clamp(ratio, S(1) - clip, S(1) + clip);
        const S clipped_obj = clipped_ratio * A;
        pg_sum += -std::min(unclipped, clipped_obj);
        st.max_ratio_deviation = std::max(st.max_ratio_deviation, static_cast<double>(std::abs(ratio - S(1))));
        if (std::abs(ratio - S(1)) > clip) ++clipped;
        // d(-min)/d logp: the unclipped branch carries ratio*A; a clipped
        // branch outside the trust region is constant.
        S d_logp = 0;
        if (unclipped <= clipped_obj || (ratio >= S(1) - clip && ratio <= S(1) + clip)) d_logp = -unclipped / n;
        S entropy = 0;
        for (Eigen::Index k = 0; k < p.size(); ++k)
            if (p(k) > 0) entropy -= p(k) * std::log(p(k));
        ent_sum += entropy;
        for (Eigen::Index k = 0; k < p.size(); ++k) {
            const S onehot = k == a ? S(1) : S(0);
            d_logits(k, i) += d_logp * (onehot - p(k));
            // loss term -ent_coef * H / n; dH/dz_k = -p_k (log p_k + H)
            const S logpk = p(k) > 0 ? std::log(p(k)) : S(0);
            d_logits(k, i) += ent_coef / n * p(k) * (logpk + entropy);
        }
        const S diff = values(0, i) - mb.returns[static_cast<std::size_t>(i)];
        v_sum += diff * diff;
        d_values(0, i) = vf_coef * S(2) * diff / n;
    }
    st.policy_loss = static_cast<double>(pg_sum / n);
    st.value_loss = static_cast<double>(v_sum / n);
    st.entropy = static_cast<double>(ent_sum / n);
    st.clip_fraction = batch ? static_cast<double>(clipped) / static_cast<double>(batch) : 0.0;
    st.total = st.policy_loss + cfg.vf_coef * st.value_loss - cfg.ent_coef * st.entropy;

    Matrix<S> d_concept_out;
    if (g_live && cfg.concept_coef > 0) {
        const S cl = policy.g.loss_from_output(concept_out, mb.concept_labels, grads_g ? &d_concept_out : nullptr,
                                               static_cast<S>(cfg.concept_coef));
        st.concept_loss = static_cast<double>(cl);
        st.total += cfg.concept_coef * st.concept_loss;
    }

    if (!grads_fv) return st;
    const bool need_f_input_grad =
        g_live && grads_g && cfg.concept_input == ConceptInput::Predicted && !policy.g.categorical();
    Matrix<S> d_f_input = policy.action_backward(action_cache, d_logits, *grads_fv, need_f_input_grad);
    Matrix<S> d_features = policy.value_backward(value_cache, d_values, *grads_fv, g_live && grads_g);
    if (g_live && grads_g) {
        // Argmax is piecewise constant, so categorical concepts pass no
        // action-loss gradient into g; regression outputs feed f directly.
        if (need_f_input_grad) {
            if (d_concept_out.size() == 0) d_concept_out = Matrix<S>::Zero(concept_out.rows(), concept_out.cols());
            d_concept_out += d_f_input;
        }
        if (d_concept_out.size() == 0) {
            policy.g.backward_features(g_cache.extractor, d_features, *grads_g);
        } else {
            policy.g.backward(g_cache, d_concept_out, *grads_g, &d_features);
        }
    }
    return st;
}

struct PpoUpdateStats {
    PpoLossStats mean;
    double first_minibatch_max_ratio_deviation = 0;
    int minibatches = 0;
};

struct PpoMetricsRow {
    long step = 0;
    double mean_rollout_reward = 0;
    bool has_reward = false;
    PpoUpdateStats update;
};

/// Owns the optimizer state and environment instances for one training run.
class PpoTrainer {
public:
    PpoTrainer(Policy& policy, const Environment& env, PpoConfig config, std::uint64_t seed);

    const PpoConfig& config() const { return config_; }
    PpoConfig& config() { return config_; }

    /// Runs exactly `timesteps` environment steps of collection + update.
    /// timesteps must be a multiple of num_envs.
    void learn(long timesteps, const std::function<void(const PpoMetricsRow&)>& on_update = {},
               const StateLabeler& labeler = {});

    PpoUpdateStats update(RolloutBuffer& buffer);
    long timesteps() const { return timesteps_; }
    VecEnv& envs() { return envs_; }

private:
    Policy* policy_;
    PpoConfig config_;
    VecEnv envs_;
    Rng rng_;
    nn::Adam<float> adam_g_;
    nn::Adam<float> adam_fv_;
    long timesteps_ = 0;
};

/// Fills advantages and returns for every env column of the buffer.
void finalize_rollout(RolloutBuffer& buffer, std::span<const double> last_values, double gamma, double lambda);

}  // namespace licorice
