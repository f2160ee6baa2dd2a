#include "licorice/ppo.hpp"

#include <algorithm>
#include <numeric>

namespace licorice {

void PpoConfig::validate() const {
    if (horizon < 1 || num_envs < 1 || epochs < 1 || minibatch < 1) throw Error("PpoConfig: sizes must be >= 1");
    if ((static_cast<long>(horizon) * num_envs) % minibatch != 0)
        throw Error("PpoConfig: minibatch must divide horizon * num_envs");
    if (lr < 0 || clip < 0 || gamma < 0 || gae_lambda < 0 || ent_coef < 0 || vf_coef < 0 || concept_coef < 0)
        throw Error("PpoConfig: coefficients must be >= 0");
}

void compute_gae(std::span<const double> rewards, std::span<const double> values,
                 std::span<const std::uint8_t> dones, double last_value, double gamma, double lambda,
                 std::span<double> advantages, std::span<double> returns) {
    const std::size_t n = rewards.size();
    if (values.size() != n || dones.size() != n || advantages.size() != n || returns.size() != n)
        throw Error("compute_gae: length mismatch");
    double last_gae = 0;
    for (std::size_t t = n; t-- > 0;) {
        const double next_value = t + 1 == n ? last_value : values[t + 1];
        const double not_done = dones[t] ? 0.0 : 1.0;
        const double delta = rewards[t] + gamma * next_value * not_done - values[t];
        last_gae = delta + gamma * lambda * not_done * last_gae;
        advantages[t] = last_gae;
        returns[t] = last_gae + values[t];
    }
}

// --- VecEnv ------------------------------------------------------------------

VecEnv::VecEnv(const Environment& env, int num_envs, std::uint64_t seed) : env_(&env), seed_(seed) {
    if (num_envs < 1) throw Error("VecEnv needs at least one instance");
    states_.resize(static_cast<std::size_t>(num_envs));
    obs_.resize(static_cast<std::size_t>(num_envs));
    episodes_.assign(static_cast<std::size_t>(num_envs), 0);
    running_reward_.assign(static_cast<std::size_t>(num_envs), 0.0);
    for (int i = 0; i < num_envs; ++i) reset_instance(i);
}

void VecEnv::reset_instance(int index) {
    const auto i = static_cast<std::size_t>(index);
    const std::uint64_t episode_seed = derive_seed(derive_seed(seed_, static_cast<std::uint64_t>(index)),
                                                   static_cast<std::uint64_t>(episodes_[i]++));
    auto [state, obs] = env_->reset(episode_seed);
    states_[i] = std::move(state);
    obs_[i] = std::move(obs);
    running_reward_[i] = 0;
}

std::vector<ConceptVector> VecEnv::true_concepts() const {
    std::vector<ConceptVector> out;
    out.reserve(states_.size());
    for (const auto& s : states_) out.push_back(env_->true_concepts(s));
    return out;
}

VecEnv::Transition VecEnv::step(int index, int action) {
    const auto i = static_cast<std::size_t>(index);
    StepResult r = env_->step(states_[i], action);
    ++total_steps_;
    running_reward_[i] += r.reward;
    Transition t;
    t.reward = r.reward;
    t.terminated = r.terminated;
    t.truncated = r.truncated;
    if (r.terminated || r.truncated) {
        t.final_observation = std::move(r.observation);
        t.episode_reward = running_reward_[i];
        reset_instance(index);
    } else {
        obs_[i] = std::move(r.observation);
    }
    return t;
}

// --- rollout -----------------------------------------------------------------

RolloutBuffer collect_rollout(const Policy& policy, VecEnv& envs, const PpoConfig& config, int horizon, Rng& rng,
                              const StateLabeler& labeler) {
    const int k = envs.size();
    if (k != config.num_envs) throw Error("collect_rollout: env count does not match num_envs");
    const auto n = static_cast<Eigen::Index>(horizon) * k;
    const auto n_concepts = static_cast<Eigen::Index>(policy.schema().size());
    RolloutBuffer buf;
    buf.num_envs = k;
    buf.horizon = horizon;
    buf.observations.resize(policy.observation_dim(), n);
    buf.features.resize(policy.g.feature_dim(), n);
    buf.f_input.resize(policy.f_input_dim(), n);
    buf.concept_labels.resize(n_concepts, n);
    buf.actions.resize(static_cast<std::size_t>(n));
    buf.rewards.resize(static_cast<std::size_t>(n));
    buf.dones.resize(static_cast<std::size_t>(n));
    buf.values.resize(static_cast<std::size_t>(n));
    buf.log_probs.resize(static_cast<std::size_t>(n));

    const bool truth_input = config.concept_input == ConceptInput::Truth;
    for (int t = 0; t < horizon; ++t) {
        const Matrix<float> obs = observation_matrix<float>(envs.observations());
        const std::vector<ConceptVector> labels =
            labeler ? labeler(envs.env(), envs.states()) : envs.true_concepts();
        const Matrix<float> label_m =
            labels.empty() ? Matrix<float>::Zero(n_concepts, k) : concept_matrix<float>(labels);
        const PolicyOutput<float> out = policy.forward(obs, truth_input ? &label_m : nullptr);
        const Eigen::Index base = static_cast<Eigen::Index>(t) * k;
        buf.observations.middleCols(base, k) = obs;
        buf.features.middleCols(base, k) = out.features;
        buf.f_input.middleCols(base, k) = out.f_input;
        buf.concept_labels.middleCols(base, k) = label_m;
        for (int e = 0; e < k; ++e) {
            const auto idx = static_cast<std::size_t>(base + e);
            const auto [action, logp] = sample_action<float>(out.action_probs.col(e), rng);
            buf.actions[idx] = action;
            buf.log_probs[idx] = logp;
            buf.values[idx] = out.values(0, e);
            VecEnv::Transition tr = envs.step(e, action);
            double reward = tr.reward;
            if (tr.truncated) {
                // Time-limit bootstrap: the episode did not really end.
                const Matrix<float> fo = observation_matrix<float>({tr.final_observation});
                const Matrix<float> feat = policy.g.features(fo);
                reward += config.gamma * static_cast<double>(policy.values(feat)(0, 0));
            }
            buf.rewards[idx] = reward;
            buf.dones[idx] = tr.terminated || tr.truncated;
            if (tr.episode_reward) buf.episode_rewards.push_back(*tr.episode_reward);
        }
    }

    std::vector<double> last_values(static_cast<std::size_t>(k));
    {
        const Matrix<float> obs = observation_matrix<float>(envs.observations());
        const Matrix<float> v = policy.values(policy.g.features(obs));
        for (int e = 0; e < k; ++e) last_values[static_cast<std::size_t>(e)] = v(0, e);
    }
    finalize_rollout(buf, last_values, config.gamma, config.gae_lambda);
    return buf;
}

void finalize_rollout(RolloutBuffer& buf, std::span<const double> last_values, double gamma, double lambda) {
    const auto k = static_cast<std::size_t>(buf.num_envs);
    const auto h = static_cast<std::size_t>(buf.horizon);
    buf.advantages.assign(k * h, 0.0);
    buf.returns.assign(k * h, 0.0);
    std::vector<double> r(h), v(h), a(h), ret(h);
    std::vector<std::uint8_t> d(h);
    for (std::size_t e = 0; e < k; ++e) {
        for (std::size_t t = 0; t < h; ++t) {
            r[t] = buf.rewards[t * k + e];
            v[t] = buf.values[t * k + e];
            d[t] = buf.dones[t * k + e];
        }
        compute_gae(r, v, d, last_values[e], gamma, lambda, a, ret);
        for (std::size_t t = 0; t < h; ++t) {
            buf.advantages[t * k + e] = a[t];
            buf.returns[t * k + e] = ret[t];
        }
    }
    buf.advantages_ready = true;
}

// --- trainer -----------------------------------------------------------------

PpoTrainer::PpoTrainer(Policy& policy, const Environment& env, PpoConfig config, std::uint64_t seed)
    : policy_(&policy),
      config_(config),
      envs_(env, config.num_envs, derive_seed(seed, 0xe115)),
      rng_(derive_seed(seed, 0x9e0)) {
    config_.validate();
    nn::AdamConfig ac;
    ac.lr = nn::LrSchedule{config_.lr, 0};
    ac.eps = config_.adam_eps;
    adam_g_ = nn::Adam<float>(policy.g.params, ac);
    adam_fv_ = nn::Adam<float>(policy.fv, ac);
}

PpoUpdateStats PpoTrainer::update(RolloutBuffer& buf) {
    if (!buf.advantages_ready) throw Error("ppo update: advantages not computed");
    Policy& policy = *policy_;
    const auto n = static_cast<std::size_t>(buf.size());
    std::vector<std::size_t> order(n);
    PpoUpdateStats stats;
    const auto mbs = static_cast<std::size_t>(config_.minibatch);
    bool first = true;
    for (int epoch = 0; epoch < config_.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng_);
        for (std::size_t start = 0; start < n; start += mbs) {
            const std::size_t end = std::min(n, start + mbs);
            const auto m = static_cast<Eigen::Index>(end - start);
            PpoMinibatch<float> mb;
            mb.observations.resize(buf.observations.rows(), m);
            mb.features.resize(buf.features.rows(), m);
            mb.f_input.resize(buf.f_input.rows(), m);
            mb.concept_labels.resize(buf.concept_labels.rows(), m);
            for (Eigen::Index j = 0; j < m; ++j) {
                const auto src = static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(j)]);
                mb.observations.col(j) = buf.observations.col(src);
                mb.features.col(j) = buf.features.col(src);
                mb.f_input.col(j) = buf.f_input.col(src);
                mb.concept_labels.col(j) = buf.concept_labels.col(src);
                const auto s = static_cast<std::size_t>(src);
                mb.actions.push_back(buf.actions[s]);
                mb.old_log_probs.push_back(static_cast<float>(buf.log_probs[s]));
                mb.advantages.push_back(static_cast<float>(buf.advantages[s]));
                mb.returns.push_back(static_cast<float>(buf.returns[s]));
            }
            auto grads_g = policy.g.params.zero_gradients();
            auto grads_fv = policy.fv.zero_gradients();
            const PpoLossStats ls = ppo_loss(policy, mb, config_, &grads_g, &grads_fv);
            if (!std::isfinite(ls.total))
                throw Error("ppo update: non-finite loss (policy " + std::to_string(ls.policy_loss) + ", value " +
                            std::to_string(ls.value_loss) + ", entropy " + std::to_string(ls.entropy) + ")");
            if (first) {
                stats.first_minibatch_max_ratio_deviation = ls.max_ratio_deviation;
                first = false;
            }
            if (config_.max_grad_norm > 0) nn::clip_grad_norm<float>({&grads_g, &grads_fv}, config_.max_grad_norm);
            if (policy.g.params.any_trainable()) adam_g_.step(policy.g.params, grads_g);
            adam_fv_.step(policy.fv, grads_fv);
            stats.mean.policy_loss += ls.policy_loss;
            stats.mean.value_loss += ls.value_loss;
            stats.mean.entropy += ls.entropy;
            stats.mean.concept_loss += ls.concept_loss;
            stats.mean.total += ls.total;
            stats.mean.clip_fraction += ls.clip_fraction;
            stats.mean.max_ratio_deviation = std::max(stats.mean.max_ratio_deviation, ls.max_ratio_deviation);
            ++stats.minibatches;
        }
    }
    if (stats.minibatches > 0) {
        const double d = stats.minibatches;
        stats.mean.policy_loss /= d;
        stats.mean.value_loss /= d;
        stats.mean.entropy /= d;
        stats.mean.concept_loss /= d;
        stats.mean.total /= d;
        stats.mean.clip_fraction /= d;
    }
    return stats;
}

void PpoTrainer::learn(long timesteps, const std::function<void(const PpoMetricsRow&)>& on_update,
                       const StateLabeler& labeler) {
    if (timesteps < 0 || timesteps % config_.num_envs != 0)
        throw Error("PpoTrainer::learn: timesteps must be a non-negative multiple of num_envs");
    long remaining = timesteps;
    while (remaining > 0) {
        const int horizon = static_cast<int>(std::min<long>(config_.horizon, remaining / config_.num_envs));
        RolloutBuffer buf = collect_rollout(*policy_, envs_, config_, horizon, rng_, labeler);
        const long used = static_cast<long>(horizon) * config_.num_envs;
        remaining -= used;
        timesteps_ += used;
        PpoMetricsRow row;
        row.update = update(buf);
        row.step = timesteps_;
        if (!buf.episode_rewards.empty()) {
            row.has_reward = true;
            row.mean_rollout_reward =
                std::accumulate(buf.episode_rewards.begin(), buf.episode_rewards.end(), 0.0) /
                static_cast<double>(buf.episode_rewards.size());
        }
        if (on_update) on_update(row);
    }
}

}  // namespace licorice
