#include "licorice/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace licorice {

EvalReport evaluate(const Policy& policy, const Environment& env, int episodes, std::uint64_t eval_seed,
                    ConceptInput input) {
    if (episodes < 1) throw Error("evaluate: episodes must be >= 1");
    if (!(policy.schema() == env.schema())) throw Error("evaluate: policy schema does not match environment");
    const auto& schema = env.schema();
    const std::size_t n_vars = schema.size();
    const bool categorical = schema.is_categorical();

    EvalReport rep;
    rep.env = to_string(env.kind());
    rep.episodes = episodes;
    rep.eval_seed = eval_seed;
    for (const auto& s : schema.specs()) rep.concept_names.push_back(s.name);
    rep.per_concept_errors.assign(n_vars, 0.0);

    for (int ep = 0; ep < episodes; ++ep) {
        auto [state, obs] = env.reset(eval_seed + static_cast<std::uint64_t>(ep));
        std::vector<double> err(n_vars, 0.0);
        long observations = 0;
        double total_reward = 0;
        while (true) {
            const ConceptVector truth = env.true_concepts(state);
            const Matrix<float> x = observation_matrix<float>({obs});
            const Matrix<float> t = concept_matrix<float>({truth});
            const PolicyOutput<float> out = policy.forward(x, input == ConceptInput::Truth ? &t : nullptr);
            for (std::size_t v = 0; v < n_vars; ++v) {
                const double pred = out.concepts(static_cast<Eigen::Index>(v), 0);
                err[v] += categorical ? (pred == truth[v] ? 0.0 : 1.0) : (pred - truth[v]) * (pred - truth[v]);
            }
            ++observations;
            const int action = argmax_action<float>(out.action_probs.col(0));
            StepResult r = env.step(state, action);
            total_reward += r.reward;
            if (r.terminated || r.truncated) break;
            obs = std::move(r.observation);
        }
        rep.episode_rewards.push_back(total_reward);
        for (std::size_t v = 0; v < n_vars; ++v)
            rep.per_concept_errors[v] += err[v] / static_cast<double>(observations);
    }
    for (auto& e : rep.per_concept_errors) e /= static_cast<double>(episodes);
    rep.mean_reward = std::accumulate(rep.episode_rewards.begin(), rep.episode_rewards.end(), 0.0) / episodes;
    rep.reward_ratio = rep.mean_reward / env.reward_upper_bound();
    rep.concept_error = std::accumulate(rep.per_concept_errors.begin(), rep.per_concept_errors.end(), 0.0) /
                        static_cast<double>(n_vars);
    return rep;
}

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json per = nlohmann::json::object();
    for (std::size_t i = 0; i < r.concept_names.size(); ++i) per[r.concept_names[i]] = r.per_concept_errors[i];
    return {{"env", r.env},
            {"mean_reward", r.mean_reward},
            {"reward_ratio", r.reward_ratio},
            {"concept_error", r.concept_error},
            {"per_concept_errors", per},
            {"episodes", r.episodes},
            {"eval_seed", r.eval_seed}};
}

std::pair<double, double> bootstrap_ci(std::span<const double> values, int resamples, double level,
                                       std::uint64_t seed) {
    if (values.size() < 2) throw Error("bootstrap_ci: needs at least 2 values");
    if (resamples < 1 || !(level > 0 && level < 1)) throw Error("bootstrap_ci: bad resamples/level");
    Rng rng(derive_seed(seed, 0xb007));
    std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
    std::vector<double> means(static_cast<std::size_t>(resamples));
    for (auto& m : means) {
        double s = 0;
        for (std::size_t i = 0; i < values.size(); ++i) s += values[pick(rng)];
        m = s / static_cast<double>(values.size());
    }
    std::sort(means.begin(), means.end());
    // Linear interpolation between order statistics, as numpy.percentile.
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(means.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, means.size() - 1);
        return means[lo] + (pos - static_cast<double>(lo)) * (means[hi] - means[lo]);
    };
    const double alpha = (1.0 - level) / 2.0;
    double low = quantile(alpha), high = quantile(1.0 - alpha);
    // The interval always covers the sample mean, even for tiny resample counts.
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    return {std::min(low, mean), std::max(high, mean)};
}

}  // namespace licorice
