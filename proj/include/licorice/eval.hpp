#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "licorice/envs.hpp"
#include "licorice/ppo.hpp"

namespace licorice {

struct EvalReport {
    std::string env;
    double mean_reward = 0;
    double reward_ratio = 0;
    /// MSE (continuous) or 1 - accuracy (categorical), averaged over concept
    /// variables; per-episode means averaged over episodes.
    double concept_error = 0;
    std::vector<std::string> concept_names;
    std::vector<double> per_concept_errors;
    std::vector<double> episode_rewards;
    int episodes = 0;
    std::uint64_t eval_seed = 0;
};

/// Greedy (argmax) rollouts; episode i uses seed eval_seed + i. Never touches
/// a label oracle: concept errors use the environment's ground truth.
EvalReport evaluate(const Policy& policy, const Environment& env, int episodes = 100, std::uint64_t eval_seed = 42,
                    ConceptInput input = ConceptInput::Predicted);

nlohmann::json to_json(const EvalReport& report);

/// Percentile bootstrap CI of the mean.
std::pair<double, double> bootstrap_ci(std::span<const double> values, int resamples = 1000, double level = 0.95,
                                       std::uint64_t seed = 0);

}  // namespace licorice
