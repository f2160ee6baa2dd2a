#pragma once

#include <functional>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "licorice/config.hpp"
#include "licorice/eval.hpp"

namespace licorice {

using Logger = std::function<void(const std::string&)>;

struct TrainOutcome {
    EvalReport report;
    long queries_spent = 0;
    std::string run_dir;
    nlohmann::json report_json;
};

/// Builds the oracle, runs the algorithm, evaluates and writes the run
/// directory (config.txt first, report.json last).
TrainOutcome train_run(const RunConfig& config, const Logger& log = {});

/// Evaluates a saved checkpoint. With expect_env set, a checkpoint for another
/// environment is an error.
EvalReport eval_checkpoint(const std::string& dir, std::optional<EnvKind> expect_env, int episodes,
                           std::uint64_t eval_seed);

/// Samples states from rollouts of the checkpoint's policy (config.lic.acceptance,
/// config.seed), labels them with config.oracle and reports the per-concept error.
nlohmann::json oracle_error_run(const std::string& checkpoint, const RunConfig& config, int samples,
                                const Logger& log = {});

/// Full command line; returns the process exit code (0 ok, 1 runtime failure, 2 usage).
int cli_main(int argc, const char* const* argv);

}  // namespace licorice
