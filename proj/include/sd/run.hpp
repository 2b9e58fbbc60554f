#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sd/model.hpp"
#include "sd/tasks.hpp"

namespace sd {

// Command entry points behind the CLI. Each one catches its own errors,
// reports them on stderr and returns a process exit code.

struct TrainArgs {
  std::string config_path;
  std::optional<uint64_t> seed;      // overrides the config's seed
  std::optional<std::string> out_dir;
};
int cmd_train(const TrainArgs& args);

struct EvalArgs {
  std::string checkpoint_path;
  std::string rule = "argmax";       // argmax | all_keep | random
  std::optional<std::string> task_kind;  // evaluate on a different task
  std::optional<int> n_min, n_max;
  int examples = 256;
};
int cmd_eval(const EvalArgs& args);

struct ProfileArgs {
  std::string config_path;
  std::string decisions = "all-keep";  // bit string "…|s", "all-keep" or "enumerate"
  int n_src = 8;
  int n_tgt = 8;
};
int cmd_profile(const ProfileArgs& args);

struct OracleArgs {
  std::string config_path;
  double lambda = 1.0;
  int64_t reward_samples = 10000;
  std::vector<int64_t> grad_samples = {50000, 200000};
  double perturb = 0.05;
};
int cmd_oracle(const OracleArgs& args);

// --- estimator-accuracy harness ---------------------------------------------
//
// On a decision space small enough to enumerate, computes the policy
// objectives and their gradients exactly (expectations over every path) and
// compares the Monte-Carlo estimators the trainer uses against them, on one
// fixed example with freshly initialized weights.

inline constexpr int kMaxOracleBits = 10;

struct OracleGradPoint {
  int64_t samples = 0;
  double cos_reward = 0.0;   // estimator vs ∇E[R]
  double cos_quality = 0.0;  // vs ∇E[loss]
  double cos_comp = 0.0;     // vs ∇E[fraction]
};

struct OracleReport {
  int d = 0;
  int64_t paths = 0;
  double lambda = 0.0;
  double exact_reward = 0.0;
  double exact_loss = 0.0;
  double exact_fraction = 0.0;
  double mc_reward = 0.0;
  double mc_reward_se = 0.0;  // standard error at reward_samples draws
  int64_t reward_samples = 0;
  std::vector<OracleGradPoint> grad_points;
};

OracleReport run_oracle(const ModelConfig& model_config, const TaskSpec& task, uint64_t seed,
                        double lambda, int64_t reward_samples,
                        const std::vector<int64_t>& grad_points, double perturb);

std::string oracle_report_to_json(const OracleReport& report);

}  // namespace sd
