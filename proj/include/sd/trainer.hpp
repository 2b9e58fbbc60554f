#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sd/adam.hpp"
#include "sd/decisions.hpp"
#include "sd/flops.hpp"
#include "sd/model.hpp"
#include "sd/policy.hpp"
#include "sd/rng.hpp"
#include "sd/tasks.hpp"

namespace sd {

// How the policy objective is weighted. lexico derives the multiplier from
// the constraint violation each step; fixed uses a constant; random draws
// decisions uniformly and never updates the policy; all_keep disables the
// decision machinery entirely (plain transformer training, the reference
// the others are judged against).
enum class LambdaMode { Lexico, Fixed, RandomPolicy, AllKeep };
enum class CMode { Fixed, Ema };
enum class DecisionSpace { Full, EncoderOnly, DecoderOnly, TokenOnly };

std::string lambda_mode_name(LambdaMode mode);
LambdaMode lambda_mode_from_name(const std::string& name);
std::string c_mode_name(CMode mode);
CMode c_mode_from_name(const std::string& name);
std::string decision_space_name(DecisionSpace space);
DecisionSpace decision_space_from_name(const std::string& name);
DecisionSpaceMask make_decision_space_mask(DecisionSpace space, const DecisionLayout& layout);

struct RewardSpec {
  LambdaMode lambda_mode = LambdaMode::Lexico;
  double fixed_lambda = 0.0;     // used by LambdaMode::Fixed
  CMode c_mode = CMode::Ema;
  double c_fixed = 0.0;          // threshold when c_mode = fixed
  double c_margin = 0.02;        // slack over the tracked full-path loss
  double c_decay = 0.99;         // EMA decay of the full-path loss tracker
  bool swap_objective_roles = false;  // alternate lexico coupling (see lexico.hpp)
  int n_samples = 1;             // decision samples per element per step
  bool policy_plain_step = false;  // plain −γ·e instead of Adam on the policy

  void validate() const;
};

// R = −loss + λ·(1 − fraction): quality plus λ times the FLOPs saved, so
// skipping raises the reward when λ > 0.
double reward(double loss, double flops_fraction, double lambda);

struct TrainerConfig {
  RewardSpec reward;
  double model_lr = 3e-4;
  double policy_lr = 1e-3;
  int steps = 1000;
  int batch_size = 8;
  DecisionSpace decision_space = DecisionSpace::Full;
  int eval_every = 0;        // 0 = evaluate only at the end
  int eval_examples = 64;
  int checkpoint_every = 0;  // 0 = checkpoint only at the end

  void validate() const;
};

// Monte-Carlo estimates of the two policy objectives and their
// score-function gradients, means over batch × n_samples with the greedy
// path as baseline.
struct ObjectiveEstimate {
  double l_quality = 0.0;  // E[task loss] under the policy
  double l_comp = 0.0;     // E[FLOPs fraction]
  double greedy_loss = 0.0;
  double greedy_fraction = 0.0;
  std::vector<double> grad_quality, grad_comp;  // flat, policy params() order
};

struct StepMetrics {
  int64_t step = 0;
  double loss = 0.0;         // mean batch loss on the sampled paths
  double greedy_loss = 0.0;  // mean loss on the argmax path (all-keep when no policy)
  double fraction = 0.0;     // mean FLOPs fraction of the sampled paths
  double lambda = 0.0;
  double phi = 0.0;          // quality-loss estimate minus c
  double c = 0.0;
  SkipStats skip;
  std::optional<double> eval_accuracy;  // filled on evaluation steps
};

enum class DecisionRule { Argmax, AllKeep, RandomUniform };

std::string decision_rule_name(DecisionRule rule);
DecisionRule decision_rule_from_name(const std::string& name);

struct EvalReport {
  double token_accuracy = 0.0;  // teacher-forced argmax match rate
  double exact_match = 0.0;     // greedy decode reproduces the target
  double loss = 0.0;
  double fraction = 0.0;        // mean per-example path fraction
  SkipStats skip;
  int n_examples = 0;
};

// Everything that must survive a checkpoint round trip: weights, optimizer
// moments, counters, the constraint tracker and the RNG word.
struct TrainState {
  TransformerModel model;
  PolicyNetwork policy;
  AdamMoments model_moments, policy_moments;
  int64_t step = 0;
  int64_t adam_t_model = 0, adam_t_policy = 0;
  double c_ema = 0.0;
  bool c_ema_init = false;
  Rng rng;

  TrainState(const ModelConfig& config, uint64_t seed);

 private:
  TrainState(const ModelConfig& config, uint64_t seed, Rng init);
};

// One serial transaction per step: sample a path per element, train the
// model on those paths, then move the policy along the lexicographic (or
// fixed-λ) direction, then refresh the constraint tracker.
class Trainer {
 public:
  Trainer(const ModelConfig& model_config, const TaskSpec& task, const TrainerConfig& config,
          uint64_t seed);

  StepMetrics step();
  EvalReport evaluate(DecisionRule rule) const;
  EvalReport evaluate(DecisionRule rule, int n_examples) const;

  // Fresh-sample estimate from the current policy; exposed for the
  // estimator-accuracy harness.
  ObjectiveEstimate estimate_objectives(const std::vector<Example>& batch, int n_samples);

  TrainState& state() { return state_; }
  const TrainState& state() const { return state_; }
  const ModelConfig& model_config() const { return model_config_; }
  const TaskSpec& task() const { return task_; }
  const TrainerConfig& config() const { return config_; }
  const DecisionSpaceMask& space_mask() const { return mask_; }
  const CostModel& cost_model() const { return cost_; }
  uint64_t seed() const { return seed_; }
  double current_c() const;  // threshold the next policy update will see

 private:
  std::vector<int> encoder_input(const Example& ex) const;
  PolicyInput policy_input(const Example& ex) const;
  double path_loss(const Example& ex, const Decisions& decisions) const;  // no-grad scalar
  double path_fraction(const Example& ex, const Decisions& decisions) const;
  Decisions draw_decisions(const Example& ex);
  void check_finite(double loss, const Decisions& decisions) const;

  ModelConfig model_config_;
  TaskSpec task_;
  TrainerConfig config_;
  uint64_t seed_;
  TrainState state_;
  CostModel cost_;
  DecisionSpaceMask mask_;
  double last_lambda_ = 0.0;
};

}  // namespace sd
