// Command-line front end: train, eval, profile and oracle subcommands over
// the library entry points in sd/run.hpp.

#include <cstdint>
#include <string>

#include "CLI11.hpp"

#include "sd/run.hpp"

int main(int argc, char** argv) {
  CLI::App app{"switchable-decision transformer: per-input sublayer gating and token thinning"};
  app.require_subcommand(1);

  sd::TrainArgs train;
  uint64_t seed = 0;
  std::string out_dir;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model + decision policy from a config");
  train_cmd->add_option("config", train.config_path, "JSON run config")->required();
  CLI::Option* seed_opt = train_cmd->add_option("--seed", seed, "override the config seed");
  CLI::Option* out_opt = train_cmd->add_option("--out-dir", out_dir, "override the output directory");

  sd::EvalArgs eval;
  std::string task_kind;
  int n_min = 0, n_max = 0;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on held-out examples");
  eval_cmd->add_option("checkpoint", eval.checkpoint_path, "checkpoint file")->required();
  eval_cmd->add_option("--rule", eval.rule, "decision rule: argmax | all_keep | random")
      ->capture_default_str();
  CLI::Option* kind_opt = eval_cmd->add_option("--task", task_kind, "evaluate on a different task");
  CLI::Option* nmin_opt = eval_cmd->add_option("--n-min", n_min, "override the task's n_min");
  CLI::Option* nmax_opt = eval_cmd->add_option("--n-max", n_max, "override the task's n_max");
  eval_cmd->add_option("--examples", eval.examples, "held-out examples to score")
      ->capture_default_str();

  sd::ProfileArgs profile;
  CLI::App* profile_cmd = app.add_subcommand("profile", "analytic FLOPs of inference paths");
  profile_cmd->add_option("config", profile.config_path, "JSON run config")->required();
  profile_cmd
      ->add_option("--decisions", profile.decisions,
                   "bit string like 110101|3, or all-keep, or enumerate")
      ->capture_default_str();
  profile_cmd->add_option("--n-src", profile.n_src, "encoder input length")->capture_default_str();
  profile_cmd->add_option("--n-tgt", profile.n_tgt, "decoder input length")->capture_default_str();

  sd::OracleArgs oracle;
  CLI::App* oracle_cmd =
      app.add_subcommand("oracle", "compare Monte-Carlo policy estimates to exact enumeration");
  oracle_cmd->add_option("config", oracle.config_path, "JSON run config (small decision space)")
      ->required();
  oracle_cmd->add_option("--lambda", oracle.lambda, "reward trade-off weight")
      ->capture_default_str();
  oracle_cmd->add_option("--reward-samples", oracle.reward_samples, "draws for the E[R] check")
      ->capture_default_str();
  oracle_cmd
      ->add_option("--grad-samples", oracle.grad_samples,
                   "sample counts at which to score the gradient estimate")
      ->capture_default_str();
  oracle_cmd->add_option("--perturb", oracle.perturb, "policy head perturbation scale")
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  if (train_cmd->parsed()) {
    if (*seed_opt) train.seed = seed;
    if (*out_opt) train.out_dir = out_dir;
    return sd::cmd_train(train);
  }
  if (eval_cmd->parsed()) {
    if (*kind_opt) eval.task_kind = task_kind;
    if (*nmin_opt) eval.n_min = n_min;
    if (*nmax_opt) eval.n_max = n_max;
    return sd::cmd_eval(eval);
  }
  if (profile_cmd->parsed()) return sd::cmd_profile(profile);
  return sd::cmd_oracle(oracle);
}
