#include "sd/run.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <stdexcept>

#include "json.hpp"

#include "sd/flops.hpp"
#include "sd/io.hpp"
#include "sd/policy.hpp"
#include "sd/rng.hpp"
#include "sd/trainer.hpp"

namespace sd {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr uint64_t kOraclePerturbTag = 0x50455254ULL;  // policy perturbation
constexpr uint64_t kOracleDataTag = 0x4f444154ULL;     // probe example
constexpr uint64_t kOracleMcTag = 0x4f4d4353ULL;       // Monte-Carlo draws

// Uniform error handling for the command wrappers.
template <typename Fn>
int guarded(const char* command, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    std::cerr << command << ": error: " << e.what() << '\n';
    return 1;
  }
}

// Modes without a learned policy are judged on the paths they actually run.
DecisionRule eval_rule_for(LambdaMode mode) {
  switch (mode) {
    case LambdaMode::RandomPolicy: return DecisionRule::RandomUniform;
    case LambdaMode::AllKeep: return DecisionRule::AllKeep;
    default: return DecisionRule::Argmax;
  }
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

void axpy(std::vector<double>& acc, double scale, const std::vector<double>& x) {
  for (size_t i = 0; i < x.size(); ++i) acc[i] += scale * x[i];
}

int64_t path_index(const Decisions& dec, int j) {
  int64_t bits = 0;
  for (size_t i = 0; i < dec.sublayer_keep.size(); ++i)
    if (dec.sublayer_keep[i]) bits |= int64_t{1} << i;
  return bits * j + dec.token_strategy;
}

}  // namespace

// --- train --------------------------------------------------------------------

int cmd_train(const TrainArgs& args) {
  return guarded("train", [&] {
    RunConfig cfg = RunConfig::load(args.config_path);
    if (args.seed) {
      cfg.seed = *args.seed;
      cfg.task.seed = cfg.seed;  // the task stream rides on the run seed
    }
    if (args.out_dir) cfg.out_dir = *args.out_dir;
    cfg.validate();

    fs::create_directories(cfg.out_dir);
    const fs::path out(cfg.out_dir);
    {
      std::ofstream resolved(out / "config.json", std::ios::trunc);
      resolved << cfg.to_json() << '\n';
      if (!resolved) throw std::runtime_error("cannot write " + (out / "config.json").string());
    }

    Trainer trainer(cfg.model, cfg.task, cfg.trainer, cfg.seed);
    MetricsWriter metrics((out / "metrics.jsonl").string());
    const DecisionRule rule = eval_rule_for(cfg.trainer.reward.lambda_mode);

    double fraction_sum = 0.0;
    for (int i = 0; i < cfg.trainer.steps; ++i) {
      StepMetrics m = trainer.step();
      fraction_sum += m.fraction;
      const bool eval_now =
          cfg.trainer.eval_every > 0 && m.step % cfg.trainer.eval_every == 0;
      if (eval_now) m.eval_accuracy = trainer.evaluate(rule).token_accuracy;
      metrics.write(m);
      if (cfg.trainer.checkpoint_every > 0 && m.step % cfg.trainer.checkpoint_every == 0) {
        save_checkpoint((out / ("ckpt_" + std::to_string(m.step) + ".sdck")).string(), cfg,
                        trainer.state());
      }
    }

    const EvalReport report = trainer.evaluate(rule);
    save_checkpoint((out / "ckpt_final.sdck").string(), cfg, trainer.state());

    json summary{{"steps", cfg.trainer.steps},
                 {"mean_fraction", fraction_sum / cfg.trainer.steps},
                 {"c", trainer.current_c()},
                 {"eval", json::parse(eval_report_to_json(report))}};
    {
      std::ofstream sf(out / "summary.json", std::ios::trunc);
      sf << summary.dump(2) << '\n';
      if (!sf) throw std::runtime_error("cannot write " + (out / "summary.json").string());
    }

    std::printf("train: %d steps, eval accuracy %.4f, exact match %.4f, mean fraction %.4f -> %s\n",
                cfg.trainer.steps, report.token_accuracy, report.exact_match,
                fraction_sum / cfg.trainer.steps, cfg.out_dir.c_str());
    return 0;
  });
}

// --- eval ---------------------------------------------------------------------

int cmd_eval(const EvalArgs& args) {
  return guarded("eval", [&] {
    const RunConfig cfg = checkpoint_config(args.checkpoint_path);

    TaskSpec task = cfg.task;
    if (args.task_kind) task.kind = task_kind_from_name(*args.task_kind);
    if (args.n_min) task.n_min = *args.n_min;
    if (args.n_max) task.n_max = *args.n_max;
    task.validate();
    if (args.examples < 1) throw std::invalid_argument("--examples must be >= 1");

    Trainer trainer(cfg.model, task, cfg.trainer, cfg.seed);
    load_checkpoint(args.checkpoint_path, cfg, trainer.state());

    const DecisionRule rule = decision_rule_from_name(args.rule);
    const EvalReport report = trainer.evaluate(rule, args.examples);
    std::cout << eval_report_to_json(report) << '\n';
    return 0;
  });
}

// --- profile ------------------------------------------------------------------

namespace {

void print_path_profile(const CostModel& cost, const Decisions& dec, int n_src, int n_tgt) {
  const FlopsReport report = cost.path_flops(dec, n_src, n_tgt);
  std::printf("decisions %s  (n_src %d, n_tgt %d)\n", dec.to_string().c_str(), n_src, n_tgt);
  for (const auto& [unit, flops] : report.per_unit)
    std::printf("  %-10s %12llu\n", unit.c_str(), static_cast<unsigned long long>(flops));
  std::printf("total %llu of %llu (fraction %.6f)\n",
              static_cast<unsigned long long>(report.total),
              static_cast<unsigned long long>(cost.full_total(n_src, n_tgt)), report.fraction);
  std::printf("skipped: attention %.1f%%, ffn %.1f%%, tokens %.1f%%\n", report.skip_stats.att_pct,
              report.skip_stats.ffn_pct, report.skip_stats.token_pct);
}

}  // namespace

int cmd_profile(const ProfileArgs& args) {
  return guarded("profile", [&] {
    const RunConfig cfg = RunConfig::load(args.config_path);
    if (args.n_src < 1 || args.n_tgt < 1)
      throw std::invalid_argument("--n-src and --n-tgt must be >= 1");
    const CostModel cost(cfg.model);
    const int d = cfg.model.layout().d();

    if (args.decisions == "enumerate") {
      if (d > kMaxOracleBits)
        throw std::invalid_argument("enumerate: decision space has " + std::to_string(d) +
                                    " bits; capped at " + std::to_string(kMaxOracleBits));
      struct Row {
        double fraction;
        uint64_t total;
        std::string text;
      };
      std::vector<Row> rows;
      for_each_decisions(d, kNumTokenStrategies, [&](const Decisions& dec) {
        const FlopsReport r = cost.path_flops(dec, args.n_src, args.n_tgt);
        rows.push_back({r.fraction, r.total, dec.to_string()});
      });
      std::stable_sort(rows.begin(), rows.end(),
                       [](const Row& a, const Row& b) { return a.fraction < b.fraction; });
      std::printf("%zu paths  (n_src %d, n_tgt %d)\n", rows.size(), args.n_src, args.n_tgt);
      for (const Row& r : rows)
        std::printf("%.6f %12llu  %s\n", r.fraction, static_cast<unsigned long long>(r.total),
                    r.text.c_str());
      return 0;
    }

    const bool keep_all = args.decisions == "all-keep" || args.decisions == "all_keep";
    const Decisions dec = keep_all ? Decisions::all_keep(d) : Decisions::parse(args.decisions, d);
    print_path_profile(cost, dec, args.n_src, args.n_tgt);
    return 0;
  });
}

// --- oracle -------------------------------------------------------------------

OracleReport run_oracle(const ModelConfig& model_config, const TaskSpec& task_in, uint64_t seed,
                        double lambda, int64_t reward_samples,
                        const std::vector<int64_t>& grad_points, double perturb) {
  model_config.validate();
  TaskSpec task = task_in;
  task.vocab_size = model_config.vocab_size;
  task.seed = seed;
  task.validate();
  if (reward_samples < 2) throw std::invalid_argument("oracle: reward_samples must be >= 2");

  const DecisionLayout layout = model_config.layout();
  const int d = layout.d();
  const int j = kNumTokenStrategies;
  if (d > kMaxOracleBits)
    throw std::invalid_argument("oracle: decision space has " + std::to_string(d) +
                                " bits; exact enumeration is capped at " +
                                std::to_string(kMaxOracleBits));

  TrainState state(model_config, seed);
  // Nudge the policy off its uniform start so the compared gradients carry
  // head information, not just the shared trunk.
  if (perturb != 0.0) {
    Rng prng(hash_combine(seed, kOraclePerturbTag));
    for (Tensor& p : state.policy.params())
      for (int64_t i = 0; i < p.numel(); ++i) p.data()[i] += perturb * prng.uniform(-1.0, 1.0);
  }

  Rng data_rng(hash_combine(seed, kOracleDataTag));
  const Example ex = generate_split_example(task, Split::Train, data_rng);
  std::vector<int> enc_in = ex.src;
  enc_in.push_back(kEosToken);
  const int n_src = static_cast<int>(enc_in.size());
  const int n_tgt = static_cast<int>(ex.tgt.size()) + 1;

  const CostModel cost(model_config);
  const PolicyInput pin = pool_hidden(state.model.first_layer_output(enc_in));
  const DecisionDistribution dist = state.policy.distribution(pin);

  const int64_t paths = decision_space_size(d, j);
  std::vector<double> loss_tab(paths), frac_tab(paths), prob_tab(paths);
  std::vector<std::vector<double>> grad_tab(paths);
  for_each_decisions(d, j, [&](const Decisions& dec) {
    const int64_t idx = path_index(dec, j);
    {
      NoGrad ng;
      loss_tab[idx] = state.model.seq_loss(ex.src, ex.tgt, dec).scalar();
    }
    frac_tab[idx] = cost.path_flops(dec, n_src, n_tgt).fraction;
    prob_tab[idx] = std::exp(log_prob(dist, dec));
    grad_tab[idx] = state.policy.log_prob_grad(pin, dec);
  });

  double prob_sum = 0.0;
  for (double p : prob_tab) prob_sum += p;
  if (std::abs(prob_sum - 1.0) > 1e-9)
    throw std::runtime_error("oracle: path probabilities sum to " + std::to_string(prob_sum));

  OracleReport report;
  report.d = d;
  report.paths = paths;
  report.lambda = lambda;
  report.reward_samples = reward_samples;

  const size_t n_params = grad_tab[0].size();
  std::vector<double> exact_gr(n_params, 0.0), exact_gq(n_params, 0.0), exact_gc(n_params, 0.0);
  for (int64_t i = 0; i < paths; ++i) {
    const double r = reward(loss_tab[i], frac_tab[i], lambda);
    report.exact_reward += prob_tab[i] * r;
    report.exact_loss += prob_tab[i] * loss_tab[i];
    report.exact_fraction += prob_tab[i] * frac_tab[i];
    axpy(exact_gr, prob_tab[i] * r, grad_tab[i]);
    axpy(exact_gq, prob_tab[i] * loss_tab[i], grad_tab[i]);
    axpy(exact_gc, prob_tab[i] * frac_tab[i], grad_tab[i]);
  }

  // Self-critical baseline, exactly as the trainer estimates it.
  const int64_t greedy_idx = path_index(argmax_decisions(dist), j);
  const double loss_g = loss_tab[greedy_idx];
  const double frac_g = frac_tab[greedy_idx];
  const double reward_g = reward(loss_g, frac_g, lambda);

  std::vector<int64_t> points = grad_points;
  std::sort(points.begin(), points.end());
  int64_t max_n = reward_samples;
  for (int64_t p : points) {
    if (p < 1) throw std::invalid_argument("oracle: gradient sample counts must be >= 1");
    max_n = std::max(max_n, p);
  }

  Rng mc_rng(hash_combine(seed, kOracleMcTag));
  std::vector<double> mc_gr(n_params, 0.0), mc_gq(n_params, 0.0), mc_gc(n_params, 0.0);
  double mean = 0.0, m2 = 0.0;  // Welford over sampled rewards
  size_t next_point = 0;
  for (int64_t n = 1; n <= max_n; ++n) {
    const Decisions dec = sample_decisions(dist, mc_rng);
    const int64_t idx = path_index(dec, j);
    const double r = reward(loss_tab[idx], frac_tab[idx], lambda);
    const double delta = r - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (r - mean);
    axpy(mc_gr, r - reward_g, grad_tab[idx]);
    axpy(mc_gq, loss_tab[idx] - loss_g, grad_tab[idx]);
    axpy(mc_gc, frac_tab[idx] - frac_g, grad_tab[idx]);
    if (n == reward_samples) {
      report.mc_reward = mean;
      report.mc_reward_se =
          std::sqrt(m2 / (static_cast<double>(n) * static_cast<double>(n - 1)));
    }
    while (next_point < points.size() && n == points[next_point]) {
      // cosine ignores the 1/n scale, so the raw sums compare directly
      report.grad_points.push_back(
          {n, cosine(mc_gr, exact_gr), cosine(mc_gq, exact_gq), cosine(mc_gc, exact_gc)});
      ++next_point;
    }
  }
  return report;
}

std::string oracle_report_to_json(const OracleReport& r) {
  json points = json::array();
  for (const OracleGradPoint& p : r.grad_points)
    points.push_back({{"samples", p.samples},
                      {"cos_reward", p.cos_reward},
                      {"cos_quality", p.cos_quality},
                      {"cos_comp", p.cos_comp}});
  json j{{"d", r.d},
         {"paths", r.paths},
         {"lambda", r.lambda},
         {"exact_reward", r.exact_reward},
         {"exact_loss", r.exact_loss},
         {"exact_fraction", r.exact_fraction},
         {"mc_reward", r.mc_reward},
         {"mc_reward_se", r.mc_reward_se},
         {"reward_samples", r.reward_samples},
         {"grad_points", points}};
  return j.dump(2);
}

int cmd_oracle(const OracleArgs& args) {
  return guarded("oracle", [&] {
    const RunConfig cfg = RunConfig::load(args.config_path);
    const OracleReport report = run_oracle(cfg.model, cfg.task, cfg.seed, args.lambda,
                                           args.reward_samples, args.grad_samples, args.perturb);
    std::cout << oracle_report_to_json(report) << '\n';
    return 0;
  });
}

}  // namespace sd
