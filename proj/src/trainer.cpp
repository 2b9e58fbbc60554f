#include "sd/trainer.hpp"

#include <cmath>
#include <stdexcept>

#include "sd/lexico.hpp"

namespace sd {

namespace {

// independent derived streams so evaluation never disturbs training draws
constexpr uint64_t kInitStreamTag = 0x494e4954ULL;     // weights
constexpr uint64_t kTrainStreamTag = 0x5452414eULL;    // batches + decision samples
constexpr uint64_t kEvalStreamTag = 0x4556414cULL;     // evaluation examples
constexpr uint64_t kEvalDecisionTag = 0x45444543ULL;   // random-rule evaluation decisions

void check_field(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument("trainer config: " + message);
}

void axpy(std::vector<double>& y, const std::vector<double>& x, double a) {
  for (size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

}  // namespace

std::string lambda_mode_name(LambdaMode mode) {
  switch (mode) {
    case LambdaMode::Lexico: return "lexico";
    case LambdaMode::Fixed: return "fixed";
    case LambdaMode::RandomPolicy: return "random";
    case LambdaMode::AllKeep: return "all_keep";
  }
  throw std::logic_error("lambda_mode_name: unknown mode");
}

LambdaMode lambda_mode_from_name(const std::string& name) {
  if (name == "lexico") return LambdaMode::Lexico;
  if (name == "fixed") return LambdaMode::Fixed;
  if (name == "random") return LambdaMode::RandomPolicy;
  if (name == "all_keep") return LambdaMode::AllKeep;
  throw std::invalid_argument("trainer mode '" + name +
                              "' unknown (lexico, fixed, random, all_keep)");
}

std::string c_mode_name(CMode mode) { return mode == CMode::Fixed ? "fixed" : "ema"; }

CMode c_mode_from_name(const std::string& name) {
  if (name == "fixed") return CMode::Fixed;
  if (name == "ema") return CMode::Ema;
  throw std::invalid_argument("c_mode '" + name + "' unknown (fixed, ema)");
}

std::string decision_space_name(DecisionSpace space) {
  switch (space) {
    case DecisionSpace::Full: return "full";
    case DecisionSpace::EncoderOnly: return "encoder_only";
    case DecisionSpace::DecoderOnly: return "decoder_only";
    case DecisionSpace::TokenOnly: return "token_only";
  }
  throw std::logic_error("decision_space_name: unknown space");
}

DecisionSpace decision_space_from_name(const std::string& name) {
  if (name == "full") return DecisionSpace::Full;
  if (name == "encoder_only") return DecisionSpace::EncoderOnly;
  if (name == "decoder_only") return DecisionSpace::DecoderOnly;
  if (name == "token_only") return DecisionSpace::TokenOnly;
  throw std::invalid_argument("decision_space '" + name +
                              "' unknown (full, encoder_only, decoder_only, token_only)");
}

DecisionSpaceMask make_decision_space_mask(DecisionSpace space, const DecisionLayout& layout) {
  switch (space) {
    case DecisionSpace::Full: return DecisionSpaceMask::full(layout);
    case DecisionSpace::EncoderOnly: return DecisionSpaceMask::encoder_only(layout);
    case DecisionSpace::DecoderOnly: return DecisionSpaceMask::decoder_only(layout);
    case DecisionSpace::TokenOnly: return DecisionSpaceMask::token_only(layout);
  }
  throw std::logic_error("make_decision_space_mask: unknown space");
}

std::string decision_rule_name(DecisionRule rule) {
  switch (rule) {
    case DecisionRule::Argmax: return "argmax";
    case DecisionRule::AllKeep: return "all_keep";
    case DecisionRule::RandomUniform: return "random";
  }
  throw std::logic_error("decision_rule_name: unknown rule");
}

DecisionRule decision_rule_from_name(const std::string& name) {
  if (name == "argmax") return DecisionRule::Argmax;
  if (name == "all_keep") return DecisionRule::AllKeep;
  if (name == "random") return DecisionRule::RandomUniform;
  throw std::invalid_argument("decision rule '" + name + "' unknown (argmax, all_keep, random)");
}

void RewardSpec::validate() const {
  check_field(fixed_lambda >= 0.0, "fixed_lambda must be >= 0");
  check_field(c_margin >= 0.0, "c_margin must be >= 0");
  check_field(c_decay > 0.0 && c_decay < 1.0, "c_decay must lie in (0, 1)");
  check_field(n_samples >= 1, "n_samples must be >= 1");
  if (swap_objective_roles) {
    // the swapped constraint is a FLOPs budget: the EMA loss tracker has no
    // meaning for it, so the threshold must be an explicit fraction
    check_field(c_mode == CMode::Fixed,
                "swap_objective_roles requires c_mode=fixed (c is a FLOPs-fraction budget)");
    check_field(c_fixed > 0.0 && c_fixed <= 1.0,
                "swap_objective_roles needs c_fixed in (0, 1]");
  }
}

void TrainerConfig::validate() const {
  reward.validate();
  check_field(model_lr >= 0.0, "model_lr must be >= 0 (0 freezes the model)");
  check_field(policy_lr > 0.0, "policy_lr must be > 0");
  check_field(steps >= 1, "steps must be >= 1");
  check_field(batch_size >= 1, "batch_size must be >= 1");
  check_field(eval_every >= 0, "eval_every must be >= 0");
  check_field(eval_examples >= 1, "eval_examples must be >= 1");
  check_field(checkpoint_every >= 0, "checkpoint_every must be >= 0");
}

double reward(double loss, double flops_fraction, double lambda) {
  if (flops_fraction <= 0.0 || flops_fraction > 1.0)
    throw std::invalid_argument("reward: flops_fraction must lie in (0, 1], got " +
                                std::to_string(flops_fraction));
  return -loss + lambda * (1.0 - flops_fraction);
}

TrainState::TrainState(const ModelConfig& config, uint64_t seed)
    : TrainState(config, seed, Rng(hash_combine(seed, kInitStreamTag))) {}

// `init` seeds the model first, then the policy, off one stream
TrainState::TrainState(const ModelConfig& config, uint64_t seed, Rng init)
    : model(config, init),
      policy(config.e, config.layout().d(), kNumTokenStrategies, init),
      rng(hash_combine(seed, kTrainStreamTag)) {
  model_moments = AdamMoments::for_params(model.params());
  policy_moments = AdamMoments::for_params(policy.params());
}

Trainer::Trainer(const ModelConfig& model_config, const TaskSpec& task, const TrainerConfig& config,
                 uint64_t seed)
    : model_config_(model_config),
      task_(task),
      config_(config),
      seed_(seed),
      state_(model_config, seed),
      cost_(model_config),
      mask_(make_decision_space_mask(config.decision_space, model_config.layout())) {
  model_config_.validate();
  task_.validate();
  config_.validate();
  if (task_.vocab_size != model_config_.vocab_size)
    throw std::invalid_argument("trainer config: task vocab_size (" +
                                std::to_string(task_.vocab_size) + ") differs from model (" +
                                std::to_string(model_config_.vocab_size) + ")");
  if (task_.n_max + 1 > model_config_.max_len)
    throw std::invalid_argument("trainer config: n_max + 1 exceeds model max_len");
}

std::vector<int> Trainer::encoder_input(const Example& ex) const {
  std::vector<int> in = ex.src;
  in.push_back(kEosToken);
  return in;
}

PolicyInput Trainer::policy_input(const Example& ex) const {
  NoGrad no_grad;
  return pool_hidden(state_.model.first_layer_output(encoder_input(ex)));
}

double Trainer::path_loss(const Example& ex, const Decisions& decisions) const {
  NoGrad no_grad;
  const double loss = state_.model.seq_loss(ex.src, ex.tgt, decisions).scalar();
  check_finite(loss, decisions);
  return loss;
}

double Trainer::path_fraction(const Example& ex, const Decisions& decisions) const {
  return cost_
      .path_flops(decisions, static_cast<int>(ex.src.size()) + 1,
                  static_cast<int>(ex.tgt.size()) + 1)
      .fraction;
}

void Trainer::check_finite(double loss, const Decisions& decisions) const {
  if (!std::isfinite(loss))
    throw std::runtime_error("training aborted: non-finite loss on path " + decisions.to_string() +
                             " at step " + std::to_string(state_.step + 1) +
                             " (lambda=" + std::to_string(last_lambda_) + ")");
}

Decisions Trainer::draw_decisions(const Example& ex) {
  const int d = model_config_.layout().d();
  Decisions decisions;
  switch (config_.reward.lambda_mode) {
    case LambdaMode::AllKeep:
      return Decisions::all_keep(d);
    case LambdaMode::RandomPolicy:
      decisions = sample_decisions(DecisionDistribution::uniform(d), state_.rng);
      break;
    case LambdaMode::Lexico:
    case LambdaMode::Fixed:
      decisions = sample_decisions(state_.policy.distribution(policy_input(ex)), state_.rng);
      break;
  }
  mask_.force(decisions);
  return decisions;
}

double Trainer::current_c() const {
  if (config_.reward.c_mode == CMode::Fixed) return config_.reward.c_fixed;
  return state_.c_ema + config_.reward.c_margin;
}

ObjectiveEstimate Trainer::estimate_objectives(const std::vector<Example>& batch, int n_samples) {
  if (batch.empty()) throw std::invalid_argument("estimate_objectives: empty batch");
  if (n_samples < 1) throw std::invalid_argument("estimate_objectives: n_samples must be >= 1");
  const size_t n_params = static_cast<size_t>(param_count(state_.policy.params()));
  ObjectiveEstimate est;
  est.grad_quality.assign(n_params, 0.0);
  est.grad_comp.assign(n_params, 0.0);
  const double w = 1.0 / (static_cast<double>(batch.size()) * n_samples);
  for (const Example& ex : batch) {
    const PolicyInput x = policy_input(ex);
    const DecisionDistribution dist = state_.policy.distribution(x);
    Decisions greedy = argmax_decisions(dist);
    mask_.force(greedy);
    const double loss_greedy = path_loss(ex, greedy);
    const double frac_greedy = path_fraction(ex, greedy);
    est.greedy_loss += loss_greedy / static_cast<double>(batch.size());
    est.greedy_fraction += frac_greedy / static_cast<double>(batch.size());
    for (int s = 0; s < n_samples; ++s) {
      Decisions sampled = sample_decisions(dist, state_.rng);
      mask_.force(sampled);
      const double loss_s = path_loss(ex, sampled);
      const double frac_s = path_fraction(ex, sampled);
      est.l_quality += w * loss_s;
      est.l_comp += w * frac_s;
      const std::vector<double> logp = state_.policy.log_prob_grad(x, sampled, &mask_);
      axpy(est.grad_quality, logp, w * (loss_s - loss_greedy));
      axpy(est.grad_comp, logp, w * (frac_s - frac_greedy));
    }
  }
  return est;
}

StepMetrics Trainer::step() {
  const LambdaMode mode = config_.reward.lambda_mode;
  const int batch_size = config_.batch_size;

  std::vector<Example> batch;
  batch.reserve(static_cast<size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i)
    batch.push_back(generate_split_example(task_, Split::Train, state_.rng));

  // (i) one sampled path per element
  std::vector<Decisions> sampled;
  sampled.reserve(batch.size());
  for (const Example& ex : batch) sampled.push_back(draw_decisions(ex));

  // (ii) model update along the sampled paths
  StepMetrics metrics;
  std::vector<Tensor> model_params = state_.model.params();
  zero_grads(model_params);
  for (size_t i = 0; i < batch.size(); ++i) {
    Tape tape;
    Tensor loss = state_.model.seq_loss(batch[i].src, batch[i].tgt, sampled[i]);
    check_finite(loss.scalar(), sampled[i]);
    metrics.loss += loss.scalar() / batch_size;
    tape.backward(scale(loss, 1.0 / batch_size));
    const FlopsReport report =
        cost_.path_flops(sampled[i], static_cast<int>(batch[i].src.size()) + 1,
                         static_cast<int>(batch[i].tgt.size()) + 1);
    metrics.fraction += report.fraction / batch_size;
    metrics.skip.att_pct += report.skip_stats.att_pct / batch_size;
    metrics.skip.ffn_pct += report.skip_stats.ffn_pct / batch_size;
    metrics.skip.token_pct += report.skip_stats.token_pct / batch_size;
  }
  if (config_.model_lr > 0.0)
    adam_step(model_params, state_.model_moments, config_.model_lr, ++state_.adam_t_model);

  // full-path quality of the freshly updated model, for the constraint
  // tracker (and the greedy-loss metric when there is no learned policy)
  const Decisions all_keep = Decisions::all_keep(model_config_.layout().d());
  double full_path_loss = 0.0;
  for (const Example& ex : batch) full_path_loss += path_loss(ex, all_keep) / batch_size;
  if (!state_.c_ema_init) {
    state_.c_ema = full_path_loss;
    state_.c_ema_init = true;
  }
  metrics.c = current_c();

  // (iii) policy update
  if (mode == LambdaMode::Lexico || mode == LambdaMode::Fixed) {
    const ObjectiveEstimate est = estimate_objectives(batch, config_.reward.n_samples);
    metrics.greedy_loss = est.greedy_loss;
    // φ is the violation of whichever objective is constrained: quality-loss
    // by default, the FLOPs fraction when the roles are swapped (budget run)
    metrics.phi = config_.reward.swap_objective_roles ? est.l_comp - metrics.c
                                                      : est.l_quality - metrics.c;
    std::vector<Tensor> policy_params = state_.policy.params();
    std::vector<double> direction;
    if (mode == LambdaMode::Lexico) {
      LexicoDirection dir = lexico_direction(est.grad_comp, est.grad_quality, metrics.phi,
                                             config_.reward.swap_objective_roles);
      metrics.lambda = dir.lambda;
      direction = std::move(dir.direction);
    } else {
      // constant trade-off: descend E[loss] + λ·E[fraction]
      metrics.lambda = config_.reward.fixed_lambda;
      direction = est.grad_quality;
      axpy(direction, est.grad_comp, metrics.lambda);
    }
    set_grads(policy_params, direction);
    if (config_.reward.policy_plain_step)
      sgd_step(policy_params, config_.policy_lr);
    else
      adam_step(policy_params, state_.policy_moments, config_.policy_lr, ++state_.adam_t_policy);
    last_lambda_ = metrics.lambda;
  } else {
    metrics.greedy_loss = full_path_loss;
    metrics.phi = metrics.loss - metrics.c;
    metrics.lambda = 0.0;
  }

  // (iv) constraint tracker
  if (config_.reward.c_mode == CMode::Ema)
    state_.c_ema = config_.reward.c_decay * state_.c_ema +
                   (1.0 - config_.reward.c_decay) * full_path_loss;

  metrics.step = ++state_.step;
  return metrics;
}

EvalReport Trainer::evaluate(DecisionRule rule) const {
  return evaluate(rule, config_.eval_examples);
}

EvalReport Trainer::evaluate(DecisionRule rule, int n_examples) const {
  if (n_examples < 1) throw std::invalid_argument("evaluate: n_examples must be >= 1");
  Rng example_rng(hash_combine(seed_, kEvalStreamTag));
  Rng decision_rng(hash_combine(seed_, kEvalDecisionTag));
  const int d = model_config_.layout().d();
  EvalReport report;
  report.n_examples = n_examples;
  for (int i = 0; i < n_examples; ++i) {
    const Example ex = generate_split_example(task_, Split::Val, example_rng);
    Decisions decisions;
    switch (rule) {
      case DecisionRule::Argmax:
        decisions = argmax_decisions(state_.policy.distribution(policy_input(ex)));
        mask_.force(decisions);
        break;
      case DecisionRule::AllKeep:
        decisions = Decisions::all_keep(d);
        break;
      case DecisionRule::RandomUniform:
        decisions = sample_decisions(DecisionDistribution::uniform(d), decision_rng);
        mask_.force(decisions);
        break;
    }

    NoGrad no_grad;
    std::vector<int> labels = ex.tgt;
    labels.push_back(kEosToken);
    std::vector<int> dec_in;
    dec_in.reserve(labels.size());
    dec_in.push_back(kBosToken);
    dec_in.insert(dec_in.end(), ex.tgt.begin(), ex.tgt.end());
    const EncodedMemory memory = state_.model.encoder_forward(encoder_input(ex), decisions);
    const Tensor logits = state_.model.decoder_forward(dec_in, memory, decisions);
    const int vocab = model_config_.vocab_size;
    int correct = 0;
    for (size_t row = 0; row < labels.size(); ++row) {
      const double* r = logits.data() + static_cast<int64_t>(row) * vocab;
      int best = 0;
      for (int v = 1; v < vocab; ++v)
        if (r[v] > r[best]) best = v;
      if (best == labels[row]) ++correct;
    }
    report.token_accuracy += static_cast<double>(correct) / labels.size() / n_examples;
    report.loss += cross_entropy(logits, labels, {}).scalar() / n_examples;

    const std::vector<int> generated =
        state_.model.greedy_generate(ex.src, decisions, model_config_.max_len - 2);
    report.exact_match += (generated == ex.tgt ? 1.0 : 0.0) / n_examples;

    const FlopsReport flops = cost_.path_flops(decisions, static_cast<int>(ex.src.size()) + 1,
                                               static_cast<int>(ex.tgt.size()) + 1);
    report.fraction += flops.fraction / n_examples;
    report.skip.att_pct += flops.skip_stats.att_pct / n_examples;
    report.skip.ffn_pct += flops.skip_stats.ffn_pct / n_examples;
    report.skip.token_pct += flops.skip_stats.token_pct / n_examples;
  }
  return report;
}

}  // namespace sd
