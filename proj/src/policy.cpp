#include "sd/policy.hpp"

#include <atomic>
#include <stdexcept>

#include "sd/adam.hpp"
#include "sd/rng.hpp"

namespace sd {

namespace {

std::atomic<uint64_t> g_policy_grad_calls{0};

}  // namespace

uint64_t policy_grad_invocations() { return g_policy_grad_calls.load(); }
void reset_policy_grad_invocations() { g_policy_grad_calls.store(0); }

PolicyInput pool_hidden(const Tensor& first_layer_output) {
  if (!first_layer_output.defined() || first_layer_output.ndim() != 2)
    throw std::invalid_argument("pool_hidden: expected an [n×e] activation");
  const int n = first_layer_output.dim(0), e = first_layer_output.dim(1);
  if (n < 1) throw std::invalid_argument("pool_hidden: empty activation");
  std::vector<double> x(static_cast<size_t>(e), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < e; ++j)
      x[static_cast<size_t>(j)] += first_layer_output.data()[static_cast<int64_t>(i) * e + j];
  for (double& v : x) v /= n;
  return PolicyInput(std::move(x));
}

PolicyNetwork::PolicyNetwork(int e, int d, int j, Rng& rng) : e_(e), d_(d), j_(j) {
  if (e < 1 || d < 1 || j < 1)
    throw std::invalid_argument("policy network needs e, d, j >= 1, got e=" + std::to_string(e) +
                                " d=" + std::to_string(d) + " j=" + std::to_string(j));
  ln_g_ = Tensor::constant({e}, 1.0);
  ln_g_.p->requires_grad = true;
  ln_b_ = Tensor::zeros({e}, true);
  w_h_ = Tensor::fan_in_init({e, e}, e, rng);
  b_h_ = Tensor::zeros({e}, true);
  // zero heads put the initial policy exactly at uniform
  w_keep_ = Tensor::zeros({e, d}, true);
  b_keep_ = Tensor::zeros({d}, true);
  w_strat_ = Tensor::zeros({e, j}, true);
  b_strat_ = Tensor::zeros({j}, true);
  for (Tensor& p : params()) p.zero_grad();
}

std::vector<Tensor> PolicyNetwork::params() {
  return {ln_g_, ln_b_, w_h_, b_h_, w_keep_, b_keep_, w_strat_, b_strat_};
}

std::vector<Tensor> PolicyNetwork::params() const {
  return const_cast<PolicyNetwork*>(this)->params();
}

std::pair<Tensor, Tensor> PolicyNetwork::forward(const PolicyInput& input) const {
  if (static_cast<int>(input.x().size()) != e_)
    throw std::invalid_argument("policy input has width " + std::to_string(input.x().size()) +
                                ", network expects " + std::to_string(e_));
  Tensor x = Tensor::from({1, e_}, input.x());
  Tensor hidden = relu(add_rowvec(matmul(layer_norm(x, ln_g_, ln_b_), w_h_), b_h_));
  Tensor g = sigmoid(add_rowvec(matmul(hidden, w_keep_), b_keep_));
  Tensor h = softmax(add_rowvec(matmul(hidden, w_strat_), b_strat_), 1);
  return {g, h};
}

DecisionDistribution PolicyNetwork::distribution(const PolicyInput& input) const {
  NoGrad no_grad;
  auto [g, h] = forward(input);
  DecisionDistribution dist;
  dist.g = g.values();
  dist.h = h.values();
  return dist;
}

std::vector<double> PolicyNetwork::log_prob_grad(const PolicyInput& input,
                                                 const Decisions& decisions,
                                                 const DecisionSpaceMask* mask) const {
  if (static_cast<int>(decisions.sublayer_keep.size()) != d_)
    throw std::invalid_argument("decisions carry " + std::to_string(decisions.sublayer_keep.size()) +
                                " bits, policy emits " + std::to_string(d_));
  g_policy_grad_calls.fetch_add(1);
  std::vector<Tensor> ps = params();
  zero_grads(ps);
  {
    Tape tape;
    auto [g, h] = forward(input);
    std::vector<uint8_t> free_bits;
    if (mask) free_bits = mask->free_bits;
    Tensor lp = bernoulli_log_prob(g, decisions.sublayer_keep, free_bits);
    if (!mask || mask->strategy_free)
      lp = add(lp, categorical_log_prob(h, decisions.token_strategy));
    tape.backward(lp);
  }
  std::vector<double> flat = flatten_grads(ps);
  zero_grads(ps);
  return flat;
}

void PolicyNetwork::score_function_grad(const PolicyInput& input, const Decisions& decisions,
                                        double advantage, const DecisionSpaceMask* mask) {
  std::vector<Tensor> ps = params();
  const std::vector<double> saved = flatten_grads(ps);  // log_prob_grad scratches the buffers
  const std::vector<double> logp = log_prob_grad(input, decisions, mask);
  set_grads(ps, saved);
  add_to_grads(ps, logp, advantage);
}

}  // namespace sd
