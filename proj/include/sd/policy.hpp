#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "sd/decisions.hpp"
#include "sd/tensor.hpp"

namespace sd {

class Rng;
class PolicyNetwork;
class PolicyInput;

// The only way to build a PolicyInput: mean over the token vectors of the
// first encoder layer's output. The values are copied out of the graph, so
// nothing the policy does can push gradients into the model.
PolicyInput pool_hidden(const Tensor& first_layer_output);

class PolicyInput {
 public:
  const std::vector<double>& x() const { return x_; }

 private:
  explicit PolicyInput(std::vector<double> x) : x_(std::move(x)) {}
  friend PolicyInput pool_hidden(const Tensor& first_layer_output);

  std::vector<double> x_;
};

// How many times any policy-gradient path has executed since reset; lets
// tests prove that runs without a learned policy never touch this code.
uint64_t policy_grad_invocations();
void reset_policy_grad_invocations();

// One-layer MLP over the pooled input: layer norm, hidden projection with
// ReLU, then a sigmoid keep-head (one probability per gated sublayer) and a
// softmax strategy-head. Heads start at zero so training begins from the
// uniform policy (every g = 0.5, h = 1/J).
class PolicyNetwork {
 public:
  PolicyNetwork(int e, int d, int j, Rng& rng);

  int d() const { return d_; }
  int j() const { return j_; }
  std::vector<Tensor> params();
  std::vector<Tensor> params() const;

  // Tape-recorded forward; first = keep probabilities [1×D], second =
  // strategy probabilities [1×J].
  std::pair<Tensor, Tensor> forward(const PolicyInput& input) const;
  // Plain-value distribution (no recording).
  DecisionDistribution distribution(const PolicyInput& input) const;

  // ∇_θ of the decision log-probability, flat in params() order. Restricted
  // components contribute nothing when a mask is given. Clobbers the grad
  // buffers as scratch and zeroes them afterwards.
  std::vector<double> log_prob_grad(const PolicyInput& input, const Decisions& decisions,
                                    const DecisionSpaceMask* mask = nullptr) const;
  // advantage · ∇_θ log-prob accumulated into the parameter grad buffers.
  void score_function_grad(const PolicyInput& input, const Decisions& decisions, double advantage,
                           const DecisionSpaceMask* mask = nullptr);

 private:
  int e_, d_, j_;
  Tensor ln_g_, ln_b_;        // [e]
  Tensor w_h_, b_h_;          // [e×e], [e]
  Tensor w_keep_, b_keep_;    // [e×D], [D]
  Tensor w_strat_, b_strat_;  // [e×J], [J]
};

}  // namespace sd
