#pragma once

#include <cstdint>
#include <vector>

#include "sd/tensor.hpp"

namespace sd {

// First/second moment buffers for one parameter group, flat across the
// group's tensors in params() order.
struct AdamMoments {
  std::vector<double> m, v;

  static AdamMoments for_params(const std::vector<Tensor>& params);
};

int64_t param_count(const std::vector<Tensor>& params);

// Standard bias-corrected Adam, applied in place from each tensor's grad
// buffer. t is the 1-based update count of this group.
void adam_step(std::vector<Tensor>& params, AdamMoments& moments, double lr, int64_t t,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// Plain gradient step p -= lr·grad (policy option and toy problems).
void sgd_step(std::vector<Tensor>& params, double lr);

// Flat-vector views of a parameter group, used by the score-function
// estimators to snapshot and recombine gradients.
std::vector<double> flatten_values(const std::vector<Tensor>& params);
std::vector<double> flatten_grads(const std::vector<Tensor>& params);
void zero_grads(std::vector<Tensor>& params);
// grads += scale·flat
void add_to_grads(std::vector<Tensor>& params, const std::vector<double>& flat, double scale);
void set_grads(std::vector<Tensor>& params, const std::vector<double>& flat);

}  // namespace sd
